"""Index serialization and the block-aligned disk read path.

Layout (all little-endian): one header block, then one fixed-stride record
per node at byte offset block_size * (1 + node_id). A record holds the
node's vector, its pruning alpha (float64), a degree field, and max_degree
neighbor slots (uint64, unused slots hold the sentinel 2^64 - 1). A single
block fetch therefore yields both the vector and the adjacency of a node.

Vectors are stored in the dataset's element kind (uint8 stays 1 byte per
element on disk) and widened to float32/float64 in memory. The disk reader
keeps the decoded vectors resident for candidate scoring - there is no
compressed in-memory representation here - so a search performs exactly
one block read per expanded node, for the adjacency.
"""

from __future__ import annotations

import io
import logging
import mmap
import os
import struct
import threading

import numpy as np

from .data import VectorDataset
from .errors import IndexFormatError, ParameterError, RecordSizeError
from .graph import Graph

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"MCGI"
INDEX_VERSION = 1
DEFAULT_BLOCK_SIZE = 4096
NEIGHBOR_SENTINEL = np.uint64(0xFFFFFFFFFFFFFFFF)

# magic, version, n, dim, element kind, max_degree, entry_point, block_size, has_alphas
_HEADER = struct.Struct("<4sIQIBIQIB")

_ELEMENT_CODES = {"float32": 0, "uint8": 1}
_ELEMENT_NAMES = {v: k for k, v in _ELEMENT_CODES.items()}


def _record_size(dim: int, elements: str, max_degree: int) -> int:
    esize = 4 if elements == "float32" else 1
    return dim * esize + 8 + 4 + max_degree * 8


def _required_block_size(record: int) -> int:
    size = 512
    while size < record:
        size *= 2
    return size


def save_index(
    graph: Graph,
    base: VectorDataset,
    alphas: np.ndarray,
    path: str | os.PathLike,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> None:
    """Write the index file; load_index round-trips it bit-exactly."""
    n = graph.n
    if n < 1:
        raise ParameterError("refusing to save an empty graph")
    if base.count != n or len(alphas) != n:
        raise ParameterError("graph, dataset and alphas must have matching sizes")
    if block_size < 512 or block_size & (block_size - 1):
        raise ParameterError(f"block_size must be a power of two >= 512, got {block_size}")
    record = _record_size(base.dim, base.elements, graph.max_degree)
    if record > block_size:
        need = _required_block_size(record)
        raise RecordSizeError(
            f"per-node record is {record} bytes; pass block_size >= {need}", need
        )
    for u in range(n):
        if len(graph.neighbors[u]) > graph.max_degree:
            raise ParameterError(
                f"node {u} has degree {len(graph.neighbors[u])} > {graph.max_degree}; "
                "uncapped graphs are for in-memory verification only"
            )

    header = _HEADER.pack(
        INDEX_MAGIC, INDEX_VERSION, n, base.dim,
        _ELEMENT_CODES[base.elements], graph.max_degree,
        graph.entry_point, block_size, 1,
    )
    alphas = np.asarray(alphas, dtype="<f8")
    if base.elements == "float32":
        vec_bytes = np.ascontiguousarray(base.values, dtype="<f4")
    else:
        vec_bytes = base.values.astype(np.uint8)

    with open(os.fspath(path), "wb") as f:
        f.write(header)
        f.write(b"\0" * (block_size - len(header)))
        slot_template = np.full(graph.max_degree, NEIGHBOR_SENTINEL, dtype="<u8")
        for u in range(n):
            nbrs = np.asarray(graph.neighbors[u])
            slots = slot_template.copy()
            slots[: nbrs.size] = nbrs.astype("<u8")
            rec = io.BytesIO()
            rec.write(vec_bytes[u].tobytes())
            rec.write(struct.pack("<d", float(alphas[u])))
            rec.write(struct.pack("<I", int(nbrs.size)))
            rec.write(slots.tobytes())
            payload = rec.getvalue()
            f.write(payload)
            f.write(b"\0" * (block_size - len(payload)))


def _parse_header(raw: bytes, path) -> tuple:
    if len(raw) < _HEADER.size:
        raise IndexFormatError(f"{path}: truncated header at byte {len(raw)}")
    magic, version, n, dim, elem_code, max_degree, entry, block_size, has_alphas = (
        _HEADER.unpack_from(raw)
    )
    if magic != INDEX_MAGIC:
        raise IndexFormatError(f"{path}: bad magic {magic!r}")
    if version != INDEX_VERSION:
        raise IndexFormatError(f"{path}: unsupported version {version}")
    if elem_code not in _ELEMENT_NAMES:
        raise IndexFormatError(f"{path}: unknown element kind code {elem_code}")
    return n, dim, _ELEMENT_NAMES[elem_code], max_degree, entry, block_size, has_alphas


def _parse_record(
    raw: bytes, u: int, dim: int, elements: str, max_degree: int, n: int, path,
) -> tuple[np.ndarray, float, np.ndarray]:
    esize = 4 if elements == "float32" else 1
    vec_end = dim * esize
    if elements == "float32":
        vector = np.frombuffer(raw, dtype="<f4", count=dim)
    else:
        vector = np.frombuffer(raw, dtype=np.uint8, count=dim)
    alpha = struct.unpack_from("<d", raw, vec_end)[0]
    degree = struct.unpack_from("<I", raw, vec_end + 8)[0]
    if degree > max_degree:
        raise IndexFormatError(
            f"{path}: node {u} record corrupt: degree {degree} > R={max_degree}"
        )
    slots = np.frombuffer(raw, dtype="<u8", count=max_degree, offset=vec_end + 12)
    nbrs = slots[:degree]
    if nbrs.size and (np.any(nbrs >= n)):
        raise IndexFormatError(
            f"{path}: node {u} record corrupt: neighbor id out of range"
        )
    if np.any(slots[degree:] != NEIGHBOR_SENTINEL):
        raise IndexFormatError(
            f"{path}: node {u} record corrupt: live id in unused slot"
        )
    return vector, alpha, nbrs.astype(np.int32)


def load_index(path: str | os.PathLike) -> tuple[Graph, VectorDataset, np.ndarray]:
    """Reconstruct the full in-memory index from a saved file."""
    with open(os.fspath(path), "rb") as f:
        raw = f.read()
    n, dim, elements, max_degree, entry, block_size, has_alphas = _parse_header(raw, path)
    expected = block_size * (1 + n)
    if len(raw) != expected:
        offset = min(len(raw), expected)
        raise IndexFormatError(
            f"{path}: file has {len(raw)} bytes, expected {expected}; "
            f"truncated at byte {offset}"
        )
    if elements == "float32":
        values = np.empty((n, dim), dtype=np.float32)
    else:
        values = np.empty((n, dim), dtype=np.uint8)
    alphas = np.empty(n)
    neighbors = []
    for u in range(n):
        start = block_size * (1 + u)
        vector, alpha, nbrs = _parse_record(
            raw[start: start + block_size], u, dim, elements, max_degree, n, path
        )
        values[u] = vector
        alphas[u] = alpha
        neighbors.append(nbrs)
    dataset = VectorDataset(
        count=n, dim=dim, elements=elements, values=values.astype(np.float32)
    )
    graph = Graph(
        n=n, entry_point=int(entry), neighbors=neighbors,
        max_degree=max_degree, alphas=alphas if has_alphas else None,
    )
    return graph, dataset, alphas


class DiskIndexReader:
    """Search source that fetches adjacency blocks from disk per expansion.

    Vectors are decoded once at open time and held in memory for candidate
    scoring; each expanded node costs exactly one block read (pread, or
    O_DIRECT when unbuffered mode is active). Safe for concurrent readers:
    reads are stateless and unbuffered-mode scratch buffers are per-thread.
    """

    def __init__(self, path: str | os.PathLike, mode: str = "buffered"):
        if mode not in ("buffered", "unbuffered"):
            raise ParameterError(f"mode must be buffered or unbuffered, got {mode!r}")
        self.path = os.fspath(path)
        with open(self.path, "rb") as f:
            head = f.read(DEFAULT_BLOCK_SIZE)
        (self.n, self.dim, self.elements, self.max_degree,
         self.entry_point, self.block_size, self._has_alphas) = _parse_header(head, path)
        size = os.path.getsize(self.path)
        expected = self.block_size * (1 + self.n)
        if size != expected:
            raise IndexFormatError(
                f"{path}: file has {size} bytes, expected {expected}; "
                f"truncated at byte {min(size, expected)}"
            )

        # One sequential pass decodes vectors and alphas for scoring.
        graph, dataset, alphas = load_index(self.path)
        self.vecs64 = dataset.values.astype(np.float64)
        self.alphas = alphas
        self._entry_check = graph.entry_point

        self.unbuffered_active = False
        self._fd = None
        self._local = threading.local()
        if mode == "unbuffered":
            self._try_open_unbuffered()
        if self._fd is None:
            self._fd = os.open(self.path, os.O_RDONLY)

    def _try_open_unbuffered(self) -> None:
        o_direct = getattr(os, "O_DIRECT", None)
        if o_direct is None:
            logger.warning("O_DIRECT unavailable on this platform; using buffered reads")
            return
        if self.block_size % 512:
            logger.warning(
                "block_size %d is not sector-aligned; using buffered reads", self.block_size
            )
            return
        try:
            fd = os.open(self.path, os.O_RDONLY | o_direct)
            buf = mmap.mmap(-1, self.block_size)
            os.preadv(fd, [buf], 0)  # probe: some filesystems reject O_DIRECT reads
        except OSError as exc:
            logger.warning("unbuffered reads unsupported here (%s); using buffered", exc)
            try:
                os.close(fd)
            except (OSError, UnboundLocalError):
                pass
            return
        self._fd = fd
        self.unbuffered_active = True

    def _read_block(self, u: int) -> bytes:
        offset = self.block_size * (1 + u)
        if self.unbuffered_active:
            buf = getattr(self._local, "buf", None)
            if buf is None:
                buf = mmap.mmap(-1, self.block_size)
                self._local.buf = buf
            got = os.preadv(self._fd, [buf], offset)
            if got != self.block_size:
                raise IndexFormatError(f"{self.path}: short read at node {u}")
            return buf[:]
        raw = os.pread(self._fd, self.block_size, offset)
        if len(raw) != self.block_size:
            raise IndexFormatError(f"{self.path}: short read at node {u}")
        return raw

    def neighbor_ids(self, u: int) -> np.ndarray:
        raw = self._read_block(u)
        _, _, nbrs = _parse_record(
            raw, u, self.dim, self.elements, self.max_degree, self.n, self.path
        )
        return nbrs

    def node_alpha(self, u: int) -> float:
        raw = self._read_block(u)
        _, alpha, _ = _parse_record(
            raw, u, self.dim, self.elements, self.max_degree, self.n, self.path
        )
        return alpha

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_disk_index(path: str | os.PathLike, mode: str = "buffered") -> DiskIndexReader:
    """Open a saved index for disk-resident search."""
    return DiskIndexReader(path, mode=mode)
