"""Vector dataset types, TEXMEX-style file formats, and synthetic generators.

File formats follow the de facto SIFT/GIST convention: each record is a
4-byte little-endian int32 dimension d, followed by d elements. Element
width is 4 bytes (float32 for .fvecs, int32 for .ivecs) or 1 byte
(uint8 for .bvecs). All records in a file must share the same d.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ParseError

ELEMENT_KINDS = ("float32", "uint8")

GENERATOR_KINDS = ("uniform-ball", "gaussian-clusters", "embedded-manifold", "mixed-lid")

# Centers of the two mixed-lid blocks are pushed apart along the first
# embedding axis so queries associate unambiguously with their block.
_MIXED_LID_BLOCK_OFFSET = 2.0


@dataclass
class VectorDataset:
    """N x D matrix of base vectors.

    ``values`` is always float32 for a single distance kernel; uint8 inputs
    are widened at load time (lossless, 0..255 are exact in float32) and
    narrowed back when written to .bvecs.
    """

    count: int
    dim: int
    elements: str
    values: np.ndarray

    def __post_init__(self):
        if self.elements not in ELEMENT_KINDS:
            raise ParameterError(f"unknown element kind {self.elements!r}")
        if self.count < 0 or self.dim < 1:
            raise ParameterError("count must be >= 0 and dim >= 1")
        if self.values.shape != (self.count, self.dim):
            raise ParameterError(
                f"values shape {self.values.shape} does not match "
                f"count x dim = {self.count} x {self.dim}"
            )

    @classmethod
    def from_array(cls, values: np.ndarray, elements: str = "float32") -> "VectorDataset":
        values = np.ascontiguousarray(values, dtype=np.float32)
        if values.ndim != 2:
            raise ParameterError("values must be a 2-D matrix")
        return cls(count=values.shape[0], dim=values.shape[1], elements=elements, values=values)


@dataclass
class GroundTruth:
    """Exact top-k reference answers: one row of k ids per query, ascending by true distance."""

    query_count: int
    k: int
    ids: np.ndarray

    def __post_init__(self):
        if self.ids.shape != (self.query_count, self.k):
            raise ParameterError("ids shape does not match query_count x k")


def _element_dtype(elements: str) -> np.dtype:
    if elements == "float32":
        return np.dtype("<f4")
    if elements == "uint8":
        return np.dtype(np.uint8)
    raise ParameterError(f"unknown element kind {elements!r}")


def read_vecs(path: str | os.PathLike, elements: str) -> VectorDataset:
    """Parse an .fvecs (elements='float32') or .bvecs (elements='uint8') file.

    Every record's leading dimension field is validated; the first mismatch
    is reported by record index, truncation by byte offset.
    """
    esize = _element_dtype(elements).itemsize
    raw = np.fromfile(os.fspath(path), dtype=np.uint8)
    if raw.size == 0:
        raise ParseError(f"{path}: empty file")
    if raw.size < 4:
        raise ParseError(f"{path}: truncated file at byte offset 0")
    d = int(raw[:4].view("<i4")[0])
    if d <= 0:
        raise ParseError(f"{path}: record 0 has non-positive dimension {d}")
    record_size = 4 + d * esize
    if raw.size % record_size != 0:
        offset = (raw.size // record_size) * record_size
        raise ParseError(f"{path}: truncated file at byte offset {offset}")
    records = raw.reshape(-1, record_size)
    dims = records[:, :4].copy().view("<i4").ravel()
    bad = np.nonzero(dims != d)[0]
    if bad.size:
        idx = int(bad[0])
        raise ParseError(
            f"{path}: record {idx} has dimension {int(dims[idx])}, expected {d}"
        )
    body = records[:, 4:].copy()
    if elements == "float32":
        values = body.view("<f4")
    else:
        values = body.astype(np.float32)
    return VectorDataset(count=records.shape[0], dim=d, elements=elements, values=values)


def write_vecs(dataset: VectorDataset, path: str | os.PathLike) -> None:
    """Write a dataset so that read_vecs round-trips it bit-exactly."""
    if dataset.count == 0:
        raise ParameterError("refusing to write empty dataset")
    header = np.full((dataset.count, 1), dataset.dim, dtype="<i4")
    if dataset.elements == "float32":
        body = np.ascontiguousarray(dataset.values, dtype="<f4")
        rec = np.concatenate([header.view("<f4"), body], axis=1)
    else:
        body = dataset.values.astype(np.uint8)
        rec = np.concatenate([header.view(np.uint8).reshape(dataset.count, 4), body], axis=1)
    rec.tofile(os.fspath(path))


def read_ivecs(path: str | os.PathLike) -> np.ndarray:
    """Read an .ivecs file as an int32 matrix (used for ground-truth ids)."""
    raw = np.fromfile(os.fspath(path), dtype=np.uint8)
    if raw.size == 0:
        raise ParseError(f"{path}: empty file")
    d = int(raw[:4].view("<i4")[0])
    if d <= 0:
        raise ParseError(f"{path}: record 0 has non-positive dimension {d}")
    record_size = 4 + d * 4
    if raw.size % record_size != 0:
        offset = (raw.size // record_size) * record_size
        raise ParseError(f"{path}: truncated file at byte offset {offset}")
    records = raw.reshape(-1, record_size)
    dims = records[:, :4].copy().view("<i4").ravel()
    bad = np.nonzero(dims != d)[0]
    if bad.size:
        idx = int(bad[0])
        raise ParseError(
            f"{path}: record {idx} has dimension {int(dims[idx])}, expected {d}"
        )
    return records[:, 4:].copy().view("<i4")


def write_ivecs(ids: np.ndarray, path: str | os.PathLike) -> None:
    if ids.ndim != 2 or ids.shape[0] == 0:
        raise ParameterError("refusing to write empty id matrix")
    header = np.full((ids.shape[0], 1), ids.shape[1], dtype="<i4")
    rec = np.concatenate([header, np.ascontiguousarray(ids, dtype="<i4")], axis=1)
    rec.tofile(os.fspath(path))


def _sample_ball(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Uniform sample inside the unit d-ball (direction x radius^(1/d))."""
    x = rng.standard_normal((n, d))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radii = rng.random((n, 1)) ** (1.0 / d)
    return x / norms * radii


def _random_orthonormal_map(rng: np.random.Generator, ambient: int, intrinsic: int) -> np.ndarray:
    """Seeded orthonormal ambient x intrinsic embedding matrix."""
    a = rng.standard_normal((ambient, intrinsic))
    q, _ = np.linalg.qr(a)
    return q


def _embedded_block(
    rng: np.random.Generator, n: int, ambient: int, intrinsic: int, noise: float
) -> np.ndarray:
    ball = _sample_ball(rng, n, intrinsic)
    q = _random_orthonormal_map(rng, ambient, intrinsic)
    pts = ball @ q.T
    if noise > 0:
        pts = pts + noise * rng.standard_normal((n, ambient))
    return pts


def generate_with_queries(
    kind: str,
    n: int,
    ambient_dim: int,
    intrinsic_dim: int,
    seed: int,
    noise: float = 0.0,
    n_queries: int = 0,
    intrinsic_dim_2: int | None = None,
) -> tuple[VectorDataset, VectorDataset | None]:
    """Generate base vectors plus optional queries from the same manifold.

    Queries are extra samples of the same seeded generator (same embedding
    map), so recall benchmarks stay on-manifold. For mixed-lid, each block
    contributes half the base and half the queries; the first half of both
    comes from the lower-dimensional block.
    """
    if kind not in GENERATOR_KINDS:
        raise ParameterError(f"unknown generator kind {kind!r}")
    if not (1 <= intrinsic_dim <= ambient_dim):
        raise ParameterError(
            f"intrinsic_dim {intrinsic_dim} must be in [1, ambient_dim={ambient_dim}]"
        )
    if noise < 0:
        raise ParameterError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    total = n + n_queries

    if kind == "uniform-ball":
        ball = _sample_ball(rng, total, intrinsic_dim)
        pts = np.zeros((total, ambient_dim))
        pts[:, :intrinsic_dim] = ball
        if noise > 0:
            pts = pts + noise * rng.standard_normal((total, ambient_dim))
    elif kind == "embedded-manifold":
        pts = _embedded_block(rng, total, ambient_dim, intrinsic_dim, noise)
    elif kind == "gaussian-clusters":
        n_clusters = 8
        centers = rng.uniform(-2.0, 2.0, size=(n_clusters, ambient_dim))
        assign = rng.integers(0, n_clusters, size=total)
        maps = [_random_orthonormal_map(rng, ambient_dim, intrinsic_dim) for _ in range(n_clusters)]
        latent = rng.standard_normal((total, intrinsic_dim)) * 0.25
        pts = centers[assign].copy()
        for c in range(n_clusters):
            mask = assign == c
            pts[mask] += latent[mask] @ maps[c].T
        if noise > 0:
            pts = pts + noise * rng.standard_normal((total, ambient_dim))
    else:  # mixed-lid
        if intrinsic_dim_2 is None:
            raise ParameterError("mixed-lid requires a second intrinsic dimension")
        if not (1 <= intrinsic_dim_2 <= ambient_dim):
            raise ParameterError(
                f"intrinsic_dim_2 {intrinsic_dim_2} must be in [1, ambient_dim={ambient_dim}]"
            )
        n1, q1 = n // 2, n_queries // 2
        n2, q2 = n - n1, n_queries - q1
        block1 = _embedded_block(rng, n1 + q1, ambient_dim, intrinsic_dim, noise)
        block2 = _embedded_block(rng, n2 + q2, ambient_dim, intrinsic_dim_2, noise)
        block1[:, 0] -= _MIXED_LID_BLOCK_OFFSET
        block2[:, 0] += _MIXED_LID_BLOCK_OFFSET
        base = np.concatenate([block1[:n1], block2[:n2]])
        queries = np.concatenate([block1[n1:], block2[n2:]])
        base_ds = VectorDataset.from_array(base)
        query_ds = VectorDataset.from_array(queries) if n_queries else None
        return base_ds, query_ds

    base_ds = VectorDataset.from_array(pts[:n])
    query_ds = VectorDataset.from_array(pts[n:]) if n_queries else None
    return base_ds, query_ds


def generate_synthetic(
    kind: str,
    n: int,
    ambient_dim: int,
    intrinsic_dim: int,
    seed: int,
    noise: float = 0.0,
    intrinsic_dim_2: int | None = None,
) -> VectorDataset:
    """Deterministic synthetic dataset with controlled intrinsic dimension."""
    base, _ = generate_with_queries(
        kind, n, ambient_dim, intrinsic_dim, seed, noise,
        n_queries=0, intrinsic_dim_2=intrinsic_dim_2,
    )
    return base


def compute_ground_truth(base: VectorDataset, queries: VectorDataset, k: int) -> GroundTruth:
    """Exact top-k by L2 per query; ties broken by ascending base index."""
    if base.dim != queries.dim:
        raise ParameterError(
            f"dimension mismatch: base dim {base.dim}, queries dim {queries.dim}"
        )
    if base.elements != queries.elements:
        raise ParameterError("base and queries must share element kind")
    if not (1 <= k <= base.count):
        raise ParameterError(f"k={k} must be in [1, base.count={base.count}]")
    base64 = base.values.astype(np.float64)
    ids = np.empty((queries.count, k), dtype=np.int32)
    for qi in range(queries.count):
        diff = base64 - queries.values[qi].astype(np.float64)
        d2 = np.einsum("ij,ij->i", diff, diff)
        order = np.lexsort((np.arange(base.count), d2))
        ids[qi] = order[:k]
    return GroundTruth(query_count=queries.count, k=k, ids=ids)
