"""Bounded-degree navigable graph construction with per-node occlusion pruning.

Construction starts from a seeded random graph and runs refinement passes:
each node's candidate pool is the expanded set of a beam search for the
node itself, merged with its current neighbors, then filtered by the
occlusion rule

    drop v if some already-selected n has alpha_u * d(n, v) <= d(u, v)

scanning candidates in ascending distance order. A larger alpha_u makes
witnesses harder to find and so retains more edges. After each
replacement, reverse edges are inserted (re-pruning the receiver with its
own alpha when its list overflows); the refinement listing alone leaves
sink nodes behind on random initializations, so the insert-then-re-prune
step is required for the connectivity this index is verified against.

The first pass of a multi-pass build prunes at alpha = 1.0 everywhere and
only the final pass applies the per-node values.
"""

from __future__ import annotations

import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import VectorDataset
from .errors import ParameterError
from .geometry import squared_dists
from .search import MemorySource, _advance, _BeamState

# Exact medoid above this size would be quadratic in N; use a seeded sample.
EXACT_MEDOID_LIMIT = 100_000
_MEDOID_SAMPLE = 10_000


@dataclass
class BuildParams:
    max_degree: int = 64
    beam_build: int = 100
    max_iter: int = 2
    seed: int = 0
    degree_uncapped: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.max_degree < 1 or self.beam_build < 1 or self.max_iter < 1:
            raise ParameterError("max_degree, beam_build and max_iter must be >= 1")
        if self.threads < 1:
            raise ParameterError("threads must be >= 1")


@dataclass
class Graph:
    """Directed adjacency with a designated entry point (the dataset medoid)."""

    n: int
    entry_point: int
    neighbors: list  # per-node np.int32 arrays
    max_degree: int
    degree_uncapped: bool = False
    alphas: np.ndarray | None = None

    def validate(self) -> None:
        for u, nbrs in enumerate(self.neighbors):
            arr = np.asarray(nbrs)
            if arr.size and (arr.min() < 0 or arr.max() >= self.n):
                raise ParameterError(f"node {u} has out-of-range neighbor ids")
            if np.any(arr == u):
                raise ParameterError(f"node {u} has a self-edge")
            if np.unique(arr).size != arr.size:
                raise ParameterError(f"node {u} has duplicate neighbors")
            if not self.degree_uncapped and arr.size > self.max_degree:
                raise ParameterError(f"node {u} exceeds degree bound {self.max_degree}")


def _medoid(values: np.ndarray, seed: int) -> int:
    """Index minimizing total L2 distance to all points; ties to smaller id."""
    n = values.shape[0]
    if n > EXACT_MEDOID_LIMIT:
        rng = np.random.default_rng(seed)
        sample = np.sort(rng.choice(n, size=_MEDOID_SAMPLE, replace=False))
        sub = values[sample]
        return int(sample[_medoid(sub, seed)])
    x = values.astype(np.float32, copy=False)
    sq = np.einsum("ij,ij->i", x, x)
    totals = np.empty(n)
    chunk = max(1, (1 << 24) // max(n, 1))
    for start in range(0, n, chunk):
        end = min(start + chunk, n)
        d2 = sq[start:end, None] + sq[None, :] - 2.0 * (x[start:end] @ x.T)
        np.maximum(d2, 0.0, out=d2)
        totals[start:end] = np.sqrt(d2).sum(axis=1)
    return int(np.argmin(totals))


def _sample_distinct(rng: np.random.Generator, bound: int, count: int) -> np.ndarray:
    """`count` distinct ints in [0, bound), by rejection, draw order preserved."""
    if count >= bound:
        return np.arange(bound, dtype=np.int64)
    raw = rng.integers(0, bound, size=count + 8)
    _, first = np.unique(raw, return_index=True)
    vals = raw[np.sort(first)]
    while vals.size < count:
        more = rng.integers(0, bound, size=count)
        raw = np.concatenate([vals, more])
        _, first = np.unique(raw, return_index=True)
        vals = raw[np.sort(first)]
    return vals[:count]


def init_random_graph(base: VectorDataset, params: BuildParams) -> Graph:
    """Seeded random out-neighbors plus the dataset medoid as entry point."""
    n = base.count
    if n < 2:
        raise ParameterError(f"need at least 2 points, got {n}")
    rng = np.random.default_rng(params.seed)
    deg = min(params.max_degree, n - 1)
    neighbors = []
    for u in range(n):
        picks = _sample_distinct(rng, n - 1, deg)
        picks = np.where(picks >= u, picks + 1, picks)  # skip self
        neighbors.append(np.sort(picks).astype(np.int32))
    entry = _medoid(base.values, params.seed)
    return Graph(
        n=n, entry_point=entry, neighbors=neighbors,
        max_degree=params.max_degree, degree_uncapped=params.degree_uncapped,
    )


def _expanded_candidates(source: MemorySource, u: int, beam: int):
    """Expanded nodes of a beam search for base[u], excluding u, sorted by (d2, id)."""
    q64 = source.vecs64[u]
    state = _BeamState(source, q64)
    _advance(source, q64, state, beam)
    pairs = sorted((d2, i) for d2, i in state.expanded if i != u)
    ids = np.array([i for _, i in pairs], dtype=np.int64)
    d2 = np.array([d for d, _ in pairs])
    return ids, d2


def greedy_search_build(graph: Graph, base: VectorDataset, u: int, beam: int):
    """Candidate pool for refining node u: the search's visited (expanded) set."""
    if beam < 1:
        raise ParameterError("beam must be >= 1")
    source = MemorySource(graph, base)
    ids, d2 = _expanded_candidates(source, u, beam)
    return [(int(i), float(d)) for i, d in zip(ids, np.sqrt(d2))]


def _prune_sorted_sq(
    vecs64: np.ndarray, ids: np.ndarray, d2: np.ndarray,
    alpha: float, cap: int | None,
) -> np.ndarray:
    """Occlusion scan over candidates pre-sorted by (d2, id).

    Comparisons run on squared distances (alpha^2 * d2(n,v) <= d2(u,v) is
    equivalent for non-negative operands). Each selection batch-occludes
    the remaining candidates, which is the same rule as testing every
    candidate against all previously selected neighbors.
    """
    a2 = alpha * alpha
    m = len(ids)
    limit = m if cap is None else min(cap, m)
    if limit == 0:
        return np.empty(0, dtype=np.int32)
    cand_vecs = vecs64[ids]
    occluded = np.zeros(m, dtype=bool)
    sel = []
    for i in range(m):
        if occluded[i]:
            continue
        sel.append(ids[i])
        if len(sel) >= limit or i + 1 == m:
            break
        diff = cand_vecs[i + 1:] - cand_vecs[i]
        d2w = np.einsum("ij,ij->i", diff, diff)
        occluded[i + 1:] |= a2 * d2w <= d2[i + 1:]
    return np.array(sel, dtype=np.int32)


def adaptive_prune(
    u: int, candidates, alpha_u: float, R: int | None, base: VectorDataset,
) -> list[int]:
    """Select up to R neighbors for u from (id, distance) candidates.

    Candidates are scanned in ascending (distance, id) order; v is dropped
    iff an already-selected n satisfies alpha_u * d(n, v) <= d(u, v).
    """
    if alpha_u < 1.0:
        raise ParameterError(f"alpha must be >= 1.0, got {alpha_u}")
    if R is not None and R < 1:
        raise ParameterError("degree cap must be >= 1 when given")
    if not candidates:
        return []
    ids = np.array([c[0] for c in candidates], dtype=np.int64)
    if np.any(ids == u):
        raise ParameterError("candidates must exclude the node itself")
    d2 = np.array([float(c[1]) for c in candidates]) ** 2
    order = np.lexsort((ids, d2))
    ids, d2 = ids[order], d2[order]
    keep = np.ones(len(ids), dtype=bool)
    keep[1:] = ids[1:] != ids[:-1]
    ids, d2 = ids[keep], d2[keep]
    vecs64 = base.values.astype(np.float64)
    return [int(v) for v in _prune_sorted_sq(vecs64, ids, d2, alpha_u, R)]


def _merge_pool(ids_a, d2_a, ids_b, d2_b):
    """Concatenate, sort by (d2, id), drop duplicate ids (identical keys adjoin)."""
    ids = np.concatenate([ids_a, ids_b])
    d2 = np.concatenate([d2_a, d2_b])
    order = np.lexsort((ids, d2))
    ids, d2 = ids[order], d2[order]
    if len(ids) > 1:
        keep = np.ones(len(ids), dtype=bool)
        keep[1:] = ids[1:] != ids[:-1]
        ids, d2 = ids[keep], d2[keep]
    return ids, d2


def build(base: VectorDataset, params: BuildParams, alphas: np.ndarray) -> Graph:
    """Full index construction: random init plus max_iter refinement passes."""
    n = base.count
    if n < 2:
        raise ParameterError(f"need at least 2 points, got {n}")
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (n,):
        raise ParameterError(f"alphas length {alphas.shape} != count {n}")
    if np.any(alphas < 1.0):
        raise ParameterError("all alphas must be >= 1.0")

    graph = init_random_graph(base, params)
    graph.alphas = alphas
    vecs64 = base.values.astype(np.float64)
    source = MemorySource(graph, base, vecs64)
    cap = None if params.degree_uncapped else params.max_degree
    ones = np.ones(n)
    lock = threading.Lock()

    def refine(u: int, pass_alphas: np.ndarray) -> None:
        cand_ids, cand_d2 = _expanded_candidates(source, u, params.beam_build)
        cur = np.asarray(graph.neighbors[u], dtype=np.int64)
        if cur.size:
            cur_d2 = squared_dists(vecs64[cur], vecs64[u])
            cand_ids, cand_d2 = _merge_pool(cand_ids, cand_d2, cur, cur_d2)
        new_nbrs = _prune_sorted_sq(vecs64, cand_ids, cand_d2, float(pass_alphas[u]), cap)
        graph.neighbors[u] = new_nbrs
        for v in new_nbrs:
            v = int(v)
            with lock:
                nb = graph.neighbors[v]
                if np.any(nb == u):
                    continue
                appended = np.append(nb, np.int32(u))
                if cap is None or appended.size <= cap:
                    graph.neighbors[v] = appended
                    continue
                app64 = appended.astype(np.int64)
                d2v = squared_dists(vecs64[app64], vecs64[v])
                order = np.lexsort((app64, d2v))
                graph.neighbors[v] = _prune_sorted_sq(
                    vecs64, app64[order], d2v[order], float(pass_alphas[v]), cap,
                )

    for it in range(params.max_iter):
        pass_alphas = ones if (params.max_iter > 1 and it == 0) else alphas
        if params.threads == 1:
            for u in range(n):
                refine(u, pass_alphas)
        else:
            # Parallel refinement: stale neighbor reads within a pass are
            # allowed; list replacement per node stays atomic.
            with ThreadPoolExecutor(max_workers=params.threads) as pool:
                list(pool.map(lambda u: refine(u, pass_alphas), range(n)))
    return graph


def bfs_reachable(graph: Graph) -> int:
    """Number of nodes reachable from the entry point along out-edges."""
    seen = np.zeros(graph.n, dtype=bool)
    seen[graph.entry_point] = True
    queue = deque([graph.entry_point])
    count = 1
    while queue:
        u = queue.popleft()
        for v in np.asarray(graph.neighbors[u]):
            v = int(v)
            if not seen[v]:
                seen[v] = True
                count += 1
                queue.append(v)
    return count
