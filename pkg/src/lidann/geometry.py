"""Exact brute-force geometry: distances, kNN, EMST, RNG, edge-set checks.

These routines exist to verify the graph index, not to scale: the
all-pairs constructions refuse inputs above ORACLE_LIMIT points.
"""

from __future__ import annotations

import os

import numpy as np

from .data import VectorDataset
from .errors import ParameterError

# All-pairs distance matrices are materialized only up to this many points.
ORACLE_LIMIT = 5000

EdgeSet = set  # of canonical (min_id, max_id) tuples


def squared_dists(mat64: np.ndarray, q64: np.ndarray) -> np.ndarray:
    """Squared L2 distances from every row of mat64 to q64, in float64.

    This is the one distance kernel shared by the oracle, the ground-truth
    computation, and the graph search, so tie-breaking is consistent
    everywhere.
    """
    diff = mat64 - q64
    return np.einsum("ij,ij->i", diff, diff)


def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ParameterError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ParameterError("non-finite input vector")
    diff = a - b
    return float(np.sqrt(np.dot(diff, diff)))


def exact_knn(base: VectorDataset, q: np.ndarray, k: int) -> list[tuple[int, float]]:
    """The k nearest base vectors to q, ascending distance, ties by smaller id."""
    if not (1 <= k <= base.count):
        raise ParameterError(f"k={k} must be in [1, count={base.count}]")
    q64 = np.asarray(q, dtype=np.float64).ravel()
    if q64.shape[0] != base.dim:
        raise ParameterError(f"query dim {q64.shape[0]} != base dim {base.dim}")
    d2 = squared_dists(base.values.astype(np.float64), q64)
    order = np.lexsort((np.arange(base.count), d2))[:k]
    return [(int(i), float(np.sqrt(d2[i]))) for i in order]


def _distance_matrix(points: VectorDataset) -> np.ndarray:
    n = points.count
    if n > ORACLE_LIMIT:
        raise ParameterError(
            f"geometry oracle limited to {ORACLE_LIMIT} points, got {n}"
        )
    x = points.values.astype(np.float64)
    d2 = np.empty((n, n))
    for i in range(n):
        d2[i] = squared_dists(x, x[i])
    return np.sqrt(d2)


def emst_edges(points: VectorDataset) -> EdgeSet:
    """Euclidean minimum spanning tree via Prim's over the full matrix.

    Among equal-weight candidate edges the lexicographically smallest
    canonical pair wins, so the tree is deterministic even under ties.
    """
    n = points.count
    if n == 0:
        raise ParameterError("emst_edges requires at least one point")
    if n == 1:
        return set()
    dist = _distance_matrix(points)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best_dist = dist[0].copy()
    best_from = np.zeros(n, dtype=np.int64)
    edges: EdgeSet = set()
    for _ in range(n - 1):
        cand = np.where(~in_tree)[0]
        order = sorted(
            cand,
            key=lambda v: (best_dist[v], min(best_from[v], v), max(best_from[v], v)),
        )
        v = order[0]
        u = int(best_from[v])
        edges.add((min(u, v), max(u, v)))
        in_tree[v] = True
        # Relax: adopt v as the connection point where it improves, or ties
        # with a lexicographically smaller edge.
        for w in np.where(~in_tree)[0]:
            d = dist[v, w]
            if d < best_dist[w] or (
                d == best_dist[w]
                and (min(v, w), max(v, w)) < (min(best_from[w], w), max(best_from[w], w))
            ):
                best_dist[w] = d
                best_from[w] = v
    return edges


def rng_edges(points: VectorDataset) -> EdgeSet:
    """Relative neighborhood graph with open lunes (strict inequalities).

    Edge {u,v} survives unless some witness n has d(n,u) < d(u,v) AND
    d(n,v) < d(u,v). Brute force over all pairs and witnesses.
    """
    n = points.count
    if n == 0:
        raise ParameterError("rng_edges requires at least one point")
    dist = _distance_matrix(points)
    edges: EdgeSet = set()
    for u in range(n):
        for v in range(u + 1, n):
            duv = dist[u, v]
            inside = (dist[:, u] < duv) & (dist[:, v] < duv)
            inside[u] = inside[v] = False
            if not inside.any():
                edges.add((u, v))
    return edges


def check_inclusion(inner: EdgeSet, outer) -> dict:
    """Check every undirected edge of ``inner`` appears in the directed graph.

    ``outer`` needs ``n`` and ``neighbors`` (per-node id arrays). An inner
    edge {u,v} is covered by either out-edge u->v or v->u.
    """
    for u, v in inner:
        if not (0 <= u < outer.n and 0 <= v < outer.n):
            raise ParameterError(f"edge ({u},{v}) outside vertex set of size {outer.n}")
    missing = []
    adj = [set(int(x) for x in nbrs) for nbrs in outer.neighbors]
    for u, v in sorted(inner):
        if v not in adj[u] and u not in adj[v]:
            missing.append((u, v))
    return {"holds": not missing, "missing": missing}


def write_edge_set(edges: EdgeSet, path: str | os.PathLike) -> None:
    """Export edges as sorted "u v" lines for diffing."""
    with open(os.fspath(path), "w") as f:
        for u, v in sorted(edges):
            f.write(f"{u} {v}\n")
