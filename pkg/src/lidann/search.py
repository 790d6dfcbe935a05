"""Best-first beam search over a proximity graph, plus the adaptive budget.

The candidate list holds every scored node; the working beam is the L
closest discovered so far. Expansion always takes the globally closest
unexpanded node and stops once that node falls outside the current top-L.
Keeping the full candidate pool (rather than trimming to L) lets the
adaptive path widen the beam mid-search without rescoring anything.

All ordering is on (squared distance, node id), so results are
deterministic and the visited set grows monotonically with L.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .data import VectorDataset
from .errors import DegenerateInputError, ParameterError
from .geometry import squared_dists
from .lid import LidProfile, estimate_lid_mle


@dataclass
class SearchParams:
    beam: int = 100
    k: int = 10
    adaptive: bool = False
    lam: float = 0.25  # exponential rate per LID unit
    beam_min: int = 10
    beam_max: int = 400
    pilot_beam: int = 10
    pilot_k: int = 10

    def __post_init__(self):
        if self.beam < 1 or self.k < 1:
            raise ParameterError("beam and k must be positive")
        if self.beam_min > self.beam_max:
            raise ParameterError("beam_min must be <= beam_max")
        if self.pilot_k < 2:
            raise ParameterError("pilot_k must be >= 2")
        if self.lam < 0:
            raise ParameterError("lambda must be non-negative")
        if self.adaptive and self.k > self.beam_max:
            raise ParameterError("k must be <= beam_max in adaptive mode")


@dataclass
class SearchStats:
    distance_evals: int = 0
    hops: int = 0
    nodes_read: int = 0
    beam_used: int = 0


@dataclass
class SearchResult:
    ids: np.ndarray
    distances: np.ndarray
    stats: SearchStats


class MemorySource:
    """Search view over an in-memory graph and its vectors.

    Any object with n, dim, entry_point, vecs64 and neighbor_ids() works as
    a search source; the disk reader provides the same surface.
    """

    def __init__(self, graph, base: VectorDataset, vecs64: np.ndarray | None = None):
        self.graph = graph
        self.n = graph.n
        self.dim = base.dim
        self.entry_point = graph.entry_point
        self.vecs64 = base.values.astype(np.float64) if vecs64 is None else vecs64

    def neighbor_ids(self, u: int) -> np.ndarray:
        return self.graph.neighbors[u]


class _BeamState:
    """Resumable search state: everything scored so far plus frontier heaps."""

    __slots__ = (
        "visited", "expanded_mask", "cand", "discovered", "expanded",
        "distance_evals", "hops", "nodes_read",
    )

    def __init__(self, source, q64: np.ndarray):
        n = source.n
        self.visited = np.zeros(n, dtype=bool)
        self.expanded_mask = np.zeros(n, dtype=bool)
        self.cand: list[tuple[float, int]] = []
        self.discovered: list[tuple[float, int]] = []
        self.expanded: list[tuple[float, int]] = []
        self.distance_evals = 0
        self.hops = 0
        self.nodes_read = 0
        entry = int(source.entry_point)
        d2 = float(squared_dists(source.vecs64[entry:entry + 1], q64)[0])
        self.distance_evals += 1
        self.visited[entry] = True
        heapq.heappush(self.cand, (d2, entry))
        self.discovered.append((d2, entry))


def _advance(source, q64: np.ndarray, state: _BeamState, beam: int,
             keep_all: bool = False) -> None:
    """Run the search until every node in the current top-`beam` is expanded.

    Scored nodes that fall outside the current top-`beam` can never be
    expanded at this width, so they are dropped unless ``keep_all`` is set
    (required when the caller may later resume at a wider beam).
    """
    # Worst-of-beam threshold as a max-heap over (d2, id), negated.
    top = [(-d2, -i) for d2, i in heapq.nsmallest(beam, state.discovered)]
    heapq.heapify(top)
    cand = state.cand
    discovered = state.discovered
    visited = state.visited
    vecs64 = source.vecs64
    push, pushpop, pop = heapq.heappush, heapq.heappushpop, heapq.heappop
    while cand:
        d2, u = cand[0]
        if len(top) >= beam and (d2, u) > (-top[0][0], -top[0][1]):
            break
        pop(cand)
        state.expanded_mask[u] = True
        state.expanded.append((d2, u))
        state.hops += 1
        nbrs = source.neighbor_ids(u)
        state.nodes_read += 1
        if len(nbrs) == 0:
            continue
        nbrs = np.asarray(nbrs)
        new = nbrs[~visited[nbrs]]
        if new.size == 0:
            continue
        visited[new] = True
        d2new = squared_dists(vecs64[new], q64)
        state.distance_evals += int(new.size)
        full = len(top) >= beam
        for item in zip(d2new.tolist(), new.tolist()):
            neg = (-item[0], -item[1])
            if not full:
                push(top, neg)
                full = len(top) >= beam
            elif neg > top[0]:
                pushpop(top, neg)
            elif not keep_all:
                continue
            push(cand, item)
            discovered.append(item)


def _extract_topk(state: _BeamState, k: int, stats: SearchStats) -> SearchResult:
    best = heapq.nsmallest(k, state.discovered)
    ids = np.array([i for _, i in best], dtype=np.int64)
    dists = np.sqrt(np.array([d2 for d2, _ in best]))
    return SearchResult(ids=ids, distances=dists, stats=stats)


def _as_query64(source, q) -> np.ndarray:
    q64 = np.asarray(q, dtype=np.float64).ravel()
    if q64.shape[0] != source.dim:
        raise ParameterError(f"query dim {q64.shape[0]} != index dim {source.dim}")
    return q64


def beam_search(source, q, beam: int, k: int) -> SearchResult:
    """Static-budget top-k search from the source's entry point."""
    if source.n < 1:
        raise ParameterError("empty graph")
    if not (1 <= k <= beam):
        raise ParameterError(f"require 1 <= k <= beam, got k={k}, beam={beam}")
    q64 = _as_query64(source, q)
    state = _BeamState(source, q64)
    _advance(source, q64, state, beam)
    stats = SearchStats(
        distance_evals=state.distance_evals, hops=state.hops,
        nodes_read=state.nodes_read, beam_used=beam,
    )
    return _extract_topk(state, min(k, len(state.discovered)), stats)


def estimate_query_lid(pilot_distances, pilot_k: int) -> float | None:
    """Query-side LID from the pilot's smallest distances.

    Returns None when a zero distance is present: the query coincides with
    a base vector, the estimate is undefined, and the caller should stay at
    the minimum budget (the exact hit is already in hand).
    """
    d = np.sort(np.asarray(pilot_distances, dtype=np.float64).ravel())
    if d.shape[0] < pilot_k:
        raise ParameterError(
            f"need at least pilot_k={pilot_k} pilot distances, got {d.shape[0]}"
        )
    d = d[:pilot_k]
    if d[0] == 0.0:
        return None
    return estimate_lid_mle(d)


def adaptive_beam_search(source, q, params: SearchParams, profile: LidProfile) -> SearchResult:
    """Two-stage search: a pilot probe sizes the beam from the query's LID.

    The final budget is beam_min * exp(lambda * (lid_q - mu)) rounded and
    clamped to [beam_min, beam_max]; centering on the population mean makes
    beam_min the budget of an average-complexity query. The second stage
    resumes from the pilot's frontier, so pilot work is never repeated.
    """
    if not params.adaptive:
        raise ParameterError("params.adaptive must be true")
    if source.n < 1:
        raise ParameterError("empty graph")
    q64 = _as_query64(source, q)
    floor = max(params.beam_min, params.k)
    state = _BeamState(source, q64)
    # The pilot keeps every scored node so the widened stage can resume.
    _advance(source, q64, state, params.pilot_beam, keep_all=True)

    pilot = heapq.nsmallest(params.pilot_k, state.discovered)
    beam_used = floor
    if len(pilot) >= params.pilot_k and pilot[0][0] > 0.0:
        try:
            lid_q = estimate_query_lid(np.sqrt([d2 for d2, _ in pilot]), params.pilot_k)
        except DegenerateInputError:
            lid_q = None
        if lid_q is not None:
            exponent = params.lam * (lid_q - profile.mu)
            cap = math.log(params.beam_max / max(params.beam_min, 1)) + 1.0
            if exponent >= cap:
                beam_used = params.beam_max
            else:
                beam_used = int(round(params.beam_min * math.exp(exponent)))
            beam_used = min(max(beam_used, floor), params.beam_max)

    _advance(source, q64, state, beam_used)
    stats = SearchStats(
        distance_evals=state.distance_evals, hops=state.hops,
        nodes_read=state.nodes_read, beam_used=beam_used,
    )
    return _extract_topk(state, min(params.k, len(state.discovered)), stats)


def recall_at_k(result: SearchResult, truth_row, k: int) -> float:
    """Fraction of the true top-k present in the returned top-k."""
    truth = np.asarray(truth_row).ravel()
    if k > truth.shape[0] or k > result.ids.shape[0]:
        raise ParameterError(
            f"k={k} exceeds result ({result.ids.shape[0]}) or truth ({truth.shape[0]})"
        )
    return len(set(result.ids[:k].tolist()) & set(truth[:k].tolist())) / k


def routing_difficulty_experiment(
    d_list, n: int, trials: int, seed: int,
    ambient_dim: int = 32, max_degree: int = 24, beam_build: int = 48,
) -> list[dict]:
    """Greedy (beam=1) routing success and cost as intrinsic dimension grows.

    For each d: build an index on uniform-ball data of intrinsic dimension
    d, route `trials` fresh on-manifold queries greedily from the entry
    point, and record the fraction that land on the true nearest neighbor
    plus the distance evaluations spent.
    """
    from .data import generate_with_queries
    from .geometry import exact_knn
    from .graph import BuildParams, build
    from .lid import uniform_alphas

    rows = []
    for d in d_list:
        if d > ambient_dim:
            raise ParameterError(f"intrinsic dim {d} exceeds ambient {ambient_dim}")
        base, queries = generate_with_queries(
            "uniform-ball", n, ambient_dim, d, seed=seed + d, n_queries=trials,
        )
        params = BuildParams(max_degree=max_degree, beam_build=beam_build, seed=seed)
        graph = build(base, params, uniform_alphas(n, 1.2))
        source = MemorySource(graph, base)
        hits = 0
        evals = np.empty(trials)
        for t in range(trials):
            res = beam_search(source, queries.values[t], beam=1, k=1)
            true_nn = exact_knn(base, queries.values[t], 1)[0][0]
            hits += int(res.ids[0] == true_nn)
            evals[t] = res.stats.distance_evals
        rows.append({
            "d": int(d),
            "success_rate": hits / trials,
            "mean_distance_evals": float(evals.mean()),
        })
    return rows
