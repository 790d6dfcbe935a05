"""Per-node intrinsic-dimensionality estimation and pruning-strength mapping.

The estimator is the maximum-likelihood form over the k nearest-neighbor
distances r_1 <= ... <= r_k of a point:

    lid = -( (1/k) * sum_i ln(r_i / r_k) )^(-1)

The i = k term contributes zero and is kept as written. Per-node estimates
are z-normalized against the population and squashed through a logistic
onto (alpha_min, alpha_max): low-dimensionality nodes get weaker occlusion
pruning (larger alpha), high-dimensionality nodes stronger (closer to 1.0).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import VectorDataset
from .errors import DegenerateInputError, IndexFormatError, ParameterError
from .geometry import squared_dists

# Strict (alpha_min, alpha_max) bounds survive float64 saturation of the
# logistic via this clamp margin.
ALPHA_CLAMP_EPS = 1e-12

# Above this many points, per-node kNN runs against a seeded uniform sample
# of 10 * k_lid * sqrt(N) candidates instead of the full dataset.
EXACT_CALIBRATION_LIMIT = 100_000

_SAMPLING_SEED = 0x1D5EED

PROFILE_MAGIC = b"MCGL"
PROFILE_VERSION = 1
_PROFILE_HEADER = struct.Struct("<4sIQIdd")


@dataclass
class LidProfile:
    """Per-node LID estimates with their population statistics."""

    lids: np.ndarray
    mu: float
    sigma: float
    k_lid: int
    # Nodes without k_lid distinct neighbors; they carry the population mean.
    fallback_nodes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


@dataclass
class MappingConfig:
    """Operational pruning range; alpha_max > alpha_min >= 1.0."""

    alpha_min: float = 1.0
    alpha_max: float = 1.5

    def __post_init__(self):
        if not (self.alpha_max > self.alpha_min >= 1.0):
            raise ParameterError(
                f"require alpha_max > alpha_min >= 1.0, got "
                f"[{self.alpha_min}, {self.alpha_max}]"
            )


def estimate_lid_mle(sorted_distances) -> float:
    """MLE intrinsic-dimension estimate from ascending neighbor distances."""
    r = np.asarray(sorted_distances, dtype=np.float64).ravel()
    k = r.shape[0]
    if k < 2:
        raise ParameterError(f"need at least 2 neighbor distances, got {k}")
    if np.any(np.diff(r) < 0):
        raise ParameterError("distances must be sorted ascending")
    if np.any(r <= 0):
        raise DegenerateInputError("duplicate or coincident point")
    s = float(np.mean(np.log(r / r[-1])))
    if s == 0.0:
        raise DegenerateInputError("zero-variance neighborhood")
    return -1.0 / s


def _knn_distance_rows(x64: np.ndarray, cand64: np.ndarray, cand_ids: np.ndarray,
                       k: int, extra: int = 8) -> np.ndarray:
    """Sorted distances from each point of x64 to its nearest candidates.

    Returns an (n, min(k + extra, candidates)) matrix of exact distances,
    ascending per row, with a point's own candidate entry excluded.
    Candidate selection uses the Gram identity for speed; the selected
    distances are then recomputed directly so exact zeros survive.
    """
    n = x64.shape[0]
    m = cand64.shape[0]
    take = min(m - 1 if cand_ids is None else m, k + extra)
    sq_x = np.einsum("ij,ij->i", x64, x64)
    sq_c = np.einsum("ij,ij->i", cand64, cand64)
    out = np.empty((n, take))
    pos_of = None
    if cand_ids is not None:
        pos_of = -np.ones(n, dtype=np.int64)
        pos_of[cand_ids] = np.arange(m)
    chunk = max(1, (1 << 24) // max(m, 1))
    for start in range(0, n, chunk):
        end = min(start + chunk, n)
        d2 = sq_x[start:end, None] + sq_c[None, :] - 2.0 * (x64[start:end] @ cand64.T)
        np.maximum(d2, 0.0, out=d2)
        for i in range(end - start):
            u = start + i
            row = d2[i]
            self_pos = u if pos_of is None else pos_of[u]
            if self_pos >= 0:
                row[self_pos] = np.inf
            idx = np.argpartition(row, take - 1)[:take] if take < m else np.arange(m)
            idx = idx[row[idx] < np.inf]
            exact = squared_dists(cand64[idx], x64[u])
            out[u, : idx.shape[0]] = np.sort(np.sqrt(exact))
            if idx.shape[0] < take:
                out[u, idx.shape[0]:] = np.inf
    return out


def calibrate(base: VectorDataset, k_lid: int) -> LidProfile:
    """Estimate every node's LID from its k_lid nearest non-coincident neighbors.

    Coincident neighbors (zero distance) are skipped in favor of the next
    ones. Nodes that cannot supply k_lid positive distances, or whose
    neighborhood has zero variance, are reported as fallbacks and assigned
    the mean of the valid estimates.
    """
    n = base.count
    if k_lid < 2:
        raise ParameterError(f"k_lid must be >= 2, got {k_lid}")
    if k_lid + 1 > n:
        raise ParameterError(f"k_lid={k_lid} needs at least {k_lid + 1} points, got {n}")
    x64 = base.values.astype(np.float64)

    if n > EXACT_CALIBRATION_LIMIT:
        rng = np.random.default_rng(_SAMPLING_SEED)
        size = min(n, int(10 * k_lid * np.sqrt(n)))
        cand_ids = np.sort(rng.choice(n, size=size, replace=False))
        rows = _knn_distance_rows(x64, x64[cand_ids], cand_ids, k_lid)
    else:
        rows = _knn_distance_rows(x64, x64, None, k_lid)

    lids = np.empty(n)
    fallback = []
    for u in range(n):
        r = rows[u]
        r = r[(r > 0) & np.isfinite(r)]
        if r.shape[0] < k_lid:
            # Too many coincident candidates in the buffered window: rescan
            # this node against everything before giving up.
            d2 = squared_dists(x64, x64[u])
            d2[u] = np.inf
            r = np.sqrt(np.sort(d2[np.isfinite(d2)]))
            r = r[r > 0]
        if r.shape[0] < k_lid:
            fallback.append(u)
            lids[u] = np.nan
            continue
        r = r[:k_lid]
        s = float(np.mean(np.log(r / r[-1])))
        if s == 0.0:
            fallback.append(u)
            lids[u] = np.nan
        else:
            lids[u] = -1.0 / s

    valid = ~np.isnan(lids)
    if not valid.any():
        raise DegenerateInputError(
            f"calibration failed: no node has {k_lid} distinct neighbors"
        )
    if fallback:
        lids[~valid] = float(np.mean(lids[valid]))
    return LidProfile(
        lids=lids,
        mu=float(np.mean(lids)),
        sigma=float(np.std(lids)),
        k_lid=k_lid,
        fallback_nodes=np.asarray(fallback, dtype=np.int64),
    )


def z_score(lid: float, profile: LidProfile) -> float:
    if profile.sigma <= 0:
        raise DegenerateInputError("zero geometric variance")
    return (lid - profile.mu) / profile.sigma


def _logistic(z: np.ndarray) -> np.ndarray:
    """1 / (1 + exp(z)), evaluated stably on both tails."""
    out = np.empty_like(z)
    pos = z >= 0
    ez = np.exp(-z[pos])
    out[pos] = ez / (1.0 + ez)
    out[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
    return out


def map_alpha_array(z: np.ndarray, cfg: MappingConfig) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if not np.isfinite(z).all():
        raise ParameterError("non-finite z-score")
    a = cfg.alpha_min + (cfg.alpha_max - cfg.alpha_min) * _logistic(z)
    return np.clip(a, cfg.alpha_min + ALPHA_CLAMP_EPS, cfg.alpha_max - ALPHA_CLAMP_EPS)


def map_alpha(z: float, cfg: MappingConfig) -> float:
    """Logistic map from a z-scored LID to a pruning parameter in (alpha_min, alpha_max)."""
    return float(map_alpha_array(np.array([z]), cfg)[0])


def compute_alphas(profile: LidProfile, cfg: MappingConfig) -> np.ndarray:
    """Per-node pruning parameters from a calibration profile."""
    if profile.sigma <= 0:
        raise DegenerateInputError("zero geometric variance")
    z = (profile.lids - profile.mu) / profile.sigma
    return map_alpha_array(z, cfg)


def uniform_alphas(n: int, alpha: float) -> np.ndarray:
    """Constant pruning parameter for every node (fixed-alpha baseline mode)."""
    if alpha < 1.0:
        raise ParameterError(f"alpha must be >= 1.0, got {alpha}")
    return np.full(n, float(alpha))


def save_profile(profile: LidProfile, path: str | os.PathLike) -> None:
    """Binary sidecar: magic, version, N, k_lid, mu, sigma, then N float32 lids."""
    header = _PROFILE_HEADER.pack(
        PROFILE_MAGIC, PROFILE_VERSION, profile.lids.shape[0],
        profile.k_lid, profile.mu, profile.sigma,
    )
    with open(os.fspath(path), "wb") as f:
        f.write(header)
        f.write(profile.lids.astype("<f4").tobytes())


def load_profile(path: str | os.PathLike) -> LidProfile:
    with open(os.fspath(path), "rb") as f:
        raw = f.read()
    if len(raw) < _PROFILE_HEADER.size:
        raise IndexFormatError(f"{path}: truncated profile header at byte {len(raw)}")
    magic, version, n, k_lid, mu, sigma = _PROFILE_HEADER.unpack_from(raw)
    if magic != PROFILE_MAGIC:
        raise IndexFormatError(f"{path}: bad magic {magic!r}")
    if version != PROFILE_VERSION:
        raise IndexFormatError(f"{path}: unsupported profile version {version}")
    expected = _PROFILE_HEADER.size + 4 * n
    if len(raw) != expected:
        raise IndexFormatError(
            f"{path}: profile truncated at byte {len(raw)}, expected {expected}"
        )
    lids = np.frombuffer(raw, dtype="<f4", offset=_PROFILE_HEADER.size).astype(np.float64)
    return LidProfile(lids=lids, mu=mu, sigma=sigma, k_lid=k_lid)


def profile_to_csv(profile: LidProfile, path: str | os.PathLike) -> None:
    with open(os.fspath(path), "w") as f:
        f.write("node,lid\n")
        for i, v in enumerate(profile.lids):
            f.write(f"{i},{v:.6f}\n")


def default_k_lid(dim: int) -> int:
    """Neighborhood size default by dimensionality family (SIFT-like vs wider)."""
    return 32 if dim <= 128 else 50
