"""Discrepancy measures between estimated and true conditional distributions."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import DimensionError

DEFAULT_N_PROJ = 50


@dataclass
class MetricsReport:
    mse_mean: float
    mse_sd: float
    w1: float
    train_time_s: float = 0.0
    sample_time_s: float = 0.0

    def as_dict(self):
        return asdict(self)


def _paired(est, truth):
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.ndim == 1:
        est = est[:, None]
    if truth.ndim == 1:
        truth = truth[:, None]
    if est.shape != truth.shape or est.shape[0] < 1:
        raise DimensionError(f"shape mismatch: {est.shape} vs {truth.shape}")
    return est, truth


def mse_mean(est, truth) -> float:
    """Average squared Euclidean error between estimated and true conditional means."""
    est, truth = _paired(est, truth)
    return float(np.mean(np.sum((est - truth) ** 2, axis=1)))


def mse_sd(est, truth) -> float:
    """Same average squared error, applied to conditional standard deviations."""
    est, truth = _paired(est, truth)
    return float(np.mean(np.sum((est - truth) ** 2, axis=1)))


def w1_empirical(a, b) -> float:
    """Exact 1-Wasserstein distance between two univariate empirical measures.

    Integrates ``|F_a - F_b|`` over the merged support, which equals the
    integral of the absolute quantile difference and handles unequal sizes.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("w1_empirical needs non-empty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    merged = np.concatenate([a, b])
    merged.sort(kind="mergesort")
    gaps = np.diff(merged)
    cdf_a = np.searchsorted(a, merged[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, merged[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * gaps))


def random_directions(q, n_proj, seed):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dirs = rng.standard_normal((n_proj, q))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise RuntimeError("zero-length projection direction")
    return dirs / norms


def sliced_w1(a, b, n_proj: int = DEFAULT_N_PROJ, seed=0) -> float:
    """Mean 1-D Wasserstein distance over random unit projections."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if n_proj < 1:
        raise ValueError("n_proj must be >= 1")
    dirs = random_directions(a.shape[1], n_proj, seed)
    pa, pb = a @ dirs.T, b @ dirs.T
    return float(np.mean([w1_empirical(pa[:, k], pb[:, k]) for k in range(n_proj)]))


def w1_rows(est, ref, n_proj=DEFAULT_N_PROJ, seed=0):
    """Per-row distances between two stacks of samples shaped (k, n, q).

    Uses the 1-D distance for q = 1 and the sliced distance, with one shared set
    of directions, otherwise.
    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.ndim == 2:
        est = est[:, :, None]
    if ref.ndim == 2:
        ref = ref[:, :, None]
    if est.shape[0] != ref.shape[0] or est.shape[2] != ref.shape[2]:
        raise DimensionError(f"shape mismatch: {est.shape} vs {ref.shape}")
    q = est.shape[2]
    if q == 1:
        pe, pr = est, ref
    else:
        dirs = random_directions(q, n_proj, seed)
        pe, pr = est @ dirs.T, ref @ dirs.T
    if pe.shape[1] == pr.shape[1]:
        d = np.abs(np.sort(pe, axis=1) - np.sort(pr, axis=1)).mean(axis=1)
        return d.mean(axis=1)
    out = np.empty(est.shape[0])
    for i in range(est.shape[0]):
        out[i] = np.mean([w1_empirical(pe[i, :, k], pr[i, :, k]) for k in range(pe.shape[2])])
    return out
