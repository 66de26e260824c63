"""Single-index approximation of a conditional CDF.

A direction ``v`` is chosen to minimise a sphere-indexed discrepancy between
the joint empirical law of ``(X, Y)`` and the law implied by smoothing
``1{Y <= y}`` on the projection ``v'X`` with a leave-two-out local-linear
estimator. The conditional CDF at a new point is then the full-sample
local-linear estimate on ``v'x``, sampled by inverse-CDF.

Both local-linear stages use a Gaussian kernel. Sums of kernel weights over
``{k : Y_k <= y}`` are running sums over the data sorted by response, so one
criterion evaluation costs O(n^2) rather than O(n^3).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import minimize

from .exceptions import (
    CdeBenchError,
    CriterionUndefinedError,
    DegenerateNeighborhoodError,
    InfeasibleDimensionError,
    SelectionError,
    UnsupportedModelError,
)
from .metrics import w1_rows
from .utils import invert_cdf

MEMORY_CAP_BYTES = 2 * 1024**3
SPHERE_RADIUS = 1.0
MAX_Y_GRID = 2048
_WEIGHT_FLOOR = 1e-12


def default_bandwidth_pairs():
    """(h, H) candidates: h in {0.1, 0.3, ..., 1.1}, H in {h+0.1, h+0.3, ...} up to 1.2."""
    pairs = []
    for h in np.round(np.arange(0.1, 1.11, 0.2), 10):
        H = h + 0.1
        while H <= 1.2 + 1e-9:
            pairs.append((float(h), float(round(H, 10))))
            H += 0.2
    return pairs


@dataclass(frozen=True)
class Bandwidths:
    h: float
    H: float

    def __post_init__(self):
        if self.h <= 0 or self.H <= 0:
            raise ValueError("bandwidths must be positive")


def normalize_direction(v):
    """Unit vector with its first nonzero component positive."""
    v = np.asarray(v, dtype=np.float64).ravel()
    norm = np.linalg.norm(v)
    if norm == 0 or not np.isfinite(norm):
        raise ValueError("direction must be a finite nonzero vector")
    v = v / norm
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v


def angles_to_direction(theta):
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    p = theta.size + 1
    v = np.empty(p)
    s = 1.0
    for k in range(p - 1):
        v[k] = s * math.cos(theta[k])
        s *= math.sin(theta[k])
    v[p - 1] = s
    return v


def direction_to_angles(v):
    v = np.asarray(v, dtype=np.float64)
    p = v.size
    theta = np.empty(p - 1)
    for k in range(p - 2):
        tail = np.linalg.norm(v[k:])
        theta[k] = math.acos(np.clip(v[k] / tail, -1.0, 1.0)) if tail > 0 else 0.0
    theta[p - 2] = math.atan2(v[p - 1], v[p - 2])
    return theta


def _kernel(d, bandwidth):
    return np.exp(-0.5 * (d / bandwidth) ** 2)


def local_linear_cdf(pairs, bandwidth, u0, y0):
    """Local-linear estimate of P(Y <= y0 | U = u0) from (u_i, y_i) pairs, clipped to [0, 1]."""
    pairs = np.asarray(pairs, dtype=np.float64)
    u, y = pairs[:, 0], pairs[:, 1]
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    d = u - u0
    w = _kernel(d, bandwidth)
    if np.unique(u[w > _WEIGHT_FLOOR]).size < 2:
        raise DegenerateNeighborhoodError(
            f"fewer than two distinct design points carry weight near u0={u0}"
        )
    ind = (y <= y0).astype(np.float64)
    s0, s1, s2 = w.sum(), (w * d).sum(), (w * d * d).sum()
    t0, t1 = (w * ind).sum(), (w * d * ind).sum()
    den = s0 * s2 - s1 * s1
    if den <= 1e-14 * s0 * s0 * bandwidth * bandwidth:
        raise DegenerateNeighborhoodError(f"singular local design at u0={u0}")
    return float(np.clip((s2 * t0 - s1 * t1) / den, 0.0, 1.0))


def nadaraya_watson_cdf(pairs, bandwidth, u0, y0):
    pairs = np.asarray(pairs, dtype=np.float64)
    w = _kernel(pairs[:, 0] - u0, bandwidth)
    if w.sum() <= 0:
        raise DegenerateNeighborhoodError(f"no kernel weight near u0={u0}")
    return float(np.sum(w * (pairs[:, 1] <= y0)) / w.sum())


@dataclass(frozen=True)
class SphereGrid:
    """Centres on a regular grid in [-half_width, half_width]^p, fixed radius."""

    p: int
    spacing: float
    radius: float = SPHERE_RADIUS
    half_width: float = SPHERE_RADIUS

    @property
    def points_per_axis(self):
        return int(math.floor(2.0 * self.half_width / self.spacing + 1e-9)) + 1

    @property
    def axis(self):
        m = self.points_per_axis
        return (np.arange(m) - (m - 1) / 2.0) * self.spacing

    @property
    def n_centers(self):
        return self.points_per_axis**self.p

    def memory_bytes(self, n):
        """Dense membership footprint of the full grid for n observations."""
        return self.n_centers * int(n) * 8

    def check_feasible(self, n, memory_cap=MEMORY_CAP_BYTES):
        need = self.memory_bytes(n)
        if need > memory_cap:
            raise InfeasibleDimensionError(
                f"sphere grid with {self.points_per_axis}^{self.p} centres needs ~{need:.3g} bytes "
                f"for n={n}, above the cap of {memory_cap:.3g}"
            )

    def centers(self):
        return np.array(list(itertools.product(self.axis, repeat=self.p)))

    def memberships(self, x, block=4096):
        """Sparse 0/1 matrix (nonempty spheres x observations)."""
        x = np.asarray(x, dtype=np.float64)
        r2 = self.radius**2
        x2 = np.sum(x * x, axis=1)
        rows, cols = [], []
        count = 0
        for chunk in _iter_product_blocks(self.axis, self.p, block):
            d2 = x2[None, :] + np.sum(chunk * chunk, axis=1)[:, None] - 2.0 * chunk @ x.T
            inside = d2 <= r2 + 1e-12
            keep = inside.any(axis=1)
            if keep.any():
                r, c = np.nonzero(inside[keep])
                rows.append(r + count)
                cols.append(c)
                count += int(keep.sum())
        if count == 0:
            return sparse.csr_matrix((0, len(x)))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        return sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(count, len(x)))


def _iter_product_blocks(axis, p, block):
    it = itertools.product(axis, repeat=p)
    while True:
        chunk = list(itertools.islice(it, block))
        if not chunk:
            return
        yield np.array(chunk)


class DirectionCriterion:
    """Precomputed pieces of the sphere criterion for one training sample."""

    def __init__(self, x, y, h, grid: SphereGrid, memory_cap=MEMORY_CAP_BYTES, block=256):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        if x.shape[0] != y.size or x.shape[0] < 3:
            raise ValueError("need at least three paired observations")
        grid.check_feasible(x.shape[0], memory_cap)
        order = np.argsort(y, kind="stable")
        self.x = x[order]
        self.y = y[order]
        self.n = y.size
        self.h = float(h)
        self.block = block
        # last sorted position with y_k <= y_j
        self.pos = np.searchsorted(self.y, self.y, side="right") - 1
        self.ties = not np.array_equal(self.pos, np.arange(self.n))
        members = grid.memberships(self.x)
        if members.shape[0] == 0:
            raise CriterionUndefinedError("no observation falls inside any sphere")
        self.members = members.tocsc()
        # empty spheres contribute zero, so uniform weights over all centres
        # reduce to a mean over the occupied ones times this fraction
        self.occupied_fraction = members.shape[0] / grid.n_centers
        dense = members.toarray()
        counts_le = np.cumsum(dense, axis=1)[:, self.pos]
        self.f_emp = (counts_le - dense) / (self.n - 1)
        self.marginal = (self.pos + 1.0) / self.n

    @property
    def n_spheres(self):
        return self.members.shape[0]

    def _leave_two_out_block(self, u, rows):
        """Leave-(i, j)-out local-linear CDF at u_i evaluated at Y_j, for i in rows."""
        d = u[None, :] - u[rows, None]
        w = _kernel(d, self.h)
        wd = w * d
        wdd = wd * d
        s0 = w.sum(axis=1) - 1.0
        s1 = wd.sum(axis=1)
        s2 = wdd.sum(axis=1)
        c0 = np.cumsum(w, axis=1)
        c1 = np.cumsum(wd, axis=1)
        if self.ties:
            c0, c1 = c0[:, self.pos], c1[:, self.pos]
        S0 = s0[:, None] - w
        S1 = s1[:, None] - wd
        S2 = s2[:, None] - wdd
        own = (self.y[rows, None] <= self.y[None, :]).astype(np.float64)
        T0 = c0 - own - w
        T1 = c1 - wd
        den = S0 * S2 - S1 * S1
        ok = den > 1e-10 * np.maximum(S0 * S0, 1e-300) * self.h**2
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(ok, (S2 * T0 - S1 * T1) / np.where(ok, den, 1.0), T0 / S0)
        empty = ~(S0 > _WEIGHT_FLOOR)
        if empty.any():
            g = np.where(empty, self.marginal[None, :], g)
        g = np.clip(g, 0.0, 1.0)
        g[np.arange(len(rows)), rows] = 0.0
        return g

    def __call__(self, v):
        u = self.x @ np.asarray(v, dtype=np.float64)
        h_sum = np.zeros((self.n_spheres, self.n))
        for start in range(0, self.n, self.block):
            rows = np.arange(start, min(start + self.block, self.n))
            g = self._leave_two_out_block(u, rows)
            h_sum += self.members[:, rows] @ g
        resid = self.f_emp - h_sum / (self.n - 1)
        return float(np.mean(np.mean(resid * resid, axis=1)) * self.occupied_fraction)


def criterion_S(v, data, h, grid: SphereGrid, memory_cap=MEMORY_CAP_BYTES):
    """Sphere-averaged squared discrepancy for direction ``v`` (always >= 0)."""
    _check_univariate(data)
    return DirectionCriterion(data.x, data.y, h, grid, memory_cap)(normalize_direction(v))


def _check_univariate(data):
    if data.y.shape[1] != 1:
        raise UnsupportedModelError("the single-index estimator needs a univariate response")


def fit_direction(data, h, grid: SphereGrid | None = None, restarts=10, seed=None,
                  memory_cap=MEMORY_CAP_BYTES, criterion=None, maxfev=None):
    """Nelder-Mead over spherical angles from several random starts; best result in Theta."""
    _check_univariate(data)
    p = data.p
    if p == 1:
        return np.array([1.0])
    grid = grid or SphereGrid(p, h)
    crit = criterion or DirectionCriterion(data.x, data.y, h, grid, memory_cap)
    rng = np.random.default_rng(seed)
    maxfev = maxfev or 80 + 40 * (p - 1)

    def objective(theta):
        val = crit(angles_to_direction(theta))
        return val if np.isfinite(val) else np.inf

    best_v, best_f = None, np.inf
    for _ in range(max(1, restarts)):
        start_v = normalize_direction(rng.standard_normal(p))
        theta0 = direction_to_angles(start_v)
        f0 = objective(theta0)
        if f0 < best_f:
            best_v, best_f = start_v, f0
        simplex = np.vstack([theta0] + [theta0 + 0.3 * e for e in np.eye(p - 1)])
        res = minimize(
            objective, theta0, method="Nelder-Mead",
            options=dict(initial_simplex=simplex, xatol=1e-3,
                         fatol=max(1e-4 * f0, 1e-14) if np.isfinite(f0) else 1e-14,
                         maxfev=maxfev),
        )
        if np.isfinite(res.fun) and res.fun < best_f:
            best_v, best_f = angles_to_direction(res.x), float(res.fun)
    if best_v is None:
        best_v = normalize_direction(np.eye(p)[0])
    return normalize_direction(best_v)


@dataclass
class SingleIndexModel:
    direction: np.ndarray
    bandwidth: float
    u: np.ndarray
    y: np.ndarray
    y_grid: np.ndarray
    h: float | None = None
    criterion_value: float | None = None
    n_fallbacks: int = field(default=0, repr=False)

    def __post_init__(self):
        self._y_order = np.argsort(self.y, kind="stable")
        ys = self.y[self._y_order]
        self._grid_pos = np.searchsorted(ys, self.y_grid, side="right") - 1

    @property
    def p(self):
        return self.direction.size

    def cdf(self, x, block=256):
        """Monotone-rearranged CDF values on ``y_grid`` for each row of x."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        u0 = x @ self.direction
        out = np.empty((u0.size, self.y_grid.size))
        uo = self.u[self._y_order]
        for start in range(0, u0.size, block):
            uu = u0[start:start + block]
            d = uo[None, :] - uu[:, None]
            # rescaling all weights by a common factor leaves the estimate unchanged
            z = 0.5 * (d / self.bandwidth) ** 2
            w = np.exp(-(z - z.min(axis=1, keepdims=True)))
            wd = w * d
            s0, s1, s2 = w.sum(axis=1), wd.sum(axis=1), (wd * d).sum(axis=1)
            pos = np.maximum(self._grid_pos, 0)
            t0 = np.cumsum(w, axis=1)[:, pos]
            t1 = np.cumsum(wd, axis=1)[:, pos]
            below = self._grid_pos < 0
            t0[:, below] = 0.0
            t1[:, below] = 0.0
            den = s0 * s2 - s1 * s1
            live = (w > _WEIGHT_FLOOR).sum(axis=1) >= 2
            ok = live & (den > 1e-10 * s0 * s0 * self.bandwidth**2)
            self.n_fallbacks += int((~ok).sum())
            ll = (s2[:, None] * t0 - s1[:, None] * t1) / np.where(ok, den, 1.0)[:, None]
            nw = t0 / s0[:, None]
            out[start:start + block] = np.where(ok[:, None], ll, nw)
        return np.clip(np.sort(out, axis=1), 0.0, 1.0)

    def sample(self, x, n, seed=None):
        return self.sample_batch(np.atleast_2d(x), n, seed)[0, :, 0]

    def sample_batch(self, x, n, seed=None):
        rng = np.random.default_rng(seed)
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.empty((x.shape[0], n, 1))
        for start in range(0, x.shape[0], 256):
            cdf = self.cdf(x[start:start + 256])
            for r in range(cdf.shape[0]):
                out[start + r, :, 0] = invert_cdf(cdf[r], self.y_grid, rng.uniform(size=n))
        return out


def _response_grid(y, max_points=MAX_Y_GRID):
    grid = np.unique(y)
    if grid.size > max_points:
        idx = np.unique(np.linspace(0, grid.size - 1, max_points).round().astype(int))
        grid = grid[idx]
    return grid


def build_model(data, direction, H, h=None, criterion_value=None):
    """Full-sample conditional CDF estimator on a given direction."""
    v = normalize_direction(direction)
    y = np.asarray(data.y, dtype=np.float64)[:, 0]
    u = np.asarray(data.x, dtype=np.float64) @ v
    order = np.argsort(u, kind="stable")
    return SingleIndexModel(v, float(H), u[order], y[order], _response_grid(y), h, criterion_value)


def fit(train, bandwidths: Bandwidths, grid: SphereGrid | None = None, seed=None, restarts=10,
        memory_cap=MEMORY_CAP_BYTES, direction=None) -> SingleIndexModel:
    """Estimate the direction with bandwidth h, then the conditional CDF with H."""
    _check_univariate(train)
    if direction is None:
        grid = grid or SphereGrid(train.p, bandwidths.h)
        if train.p > 1:
            grid.check_feasible(train.n, memory_cap)
        direction = fit_direction(train, bandwidths.h, grid, restarts, seed, memory_cap)
    return build_model(train, direction, bandwidths.H, bandwidths.h)


def sample(model: SingleIndexModel, x, n, seed=None):
    return model.sample(x, n, seed)


def select_bandwidths(train, val, pairs=None, reference_sampler=None, n_val_points=50,
                      n_samples=500, seed=None, restarts=10, memory_cap=MEMORY_CAP_BYTES,
                      fitter=None):
    """Grid search over (h, H) minimising mean W1 to the true conditional law on validation points.

    ``fitter(train, bandwidths, seed)`` may replace the default estimator; by
    default directions are estimated once per distinct ``h``.
    """
    pairs = list(pairs) if pairs is not None else default_bandwidth_pairs()
    if not pairs:
        raise SelectionError("no bandwidth candidates")
    if len(pairs) == 1:
        return Bandwidths(*pairs[0])
    if reference_sampler is None:
        from .datagen import true_cond_sample

        if val.model is None:
            raise SelectionError("validation data carries no model id for the reference sampler")
        reference_sampler = lambda xs, n, s: true_cond_sample(val.model, xs, n, s)  # noqa: E731
    rng = np.random.default_rng(seed)
    pick = rng.choice(val.n, size=min(n_val_points, val.n), replace=False)
    xv = val.x[pick]
    ref = reference_sampler(xv, n_samples, int(rng.integers(2**32)))
    fit_seed = int(rng.integers(2**32))
    sample_seed = int(rng.integers(2**32))

    directions = {}

    def default_fitter(data, bw, s):
        if bw.h not in directions:
            directions[bw.h] = fit_direction(data, bw.h, None, restarts, s, memory_cap)
        return build_model(data, directions[bw.h], bw.H, bw.h)

    fitter = fitter or default_fitter
    scores, failures = {}, {}
    for h, H in pairs:
        try:
            model = fitter(train, Bandwidths(h, H), fit_seed)
            est = model.sample_batch(xv, n_samples, sample_seed)
            scores[(h, H)] = float(np.mean(w1_rows(est, ref)))
        except (CdeBenchError, MemoryError, ValueError) as exc:
            failures[(h, H)] = f"{type(exc).__name__}: {exc}"
    if not scores:
        detail = "; ".join(f"{k}: {v}" for k, v in failures.items())
        raise SelectionError(f"every bandwidth pair failed: {detail}")
    best = min(scores, key=scores.get)
    out = Bandwidths(*best)
    object.__setattr__(out, "scores", scores)
    object.__setattr__(out, "failures", failures)
    return out


def feasible_bandwidths(p, n, preferred=(0.5, 0.7), memory_cap=MEMORY_CAP_BYTES):
    """First (h, H) on the default grid, starting at ``preferred``, whose sphere grid fits.

    Returns None when even the coarsest grid is too large.
    """
    h0, H0 = preferred
    gap = H0 - h0
    for h in [h0] + [c for c in np.round(np.arange(0.1, 1.11, 0.2), 10) if c > h0 + 1e-9]:
        grid = SphereGrid(p, float(h))
        if p == 1 or grid.memory_bytes(n) <= memory_cap:
            return Bandwidths(float(h), float(round(h + gap, 10)))
    return None


def fit_method(train_data, val_data=None, seed=None, h=0.5, H=0.7, restarts=10, select=False,
               grid_spacing=None, memory_cap=MEMORY_CAP_BYTES, select_kwargs=None):
    """Harness entry point; optionally runs the bandwidth grid search first."""
    if select:
        if val_data is None:
            raise SelectionError("bandwidth selection needs a validation sample")
        bw = select_bandwidths(train_data, val_data, seed=seed, restarts=restarts,
                               memory_cap=memory_cap, **(select_kwargs or {}))
    else:
        bw = Bandwidths(h, H)
    grid = SphereGrid(train_data.p, grid_spacing or bw.h)
    return fit(train_data, bw, grid, seed, restarts, memory_cap)
