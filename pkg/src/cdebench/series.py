"""Orthogonal-series conditional density estimation on a cosine basis.

The response is mapped to [0, 1] and the conditional density is expanded as
``f(y | x) = sum_j beta_j(x) phi_j(y)`` with ``beta_j(x) = E[phi_j(Y) | X = x]``.
FlexCode estimates each coefficient function by a separate regression and
truncates the expansion on validation loss; DeepCDE predicts all coefficients
with one network trained on the CDE loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import RandomForestRegressor
from sklearn.neighbors import KNeighborsRegressor

from .exceptions import DimensionError, NotFittedError, TrainingError, UnsupportedModelError
from .nn import MLP, Adam, MlpSpec, minibatches
from .scaling import Standardizer, UnitIntervalScaler
from .utils import invert_cdf, trapezoid

J_MAX = 31
SAMPLE_GRID_POINTS = 513
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class CosineBasis:
    j_max: int = J_MAX

    def eval(self, j, y):
        """phi_j(y) for 1-based index j."""
        if not 1 <= j <= self.j_max:
            raise IndexError(f"basis index {j} outside 1..{self.j_max}")
        y = np.asarray(y, dtype=np.float64)
        if j == 1:
            return np.ones_like(y)
        return _SQRT2 * np.cos((j - 1) * np.pi * y)

    def matrix(self, y, n_terms=None):
        """Design matrix with columns phi_1..phi_J evaluated at ``y``."""
        n_terms = self.j_max if n_terms is None else n_terms
        y = np.asarray(y, dtype=np.float64).ravel()
        k = np.arange(n_terms)
        out = _SQRT2 * np.cos(np.pi * y[:, None] * k[None, :])
        out[:, 0] = 1.0
        return out


def basis_eval(j, y, j_max=J_MAX):
    return CosineBasis(j_max).eval(j, y)


def _cde_loss_from_coefs(coefs, phi_y):
    return float(np.mean(np.sum(coefs * coefs, axis=1) - 2.0 * np.sum(coefs * phi_y, axis=1)))


def _prefix_losses(coefs, phi_y):
    """CDE loss of every truncation J = 1..J_max at once."""
    per_term = np.mean(coefs * coefs - 2.0 * coefs * phi_y, axis=0)
    return np.cumsum(per_term)


class ConstantRegressor:
    def __init__(self, value=1.0):
        self.value = value

    def fit(self, x, t):
        return self

    def predict(self, x):
        return np.full(len(x), self.value)


def make_regressor(kind="random_forest", n_train=None, seed=None, **params):
    """Coefficient regressor with the package defaults for each kind."""
    if kind == "random_forest":
        opts = dict(n_estimators=100, max_depth=None, min_samples_leaf=5, max_features="sqrt")
        opts.update(params)
        return RandomForestRegressor(random_state=seed, n_jobs=1, **opts)
    if kind == "knn":
        k = params.pop("k", None)
        if k is None:
            k = math.ceil((n_train or 100) ** 0.8 / 10)
        return KNeighborsRegressor(n_neighbors=int(k), **params)
    raise ValueError(f"unknown regressor kind {kind!r}")


@dataclass
class SeriesCdeModel:
    basis: CosineBasis
    scaler: UnitIntervalScaler
    n_terms: int
    predictor: object = None
    x_scaler: Standardizer | None = None
    val_losses: list = field(default_factory=list)
    epochs_run: int = 0

    @property
    def active_set(self):
        return list(range(1, self.n_terms + 1))

    def coefficients(self, x):
        if self.predictor is None:
            raise NotFittedError("series model has no coefficient predictor")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if self.x_scaler is not None:
            x = self.x_scaler.transform(x)
        return np.asarray(self.predictor(x), dtype=np.float64)[:, : self.n_terms]

    def raw_density(self, x, grid):
        return self.coefficients(x) @ self.basis.matrix(grid, self.n_terms).T

    def density(self, x, grid):
        """Post-processed densities on ``grid`` (in [0, 1]) for each row of x."""
        return _postprocess(self.raw_density(x, grid), np.asarray(grid, dtype=np.float64))

    def sample(self, x, n, seed=None):
        return self.sample_batch(np.atleast_2d(np.asarray(x, dtype=np.float64)), n, seed)[0, :, 0]

    def sample_batch(self, x, n, seed=None, grid_points=SAMPLE_GRID_POINTS):
        """Inverse-CDF draws on the scaled grid, mapped back to the response scale."""
        rng = np.random.default_rng(seed)
        grid = np.linspace(0.0, 1.0, grid_points)
        x = np.asarray(x, dtype=np.float64)
        out = np.empty((x.shape[0], n, 1))
        for start in range(0, x.shape[0], 256):
            dens = self.density(x[start:start + 256], grid)
            cdf = _cumulative_trapezoid(dens, grid)
            for r in range(dens.shape[0]):
                u = rng.uniform(size=n)
                out[start + r, :, 0] = invert_cdf(cdf[r], grid, u)
        return self.scaler.inverse(out)


def _cumulative_trapezoid(dens, grid):
    steps = 0.5 * (dens[:, 1:] + dens[:, :-1]) * np.diff(grid)[None, :]
    cdf = np.concatenate([np.zeros((dens.shape[0], 1)), np.cumsum(steps, axis=1)], axis=1)
    return cdf / cdf[:, -1:]


def _postprocess(raw, grid):
    dens = np.clip(np.atleast_2d(raw), 0.0, None)
    area = trapezoid(dens, grid, axis=1)
    flat = area <= 0
    if np.any(flat):
        dens[flat] = 1.0 / (grid[-1] - grid[0])
        area = np.where(flat, 1.0, area)
    return dens / area[:, None]


def density_eval(model: SeriesCdeModel, x, grid):
    out = model.density(x, grid)
    return out[0] if np.ndim(x) == 1 else out


def cde_loss(model: SeriesCdeModel, dataset) -> float:
    """Series CDE surrogate loss ``mean(sum_j b_j^2 - 2 sum_j b_j phi_j(y))``."""
    if model is None or model.predictor is None:
        raise NotFittedError("cde_loss needs a fitted model")
    y = model.scaler.transform(dataset.y[:, 0], clip=True)
    coefs = model.coefficients(dataset.x)
    return _cde_loss_from_coefs(coefs, model.basis.matrix(y, model.n_terms))


def _check_univariate(data):
    if data.y.shape[1] != 1:
        raise UnsupportedModelError("series estimators support univariate responses only")


class _StackedPredictor:
    """Column-stacks per-coefficient regressors into a coefficient matrix."""

    def __init__(self, regressors):
        self.regressors = regressors

    def __call__(self, x):
        return np.column_stack([r.predict(x) for r in self.regressors])


def fit_flexcode(train, val, basis: CosineBasis | None = None, regressor="random_forest",
                 seed=None, regressor_params=None) -> SeriesCdeModel:
    """Regress each basis function of the scaled response on X, then truncate.

    The truncation level J* is the prefix of the expansion with the smallest
    CDE loss on the validation sample.
    """
    basis = basis or CosineBasis()
    _check_univariate(train)
    scaler = UnitIntervalScaler.fit(train.y)
    z = scaler.transform(train.y[:, 0])
    phi = basis.matrix(z)
    regressors = [ConstantRegressor(1.0)]
    for j in range(2, basis.j_max + 1):
        reg = make_regressor(regressor, n_train=train.n, seed=None if seed is None else (seed + j) % 2**32,
                             **dict(regressor_params or {}))
        try:
            reg.fit(train.x, phi[:, j - 1])
        except Exception as exc:  # noqa: BLE001 - report which coefficient failed
            raise TrainingError(f"regression for basis coefficient j={j} failed: {exc}") from exc
        regressors.append(reg)
    predictor = _StackedPredictor(regressors)
    model = SeriesCdeModel(basis, scaler, basis.j_max, predictor)
    z_val = scaler.transform(val.y[:, 0], clip=True)
    losses = _prefix_losses(predictor(val.x), basis.matrix(z_val))
    model.val_losses = losses.tolist()
    model.n_terms = int(np.argmin(losses)) + 1
    predictor.regressors = regressors[: model.n_terms]
    return model


class _NetPredictor:
    def __init__(self, net):
        self.net = net

    def __call__(self, x):
        return self.net.forward(x)


def fit_deepcde(train, val, basis: CosineBasis | None = None, net_spec: MlpSpec | None = None,
                lr=1e-4, patience=20, max_epochs=1000, batch_size=128, seed=None) -> SeriesCdeModel:
    """Train one network for all coefficients with early stopping on validation loss."""
    basis = basis or CosineBasis()
    _check_univariate(train)
    rng = np.random.default_rng(seed)
    scaler = UnitIntervalScaler.fit(train.y)
    x_scaler = Standardizer.fit(train.x)
    x = x_scaler.transform(train.x)
    phi = basis.matrix(scaler.transform(train.y[:, 0]))
    x_val = x_scaler.transform(val.x)
    phi_val = basis.matrix(scaler.transform(val.y[:, 0], clip=True))
    if net_spec is None:
        net_spec = MlpSpec(train.p, (32, 64, 32), basis.j_max, activation="gelu")
    if net_spec.input_dim != train.p or net_spec.output_dim != basis.j_max:
        raise DimensionError("network spec does not match predictors and basis size")
    net = MLP.init(net_spec, rng)
    opt = Adam(lr=lr)
    model = SeriesCdeModel(basis, scaler, basis.j_max, _NetPredictor(net), x_scaler)

    best = _cde_loss_from_coefs(net.forward(x_val), phi_val)
    model.val_losses.append(best)
    best_net = net.copy()
    stale = 0
    n = train.n
    for epoch in range(max_epochs):
        for b, idx in enumerate(minibatches(n, batch_size, rng)):
            out, cache = net.forward_cached(x[idx])
            up = 2.0 * (out - phi[idx]) / len(idx)
            grads = net.backward(x[idx], up, cache)
            opt.step(net, grads, context=f"epoch {epoch}, batch {b}")
        loss = _cde_loss_from_coefs(net.forward(x_val), phi_val)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite DeepCDE validation loss at epoch {epoch}")
        model.val_losses.append(loss)
        model.epochs_run = epoch + 1
        if loss < best:
            best, best_net, stale = loss, net.copy(), 0
        else:
            stale += 1
            if stale >= patience:
                break
    model.predictor = _NetPredictor(best_net)
    model.best_val_loss = best
    return model


def fit_flexcode_method(train_data, val_data, seed=None, **params):
    """Harness entry point for FlexCode."""
    params = dict(params)
    regressor = params.pop("regressor", "random_forest")
    j_max = params.pop("j_max", J_MAX)
    return fit_flexcode(train_data, val_data, CosineBasis(j_max), regressor, seed, params)


def fit_deepcde_method(train_data, val_data, seed=None, **params):
    """Harness entry point for DeepCDE."""
    params = dict(params)
    j_max = params.pop("j_max", J_MAX)
    return fit_deepcde(train_data, val_data, CosineBasis(j_max), seed=seed, **params)


def sample(model: SeriesCdeModel, x, n, seed=None):
    return model.sample(x, n, seed)
