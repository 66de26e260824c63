"""Synthetic data-generating models M1-M10 and their ground-truth conditional laws.

Each model knows how to draw predictors, draw responses given predictors (with
fresh latent variables per row), and report the true conditional mean,
standard deviation and density. The module-level functions dispatch on the
model id string.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import expit
from scipy.stats import gaussian_kde, norm

from .exceptions import ConfigurationError, DimensionError, UnsupportedModelError

KAPPA_M7 = 0.5
C_M9 = 20.0
MC_BUDGET = 100_000
ORACLE_SEED = 20240917
DENSITY_GRID_POINTS = 513
DENSITY_GRID_WIDTH = 6.0

_GH_NODES, _GH_WEIGHTS = hermegauss(96)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(2.0 * math.pi)


class DataModel:
    name = ""
    p = 1
    q = 1

    def sample_x(self, rng, n):
        return rng.standard_normal((n, self.p))

    def sample_y(self, x, rng):
        raise NotImplementedError

    def cond_mean(self, x):
        raise NotImplementedError

    def cond_std(self, x):
        raise NotImplementedError

    def density(self, x, y):
        raise UnsupportedModelError(f"{self.name} has no univariate conditional density")

    def cond_sample(self, x, n, rng):
        """Draws of Y | X = x_i for every row x_i; shape (k, n, q)."""
        x = _as_rows(x, self.p)
        k = x.shape[0]
        y = self.sample_y(np.repeat(x, n, axis=0), rng)
        return y.reshape(k, n, self.q)

    def __repr__(self):
        return f"<DataModel {self.name} p={self.p} q={self.q}>"


def _as_rows(x, p):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != p:
        raise DimensionError(f"expected predictors with {p} columns, got shape {x.shape}")
    return x


class _SineModel(DataModel):
    """Y = 0.5 * sum_j sin(X_j) + eps over the first four predictors."""

    p = 4

    def sample_y(self, x, rng):
        signal = 0.5 * np.sin(x[:, :4]).sum(axis=1)
        return (signal + rng.standard_normal(len(x)))[:, None]

    def cond_mean(self, x):
        x = _as_rows(x, self.p)
        return 0.5 * np.sin(x[:, :4]).sum(axis=1, keepdims=True)

    def cond_std(self, x):
        x = _as_rows(x, self.p)
        return np.ones((x.shape[0], 1))

    def density(self, x, y):
        mu = self.cond_mean(x)[0, 0]
        return norm.pdf(np.asarray(y, dtype=np.float64) - mu)


class M1(_SineModel):
    name = "M1"


class M2(_SineModel):
    name = "M2"
    p = 10


class M3(_SineModel):
    name = "M3"

    def __init__(self):
        idx = np.arange(4)
        self.cov = 0.5 ** np.abs(idx[:, None] - idx[None, :])
        self._chol = np.linalg.cholesky(self.cov)

    def sample_x(self, rng, n):
        return rng.standard_normal((n, 4)) @ self._chol.T


class M4(DataModel):
    """Latent random signs flip each predictor inside the sine."""

    name = "M4"
    p = 4

    def sample_y(self, x, rng):
        z = rng.choice(np.array([-1.0, 1.0]), size=x.shape)
        signal = 0.5 * np.sin(z * x).sum(axis=1)
        return (signal + rng.standard_normal(len(x)))[:, None]

    def cond_mean(self, x):
        x = _as_rows(x, self.p)
        return np.zeros((x.shape[0], 1))

    def cond_std(self, x):
        # sin(z x) = z sin(x) so each sign contributes variance sin(x)^2
        x = _as_rows(x, self.p)
        return np.sqrt(1.0 + 0.25 * (np.sin(x) ** 2).sum(axis=1, keepdims=True))

    def density(self, x, y):
        x = _as_rows(x, self.p)[0]
        y = np.asarray(y, dtype=np.float64)
        s = np.sin(x)
        signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * 4)).reshape(4, -1).T
        centers = 0.5 * signs @ s
        return norm.pdf(y[:, None] - centers[None, :]).mean(axis=1)


def _uniform_scale_moments(x):
    """E sin(Zx) and Var sin(Zx) for Z ~ Uniform(0, 1), elementwise in x."""
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    m1 = np.where(small, x / 2.0 - x**3 / 24.0, (1.0 - np.cos(xs)) / xs)
    m2 = np.where(small, x**2 / 3.0, 0.5 - np.sin(2.0 * xs) / (4.0 * xs))
    return m1, np.maximum(m2 - m1**2, 0.0)


class M5(DataModel):
    """Latent Uniform(0,1) scales modulate each predictor inside the sine."""

    name = "M5"
    p = 4

    def sample_y(self, x, rng):
        z = rng.uniform(0.0, 1.0, size=x.shape)
        signal = 0.5 * np.sin(z * x).sum(axis=1)
        return (signal + rng.standard_normal(len(x)))[:, None]

    def cond_mean(self, x):
        x = _as_rows(x, self.p)
        m1, _ = _uniform_scale_moments(x)
        return 0.5 * m1.sum(axis=1, keepdims=True)

    def cond_std(self, x):
        x = _as_rows(x, self.p)
        _, var = _uniform_scale_moments(x)
        return np.sqrt(1.0 + 0.25 * var.sum(axis=1, keepdims=True))

    def density(self, x, y, mc_budget=MC_BUDGET):
        x = _as_rows(x, self.p)[0]
        y = np.asarray(y, dtype=np.float64)
        rng = np.random.default_rng(ORACLE_SEED)
        z = rng.uniform(0.0, 1.0, size=(mc_budget, 4))
        centers = 0.5 * np.sin(z * x).sum(axis=1)
        out = np.empty_like(y)
        for start in range(0, len(y), 64):
            block = y[start:start + 64]
            out[start:start + 64] = norm.pdf(block[:, None] - centers[None, :]).mean(axis=1)
        return out


class M6(DataModel):
    name = "M6"
    p = 5

    @staticmethod
    def _parts(x):
        mean = x[:, 0] ** 2 + np.exp(x[:, 1] + x[:, 2] / 3.0) + x[:, 3] - x[:, 4]
        scale = 0.5 + x[:, 1] ** 2 / 2.0 + x[:, 4] ** 2 / 2.0
        return mean, scale

    def sample_y(self, x, rng):
        mean, scale = self._parts(x)
        return (mean + scale * rng.standard_normal(len(x)))[:, None]

    def cond_mean(self, x):
        return self._parts(_as_rows(x, self.p))[0][:, None]

    def cond_std(self, x):
        return self._parts(_as_rows(x, self.p))[1][:, None]

    def density(self, x, y):
        mean, scale = self._parts(_as_rows(x, self.p))
        return norm.pdf(np.asarray(y, dtype=np.float64), loc=mean[0], scale=scale[0])


def _mixture_mgf(weights, means, t):
    """E exp(t * eps) for a mixture of unit-variance normals."""
    return sum(w * np.exp(t * mu + 0.5 * t * t) for w, mu in zip(weights, means))


class _MultiplicativeMixture(DataModel):
    """Y = m(X) * exp(s * eps) with a two-component normal mixture eps."""

    p = 30
    log_scale = 0.25
    component_means = (-1.0, 1.0)

    @staticmethod
    def location(x):
        return (
            5.0 + x[:, 0] ** 2 / 3.0 + x[:, 1] ** 2 + x[:, 2] ** 2 + x[:, 3] + x[:, 4]
        )

    def first_weight(self, x):
        raise NotImplementedError

    def sample_y(self, x, rng):
        w = self.first_weight(x)
        first = rng.uniform(size=len(x)) < w
        mu = np.where(first, self.component_means[0], self.component_means[1])
        eps = mu + rng.standard_normal(len(x))
        return (self.location(x) * np.exp(self.log_scale * eps))[:, None]

    def _moments(self, x):
        x = _as_rows(x, self.p)
        w = self.first_weight(x)
        ws = (w, 1.0 - w)
        s = self.log_scale
        e1 = _mixture_mgf(ws, self.component_means, s)
        e2 = _mixture_mgf(ws, self.component_means, 2.0 * s)
        m = self.location(x)
        return m * e1, np.abs(m) * np.sqrt(np.maximum(e2 - e1 * e1, 0.0))

    def cond_mean(self, x):
        return self._moments(x)[0][:, None]

    def cond_std(self, x):
        return self._moments(x)[1][:, None]

    def density(self, x, y):
        x = _as_rows(x, self.p)
        m = self.location(x)[0]
        w = self.first_weight(x)[0]
        y = np.asarray(y, dtype=np.float64)
        ratio = y / m
        ok = ratio > 0
        eps = np.log(np.where(ok, ratio, 1.0)) / self.log_scale
        mu0, mu1 = self.component_means
        f_eps = w * norm.pdf(eps - mu0) + (1.0 - w) * norm.pdf(eps - mu1)
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = f_eps / (self.log_scale * np.abs(y))
        return np.where(ok, dens, 0.0)


class M7(_MultiplicativeMixture):
    name = "M7"
    kappa = KAPPA_M7

    def first_weight(self, x):
        return expit(self.kappa * x[:, 0])


class M8(_MultiplicativeMixture):
    name = "M8"
    log_scale = 0.5
    component_means = (-2.0, 2.0)

    def first_weight(self, x):
        return np.full(x.shape[0], 0.5)


class M9(DataModel):
    """Y = exp(sin(c X + eps)): skewed, heavy-tailed and often bimodal."""

    name = "M9"
    p = 1
    c = C_M9

    def sample_y(self, x, rng):
        return np.exp(np.sin(self.c * x[:, 0] + rng.standard_normal(len(x))))[:, None]

    def _gauss_expect(self, x, fn):
        x = _as_rows(x, self.p)
        a = self.c * x[:, 0]
        vals = fn(np.sin(a[:, None] + _GH_NODES[None, :]))
        return vals @ _GH_WEIGHTS

    def cond_mean(self, x):
        return self._gauss_expect(x, np.exp)[:, None]

    def cond_std(self, x):
        m1 = self._gauss_expect(x, np.exp)
        m2 = self._gauss_expect(x, lambda s: np.exp(2.0 * s))
        return np.sqrt(np.maximum(m2 - m1 * m1, 0.0))[:, None]

    def density(self, x, y, mc_budget=MC_BUDGET):
        x = _as_rows(x, self.p)
        rng = np.random.default_rng(ORACLE_SEED)
        draws = self.cond_sample(x, mc_budget, rng)[0, :, 0]
        return gaussian_kde(draws, bw_method="silverman")(np.asarray(y, dtype=np.float64))


class M10(DataModel):
    name = "M10"
    p = 5
    q = 7

    @staticmethod
    def _signal(x):
        return np.column_stack(
            [x[:, :5] ** 2, np.exp(x[:, 1] + x[:, 4] / 3.0), np.sin(x[:, 3] + x[:, 4])]
        )

    def sample_y(self, x, rng):
        return self._signal(x) + rng.standard_normal((len(x), 7))

    def cond_mean(self, x):
        return self._signal(_as_rows(x, self.p))

    def cond_std(self, x):
        x = _as_rows(x, self.p)
        return np.ones((x.shape[0], 7))


MODELS = {cls.name: cls for cls in (M1, M2, M3, M4, M5, M6, M7, M8, M9, M10)}
MODEL_IDS = tuple(MODELS)
_INSTANCES: dict = {}


def get_model(model) -> DataModel:
    if isinstance(model, DataModel):
        return model
    key = str(model).upper()
    if key not in MODELS:
        raise ConfigurationError(
            f"unknown data model {model!r}; valid ids: {', '.join(MODEL_IDS)}"
        )
    if key not in _INSTANCES:
        _INSTANCES[key] = MODELS[key]()
    return _INSTANCES[key]


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    model: str | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.ndim != 2 or len(self.x) != len(self.y):
            raise DimensionError(
                f"x and y must be 2-d with equal row counts, got {self.x.shape}, {self.y.shape}"
            )

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def q(self):
        return self.y.shape[1]

    def subset(self, idx):
        return Dataset(self.x[idx], self.y[idx], self.model, self.seed)

    def to_csv(self, path):
        header = ",".join([f"x{j + 1}" for j in range(self.p)] + [f"y{j + 1}" for j in range(self.q)])
        np.savetxt(path, np.hstack([self.x, self.y]), delimiter=",", header=header,
                   comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, model=None, seed=None):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        xcols = [i for i, h in enumerate(header) if h.startswith("x")]
        ycols = [i for i, h in enumerate(header) if h.startswith("y")]
        if not ycols:
            raise DimensionError(f"{path}: no y columns in header")
        return cls(data[:, xcols], data[:, ycols], model, seed)


def generate(model, n: int, seed: int) -> Dataset:
    """Draw ``n`` i.i.d. pairs from a data model."""
    dm = get_model(model)
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = dm.sample_x(rng, n)
    y = dm.sample_y(x, rng)
    return Dataset(x, y, dm.name, seed)


def true_cond_mean(model, x):
    dm = get_model(model)
    out = dm.cond_mean(x)
    return out[0] if np.ndim(x) == 1 else out


def true_cond_std(model, x):
    dm = get_model(model)
    out = dm.cond_std(x)
    return out[0] if np.ndim(x) == 1 else out


def true_cond_sample(model, x, n: int, seed):
    """Samples from Y | X = x; (n, q) for a single point, (k, n, q) for k rows."""
    dm = get_model(model)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = dm.cond_sample(x, n, rng)
    return out[0] if np.ndim(x) == 1 else out


def default_y_grid(model, x, points=DENSITY_GRID_POINTS, width=DENSITY_GRID_WIDTH):
    """Evaluation grid spanning the conditional mean +/- ``width`` true SDs."""
    dm = get_model(model)
    mu = float(dm.cond_mean(x)[0, 0])
    sd = float(dm.cond_std(x)[0, 0])
    return np.linspace(mu - width * sd, mu + width * sd, points)


def true_density_grid(model, x, y_grid=None):
    dm = get_model(model)
    if dm.q != 1:
        raise UnsupportedModelError(f"{dm.name} has a {dm.q}-dimensional response")
    if y_grid is None:
        y_grid = default_y_grid(dm, x)
    return dm.density(x, np.asarray(y_grid, dtype=np.float64))
