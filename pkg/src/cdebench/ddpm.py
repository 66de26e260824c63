"""Conditional denoising diffusion with a discrete linear noise schedule.

Training follows the single-timestep scheme: each example in a mini-batch gets
its own random step ``t`` and noise draw, the noised response is built from the
closed-form forward marginal, and a small MLP learns to predict the noise from
``(x, y_t, t / T)``. Sampling runs the full reverse chain from ``t = T`` to 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DimensionError, TrainingError
from .nn import MLP, Adam, MlpSpec, StepSchedule, gelu as _gelu, minibatches
from .scaling import Standardizer

DEFAULT_T = 200


def default_betas(T=DEFAULT_T):
    """Linear schedule endpoints rescaled so that T steps corrupt as much as 1000 would."""
    scale = 1000.0 / T
    return 1e-4 * scale, min(0.02 * scale, 0.999)


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def T(self):
        return len(self.beta)

    def alpha_bar_prev(self, t):
        return 1.0 if t == 1 else float(self.alpha_bar[t - 2])

    @classmethod
    def from_betas(cls, beta):
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1 or np.any(beta <= 0) or np.any(beta >= 1):
            raise ConfigurationError("betas must lie strictly inside (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        prev = np.concatenate([[1.0], alpha_bar[:-1]])
        sigma = np.sqrt(beta * (1.0 - prev) / (1.0 - alpha_bar))
        return cls(beta, alpha, alpha_bar, sigma)


def make_schedule(T=DEFAULT_T, beta_start=None, beta_end=None) -> NoiseSchedule:
    if int(T) < 1:
        raise ConfigurationError(f"need T >= 1, got T={T}")
    if beta_start is None or beta_end is None:
        d_start, d_end = default_betas(T)
        beta_start = d_start if beta_start is None else beta_start
        beta_end = d_end if beta_end is None else beta_end
    if T < 1 or not 0 < beta_start <= beta_end < 1:
        raise ConfigurationError(
            f"need T >= 1 and 0 < beta_start <= beta_end < 1, got T={T}, "
            f"beta_start={beta_start}, beta_end={beta_end}"
        )
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T))


def forward_noise(y0, t, eps, schedule: NoiseSchedule):
    """Closed-form draw of the step-t noised response."""
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t={t} outside 1..{schedule.T}")
    ab = schedule.alpha_bar[t - 1]
    return np.sqrt(ab) * np.asarray(y0) + np.sqrt(1.0 - ab) * np.asarray(eps)


def reconstruct_y0(y_t, t, eps_bar, schedule: NoiseSchedule):
    ab = schedule.alpha_bar[t - 1]
    return (np.asarray(y_t) - np.sqrt(1.0 - ab) * np.asarray(eps_bar)) / np.sqrt(ab)


def posterior_mean(y_t, y0, t, schedule: NoiseSchedule):
    """Mean of y_{t-1} given y_t and y_0 in its two-term form."""
    a = schedule.alpha[t - 1]
    ab = schedule.alpha_bar[t - 1]
    ab_prev = schedule.alpha_bar_prev(t)
    return (np.sqrt(a) * (1.0 - ab_prev) * np.asarray(y_t)
            + np.sqrt(ab_prev) * (1.0 - a) * np.asarray(y0)) / (1.0 - ab)


def posterior_mean_from_noise(y_t, eps, t, schedule: NoiseSchedule):
    a = schedule.alpha[t - 1]
    ab = schedule.alpha_bar[t - 1]
    return (np.asarray(y_t) - (1.0 - a) / np.sqrt(1.0 - ab) * np.asarray(eps)) / np.sqrt(a)


@dataclass
class DdpmConfig:
    T: int = DEFAULT_T
    beta_start: float | None = None
    beta_end: float | None = None
    epochs: int = 50
    lr: float = 1e-2
    lr_drop: float = 0.5
    lr_drop_every: int = 10
    batch_size: int = 128
    hidden: tuple = (50, 25)

    @property
    def schedule(self):
        return StepSchedule(self.lr, self.lr_drop, self.lr_drop_every)


@dataclass
class DdpmModel:
    noise_net: MLP
    schedule: NoiseSchedule
    y_scaler: Standardizer
    p: int
    q: int
    loss_history: list = field(default_factory=list)
    epochs_run: int = 0

    def predict_noise(self, x, y_t, t):
        """Noise estimate for a batch sharing the diffusion step ``t``."""
        tt = np.full((len(y_t), 1), t / self.schedule.T)
        return self.noise_net.forward(np.hstack([x, y_t, tt]))

    def _first_layer_base(self, x):
        """Predictor part of the first pre-activation; fixed along a chain."""
        return x @ self.noise_net.weights[0][: self.p] + self.noise_net.biases[0]

    def _noise_from_base(self, base, y, t, buf=None):
        """Same value as ``predict_noise`` given the cached predictor term."""
        net = self.noise_net
        w0 = net.weights[0]
        if self.q == 1:
            h = np.multiply(y, w0[self.p], out=buf)
        else:
            h = np.matmul(y, w0[self.p:self.p + self.q], out=buf)
        h += base
        h += (t / self.schedule.T) * w0[-1]
        act = net.spec.activation
        for k in range(1, len(net.weights)):
            h = np.maximum(h, 0.0, out=h) if act == "relu" else _gelu(h)
            h = h @ net.weights[k]
            h += net.biases[k]
        return h

    def _reverse(self, x, rng):
        """Run the reverse chain for each row of ``x``; returns standardized y_0."""
        sch = self.schedule
        base = self._first_layer_base(x)
        y = rng.standard_normal((len(x), self.q))
        buf = np.empty_like(base)
        for t in range(sch.T, 0, -1):
            eps_hat = self._noise_from_base(base, y, t, buf)
            a = sch.alpha[t - 1]
            ab = sch.alpha_bar[t - 1]
            y -= (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat
            y /= np.sqrt(a)
            if t > 1:
                y += sch.sigma[t - 1] * rng.standard_normal(y.shape)
        return y

    def reverse_sample(self, x, seed=None):
        x = np.asarray(x, dtype=np.float64).reshape(1, self.p)
        rng = np.random.default_rng(seed)
        return self.y_scaler.inverse(self._reverse(x, rng))[0]

    def sample(self, x, n, seed=None):
        return self.sample_batch(np.asarray(x, dtype=np.float64).reshape(1, self.p), n, seed)[0]

    def sample_batch(self, x, n, seed=None, chunk_rows=16_384):
        """``n`` reverse chains per row of ``x``; returns shape (k, n, q)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.p:
            raise DimensionError(f"expected predictors with {self.p} columns, got {x.shape}")
        rng = np.random.default_rng(seed)
        k = x.shape[0]
        out = np.empty((k * n, self.q))
        rows_per_chunk = max(1, chunk_rows // n) * n
        xr = np.repeat(x, n, axis=0)
        for start in range(0, k * n, rows_per_chunk):
            stop = min(start + rows_per_chunk, k * n)
            out[start:stop] = self._reverse(xr[start:stop], rng)
        return self.y_scaler.inverse(out).reshape(k, n, self.q)


def init_model(p, q, config: DdpmConfig, rng, y_scaler=None):
    spec = MlpSpec(p + q + 1, tuple(config.hidden), q, activation="relu")
    sched = make_schedule(config.T, config.beta_start, config.beta_end)
    y_scaler = y_scaler or Standardizer(np.zeros(q), np.ones(q))
    return DdpmModel(MLP.init(spec, rng), sched, y_scaler, p, q)


def train(train_data, config: DdpmConfig | None = None, seed=None) -> DdpmModel:
    """Fit the noise-prediction network by Adam on the per-batch noise MSE."""
    config = config or DdpmConfig()
    x = np.asarray(train_data.x, dtype=np.float64)
    y_raw = np.asarray(train_data.y, dtype=np.float64)
    n, p = x.shape
    q = y_raw.shape[1]
    rng = np.random.default_rng(seed)
    scaler = Standardizer.fit(y_raw)
    y0 = scaler.transform(y_raw)
    model = init_model(p, q, config, rng, scaler)
    net, sch = model.noise_net, model.schedule
    opt = Adam(lr=config.lr)
    lr_sched = config.schedule
    sqrt_ab = np.sqrt(sch.alpha_bar)
    sqrt_1mab = np.sqrt(1.0 - sch.alpha_bar)
    for epoch in range(config.epochs):
        lr = lr_sched.lr(epoch)
        total = 0.0
        for b, idx in enumerate(minibatches(n, config.batch_size, rng)):
            t = rng.integers(1, sch.T + 1, size=len(idx))
            eps = rng.standard_normal((len(idx), q))
            y_t = sqrt_ab[t - 1, None] * y0[idx] + sqrt_1mab[t - 1, None] * eps
            inp = np.hstack([x[idx], y_t, (t / sch.T)[:, None]])
            out, cache = net.forward_cached(inp)
            resid = out - eps
            loss = float(np.mean(np.sum(resid * resid, axis=1)))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite DDPM loss at epoch {epoch}, batch {b}")
            grads = net.backward(inp, 2.0 * resid / len(idx), cache)
            opt.step(net, grads, lr=lr, context=f"epoch {epoch}, batch {b}")
            total += loss * len(idx)
        model.loss_history.append(total / n)
        model.epochs_run = epoch + 1
    return model


def fit(train_data, val_data=None, seed=None, **params):
    """Uniform entry point used by the benchmark harness."""
    return train(train_data, DdpmConfig(**params), seed)


def reverse_sample(model: DdpmModel, x, seed=None):
    return model.reverse_sample(x, seed)


def sample(model: DdpmModel, x, n, seed=None):
    return model.sample(x, n, seed)
