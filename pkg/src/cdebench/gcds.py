"""Generative conditional sampler trained by adversarial KL distribution matching.

The discriminator ``D(x, y)`` estimates the log density ratio between generated
and observed pairs; the generator ``G(eta, x)`` pushes Gaussian noise towards
the conditional law. Both play the min-max game on

    L = mean( D(x_i, G(eta_i, x_i)) - exp(D(x_i, y_i)) ).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, TrainingError
from .nn import MLP, Adam, MlpSpec, minibatches
from .scaling import Standardizer

EXP_CLAMP = 30.0


@dataclass
class GcdsConfig:
    latent_dim: int | None = None
    lr_gen: float = 1e-4
    lr_disc: float = 1e-4
    epochs: int = 500
    batch_size: int = 128
    disc_steps_per_gen: int = 1
    gen_hidden: tuple = (50,)
    disc_hidden: tuple = (50, 25)

    def resolved_latent_dim(self, q):
        if self.latent_dim is not None:
            return int(self.latent_dim)
        return 3 if q == 1 else 10


@dataclass
class GcdsModel:
    generator: MLP
    discriminator: MLP
    y_scaler: Standardizer
    p: int
    q: int
    latent_dim: int
    loss_history: list = field(default_factory=list)
    epochs_run: int = 0
    overflow_steps: int = 0
    total_steps: int = 0

    @property
    def unstable(self):
        return self.total_steps > 0 and self.overflow_steps > 0.01 * self.total_steps

    def generate(self, eta, x):
        """Standardized generator output for paired noise and predictor rows."""
        return self.generator.forward(np.hstack([x, eta]))

    def sample(self, x, n, seed=None):
        return self.sample_batch(np.asarray(x, dtype=np.float64).reshape(1, self.p), n, seed)[0]

    def sample_batch(self, x, n, seed=None):
        """One generator pass for ``n`` noise draws per row of ``x``; (k, n, q)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.p:
            raise DimensionError(f"expected predictors with {self.p} columns, got {x.shape}")
        rng = np.random.default_rng(seed)
        k = x.shape[0]
        eta = rng.standard_normal((k * n, self.latent_dim))
        y = self.generate(eta, np.repeat(x, n, axis=0))
        return self.y_scaler.inverse(y).reshape(k, n, self.q)


def _clamped_exp(d):
    over = d > EXP_CLAMP
    return np.exp(np.minimum(d, EXP_CLAMP)), over


def gcds_loss(model: GcdsModel, x_batch, y_batch, eta_batch) -> float:
    """Empirical objective on standardized responses."""
    x_batch = np.asarray(x_batch, dtype=np.float64)
    y_batch = np.asarray(y_batch, dtype=np.float64)
    eta_batch = np.asarray(eta_batch, dtype=np.float64)
    if not len(x_batch) == len(y_batch) == len(eta_batch):
        raise DimensionError("x, y and eta batches must have equal length")
    fake = model.generate(eta_batch, x_batch)
    d_fake = model.discriminator.forward(np.hstack([x_batch, fake]))[:, 0]
    d_real = model.discriminator.forward(np.hstack([x_batch, y_batch]))[:, 0]
    e_real, _ = _clamped_exp(d_real)
    return float(np.mean(d_fake - e_real))


def init_model(p, q, config: GcdsConfig, rng, y_scaler=None):
    m = config.resolved_latent_dim(q)
    gen = MLP.init(MlpSpec(p + m, tuple(config.gen_hidden), q, activation="relu"), rng)
    disc = MLP.init(MlpSpec(p + q, tuple(config.disc_hidden), 1, activation="relu"), rng)
    y_scaler = y_scaler or Standardizer(np.zeros(q), np.ones(q))
    return GcdsModel(gen, disc, y_scaler, p, q, m)


def train(train_data, config: GcdsConfig | None = None, seed=None) -> GcdsModel:
    """Alternate discriminator ascent and generator descent on the objective."""
    config = config or GcdsConfig()
    x = np.asarray(train_data.x, dtype=np.float64)
    y_raw = np.asarray(train_data.y, dtype=np.float64)
    n, p = x.shape
    q = y_raw.shape[1]
    rng = np.random.default_rng(seed)
    scaler = Standardizer.fit(y_raw)
    y = scaler.transform(y_raw)
    model = init_model(p, q, config, rng, scaler)
    gen, disc = model.generator, model.discriminator
    opt_g = Adam(lr=config.lr_gen)
    opt_d = Adam(lr=config.lr_disc)
    m = model.latent_dim
    for epoch in range(config.epochs):
        eta = rng.standard_normal((n, m))
        total = 0.0
        for b, idx in enumerate(minibatches(n, config.batch_size, rng)):
            xb, yb, eb = x[idx], y[idx], eta[idx]
            bs = len(idx)
            gen_in = np.hstack([xb, eb])
            for _ in range(config.disc_steps_per_gen):
                fake = gen.forward(gen_in)
                d_in = np.vstack([np.hstack([xb, fake]), np.hstack([xb, yb])])
                d_out, d_cache = disc.forward_cached(d_in)
                d_fake, d_real = d_out[:bs, 0], d_out[bs:, 0]
                e_real, over = _clamped_exp(d_real)
                loss = float(np.mean(d_fake - e_real))
                model.total_steps += 1
                if over.any():
                    model.overflow_steps += 1
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite GCDS loss at epoch {epoch}, batch {b}")
                # ascend: descend on -L
                up = np.empty((2 * bs, 1))
                up[:bs, 0] = -1.0 / bs
                up[bs:, 0] = np.where(over, 0.0, e_real) / bs
                grads = disc.backward(d_in, up, d_cache)
                opt_d.step(disc, grads, context=f"epoch {epoch}, batch {b}")

            fake, g_cache = gen.forward_cached(gen_in)
            d_in = np.hstack([xb, fake])
            d_out, d_cache = disc.forward_cached(d_in)
            d_grads = disc.backward(d_in, np.full((bs, 1), 1.0 / bs), d_cache)
            g_up = d_grads.inputs[:, p:]
            g_grads = gen.backward(gen_in, g_up, g_cache)
            opt_g.step(gen, g_grads, context=f"epoch {epoch}, batch {b}")
            total += loss * bs
        model.loss_history.append(total / n)
        model.epochs_run = epoch + 1
    return model


def fit(train_data, val_data=None, seed=None, **params):
    """Uniform entry point used by the benchmark harness."""
    return train(train_data, GcdsConfig(**params), seed)


def sample(model: GcdsModel, x, n, seed=None):
    return model.sample(x, n, seed)
