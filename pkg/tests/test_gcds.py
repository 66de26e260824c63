import numpy as np
import pytest

from cdebench import gcds, nn
from cdebench.datagen import Dataset
from cdebench.scaling import Standardizer


def small_model(seed=0, p=2, q=1, m=3):
    cfg = gcds.GcdsConfig(latent_dim=m, gen_hidden=(6,), disc_hidden=(5, 4))
    return gcds.init_model(p, q, cfg, np.random.default_rng(seed))


def batch(seed, n=8, p=2, q=1, m=3):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, p)), rng.normal(size=(n, q)), rng.normal(size=(n, m))


def test_zero_discriminator_loss_is_minus_one():
    model = small_model()
    model.discriminator = nn.MLP.zeros(model.discriminator.spec)
    assert gcds.gcds_loss(model, *batch(1)) == -1.0


def test_constant_discriminator_loss():
    model = small_model()
    model.discriminator = nn.MLP.zeros(model.discriminator.spec)
    c = 0.7
    model.discriminator.biases[-1][:] = c
    assert gcds.gcds_loss(model, *batch(2)) == pytest.approx(c - np.exp(c), abs=1e-15)


def test_loss_matches_loop():
    model = small_model(3)
    x, y, eta = batch(4)
    vals = []
    for i in range(len(x)):
        fake = model.generator.forward(np.concatenate([x[i], eta[i]])[None, :])[0]
        d_fake = model.discriminator.forward(np.concatenate([x[i], fake])[None, :])[0, 0]
        d_real = model.discriminator.forward(np.concatenate([x[i], y[i]])[None, :])[0, 0]
        vals.append(d_fake - np.exp(d_real))
    assert gcds.gcds_loss(model, x, y, eta) == pytest.approx(np.mean(vals), abs=1e-12)


def test_latent_dim_defaults():
    cfg = gcds.GcdsConfig()
    assert cfg.resolved_latent_dim(1) == 3
    assert cfg.resolved_latent_dim(7) == 10


def toy(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.5, 1.5, size=(n, 1))
    return Dataset(x, x + 0.1 * rng.standard_normal((n, 1)))


def test_zero_epochs_returns_initialised_model():
    data = toy(100, 0)
    cfg = gcds.GcdsConfig(epochs=0)
    model = gcds.train(data, cfg, seed=5)
    ref = gcds.init_model(1, 1, cfg, np.random.default_rng(5))
    for a, b in zip(model.generator.arrays(), ref.generator.arrays()):
        np.testing.assert_array_equal(a, b)
    assert model.epochs_run == 0


def test_training_deterministic():
    data = toy(300, 1)
    cfg = gcds.GcdsConfig(epochs=3, latent_dim=1)
    a, b = gcds.train(data, cfg, seed=2), gcds.train(data, cfg, seed=2)
    for u, v in zip(a.generator.arrays() + a.discriminator.arrays(), b.generator.arrays() + b.discriminator.arrays()):
        np.testing.assert_array_equal(u, v)
    assert a.loss_history == b.loss_history


def test_zero_generator_samples_equal_destandardised_bias():
    model = small_model(p=1, m=1)
    model.generator = nn.MLP.zeros(model.generator.spec)
    model.generator.biases[-1][:] = 0.4
    model.y_scaler = Standardizer(np.array([2.0]), np.array([3.0]))
    draws = gcds.sample(model, np.array([0.5]), 50, seed=0)
    np.testing.assert_allclose(draws, 2.0 + 3.0 * 0.4)


def test_sampling_deterministic_and_shaped():
    model = small_model(p=2, q=1)
    a = model.sample_batch(np.zeros((3, 2)), 20, seed=4)
    assert a.shape == (3, 20, 1)
    np.testing.assert_array_equal(a, model.sample_batch(np.zeros((3, 2)), 20, seed=4))


def test_discriminator_step_ascends_objective():
    # one small ascent step on the discriminator should not lower the objective
    data = toy(256, 3)
    model = gcds.init_model(1, 1, gcds.GcdsConfig(latent_dim=1), np.random.default_rng(0))
    eta = np.random.default_rng(1).normal(size=(256, 1))
    before = gcds.gcds_loss(model, data.x, data.y, eta)
    fake = model.generate(eta, data.x)
    d_in = np.vstack([np.hstack([data.x, fake]), np.hstack([data.x, data.y])])
    out, cache = model.discriminator.forward_cached(d_in)
    up = np.concatenate([np.full(256, -1 / 256), np.exp(out[256:, 0]) / 256])[:, None]
    grads = model.discriminator.backward(d_in, up, cache)
    nn.Adam(lr=1e-3).step(model.discriminator, grads)
    assert gcds.gcds_loss(model, data.x, data.y, eta) > before


@pytest.mark.slow
def test_toy_conditional_recovery():
    model = gcds.train(toy(2000, 4), gcds.GcdsConfig(latent_dim=1, epochs=500), seed=0)
    for x0 in (-1.0, 0.0, 1.0):
        draws = model.sample(np.array([x0]), 2000, seed=1)[:, 0]
        assert draws.mean() == pytest.approx(x0, abs=0.2)
        if x0 == 0.0:
            assert draws.std() == pytest.approx(0.1, abs=0.15)
