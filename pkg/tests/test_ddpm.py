import numpy as np
import pytest

from cdebench import ddpm, nn
from cdebench.datagen import Dataset
from cdebench.exceptions import ConfigurationError


def random_schedule(rng, T):
    return ddpm.NoiseSchedule.from_betas(np.sort(rng.uniform(1e-4, 0.3, T)))


def test_single_step_schedule():
    s = ddpm.NoiseSchedule.from_betas([0.1])
    assert s.alpha_bar[0] == pytest.approx(0.9)
    assert s.sigma[0] == 0.0


def test_two_step_alpha_bar():
    s = ddpm.NoiseSchedule.from_betas([0.1, 0.2])
    assert s.alpha_bar[1] == pytest.approx(0.72, abs=1e-15)


def test_make_schedule_validation():
    with pytest.raises(ConfigurationError):
        ddpm.make_schedule(10, 0.2, 0.1)
    with pytest.raises(ConfigurationError):
        ddpm.make_schedule(0)
    s = ddpm.make_schedule(200)
    assert s.T == 200 and s.alpha_bar[-1] < 1e-3


def test_noise_variance_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        T = int(rng.integers(1, 11))
        s = random_schedule(rng, T)
        for t in range(1, T + 1):
            agg = sum(np.prod(s.alpha[j:t]) * s.beta[j - 1] for j in range(1, t + 1))
            assert 1 - s.alpha_bar[t - 1] == pytest.approx(agg, abs=1e-12)


def test_forward_noise_parts():
    s = ddpm.make_schedule(10)
    y0 = np.array([1.5, -0.5])
    np.testing.assert_allclose(ddpm.forward_noise(y0, 4, np.zeros(2), s), np.sqrt(s.alpha_bar[3]) * y0)
    np.testing.assert_allclose(ddpm.forward_noise(np.zeros(2), 4, np.array([1.0, 0.0]), s),
                               [np.sqrt(1 - s.alpha_bar[3]), 0.0])
    with pytest.raises(IndexError):
        ddpm.forward_noise(y0, 11, np.zeros(2), s)


def test_forward_noise_marginal():
    s = ddpm.make_schedule(50)
    eps = np.random.default_rng(1).standard_normal(100_000)
    t, y0 = 20, 1.3
    draws = ddpm.forward_noise(y0, t, eps, s)
    ab = s.alpha_bar[t - 1]
    se_mean = np.sqrt((1 - ab) / eps.size)
    se_var = (1 - ab) * np.sqrt(2 / eps.size)
    assert abs(draws.mean() - np.sqrt(ab) * y0) < 4 * se_mean
    assert abs(draws.var() - (1 - ab)) < 4 * se_var


def test_reconstruction_and_posterior_identities():
    rng = np.random.default_rng(2)
    for _ in range(20):
        T = int(rng.integers(1, 11))
        s = random_schedule(rng, T)
        t = int(rng.integers(1, T + 1))
        y0, eps = rng.normal(size=3), rng.normal(size=3)
        yt = ddpm.forward_noise(y0, t, eps, s)
        np.testing.assert_allclose(ddpm.reconstruct_y0(yt, t, eps, s), y0, atol=1e-12)
        np.testing.assert_allclose(ddpm.posterior_mean(yt, y0, t, s),
                                   ddpm.posterior_mean_from_noise(yt, eps, t, s), atol=1e-12)


def constant_data(n, seed):
    rng = np.random.default_rng(seed)
    return Dataset(np.ones((n, 1)), rng.normal(2.0, 0.5, size=(n, 1)))


def test_zero_epochs_and_determinism():
    data = constant_data(200, 0)
    cfg = ddpm.DdpmConfig(T=20, epochs=0)
    m0 = ddpm.train(data, cfg, seed=1)
    ref = ddpm.init_model(1, 1, cfg, np.random.default_rng(1))
    for a, b in zip(m0.noise_net.arrays(), ref.noise_net.arrays()):
        np.testing.assert_array_equal(a, b)
    cfg = ddpm.DdpmConfig(T=20, epochs=2)
    a, b = ddpm.train(data, cfg, seed=3), ddpm.train(data, cfg, seed=3)
    for u, v in zip(a.noise_net.arrays(), b.noise_net.arrays()):
        np.testing.assert_array_equal(u, v)


def test_zero_net_single_step_chain():
    cfg = ddpm.DdpmConfig(T=1, beta_start=0.3, beta_end=0.3)
    model = ddpm.init_model(1, 1, cfg, np.random.default_rng(0))
    model.noise_net = nn.MLP.zeros(model.noise_net.spec)
    draws = model.sample(np.zeros(1), 50_000, seed=1)[:, 0]
    expected = 1 / np.sqrt(0.7)
    assert draws.std() == pytest.approx(expected, abs=4 * expected / np.sqrt(2 * 50_000))


def test_cached_noise_prediction_matches_network():
    rng = np.random.default_rng(4)
    for q in (1, 3):
        model = ddpm.init_model(2, q, ddpm.DdpmConfig(T=30), rng)
        x, y = rng.normal(size=(7, 2)), rng.normal(size=(7, q))
        base = model._first_layer_base(x)
        for t in (1, 15, 30):
            np.testing.assert_allclose(model._noise_from_base(base, y, t), model.predict_noise(x, y, t), atol=1e-12)


def test_network_called_once_per_step(monkeypatch):
    model = ddpm.init_model(1, 1, ddpm.DdpmConfig(T=17), np.random.default_rng(0))
    calls = []
    original = model._noise_from_base
    monkeypatch.setattr(model, "_noise_from_base", lambda *a: calls.append(1) or original(*a))
    model.reverse_sample(np.zeros(1), seed=0)
    assert len(calls) == 17


def test_sampling_same_seed_same_path():
    model = ddpm.init_model(2, 2, ddpm.DdpmConfig(T=10), np.random.default_rng(0))
    a = ddpm.sample(model, np.ones(2), 30, seed=5)
    assert a.shape == (30, 2)
    np.testing.assert_array_equal(a, ddpm.sample(model, np.ones(2), 30, seed=5))
    np.testing.assert_array_equal(ddpm.reverse_sample(model, np.ones(2), 6), ddpm.reverse_sample(model, np.ones(2), 6))


def test_sample_batch_chunking_is_consistent():
    model = ddpm.init_model(2, 1, ddpm.DdpmConfig(T=10), np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 2))
    a = model.sample_batch(x, 25, seed=3, chunk_rows=10_000)
    b = model.sample_batch(x, 25, seed=3, chunk_rows=10_000)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (4, 25, 1)


@pytest.mark.slow
def test_gaussian_target_recovery():
    model = ddpm.fit(constant_data(4000, 7), seed=0, T=200)
    draws = model.sample(np.ones(1), 4000, seed=1)[:, 0]
    assert draws.mean() == pytest.approx(2.0, abs=0.15)
    assert draws.std() == pytest.approx(0.5, abs=0.15)
