import numpy as np
import pytest

from cdebench import datagen, single_index as si
from cdebench.datagen import Dataset
from cdebench.exceptions import (
    CriterionUndefinedError,
    DegenerateNeighborhoodError,
    InfeasibleDimensionError,
    SelectionError,
    UnsupportedModelError,
)


def index_data(n, seed, v0, noise=0.5):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, len(v0)))
    y = x @ np.asarray(v0) + noise * rng.standard_normal(n)
    return Dataset(x, y[:, None], None, seed)


def brute_force_S(v, data, h, grid):
    """Direct transcription of the sphere criterion with explicit leave-two-out fits."""
    x, y = data.x, data.y[:, 0]
    n = len(y)
    u = x @ v
    total = 0.0
    for c in grid.centers():
        inside = np.sum((x - c) ** 2, axis=1) <= grid.radius**2
        if not inside.any():
            continue
        s = 0.0
        for j in range(n):
            f_emp = sum(inside[k] and y[k] <= y[j] for k in range(n) if k != j) / (n - 1)
            h_sum = 0.0
            for i in np.flatnonzero(inside):
                if i == j:
                    continue
                keep = [k for k in range(n) if k not in (i, j)]
                h_sum += si.local_linear_cdf(np.column_stack([u[keep], y[keep]]), h, u[i], y[j])
            s += (f_emp - h_sum / (n - 1)) ** 2
        total += s / n
    return total / grid.n_centers


def test_local_linear_constant_responses():
    pairs = np.column_stack([np.linspace(-1, 1, 9), np.full(9, 0.3)])
    assert si.local_linear_cdf(pairs, 0.5, 0.1, 0.3) == 1.0
    assert si.local_linear_cdf(pairs, 0.5, 0.1, 0.2) == 0.0


def test_local_linear_matches_normal_equations():
    pairs = np.array([[-0.8, 1.2], [-0.1, 0.4], [0.3, -0.5], [0.5, 0.9], [1.1, 0.1]])
    u0, y0, h = 0.2, 0.45, 0.7
    d = pairs[:, 0] - u0
    w = np.exp(-0.5 * (d / h) ** 2)
    design = np.column_stack([np.ones(5), d])
    a = design.T @ (w[:, None] * design)
    rhs = design.T @ (w * (pairs[:, 1] <= y0))
    oracle = np.linalg.solve(a, rhs)[0]
    assert si.local_linear_cdf(pairs, h, u0, y0) == pytest.approx(np.clip(oracle, 0, 1), abs=1e-10)


def test_local_linear_degenerate_neighbourhood():
    pairs = np.array([[0.0, 1.0], [0.0, 2.0], [50.0, 0.0]])
    with pytest.raises(DegenerateNeighborhoodError):
        si.local_linear_cdf(pairs, 0.1, 0.0, 1.5)
    assert si.nadaraya_watson_cdf(pairs, 0.1, 0.0, 1.5) == pytest.approx(0.5)


def test_criterion_matches_brute_force():
    data = index_data(30, 0, [0.8, 0.6], noise=0.3)
    grid = si.SphereGrid(2, 0.5)
    v = si.normalize_direction([1.0, -0.4])
    assert si.criterion_S(v, data, 0.5, grid) == pytest.approx(brute_force_S(v, data, 0.5, grid), rel=1e-10)


def test_criterion_zero_for_constant_response():
    rng = np.random.default_rng(1)
    data = Dataset(rng.standard_normal((60, 2)), np.full((60, 1), 3.0))
    grid = si.SphereGrid(2, 0.5)
    for v in ([1, 0], [0.3, 0.9], [1, -1]):
        assert si.criterion_S(si.normalize_direction(v), data, 0.5, grid) == pytest.approx(0.0, abs=1e-12)


def test_criterion_sign_symmetric():
    data = index_data(80, 2, [0.6, 0.8])
    grid = si.SphereGrid(2, 0.5)
    v = np.array([0.3, -0.95])
    assert si.criterion_S(v, data, 0.5, grid) == pytest.approx(si.criterion_S(-v, data, 0.5, grid), rel=1e-12)


def test_criterion_prefers_true_index():
    v0 = si.normalize_direction([1.0, 2.0])
    v_perp = si.normalize_direction([2.0, -1.0])
    grid = si.SphereGrid(2, 0.5)
    wins = 0
    for seed in range(10):
        data = index_data(500, seed, v0)
        crit = si.DirectionCriterion(data.x, data.y, 0.5, grid)
        wins += crit(v0) < crit(v_perp)
    assert wins == 10


def test_criterion_undefined_when_spheres_empty():
    x = np.full((10, 2), 5.0) + np.random.default_rng(0).normal(0, 0.01, (10, 2))
    data = Dataset(x, np.arange(10.0)[:, None])
    with pytest.raises(CriterionUndefinedError):
        si.criterion_S(np.array([1.0, 0.0]), data, 0.5, si.SphereGrid(2, 0.5))


def test_univariate_response_required():
    data = datagen.generate("M10", 20, 0)
    with pytest.raises(UnsupportedModelError):
        si.criterion_S(np.ones(5) / np.sqrt(5), data, 0.5, si.SphereGrid(5, 1.1))


def test_p1_direction():
    data = Dataset(np.random.default_rng(0).normal(size=(50, 1)), np.random.default_rng(1).normal(size=(50, 1)))
    np.testing.assert_array_equal(si.fit_direction(data, 0.5), [1.0])


def test_direction_normalisation():
    for v in ([-1, 2, 0], [0, -3, 1], [0, 0, -2]):
        out = si.normalize_direction(v)
        assert np.linalg.norm(out) == pytest.approx(1.0)
        assert out[np.flatnonzero(np.abs(out) > 1e-12)[0]] > 0


def test_angle_chart_round_trip():
    rng = np.random.default_rng(3)
    for p in (2, 3, 6):
        v = si.normalize_direction(rng.normal(size=p))
        np.testing.assert_allclose(si.angles_to_direction(si.direction_to_angles(v)), v, atol=1e-12)


def test_fit_direction_recovers_first_axis():
    for seed in range(3):
        data = index_data(1000, seed, [1.0, 0.0])
        v = si.fit_direction(data, 0.5, restarts=2, seed=seed)
        assert abs(v[0]) >= 0.95
        assert v[np.flatnonzero(np.abs(v) > 1e-12)[0]] > 0


def test_grid_geometry_and_memory_cap():
    grid = si.SphereGrid(2, 0.5)
    np.testing.assert_allclose(grid.axis, [-1, -0.5, 0, 0.5, 1])
    assert grid.n_centers == 25
    assert np.all(np.abs(grid.centers()) <= 1)
    with pytest.raises(InfeasibleDimensionError):
        si.SphereGrid(30, 1.1).check_feasible(1000)
    assert si.feasible_bandwidths(30, 1000) is None
    assert si.feasible_bandwidths(10, 5000) == si.Bandwidths(1.1, 1.3)
    assert si.feasible_bandwidths(4, 5000) == si.Bandwidths(0.5, 0.7)


def test_fit_refuses_infeasible_dimension():
    data = datagen.generate("M7", 200, 0)
    with pytest.raises(InfeasibleDimensionError):
        si.fit(data, si.Bandwidths(1.1, 1.2))


def make_model(y_grid, cdf_fn):
    model = si.build_model(Dataset(np.zeros((3, 1)), np.array([[0.0], [1.0], [2.0]])), [1.0], 1.0)
    model.y_grid = np.asarray(y_grid)
    model.cdf = lambda x, block=256: np.tile(cdf_fn(model.y_grid), (np.atleast_2d(x).shape[0], 1))
    return model


def test_inverse_cdf_sampling_standard_normal():
    from scipy.stats import norm

    model = make_model(np.linspace(-8, 8, 4001), norm.cdf)
    draws = model.sample(np.zeros(1), 20_000, seed=0)
    assert abs(draws.mean()) < 3 / np.sqrt(20_000)
    assert abs(draws.std() - 1) < 3 / np.sqrt(20_000)


def test_inverse_cdf_sampling_point_mass():
    rng = np.random.default_rng(1)
    data = Dataset(rng.normal(size=(50, 2)), np.full((50, 1), 2.0))
    model = si.build_model(data, [0.6, 0.8], 0.5)
    np.testing.assert_array_equal(model.y_grid, [2.0])
    np.testing.assert_allclose(model.sample(np.zeros(2), 500, seed=1), 2.0)


def test_fitted_cdf_is_monotone_and_bounded():
    data = index_data(400, 4, [0.6, 0.8])
    model = si.fit(data, si.Bandwidths(0.5, 0.2), seed=0, restarts=1)
    cdf = model.cdf(np.random.default_rng(5).normal(size=(20, 2)) * 3)
    assert np.all(np.diff(cdf, axis=1) >= 0)
    assert cdf.min() >= 0 and cdf.max() <= 1
    assert np.all(np.diff(model.u) >= 0)


def test_fit_invariant_to_row_order():
    data = index_data(300, 6, [0.6, 0.8])
    perm = np.random.default_rng(7).permutation(300)
    shuffled = data.subset(perm)
    bw = si.Bandwidths(0.5, 0.7)
    a = si.fit(data, bw, seed=3, restarts=2)
    b = si.fit(shuffled, bw, seed=3, restarts=2)
    np.testing.assert_allclose(a.direction, b.direction, atol=1e-8)
    xt = np.random.default_rng(8).normal(size=(5, 2))
    np.testing.assert_allclose(a.cdf(xt), b.cdf(xt), atol=1e-8)


class _Fake:
    def __init__(self, offset):
        self.offset = offset

    def sample_batch(self, x, n, seed=None):
        return datagen.true_cond_sample("M1", x, n, seed) + self.offset


def test_select_bandwidths_single_and_oracle():
    train, val = datagen.generate("M1", 50, 0), datagen.generate("M1", 50, 1)
    assert si.select_bandwidths(train, val, pairs=[(0.3, 0.4)]) == si.Bandwidths(0.3, 0.4)
    fitter = lambda tr, bw, s: _Fake(0.0 if bw.h == 0.7 else 1.0)  # noqa: E731
    best = si.select_bandwidths(train, val, pairs=[(0.3, 0.4), (0.7, 0.8)], fitter=fitter,
                                n_val_points=10, n_samples=300, seed=2)
    assert best == si.Bandwidths(0.7, 0.8)


def test_select_bandwidths_all_fail():
    train, val = datagen.generate("M1", 50, 0), datagen.generate("M1", 50, 1)

    def broken(tr, bw, s):
        raise DegenerateNeighborhoodError("nope")

    with pytest.raises(SelectionError, match="nope"):
        si.select_bandwidths(train, val, pairs=[(0.3, 0.4), (0.5, 0.6)], fitter=broken)


def test_bandwidth_grid():
    pairs = si.default_bandwidth_pairs()
    assert pairs[0] == (0.1, 0.2) and (1.1, 1.2) in pairs
    assert all(H > h and H <= 1.2 + 1e-9 for h, H in pairs)
    assert len(pairs) == 6 + 5 + 4 + 3 + 2 + 1


@pytest.mark.slow
def test_select_bandwidths_reproducible_on_m1():
    train, val = datagen.generate("M1", 1000, 3), datagen.generate("M1", 400, 4)
    pairs = [(0.5, 0.6), (0.5, 0.8), (0.7, 0.8)]
    a = si.select_bandwidths(train, val, pairs, restarts=1, seed=5, n_val_points=20, n_samples=200)
    b = si.select_bandwidths(train, val, pairs, restarts=1, seed=5, n_val_points=20, n_samples=200)
    assert a == b and a.scores == b.scores


@pytest.mark.slow
def test_m4_desk_scale_w1():
    from cdebench.metrics import w1_rows

    train, test = datagen.generate("M4", 1000, 0), datagen.generate("M4", 200, 1)
    model = si.fit(train, si.Bandwidths(0.5, 0.7), seed=0, restarts=2)
    est = model.sample_batch(test.x, 500, 2)
    ref = datagen.true_cond_sample("M4", test.x, 500, 3)
    assert w1_rows(est, ref).mean() < 0.25
