from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gpsocp.gp import HyperOptConfig, affine_posterior, fit, optimize_hyperparams
from gpsocp.plant import AccConfig, CoverageError, NominalModel, RegionPartition, acc_benchmark, acc_partition, step
from gpsocp.residuals import (
    BatchMOGPModel,
    InvalidTrajectory,
    RegionDataset,
    ResidualSample,
    fit_batch_mogp,
    load_model,
    measure_residuals,
    partition_dataset,
    query_residual,
    read_dataset,
    save_model,
    write_dataset,
)

FAST = HyperOptConfig(restarts=2, max_iterations=60)


@pytest.fixture(scope="module")
def acc():
    return acc_benchmark(AccConfig())


def offset_model(nominal, extra):
    """Nominal fields plus ``extra(x, u)`` added to the speed derivative."""

    def dyn(x, u):
        out = nominal.dynamics(x, u)
        out[1] += extra(x, np.atleast_1d(u))
        return out

    return dyn


def rollout(dynamics, x0, inputs, dt):
    xs = [np.asarray(x0, dtype=float)]
    for u in inputs:
        xs.append(step(dynamics, xs[-1], u, dt))
    return np.arange(len(xs)) * dt, np.array(xs)


def test_two_states_give_one_sample(acc):
    _, nominal, certs, part = acc
    t, xs = rollout(nominal.dynamics, [0, 14, 140], [[100.0]], 0.05)
    samples = measure_residuals(t, xs, [[100.0]], nominal, certs, part)
    assert len(samples) == 1
    s = samples[0]
    assert np.allclose(s.x, xs.mean(axis=0))
    assert s.timestamp == 0.0 and s.region == 1


def test_bad_trajectories_rejected(acc):
    _, nominal, certs, _ = acc
    xs = np.tile([0.0, 14.0, 140.0], (3, 1))
    with pytest.raises(InvalidTrajectory):
        measure_residuals([0.0, 0.05, 0.1 + 1e-8], xs, np.zeros((2, 1)), nominal, certs)
    with pytest.raises(InvalidTrajectory):
        measure_residuals([0.0], xs[:1], np.zeros((1, 1)), nominal, certs)
    with pytest.raises(InvalidTrajectory):
        measure_residuals([0.0, 0.05, 0.1], xs, np.zeros((1, 1)), nominal, certs)


def test_nominal_trajectory_residuals_vanish_with_dt(acc):
    _, nominal, certs, _ = acc
    peaks = []
    for dt in (0.05, 0.025):
        n = int(round(5.0 / dt))
        u = 3000.0 * np.sin(np.arange(n) * dt)[:, None]
        t, xs = rollout(nominal.dynamics, [0, 14, 140], u, dt)
        s = measure_residuals(t, xs, u, nominal, certs)
        peaks.append(max(max(abs(q.omega_V), abs(q.omega_h)) for q in s))
        assert peaks[-1] <= 1.0 * dt
    # decays at least at first order
    assert peaks[0] / peaks[1] >= 1.5


def test_constant_offset_recovered(acc):
    _, nominal, certs, _ = acc
    cfg = AccConfig()
    c, dt = 0.3, 0.05
    u = np.full((100, 1), 1500.0)
    t, xs = rollout(offset_model(nominal, lambda x, u: c), [0, 14, 140], u, dt)
    for s in measure_residuals(t, xs, u, nominal, certs):
        assert s.omega_V == pytest.approx(2 * (s.x[1] - cfg.v_d) * c, abs=5 * dt)
        assert s.omega_h == pytest.approx(-cfg.T_h * c, abs=5 * dt)


def _sample(x1, region=0):
    return ResidualSample(np.array([x1, 10.0, 50.0]), np.array([1.0]), 0.1, 0.2, region, 0.0)


def test_partition_dataset_assigns_by_region():
    part = acc_partition(AccConfig())
    ds = partition_dataset([_sample(20.0), _sample(14.999), _sample(3.0)], part, (0, 1), 1)
    assert [d.n for d in ds] == [2, 1]
    assert ds[1].X[0, 0] == 20.0
    for d in ds:
        assert np.all(d.Y[:, 0] == 1.0)


def test_partition_dataset_all_in_one_region():
    part = acc_partition(AccConfig())
    ds = partition_dataset([_sample(1.0), _sample(2.0)], part, (0, 1), 1)
    assert [d.n for d in ds] == [2, 0]


def test_partition_dataset_coverage_error():
    part = acc_partition(AccConfig())
    with pytest.raises(CoverageError):
        partition_dataset([_sample(800.0)], part, (0, 1), 1)


def _synthetic(rng, n, lo, hi):
    X = np.column_stack([rng.uniform(lo, hi, n), rng.uniform(10, 25, n)])
    u = rng.uniform(-2000, 2000, n)
    Y = np.column_stack([np.ones(n), u])
    return X, Y


def test_empty_region_gets_prior(rng):
    part = acc_partition(AccConfig())
    X, Y = _synthetic(rng, 20, 0, 14)
    ds = [RegionDataset(1, X, Y, rng.normal(size=20), rng.normal(size=20)),
          RegionDataset(2, np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros(0))]
    model = fit_batch_mogp(ds, part, (0, 1), 1, FAST)
    assert model.untrained_regions() == [2]
    post, untrained = query_residual(model, np.array([20.0, 12.0, 0.0]), "h")
    assert untrained and np.all(post.mu == 0.0)
    post, untrained = query_residual(model, np.array([5.0, 12.0, 0.0]), "h")
    assert not untrained


def test_no_data_at_all_is_rejected():
    part = RegionPartition.single((0, 1), ((0, 1), (0, 1)))
    empty = RegionDataset(1, np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError):
        fit_batch_mogp([empty], part, (0, 1), 1, FAST)


def test_single_region_equals_direct_fit(rng):
    part = RegionPartition.single((0, 1), ((0, 700), (0, 30)))
    X, Y = _synthetic(rng, 40, 0, 700)
    wV, wh = rng.normal(size=40), rng.normal(size=40)
    model = fit_batch_mogp([RegionDataset(1, X, Y, wV, wh)], part, (0, 1), 1, FAST)
    res = optimize_hyperparams(X, Y, wh, replace(FAST, seed=FAST.seed + 101 + 1), region_id=1)
    direct = fit(res.kernel, X, Y, wh, res.noise_variance)
    assert model.models[0][1].kernel == direct.kernel
    x = np.array([100.0, 12.0, 0.0])
    a, _ = query_residual(model, x, "h")
    b = affine_posterior(direct, x[:2])
    assert np.allclose(a.mu, b.mu, atol=1e-12, rtol=0) and np.allclose(a.Sigma, b.Sigma, atol=1e-12, rtol=0)


def test_query_boundary_and_purity(rng):
    part = acc_partition(AccConfig())
    ds = []
    for r, (lo, hi) in enumerate([(0, 14), (15, 25)], start=1):
        X, Y = _synthetic(rng, 15, lo, hi)
        ds.append(RegionDataset(r, X, Y, rng.normal(size=15) + 5 * r, rng.normal(size=15)))
    model = fit_batch_mogp(ds, part, (0, 1), 1, FAST)
    x = np.array([15.0, 12.0, 0.0])
    a, _ = query_residual(model, x, "V")
    b, _ = query_residual(model, x, "V")
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.Sigma, b.Sigma)
    direct = affine_posterior(model.models[1][0], x[:2])
    assert np.array_equal(a.mu, direct.mu)
    with pytest.raises(ValueError):
        query_residual(model, x, "z")


def test_oracle_recovery_on_switching_system(acc):
    """Two regions with different known speed residuals; posterior brackets the truth."""
    _, nominal, certs, _ = acc
    cfg = AccConfig()
    part = RegionPartition.from_breakpoints(0, [0.0, 60.0, 700.0], (0, 1), cfg.domain)

    def extra(x, u):
        if x[0] < 60.0:
            return -0.05 * x[1] / 10 + 2e-5 * u[0]
        return 0.1 - 1e-5 * u[0]

    rng = np.random.default_rng(4)
    dt = 0.05
    u = (1500.0 + 1500.0 * np.sin(np.arange(160) * 0.05) + rng.normal(0, 300, 160))[:, None]
    t, xs = rollout(offset_model(nominal, extra), [0, 14, 140], u, dt)
    samples = measure_residuals(t, xs, u, nominal, certs, part)
    ds = partition_dataset(samples, part, (0, 1), 1)
    assert all(d.n > 20 for d in ds)
    model = fit_batch_mogp(ds, part, (0, 1), 1, HyperOptConfig(restarts=3), beta=2.0)

    hits = total = 0
    for k in range(0, len(xs) - 1, 3):
        xj = 0.5 * (xs[k] + xs[k + 1])
        ut = np.array([rng.uniform(0, 3000)])
        truth = -cfg.T_h * extra(xj, ut)
        post, _ = query_residual(model, xj, "h")
        y = np.concatenate([[1.0], ut])
        hits += abs(post.mean(y) - truth) <= 2.0 * post.std(y)
        total += 1
    assert hits / total >= 0.9


def test_model_and_dataset_round_trips(tmp_path, acc):
    _, nominal, certs, part = acc
    u = np.full((30, 1), 800.0)
    t, xs = rollout(nominal.dynamics, [0, 14, 140], u, 0.05)
    samples = measure_residuals(t, xs, u, nominal, certs, part)
    write_dataset(tmp_path / "d.csv", samples)
    back = read_dataset(tmp_path / "d.csv")
    assert len(back) == len(samples)
    for a, b in zip(samples, back):
        assert np.array_equal(a.x, b.x) and np.array_equal(a.u, b.u)
        assert (a.omega_V, a.omega_h, a.region, a.timestamp) == (b.omega_V, b.omega_h, b.region, b.timestamp)

    ds = partition_dataset(samples, part, (0, 1), 1)
    model = fit_batch_mogp(ds, part, (0, 1), 1, FAST, beta=[2.0, 3.0])
    save_model(model, tmp_path / "m.json")
    loaded = load_model(tmp_path / "m.json")
    assert loaded.betas == (2.0, 3.0)
    x = np.array([3.0, 14.5, 0.0])
    a, _ = query_residual(model, x, "V")
    b, _ = query_residual(loaded, x, "V")
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.Sigma, b.Sigma)


def test_model_validation(rng):
    part = acc_partition(AccConfig())
    X, Y = _synthetic(rng, 10, 0, 14)
    ds = [RegionDataset(1, X, Y, rng.normal(size=10), rng.normal(size=10)),
          RegionDataset(2, np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros(0))]
    model = fit_batch_mogp(ds, part, (0, 1), 1, FAST)
    with pytest.raises(ValueError):
        BatchMOGPModel(part, (0, 1), model.models, (2.0, 0.0))
    with pytest.raises(ValueError):
        BatchMOGPModel(part, (0, 1), model.models, (2.0, 2.0), delta=1.0)
    with pytest.raises(ValueError):
        BatchMOGPModel(part, (0, 1), model.models[:1], (2.0,))


@given(st.lists(st.tuples(st.floats(0, 700), st.floats(0, 30)), min_size=1, max_size=40))
def test_partition_preserves_every_sample(points):
    part = acc_partition(AccConfig())
    samples = [ResidualSample(np.array([a, b, 0.0]), np.array([0.0]), 0.0, 0.0, 0, 0.0) for a, b in points]
    ds = partition_dataset(samples, part, (0, 1), 1)
    assert sum(d.n for d in ds) == len(samples)
    for d in ds:
        for x in d.X:
            assert part.claims(np.array([x[0], x[1]])) == [d.region]
