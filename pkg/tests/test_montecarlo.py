import json

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats
from scipy.integrate import quad

import oracles
from linkadditive.kernels import quartic_kernel
from linkadditive.link import identity_link, logit_link
from linkadditive.montecarlo import (
    TABLE1,
    Dgp,
    ExperimentAborted,
    ExperimentConfig,
    generate_sample,
    integrated_squared_error,
    local_objective,
    oracle_fit,
    run_experiment,
    table1_config,
    trim_mask,
)
from linkadditive.second_stage import DegenerateWindow, SecondStageConfig, local_linear_step

K = quartic_kernel()


def test_normal_cdf_component_matches_mpmath():
    dgp = Dgp()
    for v in np.linspace(-1, 1, 21):
        assert dgp.component(1, v) + 0.5 == pytest.approx(float(mpmath.ncdf(3 * v)), abs=1e-15)


@pytest.mark.parametrize("j", [0, 1, 2, 4])
def test_components_integrate_to_zero(j):
    dgp = Dgp(d=5)
    assert quad(lambda v: float(dgp.component(j, v)), -1, 1, epsabs=1e-12)[0] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("j", [0, 1, 3])
def test_component_derivatives_match_finite_differences(j):
    dgp, x, e = Dgp(d=5), np.linspace(-0.9, 0.9, 13), 1e-4
    fd1 = (dgp.component(j, x + e) - dgp.component(j, x - e)) / (2 * e)
    fd2 = (dgp.component(j, x + e) - 2 * dgp.component(j, x) + dgp.component(j, x - e)) / e**2
    assert_allclose(dgp.derivative(j, x), fd1, atol=1e-6)
    assert_allclose(dgp.derivative(j, x, 2), fd2, atol=1e-4)


def test_dgp_validation():
    with pytest.raises(ValueError):
        Dgp(d=1)
    with pytest.raises(ValueError):
        Dgp(noise="poisson")
    with pytest.raises(IndexError):
        Dgp(d=2).component(2, 0.0)


def test_sample_is_deterministic():
    a, b = generate_sample(Dgp(), 3), generate_sample(Dgp(), 3)
    assert_array_equal(a.X, b.X)
    assert_array_equal(a.Y, b.Y)
    assert not np.array_equal(a.X, generate_sample(Dgp(), 4).X)


def test_design_marginals_and_response_mean():
    dgp = Dgp(d=3, n=20000)
    ds = generate_sample(dgp, 0)
    for j in range(3):
        assert stats.kstest(ds.X[:, j], stats.uniform(-1, 2).cdf).pvalue > 1e-3
    assert set(np.unique(ds.Y)) == {0.0, 1.0}
    resid = ds.Y - dgp.mean(ds.X)
    assert abs(resid.mean()) < 4 * 0.5 / np.sqrt(ds.n)


def test_heteroskedastic_noise_scale():
    dgp = Dgp(n=40000, noise="heteroskedastic")
    ds = generate_sample(dgp, 1)
    r = ds.Y - dgp.mean(ds.X)
    for lo, hi in ((-1.0, -0.8), (0.8, 1.0)):
        sel = (ds.X[:, 1] >= lo) & (ds.X[:, 1] < hi)
        assert np.mean(r[sel] ** 2) == pytest.approx(np.mean(dgp.variance(ds.X[sel])), rel=0.08)


@pytest.mark.parametrize("seed", range(5))
def test_local_objective_gradient_matches_naive_loop(seed):
    dgp = Dgp(n=40)
    ds = generate_sample(dgp, seed)
    pilot = dgp.pilot(ds.X, 0)
    rng = np.random.default_rng(seed)
    x, b0, b1 = rng.uniform(-0.8, 0.8), rng.normal(), rng.normal()
    parts = local_objective(x, b0, b1, pilot, ds, logit_link(), K, 0.6)
    ref = oracles.oracle_gradient(x, b0, b1, dgp.mu, list(pilot.rest), list(ds.Y), list(ds.X[:, 0]), 0.6,
                                  oracles.LOGIT)
    assert parts["g0"][0] == pytest.approx(ref[0], abs=1e-10)
    assert parts["g1"][0] == pytest.approx(ref[1], abs=1e-10)


def test_local_objective_derivatives_by_finite_differences():
    dgp = Dgp(n=200)
    ds = generate_sample(dgp, 9)
    pilot = dgp.pilot(ds.X, 0)
    f = lambda b0, b1: local_objective(0.2, b0, b1, pilot, ds, logit_link(), K, 0.5)  # noqa: E731
    p, e = f(0.3, -0.4), 1e-5
    assert p["g0"][0] == pytest.approx((f(0.3 + e, -0.4)["S"][0] - f(0.3 - e, -0.4)["S"][0]) / (2 * e), rel=1e-6)
    assert p["h01"][0] == pytest.approx((f(0.3, -0.4 + e)["g0"][0] - f(0.3, -0.4 - e)["g0"][0]) / (2 * e), rel=1e-5)


def test_two_stage_step_from_truth_is_one_newton_iteration():
    dgp = Dgp(n=500)
    ds = generate_sample(dgp, 2)
    pilot, link = dgp.pilot(ds.X, 0), logit_link()
    cfg = SecondStageConfig(0, 0.5)
    for x in (-0.5, 0.0, 0.35):
        m = float(dgp.component(0, x))
        p = local_objective(x, m, 0.0, pilot, ds, link, K, 0.5)
        det = p["h00"][0] * p["h11"][0] - p["h01"][0] ** 2
        newton = m - (p["h11"][0] * p["g0"][0] - p["h01"][0] * p["g1"][0]) / det
        assert local_linear_step(x, pilot, ds, link, cfg) == pytest.approx(newton, rel=1e-10)


def test_oracle_reaches_stationary_point(design_sample):
    dgp = Dgp()
    x = np.linspace(-0.8, 0.8, 9)
    b0, b1 = oracle_fit(x, design_sample, dgp, 0, 0.6, return_slope=True)
    p = local_objective(x, b0, b1, dgp.pilot(design_sample.X, 0), design_sample, logit_link(), K, 0.6)
    assert np.max(np.abs(p["g0"])) <= 1e-10 and np.max(np.abs(p["g1"])) <= 1e-10


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.floats(-0.7, 0.7))
def test_identity_oracle_is_weighted_linear_regression(seed, x):
    dgp = Dgp(n=150)
    ds = generate_sample(dgp, seed)
    pilot = dgp.pilot(ds.X, 0)
    z = ds.Y - dgp.mu - pilot.rest
    dx = ds.X[:, 0] - x
    w = K(dx / 0.7)
    A = np.column_stack([np.ones_like(dx), dx])
    coef = np.linalg.solve(A.T @ (w[:, None] * A), A.T @ (w * z))
    b0 = oracle_fit(x, ds, dgp, 0, 0.7, link=identity_link())[0]
    assert b0 == pytest.approx(coef[0], abs=1e-9)


def test_oracle_rejects_empty_window():
    ds = generate_sample(Dgp(n=20), 0)
    with pytest.raises(DegenerateWindow):
        oracle_fit(0.0, ds, Dgp(n=20), 0, 1e-4)


def test_integrated_squared_error():
    grid = np.linspace(-1, 1, 4001)
    assert integrated_squared_error(grid, np.sin(np.pi * grid), 0 * grid) == pytest.approx(1.0, rel=1e-6)
    assert integrated_squared_error(grid, grid**2 + 3.0, grid**2) == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(FloatingPointError):
        integrated_squared_error(grid, np.full(grid.size, np.nan), grid)


def test_trim_mask():
    grid = np.linspace(-1, 1, 201)
    assert trim_mask(grid, 0.5, "none").all()
    assert trim_mask(grid, 0.5, "boundary").sum() == 101
    assert trim_mask(grid, 0.5, 0.8).sum() == 161
    with pytest.raises(ValueError):
        trim_mask(grid, 1.4, "boundary")


def test_eimse_is_mean_of_ise_and_thread_independent():
    cfg = ExperimentConfig(replications=4, seed=5, grid_size=101)
    one = run_experiment(cfg)
    three = run_experiment(cfg, workers=3)
    assert_array_equal(one.ise, three.ise)
    assert_allclose(one.eimse, one.ise.mean(axis=0))
    assert one.ise.shape == (4, 2)
    assert json.loads(one.to_json())["replications"] == 4


def test_single_replication_reproduces_itself():
    a = run_experiment(ExperimentConfig(replications=3, seed=0, grid_size=51))
    b = run_experiment(ExperimentConfig(replications=1, seed=2, grid_size=51))
    assert_array_equal(a.ise[2], b.ise[0])


def test_failures_abort_the_experiment():
    with pytest.raises(ExperimentAborted):
        run_experiment(ExperimentConfig(h=(0.002, 1.4), replications=3, grid_size=51))


def test_config_round_trip_and_validation():
    cfg = ExperimentConfig(Dgp(d=5), "oracle", (2, 2), None, (1.2, 3.5), 10, 3, 101, "boundary")
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert cfg.bandwidths == pytest.approx((1.2 * 500**-0.2, 3.5 * 500**-0.2))
    assert cfg.kappas() == [2, 2, 2, 2, 2]
    with pytest.raises(ValueError, match="valid values"):
        ExperimentConfig(estimator="spline")
    with pytest.raises(ValueError):
        ExperimentConfig(h=(0.5,), C_h=(1.0,))


def test_table1_configs():
    assert len(TABLE1) == 6
    cfg = table1_config(5, "two-stage-LC", replications=7)
    assert (cfg.dgp.d, cfg.kappa, cfg.h, cfg.replications, cfg.smoother) == (5, (2, 2), (0.4, 0.9), 7, "local-constant")
