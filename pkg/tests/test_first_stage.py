import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from linkadditive.basis import BasisSpec, build_basis
from linkadditive.data import Dataset
from linkadditive.first_stage import (
    FirstStageConfig,
    FirstStageFit,
    IdentifiabilityError,
    fit_first_stage,
    objective,
    q_hat_diagnostic,
)
from linkadditive.link import identity_link


@pytest.mark.parametrize("family", ["orthonormalized-bspline", "legendre-shifted"])
def test_identity_link_matches_least_squares(family):
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, size=(150, 3))
    Y = np.sin(2 * X[:, 0]) + X[:, 1] ** 2 + rng.normal(scale=0.3, size=150)
    ds = Dataset(Y, X)
    basis = build_basis(BasisSpec(family, 4))
    fit = fit_first_stage(ds, basis, identity_link())
    P = basis.design(X)
    theta, *_ = np.linalg.lstsq(P, Y, rcond=None)
    assert fit.converged
    assert_allclose(fit.theta, theta, atol=1e-8)


def test_logit_fit_converges_and_decreases(design_sample, design_fit, logit):
    fit = design_fit
    assert fit.converged
    assert fit.objective <= fit.initial_objective
    assert np.all(np.diff(fit.history) <= 0)
    assert fit.theta.shape == (1 + 4 + 2,)
    assert fit.objective == pytest.approx(objective(fit.theta, design_sample, fit.basis, logit, fit.kappas))


def test_components_integrate_to_zero(design_fit):
    nodes, weights = design_fit.basis.quadrature()
    for j in range(2):
        assert abs(weights @ design_fit.component(j, nodes)) < 1e-10


def test_index_decomposition(design_sample, design_fit):
    X = design_sample.X[:20]
    assert_allclose(design_fit.index(X), design_fit.mu + design_fit.additive(X), atol=1e-12)


def test_box_is_respected():
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, size=(100, 2))
    ds = Dataset(5 * X[:, 0] + 3 * X[:, 1], X)
    basis = build_basis(BasisSpec("legendre-shifted", 2))
    fit = fit_first_stage(ds, basis, identity_link(), FirstStageConfig(kappa=2, c_theta=0.5))
    assert np.max(np.abs(fit.theta)) <= 0.5
    assert fit.objective <= fit.initial_objective


def test_identifiability_errors():
    basis = build_basis(BasisSpec(kappa=4))
    rng = np.random.default_rng(3)
    small = Dataset(rng.normal(size=8), rng.uniform(-1, 1, size=(8, 2)))
    with pytest.raises(IdentifiabilityError, match=r"n=8 .*d\(kappa\)=9"):
        fit_first_stage(small, basis, identity_link())
    # only two distinct covariate values cannot identify four functions
    X = np.tile([[-0.5, 0.5], [0.5, -0.5]], (20, 1))
    with pytest.raises(IdentifiabilityError, match="rank"):
        fit_first_stage(Dataset(rng.normal(size=40), X), basis, identity_link())


def test_per_coordinate_kappa_validation():
    with pytest.raises(ValueError):
        FirstStageConfig(c_theta=0)
    basis = build_basis(BasisSpec(kappa=2))
    ds = Dataset(np.zeros(30), np.random.default_rng(0).uniform(-1, 1, (30, 2)))
    with pytest.raises(ValueError, match="basis provides"):
        fit_first_stage(ds, basis, identity_link(), FirstStageConfig(kappa=(4, 2)))


def test_q_hat_single_observation_is_rank_one():
    basis = build_basis(BasisSpec("legendre-shifted", 2))
    ds = Dataset(np.array([0.3]), np.array([[0.2, -0.4]]))
    fit = FirstStageFit(np.zeros(5), [2, 2], basis, True, 0.0, 0.0, 0)
    with pytest.warns(RuntimeWarning, match="nearly singular"):
        Q, lam = q_hat_diagnostic(fit, ds, identity_link())
    assert np.linalg.matrix_rank(Q) == 1
    assert abs(lam) < 1e-12


def test_q_hat_near_identity_for_large_uniform_sample():
    rng = np.random.default_rng(4)
    n = 100_000
    X = rng.uniform(-1, 1, size=(n, 2))
    basis = build_basis(BasisSpec("legendre-shifted", 3))
    fit = FirstStageFit(np.zeros(7), [3, 3], basis, True, 0.0, 0.0, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        Q, lam = q_hat_diagnostic(fit, Dataset(np.zeros(n), X), identity_link())
    # E[p_j p_k] = delta_jk / 2 under the uniform density 1/2
    assert_allclose(Q[1:, 1:], 0.5 * np.eye(6), atol=0.02)
    assert lam > 0.4
