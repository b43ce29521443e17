"""First stage: series nonlinear least squares for the additive index.

Minimizes ``S(theta) = mean((Y - F(P(X) theta))**2)`` over the box
``[-c_theta, c_theta]^(1 + sum kappa_j)`` with projected Gauss-Newton.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import Basis, _resolve_kappas
from .data import Dataset
from .link import Link

__all__ = [
    "FirstStageConfig",
    "FirstStageFit",
    "IdentifiabilityError",
    "NumericalError",
    "fit_first_stage",
    "objective",
    "q_hat_diagnostic",
]

logger = logging.getLogger(__name__)

_ARMIJO = 1e-4
_DAMPING_THRESHOLD = 1e-10
_MAX_HALVINGS = 60
Q_HAT_WARN = 1e-8


class IdentifiabilityError(ValueError):
    """The series coefficients are not identified by the sample."""


class NumericalError(ArithmeticError):
    """Non-finite values met during fitting."""


@dataclass(frozen=True)
class FirstStageConfig:
    kappa: int | Sequence[int] = 4
    c_theta: float = 100.0
    max_iterations: int = 200
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-12

    def __post_init__(self):
        if self.c_theta <= 0:
            raise ValueError("c_theta must be positive")
        if self.gradient_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")

    def kappas(self, d: int) -> list[int]:
        k = self.kappa
        kmax = int(k) if np.isscalar(k) else max(int(v) for v in k)
        return _resolve_kappas(k, d, kmax)


@dataclass
class FirstStageFit:
    """Fitted series coefficients ``(mu, theta_11, ..., theta_d kappa_d)``."""

    theta: np.ndarray
    kappas: list[int]
    basis: Basis
    converged: bool
    objective: float
    initial_objective: float
    iterations: int
    history: list[float] = field(default_factory=list)

    @property
    def mu(self) -> float:
        return float(self.theta[0])

    @property
    def d(self) -> int:
        return len(self.kappas)

    def block(self, j: int) -> np.ndarray:
        """Coefficients of component ``j`` (0-based)."""
        start = 1 + sum(self.kappas[:j])
        return self.theta[start : start + self.kappas[j]]

    def component(self, j: int, v) -> np.ndarray:
        """Series estimate of the ``j``-th additive component at ``v``."""
        v = np.asarray(v, dtype=float)
        return self.basis(v)[..., : self.kappas[j]] @ self.block(j)

    def components(self, X) -> np.ndarray:
        """``(n, d)`` array of component values at the rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([self.component(j, X[:, j]) for j in range(self.d)])

    def additive(self, X) -> np.ndarray:
        """Sum of the fitted components, excluding the intercept."""
        return self.components(X).sum(axis=1)

    def index(self, X) -> np.ndarray:
        """``P(X) theta``, i.e. intercept plus all components."""
        return self.basis.design(X, self.kappas) @ self.theta


def objective(theta, dataset: Dataset, basis: Basis, link: Link, kappas=None) -> float:
    """Mean squared residual ``n^-1 sum (Y_i - F(P(X_i)' theta))^2``."""
    P = basis.design(dataset.X, kappas)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (P.shape[1],):
        raise ValueError(f"theta must have length {P.shape[1]}, got {theta.shape}")
    r = dataset.Y - link.F(P @ theta)
    return float(np.mean(r * r))


def _initial_theta(dataset: Dataset, link: Link, size: int, c_theta: float) -> np.ndarray:
    theta = np.zeros(size)
    mu = link.inverse(float(np.mean(dataset.Y)))
    if mu is not None:
        theta[0] = np.clip(mu, -c_theta, c_theta)
    return theta


def fit_first_stage(dataset: Dataset, basis: Basis, link: Link, config: FirstStageConfig | None = None) -> FirstStageFit:
    """Projected Gauss-Newton with Armijo backtracking on the series objective.

    Raises
    ------
    IdentifiabilityError
        If ``n <= 1 + sum(kappa_j)`` or the design matrix is rank deficient.
    NumericalError
        If the objective becomes non-finite.
    """
    config = config or FirstStageConfig(kappa=basis.kappa)
    kappas = config.kappas(dataset.d)
    if max(kappas) > basis.kappa:
        raise ValueError(f"basis provides {basis.kappa} functions, config asks for {max(kappas)}")
    P = basis.design(dataset.X, kappas)
    n, p = P.shape
    if n <= p:
        raise IdentifiabilityError(f"n={n} observations cannot identify d(kappa)={p} coefficients")
    if np.linalg.matrix_rank(P) < p:
        raise IdentifiabilityError(f"series design matrix has rank below d(kappa)={p} (collinear basis evaluations)")

    Y = dataset.Y
    c = config.c_theta
    theta = _initial_theta(dataset, link, p, c)

    def resid(th):
        r = Y - link.F(P @ th)
        s = float(np.mean(r * r))
        if not np.isfinite(s):
            raise NumericalError("non-finite first-stage objective")
        return r, s

    r, s = resid(theta)
    s0 = s
    history = [s]
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        J = link.Fp(P @ theta)[:, None] * P
        grad = -2.0 * (J.T @ r) / n
        pgrad = theta - np.clip(theta - grad, -c, c)
        if np.max(np.abs(pgrad)) <= config.gradient_tolerance:
            converged = True
            it -= 1
            break
        A = J.T @ J / n
        lam_min = np.linalg.eigvalsh(A)[0]
        if lam_min < _DAMPING_THRESHOLD:
            A = A + (_DAMPING_THRESHOLD - lam_min + _DAMPING_THRESHOLD) * np.eye(p)
        step = np.linalg.solve(A, J.T @ r / n)

        t = 1.0
        accepted = False
        for _ in range(_MAX_HALVINGS):
            cand = np.clip(theta + t * step, -c, c)
            r_c, s_c = resid(cand)
            if s_c <= s + _ARMIJO * float(grad @ (cand - theta)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        rel = np.linalg.norm(cand - theta) / max(np.linalg.norm(theta), 1.0)
        theta, r, s = cand, r_c, s_c
        history.append(s)
        if rel <= config.step_tolerance:
            J = link.Fp(P @ theta)[:, None] * P
            grad = -2.0 * (J.T @ r) / n
            pgrad = theta - np.clip(theta - grad, -c, c)
            converged = bool(np.max(np.abs(pgrad)) <= config.gradient_tolerance)
            break
    else:
        J = link.Fp(P @ theta)[:, None] * P
        pgrad = theta - np.clip(theta + 2.0 * (J.T @ r) / n, -c, c)
        converged = bool(np.max(np.abs(pgrad)) <= config.gradient_tolerance)

    if not converged:
        logger.warning("first stage stopped after %d iterations without meeting the gradient tolerance", it)
    return FirstStageFit(theta, kappas, basis, converged, s, s0, it, history)


def q_hat_diagnostic(fit: FirstStageFit, dataset: Dataset, link: Link) -> tuple[np.ndarray, float]:
    """Empirical information matrix ``n^-1 sum Z_i Z_i'`` with ``Z_i = F'(index_i) P(X_i)``.

    Returns the matrix and its smallest eigenvalue.  A warning is emitted
    when that eigenvalue falls below ``1e-8``.
    """
    P = fit.basis.design(dataset.X, fit.kappas)
    Z = link.Fp(P @ fit.theta)[:, None] * P
    Q = Z.T @ Z / dataset.n
    Q = 0.5 * (Q + Q.T)
    lam = float(np.linalg.eigvalsh(Q)[0])
    if lam < Q_HAT_WARN:
        warnings.warn(f"first-stage information matrix is nearly singular (min eigenvalue {lam:.3g})", RuntimeWarning, stacklevel=2)
    return Q, lam
