"""Plug-in estimates of the asymptotic bias and variance, derivative estimates and confidence bands.

All integrals of the form ``int q(x1, x~) f_X(x1, x~) dx~`` are estimated
by the localized average ``(n h)^-1 sum_i K_h(x1 - X_ij) q(x1, X~_i)``.
With ``C = h n^(1/5)`` the limits of ``n^(2/5) (m_hat - m)`` are

    bias      C^2 A_K D0^-1 [int G'' F' f_X  (+ m' D1 for local constant)]
    variance  4 B_K C^-1 D0^-2 int Var(U|x) F'^2 f_X

where ``G'' = F'' m'^2 + F' m''`` and ``D0 = 2 int F'^2 f_X``.  For a weight
``w`` the variance is ``B_K C^-1 int w^2 Var F'^2 f_X / (int w F'^2 f_X)^2``,
which at ``w = 1/Var`` equals ``B_K / (C D2)`` with ``D2 = int Var^-1 F'^2 f_X``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .kernels import Kernel, quartic_kernel
from .link import Link
from .second_stage import VARIANCE_FLOOR, Pilot

__all__ = [
    "AsymptoticSummary",
    "CI_MODES",
    "ConditionalVariance",
    "KernelConstants",
    "confidence_interval",
    "default_derivative_bandwidth",
    "estimate_D0_D1_D2",
    "estimate_V1",
    "estimate_beta1",
    "estimate_derivative",
    "kernel_density",
]

logger = logging.getLogger(__name__)

CI_MODES = ("undersmoothed", "bias-corrected")
MIN_DERIVATIVE_POINTS = 8
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True)
class KernelConstants:
    A_K: float
    B_K: float

    @classmethod
    def of(cls, kernel: Kernel) -> "KernelConstants":
        return cls(kernel.A_K, kernel.B_K)


def default_derivative_bandwidth(n: int) -> float:
    """``0.2 n^(-1/10)``; shrinks slowly enough for second derivatives."""
    return 0.2 * n ** (-0.1)


def estimate_derivative(grid, values, order: int, g: float, kernel: Kernel | None = None) -> Callable:
    """Kernel derivative estimate ``g^(-1-l) int L^(l)((x - v)/g) m(v) dv``.

    ``m`` is the linear interpolant of ``values`` on ``grid``.  Because the
    integrand is piecewise polynomial between grid points and window
    endpoints, four-point Gauss-Legendre on each piece integrates it
    exactly.  Returns a vectorized function of ``x``.

    Raises
    ------
    ValueError
        If ``order`` is not 1 or 2, or fewer than 8 grid points fall inside
        some evaluation window.
    """
    if order not in (1, 2):
        raise ValueError("derivative order must be 1 or 2")
    if g <= 0:
        raise ValueError("derivative bandwidth must be positive")
    kernel = kernel or quartic_kernel()
    lderiv = kernel.dk if order == 1 else kernel.d2k
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if grid.ndim != 1 or grid.shape != values.shape or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing and match values")
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    slopes = np.diff(values) / np.diff(grid)

    def derivative(x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        counts = np.abs(grid[None, :] - flat[:, None]) < g
        if np.any(counts.sum(axis=1) < MIN_DERIVATIVE_POINTS):
            raise ValueError(f"bandwidth g={g} leaves fewer than {MIN_DERIVATIVE_POINTS} grid points in a window")
        lo = np.maximum(grid[None, :-1], flat[:, None] - g)
        hi = np.minimum(grid[None, 1:], flat[:, None] + g)
        width = np.clip(hi - lo, 0.0, None)
        mid = 0.5 * (lo + hi)
        v = mid[..., None] + 0.5 * width[..., None] * _GL_NODES
        m = values[:-1, None] + slopes[:, None] * (v - grid[:-1, None])
        integrand = lderiv((flat[:, None, None] - v) / g) * m
        total = (integrand @ _GL_WEIGHTS * 0.5 * width).sum(axis=1)
        out = total / g ** (1 + order)
        return out.reshape(x.shape) if x.ndim else float(out[0])

    return derivative


class ConditionalVariance:
    """Nadaraya-Watson product-kernel regression of squared residuals.

    Evaluable at any points of the cube.  Estimates below ``1e-6`` are
    clamped and points with an empty product window fall back to the mean
    squared residual; both events are counted in ``clamped`` and
    ``fallbacks``.
    """

    def __init__(self, X, squared_residuals, h, kernel: Kernel | None = None):
        self.X = np.asarray(X, dtype=float)
        self.r2 = np.asarray(squared_residuals, dtype=float)
        self.h = np.broadcast_to(np.asarray(h, dtype=float), (self.X.shape[1],)).copy()
        if np.any(self.h <= 0):
            raise ValueError("variance bandwidths must be positive")
        self.kernel = kernel or quartic_kernel()
        self.clamped = 0
        self.fallbacks = 0

    @classmethod
    def from_index(cls, dataset: Dataset, index, link: Link, h, kernel: Kernel | None = None) -> "ConditionalVariance":
        """Build from fitted index values ``mu + m(X_i)``."""
        r = dataset.Y - link.F(np.asarray(index, dtype=float))
        return cls(dataset.X, r * r, h, kernel)

    @classmethod
    def from_fit(cls, fit, dataset: Dataset, link: Link, h, kernel: Kernel | None = None) -> "ConditionalVariance":
        """Build from first-stage residuals."""
        return cls.from_index(dataset, fit.index(dataset.X), link, h, kernel)

    def _raw(self, points) -> tuple[np.ndarray, np.ndarray]:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(points.shape[0])
        empty = np.zeros(points.shape[0], dtype=bool)
        step = max(1, 2_000_000 // max(self.X.shape[0], 1))
        for start in range(0, points.shape[0], step):
            p = points[start : start + step]
            k = np.ones((p.shape[0], self.X.shape[0]))
            for j in range(self.X.shape[1]):
                k *= self.kernel((p[:, j, None] - self.X[None, :, j]) / self.h[j])
            s = k.sum(axis=1)
            bad = s <= 0
            with np.errstate(invalid="ignore", divide="ignore"):
                out[start : start + step] = np.where(bad, np.nan, (k @ self.r2) / np.where(bad, 1.0, s))
            empty[start : start + step] = bad
        return out, empty

    def __call__(self, points) -> np.ndarray:
        vals, empty = self._raw(points)
        if empty.any():
            self.fallbacks += int(empty.sum())
            logger.warning("%d variance evaluations had empty windows; using the mean squared residual", int(empty.sum()))
            vals[empty] = self.r2.mean()
        low = vals < VARIANCE_FLOOR
        if low.any():
            self.clamped += int(low.sum())
            vals[low] = VARIANCE_FLOOR
        return vals


def kernel_density(x1, xj, kernel: Kernel, h: float) -> np.ndarray:
    """``(n h)^-1 sum K((x - X_i)/h)``."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    return kernel((x1[:, None] - xj[None, :]) / h).sum(axis=1) / (xj.size * h)


def _local(x1, pilot: Pilot, dataset: Dataset, link: Link, kernel: Kernel, h: float):
    """Kernel weights, (-K') weights and ``F', F''`` at the points ``(x1, X~_i)``."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    xj = dataset.X[:, pilot.coordinate]
    u = (x1[:, None] - xj[None, :]) / h
    idx = pilot.mu + np.asarray(pilot.target(x1), dtype=float)[:, None] + pilot.rest[None, :]
    return x1, kernel(u), -kernel.dk(u), link.Fp(idx), link.Fpp(idx)


def _points(x1, X, j):
    pts = np.repeat(X[None, :, :], x1.size, axis=0)
    pts[:, :, j] = x1[:, None]
    return pts.reshape(-1, X.shape[1])


def estimate_D0_D1_D2(x1, pilot: Pilot, dataset: Dataset, link: Link, kernel: Kernel, h: float,
                      variance: Callable | None = None):
    """Kernel estimates of ``D0 = 2 int F'^2 f_X``, its ``x1``-derivative ``D1`` and ``D2 = int Var^-1 F'^2 f_X``.

    ``D2`` is ``None`` unless ``variance`` (a function of ``(m, d)`` points)
    is supplied.
    """
    x1, kh, dkh, fp, _ = _local(x1, pilot, dataset, link, kernel, h)
    n = dataset.n
    f2 = fp * fp
    D0 = 2.0 * (kh * f2).sum(axis=1) / (n * h)
    D1 = 2.0 * (dkh * f2).sum(axis=1) / (n * h * h)
    D2 = None
    if variance is not None:
        var = np.asarray(variance(_points(x1, dataset.X, pilot.coordinate)), dtype=float).reshape(x1.size, n)
        D2 = (kh * f2 / np.maximum(var, VARIANCE_FLOOR)).sum(axis=1) / (n * h)
    return D0, D1, D2


def estimate_beta1(x1, pilot: Pilot, dataset: Dataset, link: Link, kernel: Kernel, h: float, C_h: float,
                   d1m, d2m, smoother: str = "local-linear") -> np.ndarray:
    """Asymptotic bias of ``n^(2/5) (m_hat - m)`` at ``x1``.

    ``d1m`` and ``d2m`` are the first and second derivatives of the target
    component at ``x1`` (arrays or scalars).
    """
    x1, kh, dkh, fp, fpp = _local(x1, pilot, dataset, link, kernel, h)
    d1m = np.broadcast_to(np.asarray(d1m, dtype=float), x1.shape)[:, None]
    d2m = np.broadcast_to(np.asarray(d2m, dtype=float), x1.shape)[:, None]
    n = dataset.n
    D0 = 2.0 * (kh * fp * fp).sum(axis=1) / (n * h)
    g2 = fpp * d1m * d1m + fp * d2m
    core = (kh * g2 * fp).sum(axis=1) / (n * h)
    if smoother == "local-constant":
        D1 = 2.0 * (dkh * fp * fp).sum(axis=1) / (n * h * h)
        core = core + d1m[:, 0] * D1
    elif smoother != "local-linear":
        raise ValueError(f"unknown smoother {smoother!r}")
    return C_h ** 2 * kernel.A_K * core / D0


def estimate_V1(x1, pilot: Pilot, dataset: Dataset, link: Link, kernel: Kernel, h: float, C_h: float,
                variance: Callable, weight: Callable | str | None = None) -> np.ndarray:
    """Asymptotic variance of ``n^(2/5) (m_hat - m)`` at ``x1``.

    ``weight`` is ``None`` (unweighted), a weight function ``w(x1, X)``
    returning ``(len(x1), n)`` values, or ``"optimal"`` for the closed form
    ``B_K / (C D2)`` of the variance-minimizing weight.
    """
    x1, kh, _, fp, _ = _local(x1, pilot, dataset, link, kernel, h)
    n = dataset.n
    var = np.asarray(variance(_points(x1, dataset.X, pilot.coordinate)), dtype=float).reshape(x1.size, n)
    f2 = fp * fp
    if isinstance(weight, str):
        if weight != "optimal":
            raise ValueError(f"unknown weight mode {weight!r}")
        D2 = (kh * f2 / np.maximum(var, VARIANCE_FLOOR)).sum(axis=1) / (n * h)
        return kernel.B_K / (C_h * D2)
    w = np.ones_like(kh) if weight is None else np.asarray(weight(x1, dataset.X), dtype=float)
    num = (kh * w * w * var * f2).sum(axis=1) / (n * h)
    den = (kh * w * f2).sum(axis=1) / (n * h)
    return kernel.B_K * num / (C_h * den * den)


@dataclass
class AsymptoticSummary:
    grid: np.ndarray
    estimate: np.ndarray
    beta: np.ndarray | None
    V: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    mode: str
    C_h: float
    gamma: float


def confidence_interval(grid, estimates, beta, V, n: int, alpha: float = 0.05, mode: str = "undersmoothed",
                        gamma: float = 0.2, C_h: float = float("nan")) -> AsymptoticSummary:
    """Pointwise normal intervals.

    ``bias-corrected``: ``m - n^(-2/5) beta +- z n^(-2/5) sqrt(V)``.
    ``undersmoothed`` (``h = C n^-gamma`` with ``gamma > 1/5``):
    ``m +- z n^(-(1-gamma)/2) sqrt(V)``, where ``V`` must be computed with
    ``C = h n^gamma``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha={alpha} must lie in (0, 1)")
    if mode not in CI_MODES:
        raise ValueError(f"unknown interval mode {mode!r}; expected one of {CI_MODES}")
    est = np.asarray(estimates, dtype=float)
    V = np.asarray(V, dtype=float)
    if np.any(V < 0):
        raise ValueError("variance estimates must be nonnegative")
    z = norm.ppf(1.0 - alpha / 2.0)
    if mode == "bias-corrected":
        if beta is None:
            raise ValueError("bias-corrected intervals need a bias estimate")
        scale = n ** (-0.4)
        centre = est - scale * np.asarray(beta, dtype=float)
    else:
        scale = n ** (-(1.0 - gamma) / 2.0)
        centre = est
    half = z * scale * np.sqrt(V)
    return AsymptoticSummary(np.asarray(grid, dtype=float), est, None if beta is None else np.asarray(beta, dtype=float),
                             V, centre - half, centre + half, alpha, mode, C_h, gamma)
