"""Second stage: one kernel-weighted Newton step per evaluation point.

For a target coordinate ``j`` and evaluation point ``x`` the local
objective is

    sum_i w(x, X_i) {Y_i - F[mu + b0 + b1 (X_ij - x) + m_rest(X_i)]}^2 K((x - X_ij) / h)

and the estimators take one Newton step (local linear) or one scalar
Newton step in ``b0`` (local constant) from ``b0 = m_j(x)``, ``b1 = 0``,
where ``mu``, ``m_j`` and ``m_rest`` come from the pilot fit.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from .data import Dataset
from .first_stage import FirstStageFit
from .kernels import Kernel, quartic_kernel
from .link import Link

__all__ = [
    "ComponentEstimate",
    "DegenerateWindow",
    "Pilot",
    "SecondStageConfig",
    "VarianceMinWeight",
    "estimate_component",
    "local_constant_step",
    "local_linear_step",
    "pilot_from_fit",
    "s_double_prime",
    "s_prime",
    "score_sums",
    "variance_min_weight",
]

logger = logging.getLogger(__name__)

SMOOTHERS = ("local-linear", "local-constant")
HESSIANS = ("observed", "expected")
DEGENERACY_RTOL = 1e-12
VARIANCE_FLOOR = 1e-6
_CHUNK = 2_000_000  # max grid-by-sample elements held at once


class DegenerateWindow(ArithmeticError):
    """Too little data in the kernel window to take the Newton step."""


class Weight(Protocol):
    def __call__(self, x1: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Weights of shape ``(len(x1), n)`` for target value ``x1[g]`` and sample row ``X[i]``."""


@dataclass(frozen=True)
class Pilot:
    """Starting values for the Newton step on one target coordinate.

    ``target`` evaluates the pilot estimate of the target component and
    ``rest`` holds the sum of the other pilot components at each sample row.
    """

    mu: float
    target: Callable[[np.ndarray], np.ndarray]
    rest: np.ndarray
    coordinate: int


def pilot_from_fit(fit: FirstStageFit, dataset: Dataset, j: int) -> Pilot:
    comps = fit.components(dataset.X)
    rest = comps.sum(axis=1) - comps[:, j]
    return Pilot(fit.mu, lambda v, _j=j: fit.component(_j, v), rest, j)


def _as_pilot(pilot, dataset: Dataset, j: int) -> Pilot:
    if isinstance(pilot, Pilot):
        if pilot.coordinate != j:
            raise ValueError(f"pilot is for coordinate {pilot.coordinate}, asked for {j}")
        return pilot
    return pilot_from_fit(pilot, dataset, j)


@dataclass(frozen=True)
class SecondStageConfig:
    target: int
    h: float
    smoother: str = "local-linear"
    kernel: Kernel = field(default_factory=quartic_kernel)
    weight: Weight | None = None
    hessian: str = "observed"

    def __post_init__(self):
        if not 0.0 < self.h <= 2.0:
            raise ValueError(f"bandwidth h={self.h} must lie in (0, 2]")
        if self.smoother not in SMOOTHERS:
            raise ValueError(f"unknown smoother {self.smoother!r}; expected one of {SMOOTHERS}")
        if self.hessian not in HESSIANS:
            raise ValueError(f"unknown hessian {self.hessian!r}; expected one of {HESSIANS}")


@dataclass
class ComponentEstimate:
    coordinate: int
    grid: np.ndarray
    values: np.ndarray
    pilot: np.ndarray
    boundary: np.ndarray
    degenerate: np.ndarray
    h: float
    smoother: str
    weighted: bool


def _chunks(G: int, n: int):
    step = max(1, _CHUNK // max(n, 1))
    for start in range(0, G, step):
        yield slice(start, min(G, start + step))


def score_sums(x1, pilot: Pilot, dataset: Dataset, link: Link, kernel: Kernel, h: float, weight: Weight | None = None,
               hessian: str = "observed") -> dict:
    """All kernel sums needed for one Newton step, vectorized over ``x1``.

    Returns arrays keyed ``"s1_0", "s1_1"`` (scores), ``"s2_0", "s2_1",
    "s2_2"`` (second derivatives), ``"ksum"`` (sum of kernel weights times
    the observation weights) and ``"distinct"`` (number of distinct target
    covariate values with positive kernel weight).
    """
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    j = pilot.coordinate
    xj = dataset.X[:, j]
    G, n = x1.size, dataset.n
    out = {key: np.empty(G) for key in ("s1_0", "s1_1", "s2_0", "s2_1", "s2_2", "ksum")}
    out["distinct"] = np.empty(G, dtype=int)
    base = pilot.mu + pilot.rest
    tvals = np.asarray(pilot.target(x1), dtype=float)
    for sl in _chunks(G, n):
        dx = xj[None, :] - x1[sl, None]
        kh = kernel(-dx / h)
        if weight is not None:
            kh = kh * weight(x1[sl], dataset.X)
        idx = tvals[sl, None] + base[None, :]
        r = dataset.Y[None, :] - link.F(idx)
        fp = link.Fp(idx)
        fpp = link.Fpp(idx)
        a = -2.0 * r * fp * kh
        b = 2.0 * (fp * fp - r * fpp) * kh if hessian == "observed" else 2.0 * fp * fp * kh
        out["s1_0"][sl] = a.sum(axis=1)
        out["s1_1"][sl] = (a * dx).sum(axis=1)
        out["s2_0"][sl] = b.sum(axis=1)
        out["s2_1"][sl] = (b * dx).sum(axis=1)
        out["s2_2"][sl] = (b * dx * dx).sum(axis=1)
        out["ksum"][sl] = kh.sum(axis=1)
        inside = kh > 0
        out["distinct"][sl] = [np.unique(xj[row]).size for row in inside]
    return out


def s_prime(power: int, x1, pilot: Pilot, dataset: Dataset, link: Link, kernel: Kernel, h: float, weight=None):
    """Score sum ``-2 sum w r F' (X_ij - x)^power K_h`` for ``power`` in {0, 1}."""
    if power not in (0, 1):
        raise ValueError("score power must be 0 or 1")
    res = score_sums(x1, pilot, dataset, link, kernel, h, weight)[f"s1_{power}"]
    return res if np.ndim(x1) else float(res[0])


def s_double_prime(power: int, x1, pilot: Pilot, dataset: Dataset, link: Link, kernel: Kernel, h: float, weight=None):
    """Second-derivative sum ``2 sum w (F'^2 - r F'') (X_ij - x)^power K_h`` for ``power`` in {0, 1, 2}."""
    if power not in (0, 1, 2):
        raise ValueError("second-derivative power must be 0, 1 or 2")
    res = score_sums(x1, pilot, dataset, link, kernel, h, weight)[f"s2_{power}"]
    return res if np.ndim(x1) else float(res[0])


def _ll_from_sums(sums) -> tuple[np.ndarray, np.ndarray]:
    den = sums["s2_0"] * sums["s2_2"] - sums["s2_1"] ** 2
    num = sums["s2_2"] * sums["s1_0"] - sums["s2_1"] * sums["s1_1"]
    scale = (2.0 * sums["ksum"]) ** 2
    bad = (sums["ksum"] <= 0) | (np.abs(den) < DEGENERACY_RTOL * scale) | (sums["distinct"] < 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(bad, np.nan, num / np.where(bad, 1.0, den))
    return step, bad


def _lc_from_sums(sums) -> tuple[np.ndarray, np.ndarray]:
    den = sums["s2_0"]
    bad = (sums["ksum"] <= 0) | (np.abs(den) < DEGENERACY_RTOL * 2.0 * sums["ksum"])
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(bad, np.nan, sums["s1_0"] / np.where(bad, 1.0, den))
    return step, bad


def _step(x1, pilot, dataset, link, config: SecondStageConfig):
    sums = score_sums(x1, pilot, dataset, link, config.kernel, config.h, config.weight, config.hessian)
    if config.smoother == "local-linear":
        step, bad = _ll_from_sums(sums)
    else:
        step, bad = _lc_from_sums(sums)
    start = np.asarray(pilot.target(np.atleast_1d(x1)), dtype=float)
    return start - step, start, bad


def _pointwise(x1, fit, dataset, link, config, smoother):
    if config.smoother != smoother:
        config = replace(config, smoother=smoother)
    pilot = _as_pilot(fit, dataset, config.target)
    val, _, bad = _step(np.array([float(x1)]), pilot, dataset, link, config)
    if bad[0]:
        raise DegenerateWindow(f"degenerate kernel window at x={x1} with h={config.h}")
    return float(val[0])


def local_linear_step(x1: float, fit, dataset: Dataset, link: Link, config: SecondStageConfig) -> float:
    """Local-linear one-step estimate of the target component at ``x1``.

    ``fit`` is a :class:`FirstStageFit` or a :class:`Pilot`.
    """
    return _pointwise(x1, fit, dataset, link, config, "local-linear")


def local_constant_step(x1: float, fit, dataset: Dataset, link: Link, config: SecondStageConfig) -> float:
    """Local-constant one-step estimate ``m_j(x) - S'_0 / S''_0``."""
    return _pointwise(x1, fit, dataset, link, config, "local-constant")


def estimate_component(fit, dataset: Dataset, link: Link, config: SecondStageConfig, grid) -> ComponentEstimate:
    """Apply the configured step at every grid point.

    Degenerate windows yield ``nan`` at that point rather than an exception.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if np.any(np.abs(grid) > 1.0):
        raise ValueError("grid points must lie in [-1, 1]")
    pilot = _as_pilot(fit, dataset, config.target)
    values, start, bad = _step(grid, pilot, dataset, link, config)
    if bad.any():
        logger.info("%d of %d grid points have degenerate windows", int(bad.sum()), grid.size)
    return ComponentEstimate(
        coordinate=config.target,
        grid=grid,
        values=values,
        pilot=start,
        boundary=np.abs(grid) > 1.0 - config.h,
        degenerate=bad,
        h=config.h,
        smoother=config.smoother,
        weighted=config.weight is not None,
    )


class VarianceMinWeight:
    """Weight ``w(x1, x~) = c(x1) Var(U | x1, x~)^(-power)``.

    ``c(x1)`` makes the kernel estimate of ``int w F'^2 f_X dx~`` equal to one:

        (n h)^-1 sum_i K_h(x1 - X_ij) w(x1, X~_i) F'[pilot index]^2 = 1.

    ``power=1`` is the variance-minimizing choice.
    """

    def __init__(self, pilot: Pilot, dataset: Dataset, link: Link, variance: Callable, h: float,
                 kernel: Kernel | None = None, power: float = 1.0):
        self.pilot = pilot
        self.dataset = dataset
        self.link = link
        self.variance = variance
        self.h = h
        self.kernel = kernel or quartic_kernel()
        self.power = power
        self.clamped = 0

    def base(self, x1, X) -> np.ndarray:
        """Unnormalized weights ``Var^(-power)`` at the points ``(x1[g], X~_i)``."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        X = np.asarray(X, dtype=float)
        j = self.pilot.coordinate
        pts = np.repeat(X[None, :, :], x1.size, axis=0)
        pts[:, :, j] = x1[:, None]
        var = np.asarray(self.variance(pts.reshape(-1, X.shape[1])), dtype=float).reshape(x1.size, X.shape[0])
        low = var < VARIANCE_FLOOR
        if low.any():
            self.clamped += int(low.sum())
            warnings.warn(f"{int(low.sum())} conditional variances clamped at {VARIANCE_FLOOR}", RuntimeWarning, stacklevel=2)
            var = np.maximum(var, VARIANCE_FLOOR)
        return var ** (-self.power)

    def _functional(self, x1, w) -> np.ndarray:
        ds, p = self.dataset, self.pilot
        xj = ds.X[:, p.coordinate]
        kh = self.kernel((x1[:, None] - xj[None, :]) / self.h)
        idx = p.mu + np.asarray(p.target(x1), dtype=float)[:, None] + p.rest[None, :]
        fp = self.link.Fp(idx)
        return (kh * w * fp * fp).sum(axis=1) / (ds.n * self.h)

    def normalization(self, x1) -> np.ndarray:
        """Kernel estimate of ``int w F'^2 f_X dx~`` for the normalized weight (1 by construction)."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        return self._functional(x1, self(x1, self.dataset.X))

    def __call__(self, x1, X) -> np.ndarray:
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        w0 = self.base(x1, X)
        if X is self.dataset.X or np.array_equal(X, self.dataset.X):
            w_sample = w0
        else:
            w_sample = self.base(x1, self.dataset.X)
        total = self._functional(x1, w_sample)
        with np.errstate(divide="ignore"):
            c = np.where(total > 0, 1.0 / total, 0.0)
        return c[:, None] * w0


def variance_min_weight(fit, dataset: Dataset, link: Link, variance: Callable, target: int, h: float,
                        kernel: Kernel | None = None, power: float = 1.0) -> VarianceMinWeight:
    """Variance-minimizing weight for the target coordinate.

    ``variance`` maps an ``(m, d)`` array of points to conditional variances
    of the error, e.g. a fitted :class:`~linkadditive.asymptotics.ConditionalVariance`
    or the exact variance of a simulation design.
    """
    return VarianceMinWeight(_as_pilot(fit, dataset, target), dataset, link, variance, h, kernel, power)
