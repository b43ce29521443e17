"""Bandwidth constants: asymptotic plug-in rule and penalized least squares.

Bandwidths are parametrized as ``h_j = C_j n^(-1/5)``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .asymptotics import (
    ConditionalVariance,
    default_derivative_bandwidth,
    estimate_V1,
    estimate_beta1,
    estimate_derivative,
)
from .data import Dataset
from .first_stage import FirstStageFit
from .kernels import Kernel, quartic_kernel
from .link import Link
from .second_stage import SecondStageConfig, estimate_component, pilot_from_fit

__all__ = [
    "PlsConfig",
    "PlsResult",
    "PlsObjective",
    "SEARCHES",
    "ZeroBiasError",
    "average_squared_error",
    "minimize_pls",
    "pls_objective",
    "plugin_Ch1",
    "plugin_bandwidth",
]

logger = logging.getLogger(__name__)

SEARCHES = ("product", "coordinate")


class ZeroBiasError(ValueError):
    """The weighted squared-bias integral vanishes, so the plug-in constant is undefined."""


def plugin_Ch1(grid, beta_tilde, V_tilde, weight=None, h0: float = 0.0) -> float:
    """``C = [int w V~ / (4 int w beta~^2)]^(1/5)`` by the trapezoid rule on ``|x| <= 1 - h0``.

    ``beta_tilde = beta / C^2`` and ``V_tilde = C V`` do not depend on the
    constant.  ``weight`` defaults to uniform on the integration region; any
    positive multiple gives the same answer.
    """
    grid = np.asarray(grid, dtype=float)
    mask = np.abs(grid) <= 1.0 - h0 + 1e-12
    if mask.sum() < 2:
        raise ValueError(f"no interior integration region for h0={h0}")
    g = grid[mask]
    b = np.broadcast_to(np.asarray(beta_tilde, dtype=float), grid.shape)[mask]
    v = np.broadcast_to(np.asarray(V_tilde, dtype=float), grid.shape)[mask]
    w = np.ones_like(g) if weight is None else np.broadcast_to(np.asarray(weight, dtype=float), grid.shape)[mask]
    if np.any(w < 0):
        raise ValueError("plug-in weight must be nonnegative")
    num = np.trapezoid(w * v, g)
    den = np.trapezoid(w * b * b, g)
    if not den > 1e-14 * max(abs(num), 1e-300):
        raise ZeroBiasError("weighted squared-bias integral is zero (component looks linear); "
                            "choose the bandwidth manually or undersmooth")
    return float((num / (4.0 * den)) ** 0.2)


def plugin_bandwidth(fit: FirstStageFit, dataset: Dataset, link: Link, target: int, kernel: Kernel | None = None,
                     smoother: str = "local-linear", hessian: str = "observed", pilot_C: float = 1.0,
                     grid_size: int = 1024, variance: ConditionalVariance | None = None) -> float:
    """Estimate ``C_h`` for one component with the plug-in rule.

    A pilot second-stage estimate at ``h0 = pilot_C n^(-1/5)`` supplies the
    derivatives (kernel derivative estimator with ``g = 0.2 n^(-1/10)``);
    conditional variances come from first-stage residuals unless given.
    """
    kernel = kernel or quartic_kernel()
    n = dataset.n
    h0 = pilot_C * n ** (-0.2)
    grid = np.linspace(-1.0, 1.0, grid_size)
    est = estimate_component(fit, dataset, link, SecondStageConfig(target, h0, smoother, kernel, hessian=hessian), grid)
    ok = np.isfinite(est.values)
    if ok.sum() < 0.9 * grid_size:
        raise ValueError("pilot estimate is degenerate on too much of the grid")
    values = np.interp(grid, grid[ok], est.values[ok])
    g = default_derivative_bandwidth(n)
    d1 = estimate_derivative(grid, values, 1, g, kernel)(grid)
    d2 = estimate_derivative(grid, values, 2, g, kernel)(grid)
    pilot = pilot_from_fit(fit, dataset, target)
    if variance is None:
        variance = ConditionalVariance.from_fit(fit, dataset, link, 1.5 * h0, kernel)
    beta_t = estimate_beta1(grid, pilot, dataset, link, kernel, h0, 1.0, d1, d2, smoother)
    V_t = estimate_V1(grid, pilot, dataset, link, kernel, h0, 1.0, variance)
    return plugin_Ch1(grid, beta_t, V_t, h0=h0)


@dataclass(frozen=True)
class PlsConfig:
    """Search settings for the penalized least squares criterion.

    ``search="product"`` evaluates every combination of the per-coordinate
    candidates; ``"coordinate"`` cycles through coordinates, minimizing
    over one candidate list at a time until nothing changes.
    """

    c_lo: float = 0.2
    c_hi: float = 3.0
    grid_points: int = 10
    candidates: tuple[float, ...] | None = None
    search: str = "product"
    polish: bool = True
    variance_factor: float = 1.5
    smoother: str = "local-linear"
    hessian: str = "observed"
    max_polish_evaluations: int = 200

    def __post_init__(self):
        if not 0.0 < self.c_lo < self.c_hi:
            raise ValueError("need 0 < c_lo < c_hi")
        if self.grid_points < 1:
            raise ValueError("grid_points must be at least 1")
        if self.search not in SEARCHES:
            raise ValueError(f"unknown search {self.search!r}; expected one of {SEARCHES}")
        if self.candidates is not None:
            c = tuple(sorted(float(v) for v in self.candidates))
            if not c or c[0] < self.c_lo or c[-1] > self.c_hi:
                raise ValueError("candidates must lie inside [c_lo, c_hi]")
            object.__setattr__(self, "candidates", c)

    def values(self) -> np.ndarray:
        if self.candidates is not None:
            return np.array(self.candidates)
        return np.geomspace(self.c_lo, self.c_hi, self.grid_points)


class PlsObjective:
    """``PLS(C)`` for one dataset and first-stage fit, caching component refits.

    Each component estimate depends only on its own constant, so the
    refits at the sample points are cached per ``(j, C_j)``.
    """

    def __init__(self, dataset: Dataset, fit: FirstStageFit, link: Link, kernel: Kernel | None = None,
                 smoother: str = "local-linear", hessian: str = "observed", variance_factor: float = 1.5):
        self.dataset = dataset
        self.fit = fit
        self.link = link
        self.kernel = kernel or quartic_kernel()
        self.smoother = smoother
        self.hessian = hessian
        self.variance_factor = variance_factor
        self._pilots = {}
        self._cache: dict[tuple[int, float], np.ndarray] = {}

    def bandwidths(self, C) -> np.ndarray:
        return np.asarray(C, dtype=float) * self.dataset.n ** (-0.2)

    def component_values(self, j: int, C_j: float) -> np.ndarray:
        """Second-stage estimate of component ``j`` at the sample values ``X_ij``."""
        key = (j, float(C_j))
        if key not in self._cache:
            if j not in self._pilots:
                self._pilots[j] = pilot_from_fit(self.fit, self.dataset, j)
            h = float(C_j) * self.dataset.n ** (-0.2)
            cfg = SecondStageConfig(j, h, self.smoother, self.kernel, hessian=self.hessian)
            self._cache[key] = estimate_component(self._pilots[j], self.dataset, self.link, cfg, self.dataset.X[:, j]).values
        return self._cache[key]

    def index(self, C) -> np.ndarray:
        """``mu~ + sum_j m_hat_j(X_ij)``; ``nan`` where a window was degenerate."""
        C = np.atleast_1d(np.asarray(C, dtype=float))
        if C.size != self.dataset.d:
            raise ValueError(f"need {self.dataset.d} bandwidth constants, got {C.size}")
        return self.fit.mu + sum(self.component_values(j, c) for j, c in enumerate(C))

    def parts(self, C) -> tuple[float, float]:
        """``(RSS, penalty)``; both ``inf`` when any refit hit a degenerate window."""
        C = np.atleast_1d(np.asarray(C, dtype=float))
        idx = self.index(C)
        if not np.all(np.isfinite(idx)):
            return np.inf, np.inf
        ds, link, kernel = self.dataset, self.link, self.kernel
        n = ds.n
        r = ds.Y - link.F(idx)
        rss = float(np.mean(r * r))
        fp2 = link.Fp(idx) ** 2
        h = self.bandwidths(C)
        var = ConditionalVariance(ds.X, r * r, self.variance_factor * h, kernel)(ds.X)
        inv = np.zeros(n)
        for j in range(ds.d):
            xj = ds.X[:, j]
            Dj = (kernel((xj[None, :] - xj[:, None]) / h[j]) @ fp2) / (n * h[j])
            inv += 1.0 / (n ** 0.8 * C[j] * Dj)
        penalty = float(2.0 * kernel.k0 * np.mean(fp2 * var * inv))
        return rss, penalty

    def __call__(self, C) -> float:
        rss, pen = self.parts(C)
        return rss + pen


def pls_objective(C, dataset: Dataset, fit: FirstStageFit, link: Link, kernel: Kernel | None = None,
                  smoother: str = "local-linear", hessian: str = "observed", variance_factor: float = 1.5) -> float:
    """Penalized least squares criterion

        n^-1 sum (Y_i - F[I_i])^2 + 2 K(0) n^-1 sum F'[I_i]^2 V(X_i) sum_j [n^(4/5) C_j D_j(X_ij)]^-1

    with ``I_i = mu~ + sum_j m_hat_j(X_ij)`` refitted at ``h_j = C_j n^(-1/5)``,
    ``D_j(x) = (n h_j)^-1 sum_k K_h(X_kj - x) F'[I_k]^2`` and ``V`` the
    product-kernel regression of squared residuals with bandwidths
    ``variance_factor * h``.  Returns ``inf`` if a refit is degenerate.
    """
    return PlsObjective(dataset, fit, link, kernel, smoother, hessian, variance_factor)(C)


@dataclass
class PlsResult:
    C: np.ndarray
    objective: float
    trace: list[dict] = field(default_factory=list)

    def trace_array(self) -> np.ndarray:
        """Rows ``(C_1, ..., C_d, RSS, penalty, objective, best_so_far)``."""
        return np.array([[*t["C"], t["rss"], t["penalty"], t["objective"], t["best"]] for t in self.trace])


def minimize_pls(config: PlsConfig, dataset: Dataset, fit: FirstStageFit, link: Link,
                 kernel: Kernel | None = None) -> PlsResult:
    """Grid search (plus optional Nelder-Mead polish in ``log C``) for the PLS minimizer.

    Among tied grid values the lexicographically smallest constant vector
    wins.  Every evaluation is recorded in the trace with the running
    best objective.
    """
    obj = PlsObjective(dataset, fit, link, kernel, config.smoother, config.hessian, config.variance_factor)
    values = config.values()
    d = dataset.d
    trace: list[dict] = []
    best = {"C": None, "f": np.inf}

    def evaluate(C, stage):
        rss, pen = obj.parts(C)
        f = rss + pen
        if f < best["f"]:
            best["C"], best["f"] = np.array(C, dtype=float), f
        trace.append({"stage": stage, "C": [float(c) for c in C], "rss": rss, "penalty": pen,
                      "objective": f, "best": best["f"]})
        return f

    if config.search == "product":
        for C in itertools.product(values, repeat=d):
            evaluate(C, "grid")
    else:
        current = [values[0]] * d
        seen: dict[tuple, float] = {}
        changed = True
        while changed:
            changed = False
            for j in range(d):
                scores = []
                for v in values:
                    C = tuple(current[:j] + [v] + current[j + 1:])
                    if C not in seen:
                        seen[C] = evaluate(C, "grid")
                    scores.append(seen[C])
                k = int(np.argmin(scores))
                if values[k] != current[j]:
                    current[j] = values[k]
                    changed = True
    if best["C"] is None:
        raise ValueError("every PLS evaluation was infinite; widen the search box")

    if config.polish:
        lo, hi = np.log(config.c_lo), np.log(config.c_hi)

        def f(logc):
            if np.any(logc < lo) or np.any(logc > hi):
                return np.inf
            return evaluate(np.exp(logc), "polish")

        minimize(f, np.log(best["C"]), method="Nelder-Mead",
                 options={"maxfev": config.max_polish_evaluations, "xatol": 1e-3, "fatol": 1e-10})
    return PlsResult(best["C"], float(best["f"]), trace)


def average_squared_error(index_hat, index_true, link: Link) -> float:
    """``n^-1 sum (F[index_hat_i] - F[index_true_i])^2``."""
    return float(np.mean((link.F(np.asarray(index_hat)) - link.F(np.asarray(index_true))) ** 2))
