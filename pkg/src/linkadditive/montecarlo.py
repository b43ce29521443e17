"""Simulation designs, the infeasible oracle estimator and EIMSE experiments.

The designs are binary logit models

    P(Y = 1 | X = x) = L[sin(pi x1) + Phi(3 x2) + x3 + ... + xd]

with independent ``U[-1, 1]`` covariates, ``d`` in {2, 5}.  Under the
zero-integral normalization the components are ``sin(pi x)``,
``Phi(3x) - 1/2`` and ``x``, and the intercept is ``1/2``.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, ndtr

from .basis import BasisSpec, build_basis
from .data import Dataset
from .first_stage import FirstStageConfig, fit_first_stage
from .kernels import Kernel, quartic_kernel
from .link import logit_link
from .second_stage import DegenerateWindow, Pilot, SecondStageConfig, estimate_component

__all__ = [
    "ESTIMATORS",
    "Dgp",
    "EimseReport",
    "ExperimentConfig",
    "ExperimentAborted",
    "OracleNonConvergence",
    "TABLE1",
    "generate_sample",
    "integrated_squared_error",
    "local_objective",
    "oracle_fit",
    "run_experiment",
    "table1_config",
    "trim_mask",
]

logger = logging.getLogger(__name__)

ESTIMATORS = ("two-stage-LL", "two-stage-LC", "oracle")
NOISES = ("bernoulli", "heteroskedastic")
MAX_FAILURE_RATE = 0.05


class ExperimentAborted(RuntimeError):
    """Too many replications failed."""


class OracleNonConvergence(ArithmeticError):
    pass


@dataclass(frozen=True)
class Dgp:
    """Logit additive design.

    ``noise="bernoulli"`` draws binary responses.  ``noise="heteroskedastic"``
    instead draws ``Y = L(index) + s(X) e`` with standard normal ``e`` and
    ``s(x) = 0.05 + 0.45 (1 + x2) / 2``, so the error variance changes
    a hundredfold across the second coordinate.
    """

    d: int = 2
    n: int = 500
    noise: str = "bernoulli"

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("design needs d >= 2")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.noise not in NOISES:
            raise ValueError(f"unknown noise {self.noise!r}; expected one of {NOISES}")

    mu = 0.5

    def component(self, j: int, v) -> np.ndarray:
        """Zero-integral additive component ``j`` (0-based)."""
        v = np.asarray(v, dtype=float)
        if j == 0:
            return np.sin(np.pi * v)
        if j == 1:
            return ndtr(3.0 * v) - 0.5
        if j < self.d:
            return v.copy()
        raise IndexError(f"component {j} outside 0..{self.d - 1}")

    def derivative(self, j: int, v, order: int = 1) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if j == 0:
            return np.pi * np.cos(np.pi * v) if order == 1 else -np.pi ** 2 * np.sin(np.pi * v)
        if j == 1:
            phi = np.exp(-4.5 * v * v) / math.sqrt(2 * math.pi)
            return 3.0 * phi if order == 1 else -27.0 * v * phi
        return np.ones_like(v) if order == 1 else np.zeros_like(v)

    def index(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.mu + sum(self.component(j, X[:, j]) for j in range(self.d))

    def mean(self, X) -> np.ndarray:
        """``E(Y | X)``."""
        return expit(self.index(X))

    def noise_sd(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return 0.05 + 0.45 * (1.0 + X[:, 1]) / 2.0

    def variance(self, X) -> np.ndarray:
        """``Var(Y | X)``."""
        if self.noise == "bernoulli":
            p = self.mean(X)
            return p * (1.0 - p)
        return self.noise_sd(X) ** 2

    def pilot(self, X, j: int) -> Pilot:
        """Pilot holding the true intercept and true components (oracle starting values)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rest = sum(self.component(k, X[:, k]) for k in range(self.d) if k != j)
        return Pilot(self.mu, lambda v, _j=j: self.component(_j, v), np.asarray(rest, dtype=float), j)


def generate_sample(dgp: Dgp, seed: int, n: int | None = None) -> Dataset:
    """Draw one sample; fully determined by ``seed``."""
    n = dgp.n if n is None else n
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, dgp.d))
    p = dgp.mean(X)
    if dgp.noise == "bernoulli":
        Y = (rng.uniform(size=n) < p).astype(float)
    else:
        Y = p + dgp.noise_sd(X) * rng.standard_normal(n)
    return Dataset(Y, X)


def local_objective(x1, b0, b1, pilot: Pilot, dataset: Dataset, link, kernel: Kernel, h: float) -> dict:
    """Kernel-weighted local least-squares objective and its derivatives.

    ``S(b0, b1) = sum_i {Y_i - F[mu + b0 + b1 (X_ij - x) + rest_i]}^2 K((x - X_ij)/h)``,
    vectorized over ``x1`` (with matching ``b0``, ``b1`` arrays).  Returns
    the objective ``S``, gradient ``g0, g1`` and Hessian ``h00, h01, h11``
    (observed) plus the expected-Hessian analogues ``e00, e01, e11``.
    """
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    b0 = np.broadcast_to(np.asarray(b0, dtype=float), x1.shape)
    b1 = np.broadcast_to(np.asarray(b1, dtype=float), x1.shape)
    xj = dataset.X[:, pilot.coordinate]
    dx = xj[None, :] - x1[:, None]
    kh = kernel((x1[:, None] - xj[None, :]) / h)
    idx = pilot.mu + b0[:, None] + b1[:, None] * dx + pilot.rest[None, :]
    r = dataset.Y[None, :] - link.F(idx)
    fp, fpp = link.Fp(idx), link.Fpp(idx)
    a = -2.0 * r * fp * kh
    hb = 2.0 * (fp * fp - r * fpp) * kh
    eb = 2.0 * fp * fp * kh
    return {
        "S": (r * r * kh).sum(axis=1),
        "g0": a.sum(axis=1),
        "g1": (a * dx).sum(axis=1),
        "h00": hb.sum(axis=1),
        "h01": (hb * dx).sum(axis=1),
        "h11": (hb * dx * dx).sum(axis=1),
        "e00": eb.sum(axis=1),
        "e01": (eb * dx).sum(axis=1),
        "e11": (eb * dx * dx).sum(axis=1),
        "ksum": kh.sum(axis=1),
    }


def _solve2(a00, a01, a11, g0, g1):
    det = a00 * a11 - a01 * a01
    return (a11 * g0 - a01 * g1) / det, (a00 * g1 - a01 * g0) / det, det


def oracle_fit(x1, dataset: Dataset, dgp: Dgp, target: int, h: float, kernel: Kernel | None = None,
               link=None, tol: float = 1e-10, max_iter: int = 100, return_slope: bool = False):
    """Infeasible oracle: minimize the local-linear objective with the true intercept and other components.

    Newton iterations (observed Hessian when positive definite, expected
    Hessian otherwise, with step halving) run until the gradient max-norm
    is at most ``tol``.  Returns the intercept estimates ``b0`` (and the
    slopes when ``return_slope``).
    """
    kernel = kernel or quartic_kernel()
    link = link or logit_link()
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    pilot = dgp.pilot(dataset.X, target)
    xj = dataset.X[:, target]
    for x in x1:
        inside = np.abs(xj - x) < h
        if np.unique(xj[inside]).size < 2:
            raise DegenerateWindow(f"oracle window at x={x} with h={h} holds fewer than 2 distinct points")
    b0 = np.zeros_like(x1)
    b1 = np.zeros_like(x1)
    parts = local_objective(x1, b0, b1, pilot, dataset, link, kernel, h)
    for _ in range(max_iter):
        grad = np.maximum(np.abs(parts["g0"]), np.abs(parts["g1"]))
        active = grad > tol
        if not active.any():
            break
        d0, d1, det = _solve2(parts["h00"], parts["h01"], parts["h11"], parts["g0"], parts["g1"])
        pd = (parts["h00"] > 0) & (det > 0)
        e0, e1, _ = _solve2(parts["e00"], parts["e01"], parts["e11"], parts["g0"], parts["g1"])
        d0 = np.where(pd, d0, e0)
        d1 = np.where(pd, d1, e1)
        t = np.ones_like(x1)
        for _ in range(40):
            cand = local_objective(x1, b0 - t * d0, b1 - t * d1, pilot, dataset, link, kernel, h)
            ok = (cand["S"] <= parts["S"] + 1e-12 * np.abs(parts["S"])) | ~active
            if ok.all():
                break
            t = np.where(ok, t, 0.5 * t)
        t = np.where(active, t, 0.0)
        b0, b1 = b0 - t * d0, b1 - t * d1
        parts = local_objective(x1, b0, b1, pilot, dataset, link, kernel, h)
    grad = np.maximum(np.abs(parts["g0"]), np.abs(parts["g1"]))
    if np.any(grad > tol):
        raise OracleNonConvergence(f"oracle Newton iterations did not reach gradient {tol} (max {grad.max():.3g})")
    return (b0, b1) if return_slope else b0


TRIM_DEFAULT = 0.8


def trim_mask(grid, h: float, trim) -> np.ndarray:
    """Evaluation region for the ISE.

    ``trim`` is ``"none"`` (whole interval), ``"boundary"`` (``|x| <= 1 - h``)
    or a number ``c`` meaning ``|x| <= c``.
    """
    grid = np.asarray(grid, dtype=float)
    if trim == "none":
        mask = np.ones(grid.shape, dtype=bool)
    elif trim == "boundary":
        mask = np.abs(grid) <= 1.0 - h + 1e-12
    else:
        mask = np.abs(grid) <= float(trim) + 1e-12
    if mask.sum() < 2:
        raise ValueError(f"trim {trim!r} with h={h} leaves fewer than two grid points")
    return mask


def integrated_squared_error(grid, estimate, target, mask=None) -> float:
    """Trapezoid-rule ISE on the masked region after centering both curves to zero mean there."""
    grid = np.asarray(grid, dtype=float)
    mask = np.ones(grid.shape, dtype=bool) if mask is None else mask
    g, e, t = grid[mask], np.asarray(estimate, dtype=float)[mask], np.asarray(target, dtype=float)[mask]
    if not np.all(np.isfinite(e)):
        raise FloatingPointError("estimate is not finite on the integration region")
    width = g[-1] - g[0]
    e = e - np.trapezoid(e, g) / width
    t = t - np.trapezoid(t, g) / width
    return float(np.trapezoid((e - t) ** 2, g))


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo experiment.

    ``h`` gives one bandwidth per estimated component (components are the
    first ``len(h)`` coordinates).  ``C_h`` may be given instead, in which
    case ``h_j = C_h_j n^(-1/5)``.
    """

    dgp: Dgp = field(default_factory=Dgp)
    estimator: str = "two-stage-LL"
    kappa: tuple[int, ...] = (4, 2)
    h: tuple[float, ...] | None = (0.5, 1.4)
    C_h: tuple[float, ...] | None = None
    replications: int = 200
    seed: int = 0
    grid_size: int = 201
    trim: str | float = TRIM_DEFAULT
    basis_family: str = "orthonormalized-bspline"
    hessian: str = "observed"
    keep_estimates: bool = False

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; valid values: {', '.join(ESTIMATORS)}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if (self.h is None) == (self.C_h is None):
            raise ValueError("give exactly one of h and C_h")
        object.__setattr__(self, "kappa", tuple(int(k) for k in np.atleast_1d(self.kappa)))
        if self.h is not None:
            object.__setattr__(self, "h", tuple(float(v) for v in np.atleast_1d(self.h)))
        if self.C_h is not None:
            object.__setattr__(self, "C_h", tuple(float(v) for v in np.atleast_1d(self.C_h)))
        if len(self.bandwidths) > self.dgp.d:
            raise ValueError("more bandwidths than covariates")

    @property
    def bandwidths(self) -> tuple[float, ...]:
        if self.h is not None:
            return self.h
        return tuple(c * self.dgp.n ** (-0.2) for c in self.C_h)

    @property
    def smoother(self) -> str:
        return "local-constant" if self.estimator == "two-stage-LC" else "local-linear"

    def kappas(self) -> list[int]:
        """Series length for every covariate; unlisted coordinates reuse the last value."""
        k = list(self.kappa)
        return (k + [k[-1]] * self.dgp.d)[: self.dgp.d]

    def grid(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.grid_size)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dgp"] = asdict(self.dgp)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        dgp = data.pop("dgp", {})
        if "grid" in data:
            data["grid_size"] = data.pop("grid")
        for key in ("kappa", "h", "C_h"):
            if data.get(key) is not None:
                data[key] = tuple(np.atleast_1d(data[key]).tolist())
        if "h" not in data and data.get("C_h") is not None:
            data["h"] = None
        return cls(dgp=Dgp(**dgp), **data)


@dataclass
class EimseReport:
    config: ExperimentConfig
    ise: np.ndarray  # (successful replications, components)
    failures: list[tuple[int, str]]
    estimates: np.ndarray | None = None  # (successful replications, components, grid)
    replication_ids: np.ndarray | None = None

    @property
    def eimse(self) -> np.ndarray:
        return self.ise.mean(axis=0)

    @property
    def standard_error(self) -> np.ndarray:
        r = self.ise.shape[0]
        if r < 2:
            return np.full(self.ise.shape[1], np.nan)
        return self.ise.std(axis=0, ddof=1) / math.sqrt(r)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "replications": int(self.ise.shape[0]),
            "failures": len(self.failures),
            "failure_details": [{"replication": r, "error": msg} for r, msg in self.failures],
            "eimse": [float(v) for v in self.eimse],
            "standard_error": [None if np.isnan(v) else float(v) for v in self.standard_error],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _replicate(config: ExperimentConfig, rep: int, basis, kernel: Kernel, grid: np.ndarray):
    dgp = config.dgp
    ds = generate_sample(dgp, config.seed + rep)
    link = logit_link()
    hs = config.bandwidths
    values = []
    if config.estimator == "oracle":
        for j, h in enumerate(hs):
            values.append(oracle_fit(grid, ds, dgp, j, h, kernel, link))
    else:
        fit = fit_first_stage(ds, basis, link, FirstStageConfig(kappa=config.kappas()))
        for j, h in enumerate(hs):
            cfg = SecondStageConfig(j, h, config.smoother, kernel, hessian=config.hessian)
            values.append(estimate_component(fit, ds, link, cfg, grid).values)
    ise = []
    for j, (h, v) in enumerate(zip(hs, values)):
        mask = trim_mask(grid, h, config.trim)
        ise.append(integrated_squared_error(grid, v, dgp.component(j, grid), mask))
    return np.array(ise), np.array(values)


def run_experiment(config: ExperimentConfig, workers: int = 1) -> EimseReport:
    """Replicate, estimate every listed component on the grid and average the ISEs.

    Replication ``r`` uses seed ``config.seed + r``, so results do not depend
    on ``workers``.  Failed replications are dropped and reported; more than
    5% failures raises :class:`ExperimentAborted`.
    """
    kernel = quartic_kernel()
    grid = config.grid()
    basis = None
    if config.estimator != "oracle":
        basis = build_basis(BasisSpec(config.basis_family, max(config.kappas())))

    def one(rep):
        try:
            return rep, _replicate(config, rep, basis, kernel, grid), None
        except (ArithmeticError, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
            return rep, None, f"{type(exc).__name__}: {exc}"

    reps = range(config.replications)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, reps))
    else:
        results = [one(r) for r in reps]

    failures = [(rep, msg) for rep, out, msg in results if out is None]
    ok = [(rep, out) for rep, out, _ in results if out is not None]
    if len(failures) > MAX_FAILURE_RATE * config.replications:
        raise ExperimentAborted(f"{len(failures)} of {config.replications} replications failed; first: {failures[0][1]}")
    if failures:
        logger.warning("%d replications failed and were excluded", len(failures))
    ise = np.array([out[0] for _, out in ok])
    est = np.array([out[1] for _, out in ok]) if config.keep_estimates else None
    return EimseReport(config, ise, failures, est, np.array([rep for rep, _ in ok]))


# Tuning values and reference EIMSEs (f1, f2) for the benchmark experiments.
TABLE1 = {
    (2, "two-stage-LC"): {"kappa": (2, 2), "h": (0.4, 0.9), "eimse": (0.052, 0.015)},
    (2, "two-stage-LL"): {"kappa": (4, 2), "h": (0.5, 1.4), "eimse": (0.052, 0.023)},
    (2, "oracle"): {"kappa": (2, 2), "h": (0.6, 1.7), "eimse": (0.056, 0.021)},
    (5, "two-stage-LC"): {"kappa": (2, 2), "h": (0.4, 0.9), "eimse": (0.060, 0.018)},
    (5, "two-stage-LL"): {"kappa": (2, 2), "h": (0.6, 1.3), "eimse": (0.057, 0.029)},
    (5, "oracle"): {"kappa": (2, 2), "h": (0.6, 2.0), "eimse": (0.057, 0.023)},
}


def table1_config(d: int, estimator: str, replications: int = 200, seed: int = 0, **kwargs) -> ExperimentConfig:
    """Experiment configuration at the reference tuning values for one table row."""
    row = TABLE1[(d, estimator)]
    return ExperimentConfig(Dgp(d=d, n=500), estimator, row["kappa"], row["h"], None, replications, seed, **kwargs)
