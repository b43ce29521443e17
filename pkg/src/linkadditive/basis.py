"""Zero-mean orthonormal bases on [-1, 1] and the stacked series regressor.

Two families are available:

``"legendre-shifted"``
    Normalized Legendre polynomials of degree 1..kappa.  The constant is
    excluded, so every member integrates to zero.
``"orthonormalized-bspline"``
    Cubic B-splines on a uniform knot grid.  The constant is projected out
    and the remaining space is orthonormalized with respect to Lebesgue
    measure.  Within that space the basis diagonalizes the roughness
    functional ``int f''(v)^2 dv``, so the first ``kappa`` members are the
    smoothest ones (``p_1`` is the normalized linear function).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre
from scipy.interpolate import BSpline
from scipy.linalg import eigh

__all__ = [
    "BASIS_FAMILIES",
    "Basis",
    "BasisSpec",
    "BasisConstructionError",
    "build_basis",
    "gauss_legendre",
    "gram_check",
]

BASIS_FAMILIES = ("orthonormalized-bspline", "legendre-shifted")

_SPLINE_DEGREE = 3


class BasisConstructionError(ValueError):
    """Raised when the requested basis cannot be orthonormalized."""


@dataclass(frozen=True)
class BasisSpec:
    family: str = "orthonormalized-bspline"
    kappa: int = 4
    quadrature_order: int = 64

    def __post_init__(self):
        if self.family not in BASIS_FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}; expected one of {BASIS_FAMILIES}")
        if int(self.kappa) != self.kappa or self.kappa < 1:
            raise ValueError(f"kappa must be a positive integer, got {self.kappa!r}")
        if int(self.quadrature_order) != self.quadrature_order or self.quadrature_order < 1:
            raise ValueError("quadrature_order must be a positive integer")


def gauss_legendre(order: int, breakpoints=None) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1].

    With ``breakpoints`` the rule is composite: ``order`` nodes on every
    sub-interval, which integrates piecewise polynomials exactly when the
    pieces have degree below ``2 * order``.
    """
    x, w = legendre.leggauss(order)
    if breakpoints is None:
        return x, w
    b = np.asarray(breakpoints, dtype=float)
    half = 0.5 * np.diff(b)
    mid = 0.5 * (b[1:] + b[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


class Basis:
    """Evaluable family ``p_1, ..., p_kappa`` on [-1, 1].

    Immutable after construction.  ``coef`` holds the coefficient table that
    defines each ``p_k``: Legendre-series coefficients for the polynomial
    family and B-spline coefficients for the spline family (column ``k-1``
    defines ``p_k``).
    """

    def __init__(self, spec: BasisSpec, coef: np.ndarray, knots: np.ndarray | None = None):
        self.spec = spec
        self.coef = np.array(coef, dtype=float)
        self.coef.setflags(write=False)
        self.knots = None if knots is None else np.array(knots, dtype=float)
        if self.knots is not None:
            self.knots.setflags(write=False)
            self._spline = BSpline(self.knots, self.coef, _SPLINE_DEGREE, extrapolate=False)

    @property
    def kappa(self) -> int:
        return self.spec.kappa

    @property
    def breakpoints(self) -> np.ndarray | None:
        """Distinct knots, i.e. the points where the pieces join (``None`` for polynomials)."""
        if self.knots is None:
            return None
        return np.unique(self.knots)

    def __call__(self, v) -> np.ndarray:
        """Evaluate all ``kappa`` functions; returns shape ``v.shape + (kappa,)``."""
        v = np.asarray(v, dtype=float)
        if np.any(np.abs(v) > 1.0) or np.any(np.isnan(v)):
            raise ValueError("basis arguments must lie in [-1, 1]")
        if self.knots is None:
            return np.moveaxis(legendre.legval(v, self.coef), 0, -1)
        return self._spline(v)

    def eval_pk(self, k: int, v: float) -> float:
        """Value of the single basis function ``p_k`` (1-based) at ``v``."""
        if int(k) != k or not 1 <= k <= self.kappa:
            raise IndexError(f"basis index k={k} outside 1..{self.kappa}")
        if not -1.0 <= v <= 1.0:
            raise ValueError(f"v={v} outside [-1, 1]")
        return float(self(np.array([v]))[0, k - 1])

    def design(self, X, kappas=None) -> np.ndarray:
        """Stacked regressors ``P(x) = [1, p_1(x^1), ..., p_kappa(x^d)]`` for each row of ``X``.

        ``kappas`` optionally truncates coordinate ``j`` to its first
        ``kappas[j]`` functions (per-coordinate series lengths).
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n, d = X.shape
        kappas = _resolve_kappas(kappas, d, self.kappa)
        blocks = [np.ones((n, 1))]
        for j in range(d):
            blocks.append(self(X[:, j])[:, : kappas[j]])
        return np.hstack(blocks)

    def eval_P_kappa(self, x) -> np.ndarray:
        """Regressor vector of length ``kappa * d + 1`` for a single point ``x``."""
        x = np.asarray(x, dtype=float).ravel()
        return self.design(x[None, :])[0]

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature rule of the configured order (composite over knots for splines)."""
        return gauss_legendre(self.spec.quadrature_order, self.breakpoints)

    def __repr__(self):
        return f"Basis(family={self.spec.family!r}, kappa={self.kappa})"


def _resolve_kappas(kappas, d: int, kmax: int) -> list[int]:
    if kappas is None:
        return [kmax] * d
    if np.isscalar(kappas):
        kappas = [int(kappas)] * d
    kappas = [int(k) for k in kappas]
    if len(kappas) != d:
        raise ValueError(f"need {d} per-coordinate series lengths, got {len(kappas)}")
    if any(k < 1 or k > kmax for k in kappas):
        raise ValueError(f"per-coordinate series lengths must lie in 1..{kmax}")
    return kappas


def build_basis(spec: BasisSpec) -> Basis:
    """Construct the basis described by ``spec`` (deterministic)."""
    if spec.family == "legendre-shifted":
        return _build_legendre(spec)
    return _build_bspline(spec)


def _build_legendre(spec: BasisSpec) -> Basis:
    # p_k = sqrt((2k+1)/2) P_k; column k-1 holds the Legendre-series coefficients
    coef = np.zeros((spec.kappa + 1, spec.kappa))
    for k in range(1, spec.kappa + 1):
        coef[k, k - 1] = np.sqrt((2 * k + 1) / 2.0)
    return Basis(spec, coef)


def _build_bspline(spec: BasisSpec) -> Basis:
    n_breaks = max(spec.kappa + 4, 8)
    breaks = np.linspace(-1.0, 1.0, n_breaks)
    p = _SPLINE_DEGREE
    knots = np.concatenate([np.full(p, -1.0), breaks, np.full(p, 1.0)])
    m = len(knots) - p - 1

    # exact for the piecewise polynomial integrands below
    nodes, weights = gauss_legendre(max(spec.quadrature_order, p + 1), breaks)
    B = BSpline.design_matrix(np.clip(nodes, -1.0, 1.0), knots, p).toarray()
    B2 = np.column_stack([BSpline(knots, np.eye(m)[i], p).derivative(2)(nodes) for i in range(m)])

    gram = B.T @ (weights[:, None] * B)
    rough = B2.T @ (weights[:, None] * B2)
    means = B.T @ weights

    # null space of the integral functional: coefficient vectors c with int sum c_i B_i = 0
    _, s, vt = np.linalg.svd(means[None, :])
    Z = vt[1:].T
    G = Z.T @ gram @ Z
    R = Z.T @ rough @ Z
    if np.linalg.eigvalsh(G)[0] < 1e-12 * np.abs(G).max():
        raise BasisConstructionError("B-spline Gram matrix is rank deficient; kappa too large for the knot grid")
    # generalized eigenvectors are G-orthonormal, i.e. L2-orthonormal as functions
    vals, vecs = eigh(R, G)
    vecs = vecs[:, np.argsort(vals, kind="stable")]
    coef = Z @ vecs[:, : spec.kappa]
    if coef.shape[1] < spec.kappa:
        raise BasisConstructionError(f"only {coef.shape[1]} zero-mean spline functions available")
    # fix signs: positive value at v = 1, else positive at first nonzero coefficient
    end = BSpline.design_matrix(np.array([1.0]), knots, p).toarray()[0] @ coef
    for k in range(spec.kappa):
        ref = end[k] if abs(end[k]) > 1e-10 else coef[np.flatnonzero(np.abs(coef[:, k]) > 1e-10)[0], k]
        if ref < 0:
            coef[:, k] = -coef[:, k]
    return Basis(spec, coef, knots)


def gram_check(basis: Basis, nodes=None, weights=None) -> tuple[float, float]:
    """Max deviations ``max |int p_k|`` and ``max |int p_j p_k - delta_jk|``.

    Defaults to the basis' own quadrature rule; pass ``nodes``/``weights`` to
    check against an independent rule.
    """
    if nodes is None:
        nodes, weights = basis.quadrature()
    vals = basis(nodes)
    means = weights @ vals
    gram = vals.T @ (weights[:, None] * vals)
    return float(np.abs(means).max()), float(np.abs(gram - np.eye(basis.kappa)).max())
