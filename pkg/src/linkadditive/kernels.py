"""Compactly supported smoothing kernels on [-1, 1]."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import legendre

__all__ = ["Kernel", "quartic_kernel", "kernel_moments"]


def kernel_moments(k: Callable, order: int = 64) -> tuple[float, float, float]:
    """``(int K, int v^2 K, int K^2)`` over [-1, 1] by Gauss-Legendre quadrature."""
    v, w = legendre.leggauss(order)
    kv = k(v)
    return float(w @ kv), float(w @ (v * v * kv)), float(w @ (kv * kv))


@dataclass(frozen=True)
class Kernel:
    """Symmetric density on [-1, 1] with first and second derivatives.

    ``A_K`` is the second moment and ``B_K`` the roughness ``int K^2``.
    The smoothing convention used throughout is ``K_h(v) = K(v / h)``,
    without a ``1/h`` factor.
    """

    name: str
    k: Callable[[np.ndarray], np.ndarray]
    dk: Callable[[np.ndarray], np.ndarray]
    d2k: Callable[[np.ndarray], np.ndarray]
    A_K: float
    B_K: float

    def __call__(self, v):
        return self.k(v)

    @property
    def k0(self) -> float:
        return float(self.k(np.array(0.0)))

    def scaled(self, c: float) -> "Kernel":
        """The kernel multiplied by ``c`` (no longer a density; for invariance checks)."""
        k, dk, d2k = self.k, self.dk, self.d2k
        return Kernel(
            f"{c}*{self.name}",
            lambda v: c * k(v),
            lambda v: c * dk(v),
            lambda v: c * d2k(v),
            c * self.A_K,
            c * c * self.B_K,
        )


def _quartic(v):
    v = np.asarray(v, dtype=float)
    u = 1.0 - v * v
    return np.where(np.abs(v) <= 1.0, (15.0 / 16.0) * u * u, 0.0)


def _quartic_d1(v):
    v = np.asarray(v, dtype=float)
    return np.where(np.abs(v) <= 1.0, -(15.0 / 4.0) * v * (1.0 - v * v), 0.0)


def _quartic_d2(v):
    v = np.asarray(v, dtype=float)
    return np.where(np.abs(v) <= 1.0, -(15.0 / 4.0) * (1.0 - 3.0 * v * v), 0.0)


def quartic_kernel() -> Kernel:
    """Biweight kernel ``(15/16)(1 - v^2)^2`` on [-1, 1]; ``A_K = 1/7``, ``B_K = 5/7``."""
    return Kernel("quartic", _quartic, _quartic_d1, _quartic_d2, 1.0 / 7.0, 5.0 / 7.0)
