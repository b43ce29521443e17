"""Known link functions F together with F' and F''."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

__all__ = ["Link", "logit_link", "identity_link", "get_link", "LINKS"]

# logistic arguments beyond this are clamped; the result is unaffected in double precision
_LOGIT_CLAMP = 700.0


@dataclass(frozen=True)
class Link:
    """A known link ``F`` with derivatives.

    ``domain_halfwidth`` is informational: the half-width of the index range
    over which ``Fp`` is expected to stay bounded away from zero.
    """

    name: str
    F: Callable[[np.ndarray], np.ndarray]
    Fp: Callable[[np.ndarray], np.ndarray]
    Fpp: Callable[[np.ndarray], np.ndarray]
    domain_halfwidth: float = np.inf

    def inverse(self, y: float, lo: float = -50.0, hi: float = 50.0, tol: float = 1e-14) -> float | None:
        """Solve ``F(mu) = y`` by bisection; ``None`` when ``y`` is outside ``F``'s range on ``[lo, hi]``."""
        flo, fhi = float(self.F(lo)), float(self.F(hi))
        if not (min(flo, fhi) < y < max(flo, fhi)):
            return None
        sign = 1.0 if fhi > flo else -1.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if sign * (float(self.F(mid)) - y) < 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < tol:
                break
        return 0.5 * (lo + hi)


def _logit_F(v):
    return expit(np.clip(v, -_LOGIT_CLAMP, _LOGIT_CLAMP))


def _logit_Fp(v):
    p = _logit_F(v)
    return p * (1.0 - p)


def _logit_Fpp(v):
    p = _logit_F(v)
    return p * (1.0 - p) * (1.0 - 2.0 * p)


def logit_link() -> Link:
    """Logistic CDF ``F(v) = e^v / (1 + e^v)``."""
    return Link("logit", _logit_F, _logit_Fp, _logit_Fpp)


def _identity(v):
    return np.asarray(v, dtype=float) * 1.0


def _one(v):
    return np.ones_like(np.asarray(v, dtype=float))


def _zero(v):
    return np.zeros_like(np.asarray(v, dtype=float))


def identity_link() -> Link:
    return Link("identity", _identity, _one, _zero)


LINKS = {"logit": logit_link, "identity": identity_link}


def get_link(name: str) -> Link:
    try:
        return LINKS[name]()
    except KeyError:
        raise ValueError(f"unknown link {name!r}; expected one of {sorted(LINKS)}") from None
