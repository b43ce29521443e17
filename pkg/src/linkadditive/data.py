"""Loading observations and mapping covariates onto the cube [-1, 1]^d."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["DataError", "Dataset", "Rescale", "load_csv", "rescale_to_cube", "make_dataset"]


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class Rescale:
    """Per-coordinate affine map ``x -> 2 (x - lo) / (hi - lo) - 1``."""

    lo: np.ndarray
    hi: np.ndarray

    def forward(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return 2.0 * (X - self.lo) / (self.hi - self.lo) - 1.0

    def inverse(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        return self.lo + (Z + 1.0) * (self.hi - self.lo) / 2.0

    def inverse_coordinate(self, j: int, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.lo[j] + (z + 1.0) * (self.hi[j] - self.lo[j]) / 2.0


@dataclass(frozen=True)
class Dataset:
    """Working sample with covariates on the cube.

    ``rescale`` is ``None`` when ``X`` was supplied already on the cube.
    """

    Y: np.ndarray
    X: np.ndarray
    rescale: Rescale | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or Y.ndim != 1 or X.shape[0] != Y.shape[0]:
            raise DataError(f"inconsistent shapes Y{Y.shape}, X{X.shape}")
        if X.shape[1] < 2:
            raise DataError(f"additive model needs d >= 2 covariates, got {X.shape[1]}")
        if not (np.isfinite(X).all() and np.isfinite(Y).all()):
            raise DataError("data contain non-finite values")
        if np.any(np.abs(X) > 1.0):
            raise DataError("covariates must lie in [-1, 1]; rescale first")
        Y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def rescale_to_cube(X) -> tuple[np.ndarray, Rescale]:
    """Map each column affinely so its empirical min/max become -1/+1."""
    X = np.asarray(X, dtype=float)
    lo, hi = X.min(axis=0), X.max(axis=0)
    const = np.flatnonzero(hi <= lo)
    if const.size:
        raise DataError(f"constant covariate column(s) {const.tolist()} cannot be rescaled")
    rec = Rescale(lo, hi)
    Z = rec.forward(X)
    # pin the endpoints exactly against rounding
    Z[X == lo] = -1.0
    Z[X == hi] = 1.0
    return np.clip(Z, -1.0, 1.0), rec


def load_csv(path, response: str | None = None, covariates=None) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Read a header-first numeric CSV.

    Returns ``(Y, X_raw, covariate_names)``.  By default the first column is
    the response and all remaining columns are covariates.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise DataError(f"{path}: empty data")
    response = header[0] if response is None else response
    if covariates is None:
        covariates = [h for h in header if h != response]
    for name in [response, *covariates]:
        if name not in header:
            raise DataError(f"{path}: column {name!r} not in header {header}")
    cols = [header.index(response)] + [header.index(c) for c in covariates]
    values = np.empty((len(body), len(cols)))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}")
        for k, c in enumerate(cols):
            cell = row[c].strip()
            if cell == "" or cell.lower() in ("na", "nan"):
                raise DataError(f"{path}: missing value at row {i + 2}, column {header[c]!r}")
            try:
                values[i, k] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric value {cell!r} at row {i + 2}, column {header[c]!r}") from None
    return values[:, 0], values[:, 1:], list(covariates)


def make_dataset(Y, X_raw, names=None) -> Dataset:
    """Rescale raw covariates and bundle them with the response."""
    X, rec = rescale_to_cube(X_raw)
    return Dataset(np.asarray(Y, dtype=float), X, rec, None if names is None else tuple(names))
