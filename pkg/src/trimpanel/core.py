"""Shared domain types, CSV ingestion and the linear-algebra contracts.

Everything here is immutable after construction: arrays held by the
dataset containers are flagged read-only so they can be shared freely
between threads and worker processes.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "CrossSectionDataset",
    "LossKind",
    "PanelDataError",
    "PanelDataset",
    "PanelObservation",
    "RankReport",
    "SandwichCovariance",
    "SingularMatrixError",
    "as_theta",
    "index",
    "inverse",
    "load_panel_csv",
    "rank_check",
    "save_panel_csv",
    "weighted_gram",
]

RCOND_MIN = 1e-12


class PanelDataError(ValueError):
    """Raised for malformed or invalid panel input."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a bread matrix cannot be inverted safely."""

    def __init__(self, name: str, rcond: float):
        self.name = name
        self.rcond = rcond
        super().__init__(
            f"{name} is singular: reciprocal condition number {rcond:.3e} "
            f"<= {RCOND_MIN:.0e}"
        )


class LossKind(str, enum.Enum):
    """Which trimmed loss: one-half square (TLS) or absolute (TLAD)."""

    TLS = "tls"
    TLAD = "tlad"

    @classmethod
    def parse(cls, value: "LossKind | str") -> "LossKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown loss kind {value!r}; expected 'tls' or 'tlad'") from None


@dataclass(frozen=True)
class PanelObservation:
    y1: float
    y2: float
    x1: tuple[float, ...]
    x2: tuple[float, ...]

    def __post_init__(self):
        if not (self.y1 >= 0 and self.y2 >= 0):
            raise PanelDataError("outcomes must be censored at zero (y >= 0)")
        if len(self.x1) != len(self.x2) or len(self.x1) < 1:
            raise PanelDataError("x1 and x2 must share a length K >= 1")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Two-period censored panel: ``n`` rows of ``(y1, y2, x1, x2)``.

    Parameters
    ----------
    y1, y2 : array of shape (n,)
        Outcomes censored from below at zero.
    x1, x2 : array of shape (n, K)
        Period-specific regressors.
    """

    y1: np.ndarray
    y2: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    dx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        y1 = np.asarray(self.y1, dtype=np.float64).reshape(-1)
        y2 = np.asarray(self.y2, dtype=np.float64).reshape(-1)
        x1 = np.asarray(self.x1, dtype=np.float64)
        x2 = np.asarray(self.x2, dtype=np.float64)
        if x1.ndim == 1:
            x1 = x1.reshape(-1, 1)
        if x2.ndim == 1:
            x2 = x2.reshape(-1, 1)
        n = y1.shape[0]
        if n < 1:
            raise PanelDataError("no observations")
        if y2.shape[0] != n or x1.shape[0] != n or x2.shape[0] != n:
            raise PanelDataError("all columns must have the same number of rows")
        if x1.shape[1] != x2.shape[1] or x1.shape[1] < 1:
            raise PanelDataError(
                f"dimension mismatch: x1 has {x1.shape[1]} columns, x2 has {x2.shape[1]}"
            )
        for name, arr in (("y1", y1), ("y2", y2), ("x1", x1), ("x2", x2)):
            if not np.all(np.isfinite(arr)):
                raise PanelDataError(f"non-finite value in {name}")
        bad = np.flatnonzero((y1 < 0) | (y2 < 0))
        if bad.size:
            raise PanelDataError(f"negative outcome at row {bad[0] + 1}")
        object.__setattr__(self, "y1", _frozen(y1))
        object.__setattr__(self, "y2", _frozen(y2))
        object.__setattr__(self, "x1", _frozen(x1))
        object.__setattr__(self, "x2", _frozen(x2))
        object.__setattr__(self, "dx", _frozen(x1 - x2))

    @property
    def n(self) -> int:
        return self.y1.shape[0]

    @property
    def k(self) -> int:
        return self.x1.shape[1]

    def __len__(self) -> int:
        return self.n

    @property
    def observations(self) -> list[PanelObservation]:
        return list(iter(self))

    def __iter__(self) -> Iterator[PanelObservation]:
        for i in range(self.n):
            yield PanelObservation(
                float(self.y1[i]), float(self.y2[i]),
                tuple(map(float, self.x1[i])), tuple(map(float, self.x2[i])),
            )

    @classmethod
    def from_observations(cls, observations: Sequence[PanelObservation]) -> "PanelDataset":
        if len(observations) == 0:
            raise PanelDataError("no observations")
        return cls(
            y1=[o.y1 for o in observations],
            y2=[o.y2 for o in observations],
            x1=[o.x1 for o in observations],
            x2=[o.x2 for o in observations],
        )

    def take(self, rows: np.ndarray) -> "PanelDataset":
        """Row subset (with repetition allowed) in the given order."""
        rows = np.asarray(rows, dtype=np.intp)
        return PanelDataset(self.y1[rows], self.y2[rows], self.x1[rows], self.x2[rows])

    def swap_periods(self) -> "PanelDataset":
        """Relabel the periods: ``(y1, x1, y2, x2) -> (y2, x2, y1, x1)``."""
        return PanelDataset(self.y2, self.y1, self.x2, self.x1)

    def informative(self) -> np.ndarray:
        """Boolean mask of rows with at least one uncensored outcome."""
        return (self.y1 > 0) | (self.y2 > 0)


@dataclass(frozen=True, eq=False)
class CrossSectionDataset:
    """Cross-sectional censored sample ``(y_i, x_i)``."""

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.shape[0] != y.shape[0]:
            raise PanelDataError("y and x must have the same number of rows")
        if y.shape[0] and np.any(y < 0):
            raise PanelDataError(f"negative outcome at row {int(np.argmax(y < 0)) + 1}")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "x", _frozen(x))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True, eq=False)
class SandwichCovariance:
    """``sigma = bread^-1 @ meat @ bread^-1``."""

    bread: np.ndarray
    meat: np.ndarray
    sigma: np.ndarray

    def to_dict(self) -> dict:
        return {
            "bread": self.bread.tolist(),
            "meat": self.meat.tolist(),
            "sigma": self.sigma.tolist(),
        }


def as_theta(theta, k: int | None = None) -> np.ndarray:
    """Validate a parameter vector: 1-d, finite, optionally of length ``k``."""
    t = np.atleast_1d(np.asarray(theta, dtype=np.float64)).reshape(-1)
    if k is not None and t.shape[0] != k:
        raise ValueError(f"dimension mismatch: theta has length {t.shape[0]}, expected {k}")
    if not np.all(np.isfinite(t)):
        raise ValueError("theta must be finite")
    return t


def index(dx: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Row-wise ``dx @ theta`` with a fixed, BLAS-free summation order."""
    out = dx[:, 0] * theta[0]
    for j in range(1, dx.shape[1]):
        out = out + dx[:, j] * theta[j]
    return out


def weighted_gram(dx: np.ndarray, w: np.ndarray, n: int | None = None) -> np.ndarray:
    """``(1/n) * sum_i w_i dx_i dx_i^T`` with exact symmetry.

    Each entry is one reduction over observations, independent of any
    BLAS threading, so results are reproducible across thread counts.
    """
    n = dx.shape[0] if n is None else n
    k = dx.shape[1]
    out = np.empty((k, k))
    for a in range(k):
        wa = w * dx[:, a]
        for b in range(a, k):
            out[a, b] = out[b, a] = np.sum(wa * dx[:, b]) / n
    return out


def rcond(m: np.ndarray) -> float:
    s = np.linalg.svd(np.asarray(m, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0 or not np.all(np.isfinite(s)):
        return 0.0
    return float(s[-1] / s[0])


def inverse(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Inverse that refuses near-singular input instead of regularising."""
    m = np.asarray(m, dtype=np.float64)
    rc = rcond(m)
    if rc <= RCOND_MIN:
        raise SingularMatrixError(name, rc)
    return np.linalg.inv(m)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _header(k: int) -> list[str]:
    return (["y1", "y2"] + [f"x1_{j}" for j in range(1, k + 1)]
            + [f"x2_{j}" for j in range(1, k + 1)])


def load_panel_csv(path: str | Path, k: int | None = None) -> PanelDataset:
    """Read ``y1,y2,x1_1..x1_K,x2_1..x2_K`` rows; ``k`` is inferred when omitted."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise PanelDataError("no observations") from None
        ncols = len(header)
        if ncols < 4 or (ncols - 2) % 2:
            raise PanelDataError(f"bad header: expected y1,y2,x1_1..x1_K,x2_1..x2_K, got {header}")
        k_header = (ncols - 2) // 2
        if k is not None and k != k_header:
            raise PanelDataError(f"dimension mismatch: k={k} but header has K={k_header}")
        if header != _header(k_header):
            raise PanelDataError(f"bad header: expected {_header(k_header)}, got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != ncols:
                raise PanelDataError(
                    f"dimension mismatch at row {lineno}: {len(row)} fields, expected {ncols}"
                )
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise PanelDataError(f"parse error at row {lineno}: {row}") from None
            if not all(math.isfinite(v) for v in vals):
                raise PanelDataError(f"non-finite value at row {lineno}")
            if vals[0] < 0 or vals[1] < 0:
                raise PanelDataError(f"negative outcome at row {lineno}")
            rows.append(vals)
    if not rows:
        raise PanelDataError("no observations")
    a = np.array(rows, dtype=np.float64)
    kk = k_header
    return PanelDataset(a[:, 0], a[:, 1], a[:, 2:2 + kk], a[:, 2 + kk:])


def save_panel_csv(dataset: PanelDataset, path: str | Path) -> None:
    """Write a dataset so that :func:`load_panel_csv` reproduces it bit-for-bit."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_header(dataset.k))
        for i in range(dataset.n):
            vals = [dataset.y1[i], dataset.y2[i], *dataset.x1[i], *dataset.x2[i]]
            w.writerow([repr(float(v)) for v in vals])


# ---------------------------------------------------------------------------
# Identification diagnostic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankReport:
    min_eigenvalue: float
    passed: bool
    gram: np.ndarray
    tol: float

    def to_dict(self) -> dict:
        return {"min_eigenvalue": self.min_eigenvalue, "passed": self.passed,
                "gram": self.gram.tolist(), "tol": self.tol}


def rank_check(dataset: PanelDataset, tol: float = 1e-10) -> RankReport:
    """Smallest eigenvalue of the Gram matrix of informative regressor differences.

    Rows with both outcomes censored carry no information about the slope,
    so only rows with ``y1 > 0 or y2 > 0`` enter.
    """
    gram = weighted_gram(dataset.dx, dataset.informative().astype(np.float64))
    lam = float(np.linalg.eigvalsh(gram)[0])
    return RankReport(min_eigenvalue=lam, passed=lam > tol, gram=gram, tol=tol)
