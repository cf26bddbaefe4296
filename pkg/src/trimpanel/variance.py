"""Plug-in meat and bread estimators and sandwich assembly.

Every matrix is a weighted Gram ``(1/n) sum_i w_i dx_i dx_i^T`` reduced in
observation order.  Composite estimators are assembled from their parts
(``midpoint = (alt1 + alt2) / 2`` and ``h92 = L + R``) so the identities
between them hold bit-for-bit rather than up to rounding.

The equality event ``dx' theta == 0`` is tested exactly unless a
``zero_tol`` is given, in which case ``|dx' theta| <= zero_tol`` counts as
zero.
"""

from __future__ import annotations

import enum

import numpy as np

from .core import (
    CrossSectionDataset,
    PanelDataset,
    SandwichCovariance,
    as_theta,
    index,
    inverse,
    weighted_gram,
)
from .loss import tls_score

__all__ = [
    "BreadVariant",
    "bread_h92",
    "bread_h92_decompose",
    "bread_tls",
    "cross_section_bread",
    "meat_tlad",
    "meat_tls",
    "sandwich",
    "tls_covariance",
]


class BreadVariant(str, enum.Enum):
    MIDPOINT = "midpoint"
    ALT1 = "alt1"
    ALT2 = "alt2"
    H92 = "h92"

    @classmethod
    def parse(cls, value) -> "BreadVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            opts = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown bread variant {value!r}; expected one of {opts}") from None


def _index(dataset: PanelDataset, theta) -> np.ndarray:
    return index(dataset.dx, as_theta(theta, dataset.k))


def _signs(t: np.ndarray, zero_tol: float):
    if zero_tol < 0:
        raise ValueError("zero_tol must be non-negative")
    zero = np.abs(t) <= zero_tol
    return (t < 0) & ~zero, zero, (t > 0) & ~zero


def meat_tls(dataset: PanelDataset, theta) -> np.ndarray:
    """``(1/n) sum_i score_i^2 dx_i dx_i^T`` with the TLS score."""
    t = _index(dataset, theta)
    s = tls_score(t, dataset.y1, dataset.y2)
    return weighted_gram(dataset.dx, s * s)


def _alt_weights(dataset: PanelDataset, t: np.ndarray, zero_tol: float):
    neg, zero, pos = _signs(t, zero_tol)
    p1 = (dataset.y1 > 0).astype(np.float64)
    p2 = (dataset.y2 > 0).astype(np.float64)
    w1 = p1 * (neg | zero) + p2 * pos
    w2 = p1 * neg + p2 * (pos | zero)
    return w1, w2


def bread_tls(dataset: PanelDataset, theta, variant=BreadVariant.MIDPOINT,
              zero_tol: float = 0.0) -> np.ndarray:
    """Plug-in TLS Hessian.

    ``alt1`` puts the event ``dx' theta == 0`` with the period-1 term,
    ``alt2`` with the period-2 term, and ``midpoint`` splits it in half.
    """
    variant = BreadVariant.parse(variant)
    if variant is BreadVariant.H92:
        return bread_h92(dataset, theta, zero_tol)
    t = _index(dataset, theta)
    w1, w2 = _alt_weights(dataset, t, zero_tol)
    if variant is BreadVariant.ALT1:
        return weighted_gram(dataset.dx, w1)
    if variant is BreadVariant.ALT2:
        return weighted_gram(dataset.dx, w2)
    return 0.5 * (weighted_gram(dataset.dx, w1) + weighted_gram(dataset.dx, w2))


def bread_h92_decompose(dataset: PanelDataset, theta,
                        zero_tol: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Split the legacy bread into the part off and on the event ``dx' theta == 0``.

    ``L`` counts rows with ``0 < t < y1`` or ``-y2 < t < 0``; ``R`` counts rows
    with ``y1 > 0``, ``y2 > 0`` and ``t == 0``.
    """
    t = _index(dataset, theta)
    neg, zero, pos = _signs(t, zero_tol)
    y1, y2 = dataset.y1, dataset.y2
    wl = ((pos & (t < y1)) | (neg & (-y2 < t))).astype(np.float64)
    wr = (zero & (y1 > 0) & (y2 > 0)).astype(np.float64)
    return weighted_gram(dataset.dx, wl), weighted_gram(dataset.dx, wr)


def bread_h92(dataset: PanelDataset, theta, zero_tol: float = 0.0) -> np.ndarray:
    """``(1/n) sum_i 1{-y2_i < dx_i' theta < y1_i} dx_i dx_i^T``."""
    lo, r = bread_h92_decompose(dataset, theta, zero_tol)
    return lo + r


def meat_tlad(dataset: PanelDataset, theta) -> np.ndarray:
    """``(1/n) sum_i [1{y1>0} 1{y1-y2 > t} + 1{y2>0} 1{y1-y2 < t}] dx_i dx_i^T``."""
    t = _index(dataset, theta)
    y1, y2 = dataset.y1, dataset.y2
    d = y1 - y2
    w = ((y1 > 0) & (d > t)).astype(np.float64) + ((y2 > 0) & (d < t)).astype(np.float64)
    return weighted_gram(dataset.dx, w)


def sandwich(bread, meat) -> SandwichCovariance:
    """``bread^-1 meat bread^-1``, symmetrised; refuses a singular bread."""
    bread = np.atleast_2d(np.asarray(bread, dtype=np.float64))
    meat = np.atleast_2d(np.asarray(meat, dtype=np.float64))
    if bread.shape != meat.shape or bread.shape[0] != bread.shape[1]:
        raise ValueError(f"dimension mismatch: bread {bread.shape}, meat {meat.shape}")
    b_inv = inverse(bread, "bread")
    s = b_inv @ meat @ b_inv
    return SandwichCovariance(bread=bread, meat=meat, sigma=0.5 * (s + s.T))


def tls_covariance(dataset: PanelDataset, theta, variant=BreadVariant.MIDPOINT,
                   zero_tol: float = 0.0) -> SandwichCovariance:
    """Asymptotic covariance of ``sqrt(n) (theta_hat - theta_0)`` for TLS."""
    return sandwich(bread_tls(dataset, theta, variant, zero_tol), meat_tls(dataset, theta))


def cross_section_bread(dataset: CrossSectionDataset, theta,
                        zero_tol: float = 0.0) -> np.ndarray:
    """Pairwise plug-in Hessian for the cross-sectional censored model.

    Averages the kernel over all ordered pairs ``i != j`` with
    ``dx = x_i - x_j``.  The kernel is symmetric in its two arguments, so
    the sum runs over ``i < j`` and is doubled.
    """
    n, k = dataset.n, dataset.k
    if n < 2:
        raise ValueError("cross_section_bread needs at least two observations")
    theta = as_theta(theta, k)
    y, x = dataset.y, dataset.x
    acc = np.zeros((k, k))
    for i in range(n - 1):
        dx = x[i] - x[i + 1:]
        t = index(dx, theta)
        neg, zero, pos = _signs(t, zero_tol)
        half = 0.5 * zero
        w = (float(y[i] > 0) * (neg + half)
             + (y[i + 1:] > 0) * (pos + half))
        acc += weighted_gram(dx, w, 1)
    return 2.0 * acc / (n * (n - 1))
