"""Trimmed square and trimmed absolute losses.

All functions accept scalars or broadcastable arrays for ``t``, ``y1`` and
``y2`` and return the same shape (a Python float for scalar input).

The branch boundaries follow the three-case definition literally,
``t <= -y2``, ``-y2 < t < y1`` and ``t >= y1``; neighbouring branches agree
at the boundaries so the choice never changes a value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LossEval",
    "evaluate",
    "tlad_loss",
    "tlad_shifted_loss",
    "tlad_subgradient",
    "tls_kinks",
    "tls_loss",
    "tls_score",
    "tlad_kinks",
]


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def _args(t, y1, y2):
    t = np.asarray(t, dtype=np.float64)
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    return np.broadcast_arrays(t, y1, y2)


def tls_loss(t, y1, y2):
    """Trimmed one-half square loss."""
    t, y1, y2 = _args(t, y1, y2)
    lo = t <= -y2
    hi = t >= y1
    first = y1 ** 2 - 2.0 * (y2 + t) * y1
    mid = (y1 - y2 - t) ** 2
    third = y2 ** 2 + 2.0 * (t - y1) * y2
    return _out(0.5 * np.where(lo, first, np.where(hi, third, mid)))


def tls_score(t, y1, y2):
    """Derivative of :func:`tls_loss` in ``t``; 1-Lipschitz and continuous."""
    t, y1, y2 = _args(t, y1, y2)
    return _out(np.where(t <= -y2, -y1, np.where(t >= y1, y2, y2 - y1 + t)))


def tls_kinks(y1: float, y2: float) -> frozenset[float]:
    """Points where the TLS score is not differentiable."""
    if y1 + y2 == 0:
        return frozenset()
    return frozenset({float(-y2), float(y1)})


def _sgn(x):
    return np.sign(x)  # sign(0) == 0


def tlad_loss(t, y1, y2):
    """Trimmed absolute loss."""
    t, y1, y2 = _args(t, y1, y2)
    lo = t <= -y2
    hi = t >= y1
    first = np.abs(y1) - (t + y2) * _sgn(y1)
    mid = np.abs(y1 - y2 - t)
    third = np.abs(-y2) - (t - y1) * _sgn(-y2)
    return _out(np.where(lo, first, np.where(hi, third, mid)))


def tlad_shifted_loss(t, y1, y2):
    """``tlad_loss(t, y) - tlad_loss(0, y)`` via the censoring-pattern decomposition."""
    t, y1, y2 = _args(t, y1, y2)
    both = (y1 > 0) & (y2 > 0)
    only1 = (y1 > 0) & (y2 == 0)
    only2 = (y1 == 0) & (y2 > 0)
    d = y1 - y2
    out = np.where(both, np.abs(d - t) - np.abs(d), 0.0)
    out = np.where(only1, np.maximum(0.0, y1 - t) - np.maximum(0.0, y1), out)
    out = np.where(only2, np.maximum(0.0, y2 + t) - np.maximum(0.0, y2), out)
    return _out(out)


def _tlad_slopes(t, y1, y2):
    """Left and right derivatives of the TLAD loss at ``t``."""
    # Written as a*(b - t)^+ + c*(t - b)^+ with one kink b per observation.
    both = (y1 > 0) & (y2 > 0)
    only1 = (y1 > 0) & (y2 == 0)
    only2 = (y1 == 0) & (y2 > 0)
    b = np.where(both, y1 - y2, np.where(only1, y1, -y2))
    a = np.where(both | only1, 1.0, 0.0)
    c = np.where(both | only2, 1.0, 0.0)
    left = np.where(t <= b, -a, c)
    right = np.where(t < b, -a, c)
    return left, right


def tlad_subgradient(t, y1, y2):
    """Element of the TLAD subdifferential; the midpoint of the one-sided derivatives at a kink."""
    t, y1, y2 = _args(t, y1, y2)
    left, right = _tlad_slopes(t, y1, y2)
    return _out(0.5 * (left + right))


def tlad_kinks(y1: float, y2: float) -> frozenset[float]:
    """Points where the TLAD loss is not differentiable."""
    if y1 > 0 and y2 > 0:
        return frozenset({float(y1 - y2)})
    if y1 > 0:
        return frozenset({float(y1)})
    if y2 > 0:
        return frozenset({float(-y2)})
    return frozenset()


@dataclass(frozen=True)
class LossEval:
    value: float
    derivative: float
    at_kink: bool


def evaluate(kind, t: float, y1: float, y2: float) -> LossEval:
    """Value, (sub)derivative and kink flag of one loss at one point."""
    from .core import LossKind

    kind = LossKind.parse(kind)
    if kind is LossKind.TLS:
        return LossEval(tls_loss(t, y1, y2), tls_score(t, y1, y2), float(t) in tls_kinks(y1, y2))
    return LossEval(tlad_loss(t, y1, y2), tlad_subgradient(t, y1, y2),
                    float(t) in tlad_kinks(y1, y2))
