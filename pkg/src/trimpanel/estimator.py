"""Minimisation of the empirical trimmed loss over the slope parameter.

TLS
    The objective is convex, C^1 and piecewise quadratic.  It is minimised
    by damped Newton steps using the almost-everywhere Hessian (the matrix
    of rows whose index lies strictly inside ``(-y2, y1)``) with an Armijo
    backtracking line search, so accepted steps never increase the
    objective.

TLAD
    Each term is ``a*(b - t)^+ + c*(t - b)^+`` in the index ``t``, so the
    objective is polyhedral.  It is minimised exactly by an active-set
    descent: move along descent directions that keep current kinks active
    until ``K`` independent kinks are active (a vertex), then pivot along
    edges (a primal simplex step on the LAD linear program) with exact
    piecewise-linear line searches.  Optimality is certified by showing
    that zero lies in the subdifferential.  Degenerate vertices fall back
    to the minimum-norm subgradient direction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.optimize import lsq_linear

from .core import LossKind, PanelDataError, PanelDataset, as_theta, index, weighted_gram
from .loss import tlad_loss, tlad_subgradient, tls_loss, tls_score

__all__ = [
    "FitConfig",
    "FitResult",
    "empirical_gradient",
    "empirical_objective",
    "fit",
    "numeric_gradient",
]

log = logging.getLogger(__name__)


class NonFiniteObjectiveError(FloatingPointError):
    """The objective evaluated to NaN or inf, which means corrupt input."""


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 500
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    initial_theta: tuple[float, ...] | None = None
    restarts: int = 2
    restart_seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not (self.grad_tol > 0 and self.step_tol > 0):
            raise ValueError("tolerances must be strictly positive")
        if self.restarts < 0:
            raise ValueError("restarts must be non-negative")

    def start(self, k: int) -> np.ndarray:
        if self.initial_theta is None:
            return np.zeros(k)
        return as_theta(self.initial_theta, k)


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: np.ndarray
    objective_value: float
    converged: bool
    iterations: int
    final_grad_norm: float
    loss: LossKind = LossKind.TLS
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        diag = {k: v for k, v in self.diagnostics.items() if k != "objective_trace"}
        return {
            "theta_hat": self.theta_hat.tolist(),
            "objective_value": self.objective_value,
            "converged": self.converged,
            "iterations": self.iterations,
            "final_grad_norm": self.final_grad_norm,
            "loss": self.loss.value,
            "diagnostics": diag,
        }


def _check(theta, dataset: PanelDataset) -> np.ndarray:
    return as_theta(theta, dataset.k)


def empirical_objective(theta, dataset: PanelDataset, kind) -> float:
    """``(1/n) * sum_i m(dx_i' theta, y_i)``."""
    kind = LossKind.parse(kind)
    theta = _check(theta, dataset)
    t = index(dataset.dx, theta)
    loss = tls_loss if kind is LossKind.TLS else tlad_loss
    return float(np.sum(loss(t, dataset.y1, dataset.y2)) / dataset.n)


def empirical_gradient(theta, dataset: PanelDataset, kind) -> np.ndarray:
    """``(1/n) * sum_i score(dx_i' theta, y_i) * dx_i``.

    Exact gradient for TLS; for TLAD the midpoint subgradient of each term.
    """
    kind = LossKind.parse(kind)
    theta = _check(theta, dataset)
    t = index(dataset.dx, theta)
    score = tls_score if kind is LossKind.TLS else tlad_subgradient
    s = np.asarray(score(t, dataset.y1, dataset.y2))
    return np.sum(s[:, None] * dataset.dx, axis=0) / dataset.n


def numeric_gradient(theta, dataset: PanelDataset, kind, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of :func:`empirical_objective`."""
    if not h > 0:
        raise ValueError("h must be positive")
    theta = _check(theta, dataset)
    out = np.empty(dataset.k)
    for j in range(dataset.k):
        e = np.zeros(dataset.k)
        e[j] = h
        out[j] = (empirical_objective(theta + e, dataset, kind)
                  - empirical_objective(theta - e, dataset, kind)) / (2 * h)
    return out


def _is_flat(dataset: PanelDataset) -> bool:
    live = dataset.informative() & np.any(dataset.dx != 0, axis=1)
    return not bool(np.any(live))


# ---------------------------------------------------------------------------
# TLS
# ---------------------------------------------------------------------------


def _tls_parts(theta, dx, y1, y2, n):
    t = index(dx, theta)
    f = float(np.sum(tls_loss(t, y1, y2)) / n)
    s = tls_score(t, y1, y2)
    g = np.sum(s[:, None] * dx, axis=0) / n
    return t, f, g


def _fit_tls(dataset: PanelDataset, config: FitConfig) -> FitResult:
    dx, y1, y2, n = dataset.dx, dataset.y1, dataset.y2, dataset.n
    k = dataset.k
    theta = config.start(k)
    t, f, g = _tls_parts(theta, dx, y1, y2, n)
    if not np.isfinite(f):
        raise NonFiniteObjectiveError("objective is not finite at the starting value")
    trace = [f]
    converged = False
    it = 0
    flat = _is_flat(dataset)
    while it < config.max_iters:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.grad_tol:
            converged = True
            break
        it += 1
        inside = ((-y2 < t) & (t < y1)).astype(np.float64)
        H = weighted_gram(dx, inside, n)
        ev = np.linalg.eigvalsh(H)
        if ev[0] > 1e-10 * max(ev[-1], 1e-300):
            d = np.linalg.solve(H, -g)
        else:
            # singular a.e. Hessian: ridge it, or fall back to the gradient
            ridge = max(1e-6 * ev[-1], 1e-12)
            d = np.linalg.solve(H + ridge * np.eye(k), -g) if ev[-1] > 0 else -g
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -gnorm ** 2
        step = 1.0
        while True:
            cand = theta + step * d
            t_c, f_c, g_c = _tls_parts(cand, dx, y1, y2, n)
            if not np.isfinite(f_c):
                raise NonFiniteObjectiveError("objective became non-finite during the line search")
            if f_c <= f + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-20:
                break
        if step < 1e-20:
            break
        move = float(np.linalg.norm(cand - theta))
        theta, t, f, g = cand, t_c, f_c, g_c
        trace.append(f)
        if move <= config.step_tol * (1.0 + float(np.linalg.norm(theta))):
            converged = float(np.linalg.norm(g)) <= config.grad_tol
            break
    return FitResult(
        theta_hat=theta,
        objective_value=empirical_objective(theta, dataset, LossKind.TLS),
        converged=converged,
        iterations=it,
        final_grad_norm=float(np.linalg.norm(g)),
        loss=LossKind.TLS,
        diagnostics={"flat": flat, "objective_trace": trace, "method": "newton"},
    )


# ---------------------------------------------------------------------------
# TLAD: exact active-set descent on a sum of one-kink hinge terms
# ---------------------------------------------------------------------------


def tlad_terms(dataset: PanelDataset, weights: np.ndarray | None = None):
    """Hinge representation ``lo*(b - t)^+ + hi*(t - b)^+`` of each informative row.

    Returns ``(A, b, lo, hi)`` for rows that can influence the argmin, with
    per-row weights folded into ``lo``/``hi`` and normalised by ``n``.
    """
    y1, y2, dx = dataset.y1, dataset.y2, dataset.dx
    w = np.ones(dataset.n) if weights is None else np.asarray(weights, dtype=np.float64)
    both = (y1 > 0) & (y2 > 0)
    only1 = (y1 > 0) & (y2 == 0)
    only2 = (y1 == 0) & (y2 > 0)
    keep = (both | only1 | only2) & np.any(dx != 0, axis=1) & (w > 0)
    b = np.where(both, y1 - y2, np.where(only1, y1, -y2))[keep]
    lo = np.where(both | only1, 1.0, 0.0)[keep] * w[keep] / dataset.n
    hi = np.where(both | only2, 1.0, 0.0)[keep] * w[keep] / dataset.n
    return dx[keep], b, lo, hi


def _line_search(r, ad, lo, hi, kink):
    """Exact minimiser over ``gamma >= 0`` of the piecewise-linear restriction.

    Returns ``(gamma, row)`` where ``row`` is the term whose kink is reached,
    or ``(0.0, -1)`` when ``ad`` is not a descent direction.
    """
    free = ~kink
    s0 = float(np.sum(np.where(r[free] < 0, -lo[free], hi[free]) * ad[free]))
    if kink.any():
        adk = ad[kink]
        s0 += float(np.sum(hi[kink] * np.maximum(adk, 0.0) + lo[kink] * np.maximum(-adk, 0.0)))
    if not s0 < 0:
        return 0.0, -1
    cand = np.flatnonzero(free & (ad != 0))
    gam = -r[cand] / ad[cand]
    ahead = gam > 0
    cand, gam = cand[ahead], gam[ahead]
    if cand.size == 0:
        return 0.0, -1
    jump = (lo[cand] + hi[cand]) * np.abs(ad[cand])
    order = np.argsort(gam, kind="stable")
    cum = s0 + np.cumsum(jump[order])
    tol = 1e-13 * (abs(s0) + float(np.sum(jump)))
    pos = int(np.searchsorted(cum, -tol, side="left"))
    pos = min(pos, order.size - 1)
    j = order[pos]
    return float(gam[j]), int(cand[j])


def _grad_free(A, r, lo, hi, kink):
    s = np.where(r < 0, -lo, hi)
    s[kink] = 0.0
    return np.sum(s[:, None] * A, axis=0)


def _min_norm_subgradient(Ak, g, lo_k, hi_k):
    # min || g + Ak^T lam ||  s.t.  -lo <= lam <= hi
    lb, ub = -lo_k, hi_k
    fixed = lb == ub
    if np.all(fixed):
        lam = lb.copy()
    else:
        res = lsq_linear(Ak.T, -g, bounds=(np.where(fixed, lb - 1e-300, lb),
                                           np.where(fixed, ub + 1e-300, ub)),
                         method="bvls", tol=1e-14)
        lam = np.clip(res.x, lb, ub)
    return g + Ak.T @ lam


def _fit_tlad_once(A, b, lo, hi, theta0, config: FitConfig):
    k = A.shape[1]
    theta = theta0.copy()
    wscale = float(np.max(lo + hi)) if lo.size else 1.0
    ltol = 1e-9 * wscale
    gtol = config.grad_tol
    it = 0
    converged = False
    resid = np.inf
    face_dim = 0
    degenerate_steps = 0
    # absolute floor so that residuals of pure rounding noise around b = 0 count as kinks
    floor = 1e-13 * (float(np.max(np.abs(b))) + float(np.max(np.abs(A))) + 1e-300)
    while it < config.max_iters:
        r = index(A, theta) - b
        ktol = 1e-11 * (np.abs(b) + index(np.abs(A), np.abs(theta))) + floor
        kink = np.abs(r) <= ktol
        g = _grad_free(A, r, lo, hi, kink)
        kidx = np.flatnonzero(kink)
        m = kidx.size
        d = None
        active_after = None
        if m == 0:
            resid = float(np.linalg.norm(g))
            if resid <= gtol:
                converged, face_dim = True, k
                break
            d = -g
            active_after = []
        else:
            Ak = A[kidx]
            rank = np.linalg.matrix_rank(Ak)
            if rank == m == k:
                lam = np.linalg.solve(Ak.T, -g)
                viol = np.maximum(lam - hi[kidx], -lo[kidx] - lam)
                if np.all(viol <= ltol):
                    resid = float(np.linalg.norm(g + Ak.T @ np.clip(lam, -lo[kidx], hi[kidx])))
                    # a multiplier on its bound means some edge is flat: the argmin is not unique
                    converged, face_dim = True, int(np.any(viol >= -ltol))
                    break
                j = int(np.argmax(viol))
                e = np.zeros(k)
                e[j] = 1.0 if lam[j] > hi[kidx[j]] else -1.0
                d = np.linalg.solve(Ak, e)
                active_after = [kidx[i] for i in range(m) if i != j]
            elif rank == m < k:
                q, _ = np.linalg.qr(Ak.T)
                pg = g - q @ (q.T @ g)
                if np.linalg.norm(pg) > gtol:
                    d = -pg
                    active_after = list(kidx)
                else:
                    lam = np.linalg.lstsq(Ak.T, -g, rcond=None)[0]
                    viol = np.maximum(lam - hi[kidx], -lo[kidx] - lam)
                    if np.all(viol <= ltol):
                        resid = float(np.linalg.norm(pg))
                        converged, face_dim = True, k - m
                        break
                    j = int(np.argmax(viol))
                    e = np.zeros(m)
                    e[j] = 1.0 if lam[j] > hi[kidx[j]] else -1.0
                    d = np.linalg.lstsq(Ak, e, rcond=None)[0]
                    active_after = [kidx[i] for i in range(m) if i != j]
            if d is None:
                degenerate_steps += 1
                gstar = _min_norm_subgradient(Ak, g, lo[kidx], hi[kidx])
                resid = float(np.linalg.norm(gstar))
                if resid <= gtol:
                    converged, face_dim = True, -1
                    break
                d = -gstar
        it += 1
        step, hit = _line_search(r, index(A, d), lo, hi, kink)
        if hit < 0:
            # numerically not a descent direction; try the steepest one once
            if m:
                gstar = _min_norm_subgradient(A[kidx], g, lo[kidx], hi[kidx])
            else:
                gstar = g
            d = -gstar
            active_after = None
            step, hit = _line_search(r, index(A, d), lo, hi, kink)
            if hit < 0:
                resid = float(np.linalg.norm(gstar))
                converged = resid <= max(gtol, 1e-12)
                break
        new = theta + step * d
        if active_after is not None:
            act = active_after + [hit]
            if len(act) == k:
                Ak_new = A[act]
                if np.linalg.matrix_rank(Ak_new) == k:
                    new = np.linalg.solve(Ak_new, b[act])
        if np.linalg.norm(new - theta) <= config.step_tol * (1.0 + np.linalg.norm(theta)) and m == 0:
            theta = new
            break
        theta = new
    return theta, converged, it, resid, face_dim, degenerate_steps


def _fit_tlad(dataset: PanelDataset, config: FitConfig, weights=None) -> FitResult:
    k = dataset.k
    theta0 = config.start(k)
    A, b, lo, hi = tlad_terms(dataset, weights)
    if A.shape[0] == 0:
        return FitResult(theta0, empirical_objective(theta0, dataset, LossKind.TLAD), True, 0,
                         0.0, LossKind.TLAD,
                         {"flat": True, "method": "active-set", "restarts_used": 0,
                          "non_unique": True})
    theta, conv, it, resid, face, degen = _fit_tlad_once(A, b, lo, hi, theta0, config)
    best = (theta, conv, it, resid, face, degen)
    best_f = _weighted_tlad_objective(theta, A, b, lo, hi)
    used = 0
    if not conv and config.restarts:
        rng = np.random.default_rng(config.restart_seed)
        spread = 1.0 + float(np.max(np.abs(theta)))
        for _ in range(config.restarts):
            used += 1
            start = theta + rng.normal(scale=0.1 * spread, size=k)
            cand = _fit_tlad_once(A, b, lo, hi, start, config)
            f_c = _weighted_tlad_objective(cand[0], A, b, lo, hi)
            if (cand[1] and not best[1]) or f_c < best_f:
                best, best_f = cand, f_c
            if cand[1]:
                break
    theta, conv, it, resid, face, degen = best
    if not conv:
        log.debug("TLAD fit not certified optimal after %d iterations", it)
    return FitResult(
        theta_hat=theta,
        objective_value=empirical_objective(theta, dataset, LossKind.TLAD),
        converged=bool(conv),
        iterations=int(it),
        final_grad_norm=float(resid),
        loss=LossKind.TLAD,
        diagnostics={
            "flat": False,
            "method": "active-set",
            "restarts_used": used,
            # face_dim > 0: optimum certified on a face, so the argmin is not unique
            "non_unique": bool(face != 0),
            "degenerate_steps": int(degen),
        },
    )


def _weighted_tlad_objective(theta, A, b, lo, hi) -> float:
    r = index(A, theta) - b
    return float(np.sum(lo * np.maximum(-r, 0.0) + hi * np.maximum(r, 0.0)))


def fit(dataset: PanelDataset, kind, config: FitConfig | None = None) -> FitResult:
    """Minimise the empirical trimmed loss.

    Failure to converge is reported through ``FitResult.converged``.
    Exceptions are raised for a non-finite objective and for ``K >= n``.
    """
    kind = LossKind.parse(kind)
    config = FitConfig() if config is None else config
    if dataset.k >= dataset.n:
        raise PanelDataError(f"need more observations than regressors (n={dataset.n}, K={dataset.k})")
    if kind is LossKind.TLS:
        return _fit_tls(dataset, config)
    return _fit_tlad(dataset, config)


def fit_weighted_tlad(dataset: PanelDataset, weights: np.ndarray,
                      config: FitConfig | None = None) -> FitResult:
    """TLAD fit with integer row multiplicities (a resample without copying rows)."""
    config = FitConfig() if config is None else config
    res = _fit_tlad(dataset, config, weights=weights)
    w = np.asarray(weights, dtype=np.float64)
    t = index(dataset.dx, res.theta_hat)
    obj = float(np.sum(w * tlad_loss(t, dataset.y1, dataset.y2)) / np.sum(w))
    return replace(res, objective_value=obj)
