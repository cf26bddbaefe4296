"""Nonparametric resampling and the quantile-based robust bootstrap for TLAD.

The robust estimator never uses bootstrap second moments.  For each
coordinate it takes an upper quantile of ``sqrt(n) |theta_tilde_k - theta_hat_k|``
and converts it to a variance through the matching normal quantile; the
off-diagonal terms come from the same construction on pairwise sums.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import ndtri

from .core import PanelDataset, as_theta
from .estimator import FitConfig, fit_weighted_tlad
from .rng import stream

__all__ = [
    "BootstrapConfig",
    "BootstrapError",
    "RobustSigmaResult",
    "empirical_quantile",
    "psd_project",
    "resample",
    "resample_indices",
    "robust_sigma_tlad",
    "sigma_from_replicates",
]

log = logging.getLogger(__name__)

MAX_DROP_FRACTION = 0.10


class BootstrapError(RuntimeError):
    """Too many bootstrap replicates failed to produce a usable fit."""


@dataclass(frozen=True)
class BootstrapConfig:
    b: int = 500
    quantile_level: float = 0.9
    seed: int = 0
    psd_project: bool = False
    fit_config: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.b < 1:
            raise ValueError("b must be positive")
        if not 0 < self.quantile_level < 1:
            raise ValueError("quantile_level must lie in (0, 1)")

    @property
    def normal_level(self) -> float:
        return 0.5 * (1.0 + self.quantile_level)


@dataclass(frozen=True, eq=False)
class RobustSigmaResult:
    sigma_hat: np.ndarray
    raw_quantiles: dict[str, Any]
    psd_projected: bool
    replicates_used: int = 0
    replicates_dropped: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sigma_hat": self.sigma_hat.tolist(),
            "raw_quantiles": self.raw_quantiles,
            "psd_projected": self.psd_projected,
            "replicates_used": self.replicates_used,
            "replicates_dropped": self.replicates_dropped,
            "metadata": self.metadata,
        }


def resample_indices(rng: np.random.Generator, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be positive")
    return rng.integers(0, n, size=n)


def resample(dataset: PanelDataset, rng: np.random.Generator) -> PanelDataset:
    """Draw ``n`` rows with replacement."""
    return dataset.take(resample_indices(rng, dataset.n))


def empirical_quantile(values: np.ndarray, level: float) -> float:
    """Order statistic number ``ceil(level * B)`` (inverted CDF, no interpolation)."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("no values")
    # the small offset keeps e.g. 0.9 * 500 == 450.00000000000006 at 450
    j = max(1, math.ceil(level * v.size - 1e-9))
    return float(v[min(j, v.size) - 1])


def sigma_from_replicates(theta_tilde, theta_hat, n: int,
                          quantile_level: float = 0.9) -> tuple[np.ndarray, dict]:
    """Robust covariance from a ``(B, K)`` array of bootstrap estimates."""
    tt = np.atleast_2d(np.asarray(theta_tilde, dtype=np.float64))
    th = as_theta(theta_hat, tt.shape[1])
    k = th.shape[0]
    z = float(ndtri(0.5 * (1.0 + quantile_level)))
    root_n = math.sqrt(n)
    dev = tt - th
    q_diag = np.array([empirical_quantile(root_n * np.abs(dev[:, j]), quantile_level)
                       for j in range(k)])
    sigma = np.diag((q_diag / z) ** 2)
    q_pair = np.full((k, k), np.nan)
    for j in range(k):
        for m in range(j + 1, k):
            q = empirical_quantile(root_n * np.abs(dev[:, j] + dev[:, m]), quantile_level)
            q_pair[j, m] = q_pair[m, j] = q
            sigma[j, m] = sigma[m, j] = 0.5 * ((q / z) ** 2 - sigma[j, j] - sigma[m, m])
    raw = {
        "level": quantile_level,
        "normal_quantile": z,
        "diagonal": q_diag.tolist(),
        "pairwise": [[None if np.isnan(v) else float(v) for v in row] for row in q_pair],
    }
    return sigma, raw


def _refit(dataset: PanelDataset, theta_hat: np.ndarray, fit_config: FitConfig,
           seed: int, b: int):
    rng = stream(seed, b)
    counts = np.bincount(resample_indices(rng, dataset.n), minlength=dataset.n)
    res = fit_weighted_tlad(dataset, counts, fit_config)
    ok = res.converged and not res.diagnostics.get("flat", False)
    return res.theta_hat, ok


def robust_sigma_tlad(dataset: PanelDataset, theta_hat, config: BootstrapConfig | None = None
                      ) -> RobustSigmaResult:
    """Quantile-based bootstrap covariance of ``sqrt(n) (theta_hat - theta_0)``.

    Replicate ``b`` draws its resample from the substream ``(seed, b)`` and
    refits from ``theta_hat``.  Replicates whose fit is not certified or is
    flat are dropped; more than 10% dropped raises :class:`BootstrapError`.
    """
    config = BootstrapConfig() if config is None else config
    theta_hat = as_theta(theta_hat, dataset.k)
    fc = FitConfig(
        max_iters=config.fit_config.max_iters,
        grad_tol=config.fit_config.grad_tol,
        step_tol=config.fit_config.step_tol,
        initial_theta=tuple(theta_hat.tolist()),
        restarts=config.fit_config.restarts,
        restart_seed=config.fit_config.restart_seed,
    )
    kept, dropped = [], 0
    for b in range(config.b):
        th, ok = _refit(dataset, theta_hat, fc, config.seed, b)
        if ok:
            kept.append(th)
        else:
            dropped += 1
    if dropped > MAX_DROP_FRACTION * config.b:
        raise BootstrapError(
            f"{dropped} of {config.b} bootstrap replicates failed to converge or were flat"
        )
    if dropped:
        log.info("dropped %d bootstrap replicates", dropped)
    sigma, raw = sigma_from_replicates(np.array(kept), theta_hat, dataset.n,
                                       config.quantile_level)
    if config.psd_project:
        sigma = psd_project(sigma)
    return RobustSigmaResult(
        sigma_hat=sigma,
        raw_quantiles=raw,
        psd_projected=config.psd_project,
        replicates_used=len(kept),
        replicates_dropped=dropped,
        metadata={
            "b": config.b,
            "seed": config.seed,
            "tie_breaking": "first minimiser reached by the deterministic active-set path "
                            "started at theta_hat",
        },
    )


def psd_project(m) -> np.ndarray:
    """Nearest (Frobenius) positive semidefinite matrix by eigenvalue clipping.

    A matrix that is already PSD up to rounding is returned unchanged, which
    makes the map exactly idempotent.
    """
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("psd_project needs a square matrix")
    scale = max(1.0, float(np.max(np.abs(m))))
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * scale):
        raise ValueError("psd_project needs a symmetric matrix")
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w[0] >= -1e-12 * max(scale, float(np.max(np.abs(w)))):
        return m.copy()
    out = (v * np.clip(w, 0.0, None)) @ v.T
    return 0.5 * (out + out.T)
