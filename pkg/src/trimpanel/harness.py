"""Monte Carlo experiments: replicated simulate / fit / variance / coverage.

Replication ``i`` draws its data from the substream ``(seed, i)`` and
results are stored by replication index, so output is identical for any
number of worker processes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats
from scipy.special import ndtri

from .bootstrap import BootstrapConfig, robust_sigma_tlad
from .core import LossKind
from .dgp import DgpSpec, TladCounterexample, simulate
from .estimator import FitConfig, fit
from .rng import stream
from .variance import BreadVariant, bread_h92_decompose, bread_tls, meat_tls, sandwich

__all__ = [
    "McAbort",
    "McConfig",
    "McResult",
    "emit_histogram",
    "ks_critical_value",
    "normality_diagnostic",
    "run_mc",
    "write_outputs",
]

log = logging.getLogger(__name__)

MAX_FAIL_FRACTION = 0.05
BOOTSTRAP = "bootstrap"
# size of the reference TLAD experiment that the defaults scale down
REFERENCE_N, REFERENCE_REPS = 50_000, 10_000


class McAbort(RuntimeError):
    """More than 5% of replications failed."""

    def __init__(self, failures: int, reps: int, first_error: str):
        self.failures, self.reps = failures, reps
        super().__init__(f"{failures} of {reps} replications failed (first: {first_error})")


@dataclass(frozen=True)
class McConfig:
    dgp: DgpSpec
    reps: int = 100
    loss: LossKind = LossKind.TLS
    variance_methods: tuple[str, ...] = ("midpoint",)
    ci_level: float = 0.95
    seed: int = 0
    threads: int = 1
    bins: int = 50
    bootstrap_b: int = 500
    bootstrap_level: float = 0.9
    fit_config: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind.parse(self.loss))
        methods = tuple(str(m).lower() for m in self.variance_methods)
        object.__setattr__(self, "variance_methods", methods)
        if self.reps < 1:
            raise ValueError("reps must be positive")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must lie in (0, 1)")
        if self.threads < 1:
            raise ValueError("threads must be positive")
        for m in methods:
            if m == BOOTSTRAP:
                if self.loss is not LossKind.TLAD:
                    raise ValueError("the robust bootstrap is only defined for TLAD")
            else:
                BreadVariant.parse(m)
                if self.loss is not LossKind.TLS:
                    raise ValueError(f"bread variant {m!r} applies to TLS only")

    def to_dict(self) -> dict:
        return {
            "dgp": self.dgp.to_dict(),
            "reps": self.reps,
            "loss": self.loss.value,
            "variance_methods": list(self.variance_methods),
            "ci_level": self.ci_level,
            "seed": self.seed,
            "threads": self.threads,
            "bins": self.bins,
            "bootstrap_b": self.bootstrap_b,
            "bootstrap_level": self.bootstrap_level,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "McConfig":
        d = dict(d)
        dgp_d = dict(d.pop("dgp"))
        tlad_ce = dgp_d.get("variant") == "tlad-ce"
        if tlad_ce:
            dgp_d.setdefault("n", 5000)
            d.setdefault("reps", 2000)
        dgp = DgpSpec.from_dict(dgp_d)
        d.setdefault("loss", "tlad" if tlad_ce else "tls")
        if "variance_methods" in d:
            d["variance_methods"] = tuple(d["variance_methods"])
        elif LossKind.parse(d["loss"]) is LossKind.TLAD:
            d["variance_methods"] = ()
        known = set(cls.__dataclass_fields__) - {"dgp", "fit_config"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(dgp=dgp, **d)

    def digest(self) -> str:
        # threads never changes results, so it is left out of the hash
        payload = {k: v for k, v in self.to_dict().items() if k != "threads"}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass(eq=False)
class McResult:
    config: McConfig
    theta_hat: np.ndarray          # (reps, K), NaN rows for failures
    scaled: np.ndarray             # sqrt(n) (theta_hat - theta0)
    sigmas: dict[str, np.ndarray]  # method -> (reps, K, K)
    hits: dict[str, np.ndarray]    # method -> (reps, K) as 0/1, NaN on failure
    breads: dict[str, np.ndarray]  # TLS diagnostics at theta_hat
    converged: np.ndarray
    failures: list[tuple[int, str]]
    summary: dict[str, Any]

    @property
    def ok(self) -> np.ndarray:
        return ~np.isnan(self.theta_hat[:, 0])


def _one_rep(config: McConfig, i: int) -> dict:
    spec = config.dgp
    k = spec.k
    out: dict[str, Any] = {"rep": i}
    try:
        data = simulate(spec, stream(config.seed, i))
        res = fit(data, config.loss, config.fit_config)
        if not res.converged:
            raise RuntimeError(f"fit did not converge (grad norm {res.final_grad_norm:.3g})")
        th = res.theta_hat
        out["theta_hat"] = th
        out["converged"] = res.converged
        if config.loss is LossKind.TLS:
            lo, r = bread_h92_decompose(data, th)
            out["breads"] = {
                "midpoint": bread_tls(data, th, BreadVariant.MIDPOINT),
                "h92": lo + r,
                "r_norm": np.array([[float(np.linalg.norm(r, 2))]]),
            }
        z = float(ndtri(0.5 * (1.0 + config.ci_level)))
        sig, hit = {}, {}
        theta0 = spec.theta0
        for m in config.variance_methods:
            if m == BOOTSTRAP:
                seed_b = int(np.random.SeedSequence(config.seed, spawn_key=(i, 1))
                             .generate_state(1, np.uint64)[0])
                bc = BootstrapConfig(b=config.bootstrap_b, quantile_level=config.bootstrap_level,
                                     seed=seed_b, fit_config=config.fit_config)
                s = robust_sigma_tlad(data, th, bc).sigma_hat
            else:
                s = sandwich(bread_tls(data, th, m), meat_tls(data, th)).sigma
            sig[m] = s
            half = z * np.sqrt(np.maximum(np.diag(s), 0.0) / spec.n)
            hit[m] = (np.abs(th - theta0) <= half).astype(np.float64)
        out["sigmas"], out["hits"] = sig, hit
    except Exception as exc:  # noqa: BLE001 - tallied, never swallowed silently
        out["error"] = f"{type(exc).__name__}: {exc}"
        out["theta_hat"] = np.full(k, np.nan)
    return out


def _run_chunk(args):
    config, idx = args
    return [_one_rep(config, i) for i in idx]


def emit_histogram(values, bins: int = 50) -> dict:
    """Equal-width histogram on ``[min, max]`` plus the Gaussian MLE ``(mean, sd)``."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size < 2:
        raise ValueError("emit_histogram needs at least two values")
    if bins < 1:
        raise ValueError("bins must be positive")
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        raise ValueError("values have zero range; histogram is undefined")
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return {
        "counts": counts.tolist(),
        "edges": edges.tolist(),
        "mean": float(v.mean()),
        "sd": float(v.std(ddof=0)),
    }


def normality_diagnostic(values) -> dict:
    """Skewness, excess kurtosis and the KS distance to the fitted Gaussian."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size < 8:
        raise ValueError("normality_diagnostic needs at least 8 values")
    mean, sd = float(v.mean()), float(v.std(ddof=0))
    if sd > 0:
        ks = float(stats.kstest(v, "norm", args=(mean, sd)).statistic)
    else:
        ks = 1.0
    return {
        "n": int(v.size),
        "skewness": float(stats.skew(v)),
        "excess_kurtosis": float(stats.kurtosis(v, fisher=True)),
        "ks_statistic": ks,
    }


def ks_critical_value(n: int, alpha: float = 0.001) -> float:
    """Upper ``alpha`` point of the one-sample Kolmogorov statistic for ``n`` draws.

    With the Gaussian fitted to the same data the true null distribution is
    stochastically smaller, so this critical value is conservative.
    """
    return float(stats.kstwo.ppf(1.0 - alpha, n))


def _summarise(config: McConfig, res: McResult) -> dict:
    ok = res.ok
    k = config.dgp.k
    th, sc = res.theta_hat[ok], res.scaled[ok]
    summary: dict[str, Any] = {
        "reps": config.reps,
        "succeeded": int(ok.sum()),
        "failed": len(res.failures),
        "theta_mean": th.mean(axis=0).tolist() if th.size else None,
        "theta_sd": th.std(axis=0, ddof=1).tolist() if len(th) > 1 else None,
        "scaled_mean": sc.mean(axis=0).tolist() if sc.size else None,
        "scaled_var": sc.var(axis=0, ddof=1).tolist() if len(sc) > 1 else None,
        "coverage": {m: np.nanmean(h[ok], axis=0).tolist() for m, h in res.hits.items()},
        "sigma_mean": {m: np.nanmean(s[ok], axis=0).tolist() for m, s in res.sigmas.items()},
        "sigma_median": {m: np.nanmedian(s[ok], axis=0).tolist() for m, s in res.sigmas.items()},
        "bread_mean": {m: np.nanmean(b[ok], axis=0).tolist() for m, b in res.breads.items()},
    }
    hists = []
    for j in range(k):
        try:
            hists.append(emit_histogram(sc[:, j], config.bins))
        except ValueError:
            hists.append(None)
    summary["histograms"] = hists
    if isinstance(config.dgp.variant, TladCounterexample):
        summary["scaling"] = {
            "reference_n": REFERENCE_N,
            "reference_reps": REFERENCE_REPS,
            "n_factor": config.dgp.n / REFERENCE_N,
            "reps_factor": config.reps / REFERENCE_REPS,
        }
    return summary


def run_mc(config: McConfig) -> McResult:
    """Run all replications; raise :class:`McAbort` if more than 5% fail."""
    reps, k = config.reps, config.dgp.k
    if config.threads == 1 or reps == 1:
        rows = _run_chunk((config, range(reps)))
    else:
        nchunks = min(reps, 4 * config.threads)
        chunks = [range(c, reps, nchunks) for c in range(nchunks)]
        rows = []
        with ProcessPoolExecutor(max_workers=config.threads) as ex:
            for part in ex.map(_run_chunk, [(config, c) for c in chunks]):
                rows.extend(part)
    rows.sort(key=lambda r: r["rep"])

    theta = np.full((reps, k), np.nan)
    converged = np.zeros(reps, dtype=bool)
    sigmas = {m: np.full((reps, k, k), np.nan) for m in config.variance_methods}
    hits = {m: np.full((reps, k), np.nan) for m in config.variance_methods}
    breads: dict[str, np.ndarray] = {}
    failures = []
    for r in rows:
        i = r["rep"]
        if "error" in r:
            failures.append((i, r["error"]))
            continue
        theta[i] = r["theta_hat"]
        converged[i] = r["converged"]
        for m in config.variance_methods:
            sigmas[m][i] = r["sigmas"][m]
            hits[m][i] = r["hits"][m]
        for name, b in r.get("breads", {}).items():
            breads.setdefault(name, np.full((reps,) + b.shape, np.nan))[i] = b
    if len(failures) > MAX_FAIL_FRACTION * reps:
        raise McAbort(len(failures), reps, failures[0][1])
    scaled = math.sqrt(config.dgp.n) * (theta - config.dgp.theta0)
    res = McResult(config, theta, scaled, sigmas, hits, breads, converged, failures, {})
    res.summary = _summarise(config, res)
    return res


def write_outputs(result: McResult, out_dir: str | Path) -> tuple[Path, Path]:
    """Per-replication CSV and JSON summary named by the config hash."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    stem = f"mc-{cfg.digest()}"
    k = cfg.dgp.k
    csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
    header = ["rep", "ok"] + [f"theta_hat_{j + 1}" for j in range(k)] \
        + [f"scaled_{j + 1}" for j in range(k)]
    for name in result.breads:
        header += [f"{name}_{a + 1}{b + 1}" for a in range(result.breads[name].shape[1])
                   for b in range(result.breads[name].shape[2])]
    for m in cfg.variance_methods:
        header += [f"{m}_sigma_{a + 1}{b + 1}" for a in range(k) for b in range(k)]
        header += [f"{m}_hit_{j + 1}" for j in range(k)]
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(cfg.reps):
            row = [i, int(result.ok[i])]
            row += [repr(float(v)) for v in result.theta_hat[i]]
            row += [repr(float(v)) for v in result.scaled[i]]
            for b in result.breads.values():
                row += [repr(float(v)) for v in b[i].ravel()]
            for m in cfg.variance_methods:
                row += [repr(float(v)) for v in result.sigmas[m][i].ravel()]
                row += [repr(float(v)) for v in result.hits[m][i]]
            w.writerow(row)
    payload = {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "summary": result.summary,
        "failures": [{"rep": i, "error": e} for i, e in result.failures],
    }
    json_path.write_text(json.dumps(payload, indent=2, default=_json_default))
    return csv_path, json_path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)
