"""Command-line front end; every subcommand prints JSON on stdout."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bootstrap import BootstrapConfig, robust_sigma_tlad
from .core import LossKind, as_theta, load_panel_csv, save_panel_csv
from .dgp import DgpSpec, SmoothExchangeable, TladCounterexample, TlsCounterexample, simulate
from .estimator import FitConfig, fit
from .harness import McAbort, McConfig, run_mc, write_outputs
from .rng import stream
from .variance import BreadVariant, bread_tls, meat_tlad, meat_tls, sandwich

EXIT_ERROR = 1
EXIT_MC_ABORT = 2


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _fit_config(args) -> FitConfig:
    start = None
    if getattr(args, "start", None):
        start = tuple(float(v) for v in np.atleast_1d(json.loads(args.start)))
    return FitConfig(grad_tol=args.tol, initial_theta=start)


def cmd_fit(args) -> int:
    data = load_panel_csv(args.data)
    res = fit(data, args.loss, _fit_config(args))
    _emit(res.to_dict())
    return 0


def cmd_variance(args) -> int:
    data = load_panel_csv(args.data)
    kind = LossKind.parse(args.loss)
    if args.theta is not None:
        theta = as_theta(json.loads(args.theta), data.k)
    else:
        theta = fit(data, kind, FitConfig(grad_tol=args.tol)).theta_hat
    if kind is LossKind.TLS:
        cov = sandwich(bread_tls(data, theta, args.bread, args.zero_tol), meat_tls(data, theta))
        out = cov.to_dict()
    else:
        # the TLAD Hessian involves a density, so only the meat has a plug-in form
        out = {"meat": meat_tlad(data, theta).tolist(),
               "note": "use the bootstrap subcommand for the TLAD covariance"}
    out["theta"] = theta.tolist()
    out["loss"] = kind.value
    out["bread_variant"] = BreadVariant.parse(args.bread).value
    _emit(out)
    return 0


def cmd_bootstrap(args) -> int:
    data = load_panel_csv(args.data)
    theta_hat = fit(data, LossKind.TLAD).theta_hat
    cfg = BootstrapConfig(b=args.b, seed=args.seed, psd_project=args.psd,
                          quantile_level=args.level)
    res = robust_sigma_tlad(data, theta_hat, cfg)
    out = res.to_dict()
    out["theta_hat"] = theta_hat.tolist()
    _emit(out)
    return 0


_DGPS = {
    "tls-ce": lambda a: TlsCounterexample(),
    "tlad-ce": lambda a: TladCounterexample(),
    "smooth": lambda a: SmoothExchangeable(
        k=len(a.theta0), theta0=tuple(a.theta0), rho=a.rho, x_scale=a.x_scale,
        alpha_scale=a.alpha_scale, design=a.design),
}


def cmd_simulate(args) -> int:
    spec = DgpSpec(_DGPS[args.dgp](args), args.n)
    data = simulate(spec, stream(args.seed, 0))
    save_panel_csv(data, args.out)
    _emit({"out": str(args.out), "n": data.n, "k": data.k, "dgp": spec.to_dict()})
    return 0


def cmd_mc(args) -> int:
    cfg = McConfig.from_dict(json.loads(Path(args.config).read_text()))
    try:
        res = run_mc(cfg)
    except McAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MC_ABORT
    csv_path, json_path = write_outputs(res, args.out_dir)
    _emit({"csv": str(csv_path), "json": str(json_path),
           "succeeded": res.summary["succeeded"], "failed": res.summary["failed"]})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trimpanel",
                                description="Trimmed LS / LAD for censored two-period panels")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="estimate theta")
    f.add_argument("--data", required=True, type=Path)
    f.add_argument("--loss", choices=["tls", "tlad"], default="tls")
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--start", help="JSON list with the starting value")
    f.set_defaults(func=cmd_fit)

    v = sub.add_parser("variance", help="plug-in sandwich covariance")
    v.add_argument("--data", required=True, type=Path)
    v.add_argument("--loss", choices=["tls", "tlad"], default="tls")
    v.add_argument("--bread", choices=[b.value for b in BreadVariant], default="midpoint")
    g = v.add_mutually_exclusive_group()
    g.add_argument("--theta", help="JSON list; evaluate at this value")
    g.add_argument("--fit", action="store_true", help="evaluate at the fitted value (default)")
    v.add_argument("--zero-tol", type=float, default=0.0,
                   help="treat |dx'theta| <= tol as zero (default: exact)")
    v.add_argument("--tol", type=float, default=1e-8)
    v.set_defaults(func=cmd_variance)

    b = sub.add_parser("bootstrap", help="robust bootstrap covariance for TLAD")
    b.add_argument("--data", required=True, type=Path)
    b.add_argument("--b", type=int, default=500)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--level", type=float, default=0.9)
    b.add_argument("--psd", action="store_true", help="project onto the PSD cone")
    b.set_defaults(func=cmd_bootstrap)

    s = sub.add_parser("simulate", help="write a simulated panel to CSV")
    s.add_argument("--dgp", choices=sorted(_DGPS), required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--theta0", type=float, nargs="+", default=[0.0])
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--x-scale", type=float, default=1.0)
    s.add_argument("--alpha-scale", type=float, default=0.0)
    s.add_argument("--design", choices=["fixed", "gaussian"], default="fixed")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("mc", help="Monte Carlo experiment from a JSON config")
    m.add_argument("--config", required=True, type=Path)
    m.add_argument("--out-dir", type=Path, default=Path("."))
    m.set_defaults(func=cmd_mc)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
