"""Command-line entry point ``epsmech``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from typing import Any, Sequence

import numpy as np

from . import delayed as dl
from .deterministic import build_hard_soft, hard_soft_reporting, optimal_det
from .distributions import ValueDistribution, from_config
from .dual import dual_value, optimize_beta
from .lp import discretize, solve
from .mechanism import Mechanism, MechanismError, ReportingMap, posted_price, sampled_mechanism, verify
from .renewal import gamma, renewal_oracle
from .scaling import ScalingOptions, default_eps_grid, emit_plotdata, run_scaling


def load_json(path: str) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_dist(path: str) -> ValueDistribution:
    return from_config(load_json(path))


def mechanism_from_dict(data: dict[str, Any]) -> tuple[Mechanism, ReportingMap | None]:
    """Rebuild a mechanism (and its declared reporting map, if any) from its JSON form."""
    kind = data.get("kind")
    v_bar = float(data.get("v_bar", 1.0))
    params = data.get("params", {})
    if kind == "posted-price":
        return posted_price(float(params["price"]), v_bar), None
    if kind == "hard-soft-floor":
        p = float(params["hard"])
        return build_hard_soft(p, float(params["soft"]), v_bar), hard_soft_reporting(p)
    if kind == "perturbed-delayed":
        p = dl.DelayedParams(**{k: float(params[k]) for k in ("eps", "mu", "delta", "p_star", "v_bar")})
        return dl.mechanism_from_params(p)
    if kind == "lp-discrete":
        return sampled_mechanism(params["values"], params["x"], params["t"], v_bar), None
    if "grid" in data:
        g = data["grid"]
        return sampled_mechanism(g["v"], g["x"], g["t"], v_bar, kind=kind or "custom"), None
    raise MechanismError(f"cannot rebuild mechanism of kind {kind!r}")


def _csv_out(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format(x, ".17g") if isinstance(x, float) else x for x in r])


def _dump(obj: Any) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_scaling(args) -> int:
    dist = load_dist(args.dist)
    grid = default_eps_grid(args.eps_min, args.eps_max, args.points)
    opts = ScalingOptions(with_lp=args.with_lp, lp_n=args.n, with_dual=not args.no_dual)
    report = run_scaling(dist, grid, args.alpha, opts)
    emit_plotdata(report, args.out)
    _dump(report.summary())
    ok = all(r.status == "ok" for r in report.rows)
    if args.check_slope:
        ok &= abs(report.fitted_slopes["delayed"] - report.predicted_slope) <= 0.08
    return 0 if ok else 1


def cmd_verify(args) -> int:
    dist = load_dist(args.dist)
    mech, reporting = mechanism_from_dict(load_json(args.mech))
    rep = verify(mech, dist, args.eps, grid_size=args.grid, tol=args.tol, reporting=reporting)
    _dump(rep.to_dict())
    return 0 if rep.passed else 1


def cmd_det_opt(args) -> int:
    dist = load_dist(args.dist)
    r, value, gain = optimal_det(dist, args.eps)
    _csv_out(["eps", "r_star", "value", "gain"], [[args.eps, r, value, gain]])
    return 0


def cmd_delayed_build(args) -> int:
    dist = load_dist(args.dist)
    if args.mu is None:
        if dist.envelope is None:
            raise SystemExit("--mu is required for distributions without an envelope")
        mu = dl.choose_mu(args.eps, dist.envelope.alpha, dist)
    else:
        mu = args.mu
    mech, reporting, params = dl.build_delayed(dist, args.eps, mu)
    rep = verify(mech, dist, args.eps, reporting=reporting)
    direct, formula = dl.delayed_revenue(dist, mech, params)
    _dump({
        "mechanism": mech.to_dict(grid_size=args.grid),
        "verification": rep.to_dict(),
        "revenue": direct,
        "revenue_formula": formula,
        "gain": direct - dist.r_star,
    })
    return 0 if rep.passed else 1


def cmd_gamma(args) -> int:
    if args.t is None:
        raise SystemExit("gamma needs --t or the selftest action")
    _csv_out(["t", "gamma", "renewal_m"], [[args.t, gamma(args.t), math.exp(args.t + 1) * gamma(args.t) - 1.0]])
    return 0


def cmd_gamma_selftest(args) -> int:
    ok = gamma(0.0) == 1.0
    t = np.arange(0, 30_001) * 1e-3
    vals = np.array([gamma(x) for x in t])
    lower = 2.0 * (t + 1.0) * np.exp(-1.0 - t)
    upper = 2.0 * (t + 2.0) * np.exp(-(t + 1.0))
    bounds_ok = bool(np.all(vals > lower) and np.all(vals <= upper))
    rows = []
    for s in (0.5, 1.5, 5.0):
        est, se = renewal_oracle(s, args.samples, args.seed)
        exact = math.exp(s + 1.0) * gamma(s) - 1.0
        z = abs(est - exact) / se
        rows.append([s, exact, est, se, z])
        ok &= z <= 3.0
    _csv_out(["t", "exact", "monte_carlo", "stderr", "z"], rows)
    sys.stdout.write(f"bounds_ok={int(bounds_ok)} gamma0_exact={int(gamma(0.0) == 1.0)}\n")
    return 0 if ok and bounds_ok else 1


def cmd_dual(args) -> int:
    dist = load_dist(args.dist)
    if args.beta is not None and not args.auto_beta:
        cert = dual_value(dist, args.eps, args.beta)
    else:
        alpha = args.alpha or (dist.envelope.alpha if dist.envelope else None)
        if alpha is None:
            raise SystemExit("--auto-beta needs --alpha or a distribution envelope")
        _, cert = optimize_beta(dist, args.eps, alpha)
    _dump(cert.to_dict())
    _csv_out(["eps", "beta", "K", "phi1", "phi2", "bound", "gain_bound"],
             [[args.eps, cert.beta, cert.K, cert.phi1, cert.phi2, cert.bound, cert.bound - dist.r_star]])
    return 0


def cmd_lp(args) -> int:
    dist = load_dist(args.dist)
    sol = solve(discretize(dist, args.n, args.eps))
    _csv_out(["eps", "n", "status", "value"], [[args.eps, args.n, sol.status, sol.value]])
    if args.vectors:
        inst = discretize(dist, args.n, args.eps)
        _csv_out(["v", "mass", "x", "t"], list(zip(inst.values.tolist(), inst.masses.tolist(),
                                                   sol.x.tolist(), sol.t.tolist())))
    return 0 if sol.status == "optimal" else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="epsmech", description="eps-IC single-buyer mechanism toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scaling", help="gain-vs-eps sweep with slope fits")
    p.add_argument("--dist", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--eps-min", type=float, default=1e-5)
    p.add_argument("--eps-max", type=float, default=1e-2)
    p.add_argument("--points", type=int, default=8)
    p.add_argument("--with-lp", action="store_true")
    p.add_argument("--n", type=int, default=60)
    p.add_argument("--no-dual", action="store_true")
    p.add_argument("--check-slope", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("verify", help="grid check of IR and eps-IC")
    p.add_argument("--mech", required=True)
    p.add_argument("--dist", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--grid", type=int, default=2_000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("det-opt", help="optimal hard/soft floor")
    p.add_argument("--dist", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.set_defaults(func=cmd_det_opt)

    p = sub.add_parser("delayed", help="perturbed delayed mechanism")
    dsub = p.add_subparsers(dest="action", required=True)
    b = dsub.add_parser("build")
    b.add_argument("--dist", required=True)
    b.add_argument("--eps", type=float, required=True)
    b.add_argument("--mu", type=float)
    b.add_argument("--grid", type=int, default=0, help="also emit a sampled grid of this size")
    b.set_defaults(func=cmd_delayed_build)

    p = sub.add_parser("gamma", help="evaluate Gamma(t) or run its self-test")
    p.add_argument("action", nargs="?", choices=["selftest"])
    p.add_argument("--t", type=float)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=lambda a: cmd_gamma_selftest(a) if a.action == "selftest" else cmd_gamma(a))

    p = sub.add_parser("dual", help="path-based dual upper bound")
    p.add_argument("--dist", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--beta", type=float)
    p.add_argument("--auto-beta", action="store_true")
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_dual)

    p = sub.add_parser("lp", help="discretized LP optimum")
    p.add_argument("--dist", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--vectors", action="store_true")
    p.set_defaults(func=cmd_lp)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return int(args.func(args))


if __name__ == "__main__":
    sys.exit(main())
