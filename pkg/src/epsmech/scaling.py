"""Gain-versus-eps sweeps, log-log slope fits and bit-stable CSV/JSON output."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .delayed import admissible_k, choose_mu_k, delayed_revenue, mechanism_from_params
from .deterministic import optimal_det
from .distributions import DistributionError, ValueDistribution, from_config
from .dual import optimize_beta
from .lp import discretize, solve
from .mechanism import MechanismError, nisan_bound, verify

log = logging.getLogger(__name__)

WORKERS_ENV = "EPSMECH_WORKERS"
MIN_FIT_POINTS = 5


def default_eps_grid(eps_min: float = 1e-5, eps_max: float = 1e-2, points: int = 8) -> list[float]:
    return [float(e) for e in np.logspace(math.log10(eps_min), math.log10(eps_max), points)]


@dataclass
class ScalingOptions:
    with_lp: bool = False
    lp_n: int = 60
    verify_grid: int = 2_000
    with_dual: bool = True
    common_k: bool = True  # one mu constant for the whole grid keeps the slope fit clean
    workers: int | None = None


@dataclass
class ScalingRow:
    eps: float
    det_r: float = math.nan
    det_value: float = math.nan
    det_gain: float = math.nan
    mu_k: float = math.nan
    mu: float = math.nan
    delta: float = math.nan
    delayed_value: float = math.nan
    delayed_formula: float = math.nan
    delayed_gain: float = math.nan
    verified: bool = False
    min_ir_slack: float = math.nan
    min_ic_slack: float = math.nan
    beta: float = math.nan
    K: int = -1
    dual_bound: float = math.nan
    dual_gain_bound: float = math.nan
    lp_value: float = math.nan
    lp_gain: float = math.nan
    nisan: float = math.nan
    status: str = "ok"


@dataclass
class ScalingReport:
    alpha: float
    eps_grid: list[float]
    det_gains: list[float]
    delayed_gains: list[float]
    dual_gain_bounds: list[float]
    lp_gains: list[float] | None
    fitted_slopes: dict[str, float]
    predicted_slope: float
    rows: list[ScalingRow] = field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "eps_grid": self.eps_grid,
            "fitted_slopes": self.fitted_slopes,
            "predicted_slope": self.predicted_slope,
            "excluded": [r.eps for r in self.rows if r.status != "ok"],
        }


def fit_slope(eps: Sequence[float], gains: Sequence[float]) -> float:
    """Least-squares slope of ``log gain`` on ``log eps`` over rows with positive finite gain."""
    e = np.asarray(eps, dtype=float)
    g = np.asarray(gains, dtype=float)
    keep = np.isfinite(g) & (g > 0)
    if keep.sum() < MIN_FIT_POINTS:
        return math.nan
    return float(np.polyfit(np.log(e[keep]), np.log(g[keep]), 1)[0])


def _run_point(dist: ValueDistribution, alpha: float, eps: float, k: float | None,
               opts: ScalingOptions) -> ScalingRow:
    row = ScalingRow(eps=eps)
    r_star = dist.r_star
    try:
        row.nisan = nisan_bound(dist, eps)
        row.det_r, row.det_value, row.det_gain = optimal_det(dist, eps)
        if k is None:
            _, k = choose_mu_k(eps, alpha, dist)
        params = admissible_k(eps, alpha, dist, k, check_gain=False)
        if params is None:
            raise MechanismError(f"K={k} not admissible at eps={eps}")
        mech, reporting = mechanism_from_params(params)
        row.mu_k, row.mu, row.delta = k, params.mu, params.delta
        rep = verify(mech, dist, eps, grid_size=opts.verify_grid, reporting=reporting)
        row.verified = rep.passed
        row.min_ir_slack, row.min_ic_slack = rep.min_ir_slack, rep.min_ic_slack
        row.delayed_value, row.delayed_formula = delayed_revenue(dist, mech, params)
        row.delayed_gain = row.delayed_value - r_star
        if not rep.passed:
            row.status = "unverified"
        if opts.with_dual:
            row.beta, cert = optimize_beta(dist, eps, alpha)
            row.K, row.dual_bound = cert.K, cert.bound
            row.dual_gain_bound = cert.bound - r_star
        if opts.with_lp:
            sol = solve(discretize(dist, opts.lp_n, eps))
            if sol.status == "optimal":
                row.lp_value = sol.value
                row.lp_gain = sol.value - r_star
    except (DistributionError, MechanismError, ArithmeticError, RuntimeError) as exc:
        row.status = f"error: {exc}"
    return row


def _worker(cfg: dict[str, Any], alpha: float, eps: float, k: float | None, opts: ScalingOptions) -> ScalingRow:
    return _run_point(from_config(cfg), alpha, eps, k, opts)


def _common_k(dist: ValueDistribution, alpha: float, eps_grid: Sequence[float]) -> float | None:
    ks = []
    for e in eps_grid:
        try:
            ks.append(choose_mu_k(e, alpha, dist)[1])
        except (DistributionError, MechanismError):
            continue
    return min(ks) if ks else None


def worker_count(opts: ScalingOptions) -> int:
    if opts.workers is not None:
        return max(1, opts.workers)
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def run_scaling(dist: ValueDistribution, eps_grid: Sequence[float] | None = None, alpha: float | None = None,
                options: ScalingOptions | None = None) -> ScalingReport:
    """Run every construction at each eps and fit log-log slopes of the gains.

    Per-eps failures are recorded in the row (status) and excluded from the
    fits; they never abort the sweep. Rows come back ordered by eps whatever
    the worker count.
    """
    opts = options or ScalingOptions()
    eps_grid = sorted(float(e) for e in (eps_grid or default_eps_grid()))
    if len(eps_grid) < MIN_FIT_POINTS:
        raise ValueError(f"need at least {MIN_FIT_POINTS} eps points")
    if alpha is None:
        if dist.envelope is None:
            raise DistributionError("alpha is required when the distribution has no envelope")
        alpha = dist.envelope.alpha
    k = _common_k(dist, alpha, eps_grid) if opts.common_k else None
    workers = worker_count(opts)
    cfg = None
    if workers > 1:
        try:
            cfg = dist.to_config()
        except DistributionError:
            log.info("distribution has no config form; running the sweep serially")
    if workers > 1 and cfg is not None:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_worker, cfg, alpha, e, k, opts) for e in eps_grid]
            rows = [f.result() for f in futures]
    else:
        rows = [_run_point(dist, alpha, e, k, opts) for e in eps_grid]

    def column(name: str) -> list[float]:
        return [getattr(r, name) if r.status == "ok" else math.nan for r in rows]

    det, dlyd, dual = column("det_gain"), column("delayed_gain"), column("dual_gain_bound")
    lp = column("lp_gain") if opts.with_lp else None
    slopes = {"det": fit_slope(eps_grid, det), "delayed": fit_slope(eps_grid, dlyd),
              "dual": fit_slope(eps_grid, dual)}
    if lp is not None:
        slopes["lp"] = fit_slope(eps_grid, lp)
    return ScalingReport(alpha, list(eps_grid), det, dlyd, dual, lp, slopes,
                         alpha / (2.0 * alpha - 1.0), rows)


# ---------------------------------------------------------------------------
# Output


def _fmt(x: Any) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return "nan" if math.isnan(x) else format(x, ".17g")
    return str(x)


def rows_csv(report: ScalingReport) -> str:
    names = list(ScalingRow.__dataclass_fields__)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for r in report.rows:
        writer.writerow([_fmt(getattr(r, n)) for n in names])
    return buf.getvalue()


def plot_csv(report: ScalingReport) -> str:
    """Gain curves plus reference lines ``eps``, ``eps^{alpha/(2 alpha - 1)}``, ``eps^{1/2}``.

    The reference lines pass through the first finite delayed gain.
    """
    eps = np.asarray(report.eps_grid)
    dl = np.asarray(report.delayed_gains, dtype=float)
    finite = np.flatnonzero(np.isfinite(dl) & (dl > 0))
    i0 = int(finite[0]) if finite.size else 0
    anchor_e, anchor_g = eps[i0], dl[i0] if finite.size else math.nan
    refs = {
        "ref_linear": anchor_g * eps / anchor_e,
        "ref_rate": anchor_g * (eps / anchor_e) ** report.predicted_slope,
        "ref_sqrt": anchor_g * np.sqrt(eps / anchor_e),
    }
    header = ["eps", "det", "delayed", "dual"] + (["lp"] if report.lp_gains is not None else []) + list(refs)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for i, e in enumerate(report.eps_grid):
        vals = [e, report.det_gains[i], report.delayed_gains[i], report.dual_gain_bounds[i]]
        if report.lp_gains is not None:
            vals.append(report.lp_gains[i])
        vals += [float(refs[k][i]) for k in refs]
        writer.writerow([_fmt(float(v)) for v in vals])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_plotdata(report: ScalingReport, path: str | os.PathLike) -> None:
    """Write ``plotdata.csv``, ``scaling.csv`` and ``summary.json`` into directory ``path``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    _write(out / "plotdata.csv", plot_csv(report))
    _write(out / "scaling.csv", rows_csv(report))
    summary = json.dumps(report.summary(), sort_keys=True, indent=2, default=_fmt) + "\n"
    _write(out / "summary.json", summary)


def report_dict(report: ScalingReport) -> dict[str, Any]:
    out = asdict(report)
    out["rows"] = [asdict(r) for r in report.rows]
    return out
