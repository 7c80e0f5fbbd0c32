"""Direct selling mechanisms for one buyer and their grid verification."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .distributions import ValueDistribution
from .quadrature import adaptive_simpson

Array = np.ndarray
VecFn = Callable[[Array], Array]

DEFAULT_TOL = 1e-8
REPORT_GRID = 10_000


class MechanismError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    """Allocation and transfer rules on ``[lo, hi)`` (the last segment is closed)."""

    lo: float
    hi: float
    x: VecFn
    t: VecFn


@dataclass(eq=False)
class Mechanism:
    v_bar: float
    segments: list[Segment]
    kind: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.segments:
            raise MechanismError("a mechanism needs at least one segment")
        edges = [self.segments[0].lo]
        for seg in self.segments:
            if seg.hi < seg.lo or abs(seg.lo - edges[-1]) > 1e-15 * max(1.0, self.v_bar):
                raise MechanismError(f"segments do not partition [0, v_bar] at {seg.lo}")
            edges.append(seg.hi)
        if abs(edges[0]) > 0 or abs(edges[-1] - self.v_bar) > 1e-12 * max(1.0, self.v_bar):
            raise MechanismError("segments must cover exactly [0, v_bar]")
        self._edges = np.array([s.lo for s in self.segments] + [self.v_bar])
        self._grid_cache: dict[int, tuple[Array, Array, Array]] = {}

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(float(e) for e in self._edges[1:-1])

    def _eval(self, v, which: str) -> Array:
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1)
        idx = np.searchsorted(self._edges, flat, side="right") - 1
        idx = np.clip(idx, 0, len(self.segments) - 1)
        out = np.empty(flat.shape)
        for i in np.unique(idx):
            sel = idx == i
            out[sel] = getattr(self.segments[i], which)(flat[sel])
        return out.reshape(v.shape)

    def x(self, v) -> Array:
        return self._eval(v, "x")

    def t(self, v) -> Array:
        return self._eval(v, "t")

    def grid(self, n: int) -> tuple[Array, Array, Array]:
        """Dense sampling ``(v_i, x_i, t_i)`` on ``n`` uniform points plus breakpoints."""
        if n not in self._grid_cache:
            v = np.union1d(np.linspace(0.0, self.v_bar, n), self._edges)
            self._grid_cache[n] = (v, self.x(v), self.t(v))
        return self._grid_cache[n]

    def to_dict(self, grid_size: int | None = None) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "v_bar": self.v_bar, "params": dict(self.params)}
        if grid_size:
            v, x, t = self.grid(grid_size)
            out["grid"] = {"v": v.tolist(), "x": x.tolist(), "t": t.tolist()}
        return out


@dataclass(eq=False)
class ReportingMap:
    """A declared best-response map ``v -> v*(v)`` with its generalized inverse."""

    kind: str
    forward: VecFn
    inverse_w: VecFn | None = None
    breakpoints: tuple[float, ...] = ()
    params: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class VerificationReport:
    min_ir_slack: float
    min_ic_slack: float
    worst_value: float
    worst_report: float
    grid_size: int
    passed: bool
    eps: float
    tol: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


# ---------------------------------------------------------------------------
# Builders for the simple families


def _const(c: float) -> VecFn:
    return lambda v: np.full(np.shape(v), c, dtype=float)


def _identity(v):
    return np.asarray(v, dtype=float).copy()


def posted_price(price: float, v_bar: float) -> Mechanism:
    if not (0.0 <= price <= v_bar):
        raise MechanismError("price must lie in [0, v_bar]")
    segs = []
    if price > 0.0:
        segs.append(Segment(0.0, price, _const(0.0), _const(0.0)))
    segs.append(Segment(price, v_bar, _const(1.0), _const(price)))
    return Mechanism(v_bar, segs, kind="posted-price", params={"price": price})


def truthful_map() -> ReportingMap:
    return ReportingMap("truthful", _identity, _identity)


def sampled_mechanism(values: Sequence[float], x: Sequence[float], t: Sequence[float], v_bar: float,
                      kind: str = "lp-discrete") -> Mechanism:
    """Step mechanism: a value in ``[v_i, v_{i+1})`` gets the menu item of grid type ``i``.

    Values below the first grid type are excluded (x = t = 0).
    """
    values = np.asarray(values, dtype=float)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    segs = []
    if values[0] > 0.0:
        segs.append(Segment(0.0, float(values[0]), _const(0.0), _const(0.0)))
    edges = list(values[1:]) + [v_bar]
    for i, hi in enumerate(edges):
        segs.append(Segment(float(values[i]), float(hi), _const(float(x[i])), _const(float(t[i]))))
    return Mechanism(v_bar, segs, kind=kind, params={"values": values.tolist(), "x": x.tolist(), "t": t.tolist()})


# ---------------------------------------------------------------------------
# Operations


def expected_revenue(mech: Mechanism, dist: ValueDistribution, tol: float = 1e-11) -> float:
    """``E_v[t(v)]`` by adaptive Simpson with mechanism and density breakpoints as panel edges."""
    bps = set(mech.breakpoints) | set(dist.breakpoints)
    return adaptive_simpson(lambda v: mech.t(v) * dist.pdf(v), 0.0, mech.v_bar, tol=tol, breakpoints=bps)


def _report_candidates(mech: Mechanism, grid: int, extra: Array | None) -> Array:
    reports = np.union1d(np.linspace(0.0, mech.v_bar, grid), mech._edges)
    if extra is not None and np.size(extra):
        extra = np.clip(np.asarray(extra, dtype=float).reshape(-1), 0.0, mech.v_bar)
        reports = np.union1d(reports, extra)
    return reports


def _best_responses(mech: Mechanism, values: Array, reports: Array, chunk: int = 256) -> tuple[Array, Array]:
    """Max utility and chosen report per value; ties go to the larger transfer, then the smaller report."""
    xr = mech.x(reports)
    tr = mech.t(reports)
    # reports are sorted ascending, so argmax picks the smallest report among
    # equal keys; the lexicographic key is (utility, transfer)
    u_out = np.empty(values.shape)
    r_out = np.empty(values.shape)
    for start in range(0, values.size, chunk):
        vv = values[start:start + chunk, None]
        util = vv * xr[None, :] - tr[None, :]
        best = util.max(axis=1, keepdims=True)
        ties = util >= best - 1e-14 * np.maximum(1.0, np.abs(best))
        tkey = np.where(ties, tr[None, :], -np.inf)
        j = np.argmax(tkey, axis=1)
        u_out[start:start + chunk] = best[:, 0]
        r_out[start:start + chunk] = reports[j]
    return u_out, r_out


def best_response(mech: Mechanism, v: float, grid: int = REPORT_GRID,
                  extra_reports: Sequence[float] | None = None) -> tuple[float, float]:
    """Best report for value ``v`` over a dense report grid plus all segment endpoints."""
    reports = _report_candidates(mech, grid, None if extra_reports is None else np.asarray(extra_reports))
    u, r = _best_responses(mech, np.array([float(v)]), reports)
    return float(u[0]), float(r[0])


def verify(
    mech: Mechanism,
    dist: ValueDistribution | None,
    eps: float,
    grid_size: int = 2_000,
    tol: float = DEFAULT_TOL,
    report_grid: int = REPORT_GRID,
    reporting: ReportingMap | None = None,
) -> VerificationReport:
    """Grid check of IR and eps-IC.

    The buyer's utility ``u(v)`` is the max over a report grid, the segment
    endpoints, the value grid itself and, when given, the declared reports
    ``reporting.forward(v)``.
    """
    if eps < 0:
        raise MechanismError("eps must be non-negative")
    v_bar = mech.v_bar if dist is None else dist.v_bar
    values = np.union1d(np.linspace(0.0, v_bar, grid_size), mech._edges)
    extra = values if reporting is None else np.concatenate([values, reporting.forward(values)])
    reports = _report_candidates(mech, report_grid, extra)
    u, r = _best_responses(mech, values, reports)
    truthful = values * mech.x(values) - mech.t(values)
    ir = truthful
    ic = truthful - (u - eps)
    i_ir = int(np.argmin(ir))
    i_ic = int(np.argmin(ic))
    worst = i_ic if ic[i_ic] <= ir[i_ir] else i_ir
    min_ir, min_ic = float(ir[i_ir]), float(ic[i_ic])
    return VerificationReport(
        min_ir_slack=min_ir,
        min_ic_slack=min_ic,
        worst_value=float(values[worst]),
        worst_report=float(r[worst]),
        grid_size=int(values.size),
        passed=bool(min_ir >= -tol and min_ic >= -tol),
        eps=float(eps),
        tol=float(tol),
    )


def approximate_monotonicity_check(mech: Mechanism, eps: float, points: int = 500) -> float:
    """``min_{v, v'} (v - v')(x(v) - x(v')) + 2 eps`` on a coarse grid."""
    v = np.union1d(np.linspace(0.0, mech.v_bar, points), mech._edges)
    x = mech.x(v)
    prod = (v[:, None] - v[None, :]) * (x[:, None] - x[None, :])
    return float(prod.min() + 2.0 * eps)


def _trapezoid_with_jumps(g: VecFn, upper: float, jumps: Sequence[float], points: int) -> tuple[Array, Array]:
    """Cumulative trapezoid of ``g`` on ``[0, upper]``; nodes straddle every jump."""
    base = np.linspace(0.0, upper, points)
    js = [j for j in jumps if 0.0 < j < upper]
    nodes = np.union1d(base, js)
    left = np.nextafter(np.asarray(js), -np.inf) if js else np.empty(0)
    right = np.nextafter(np.asarray(js), np.inf) if js else np.empty(0)
    nodes = np.union1d(nodes, np.concatenate([left, right]))
    vals = g(nodes)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(nodes))])
    return nodes, cum


def envelope_utility_check(mech: Mechanism, reporting: ReportingMap, eps: float = 0.0,
                           points: int = 10_000, report_grid: int = REPORT_GRID) -> float:
    """Max gap between the grid best-response utility and ``u(0) + int_0^v x(v*(s)) ds``."""
    nodes, cum = _trapezoid_with_jumps(
        lambda s: mech.x(reporting.forward(s)), mech.v_bar, reporting.breakpoints, points
    )
    reports = _report_candidates(mech, report_grid, np.concatenate([nodes, reporting.forward(nodes)]))
    u, _ = _best_responses(mech, nodes, reports)
    return float(np.max(np.abs(u - u[0] - cum)))


def nisan_bound(dist: ValueDistribution, eps: float) -> float:
    """Rounding bound on the gain from eps-IC: ``2 sqrt(eps) r* + sqrt(eps)``."""
    if not (0.0 < eps <= 0.25):
        raise MechanismError("the rounding bound needs eps in (0, 1/4] (delta = sqrt(eps) <= 1/2)")
    root = math.sqrt(eps)
    return 2.0 * root * dist.r_star + root
