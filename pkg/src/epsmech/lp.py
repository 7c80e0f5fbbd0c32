"""Brute-force optimum of the discretized eps-IC revenue problem.

Primal, over grid types ``i``:

    max  sum_i f_i t_i
    s.t. t_i - v_i x_i                       <= 0     (IR)
         v_i x_j - t_j - v_i x_i + t_i       <= eps   (IC, i != j)
         x_i                                 <= 1
         x >= 0, t free

The primal has ``n^2 + n`` rows, so its tableau is quadratic in size in both
directions. Its dual has only ``2n`` equality rows:

    min  b^T y   s.t.  A_x^T y - s = 0,  A_t^T y = f,  y, s >= 0

which is solved with a two-phase revised simplex (dense basis inverse,
implicit columns). The primal ``(x, t)`` are the dual's row prices
``c_B B^{-1}`` and are re-checked against every primal constraint.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .distributions import ValueDistribution

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-11
# smallest accepted pivot element, tried in order; zero-mass cells make the dual very degenerate
RATIO_TOLS = (1e-7, 1e-6, 1e-9)
FEAS_TOL = 1e-9
DEGENERATE_SWITCH = 50  # consecutive degenerate pivots before switching to Bland's rule


@dataclass(frozen=True)
class LPInstance:
    values: np.ndarray
    masses: np.ndarray
    eps: float

    def __post_init__(self) -> None:
        if np.any(self.masses < 0) or abs(float(np.sum(self.masses)) - 1.0) > 1e-12:
            raise ValueError("masses must be non-negative and sum to 1")
        if np.any(np.diff(self.values) <= 0):
            raise ValueError("values must be strictly ascending")

    @property
    def n(self) -> int:
        return int(self.values.size)


@dataclass
class LPSolution:
    value: float
    x: np.ndarray
    t: np.ndarray
    status: str
    pivots: int = 0
    diagnostics: dict[str, Any] = field(default_factory=dict)


def discretize(dist: ValueDistribution, n: int, eps: float) -> LPInstance:
    """Cell midpoints of a uniform ``n``-cell partition, masses ``F(right) - F(left)``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    edges = np.linspace(0.0, dist.v_bar, n + 1)
    cdf = dist.cdf(edges)
    cdf[0], cdf[-1] = 0.0, 1.0
    masses = np.diff(cdf)
    masses = masses / math.fsum(masses)
    return LPInstance(0.5 * (edges[:-1] + edges[1:]), masses, float(eps))


def check_primal(inst: LPInstance, x: np.ndarray, t: np.ndarray, tol: float = FEAS_TOL) -> float:
    """Largest violation of any primal constraint (independent of solver state)."""
    v = inst.values
    ir = t - v * x
    util = v[:, None] * x[None, :] - t[None, :]
    truthful = v * x - t
    ic = util - truthful[:, None] - inst.eps
    np.fill_diagonal(ic, -np.inf)
    return float(max(ir.max(), ic.max(), (x - 1.0).max(), (-x).max()))


class _DualColumns:
    """Implicit columns of the dual problem.

    Rows are ``x_0..x_{n-1}, t_0..t_{n-1}``. Column blocks, in index order:
    IR_i, IC_(i,j) for i != j (row-major), cap_i, surplus_i, artificial_r.
    Every structural column has at most four nonzeros, so all reduced costs
    come from the row prices in O(n^2).
    """

    def __init__(self, inst: LPInstance):
        n = self.n = inst.n
        self.v = inst.values
        self.eps = inst.eps
        self.ii, self.jj = np.nonzero(~np.eye(n, dtype=bool))
        self.n_ic = self.ii.size
        self.o_ic = n
        self.o_cap = n + self.n_ic
        self.o_sur = self.o_cap + n
        self.o_art = self.o_sur + n
        self.total = self.o_art + 2 * n
        self.cost = np.concatenate([np.zeros(n), np.full(self.n_ic, inst.eps), np.ones(n),
                                    np.zeros(n), np.zeros(2 * n)])

    def column(self, c: int) -> np.ndarray:
        n, v = self.n, self.v
        a = np.zeros(2 * n)
        if c < self.o_ic:
            a[c], a[n + c] = -v[c], 1.0
        elif c < self.o_cap:
            i, j = self.ii[c - self.o_ic], self.jj[c - self.o_ic]
            a[j] += v[i]
            a[n + j] -= 1.0
            a[i] -= v[i]
            a[n + i] += 1.0
        elif c < self.o_sur:
            a[c - self.o_cap] = 1.0
        elif c < self.o_art:
            a[c - self.o_sur] = -1.0
        else:
            a[c - self.o_art] = 1.0
        return a

    def products(self, pi: np.ndarray) -> np.ndarray:
        """``pi^T a_c`` for every column ``c``."""
        n, v = self.n, self.v
        px, pt = pi[:n], pi[n:]
        ir = -v * px + pt
        full = v[:, None] * (px[None, :] - px[:, None]) - pt[None, :] + pt[:, None]
        ic = full[self.ii, self.jj]
        return np.concatenate([ir, ic, px, -px, pi])


def _revised_simplex(cols: _DualColumns, cost: np.ndarray, rhs: np.ndarray, basis: np.ndarray,
                     allowed: np.ndarray, max_pivots: int, ratio_tol: float, refactor: int = 64
                     ) -> tuple[str, int, np.ndarray, np.ndarray]:
    """Minimize ``cost . y`` from a feasible ``basis``; returns status, pivots, basis inverse, x_B.

    Dantzig pricing, Bland's rule after a run of degenerate pivots; ratio-test
    ties go to the lowest basic index.
    """
    m = basis.size
    B = np.column_stack([cols.column(int(c)) for c in basis])
    binv = np.linalg.inv(B)
    xb = binv @ rhs
    pivots, degenerate = 0, 0
    while pivots < max_pivots:
        pi = cost[basis] @ binv
        red = cost - cols.products(pi)
        cand = np.flatnonzero(allowed & (red < -PIVOT_TOL))
        if cand.size == 0:
            return "optimal", pivots, binv, xb
        if degenerate >= DEGENERATE_SWITCH:
            c = int(cand[0])
        else:
            c = int(cand[np.argmin(red[cand])])
        d = binv @ cols.column(c)
        pos = np.flatnonzero(d > ratio_tol)
        if pos.size == 0:
            return "unbounded", pivots, binv, xb
        ratios = np.maximum(xb[pos], 0.0) / d[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
        r = int(ties[np.argmin(basis[ties])])
        degenerate = degenerate + 1 if xb[r] <= PIVOT_TOL else 0
        step = xb[r] / d[r]
        xb -= step * d
        xb[r] = step
        pr = binv[r] / d[r]
        binv -= np.outer(d, pr)
        binv[r] = pr
        basis[r] = c
        pivots += 1
        if pivots % refactor == 0:
            B = np.column_stack([cols.column(int(k)) for k in basis])
            binv = np.linalg.inv(B)
            xb = binv @ rhs
    return "numerical-failure", pivots, binv, xb


def solve(inst: LPInstance, max_pivots: int = 200_000) -> LPSolution:
    """Exact optimum of the discrete problem via its dual; see the module docstring.

    A singular basis or an exhausted pivot budget is retried with the next
    pivot threshold in ``RATIO_TOLS``.
    """
    sol = None
    for tol in RATIO_TOLS:
        try:
            sol = _solve(inst, max_pivots, tol)
        except np.linalg.LinAlgError as exc:
            log.info("LP basis became singular with pivot threshold %g: %s", tol, exc)
            continue
        if sol.status != "numerical-failure":
            return sol
        log.info("LP numerical failure with pivot threshold %g; retrying", tol)
    if sol is None:
        n = inst.n
        return LPSolution(math.nan, np.full(n, math.nan), np.full(n, math.nan), "numerical-failure")
    return sol


def _solve(inst: LPInstance, max_pivots: int, ratio_tol: float) -> LPSolution:
    n = inst.n
    cols = _DualColumns(inst)
    rhs = np.concatenate([np.zeros(n), inst.masses])
    m = 2 * n
    basis = cols.o_art + np.arange(m)
    allowed = np.ones(cols.total, dtype=bool)
    phase1 = np.zeros(cols.total)
    phase1[cols.o_art:] = 1.0

    status, p1, binv, xb = _revised_simplex(cols, phase1, rhs, basis, allowed, max_pivots, ratio_tol)
    infeas = float(phase1[basis] @ xb)
    if status != "optimal" or infeas > 1e-9:
        return LPSolution(math.nan, np.full(n, math.nan), np.full(n, math.nan),
                          "infeasible" if status == "optimal" else "numerical-failure", p1,
                          {"phase1_objective": infeas})
    # pivot zero-level artificials out of the basis where possible
    for r in np.flatnonzero(basis >= cols.o_art):
        row = cols.products(binv[r])[: cols.o_art]
        nz = np.flatnonzero(np.abs(row) > 1e-9)
        if nz.size:
            basis[r] = nz[0]
            binv = np.linalg.inv(np.column_stack([cols.column(int(k)) for k in basis]))
    allowed[cols.o_art:] = False
    status, p2, binv, xb = _revised_simplex(cols, cols.cost, rhs, basis, allowed, max_pivots, ratio_tol)
    pivots = p1 + p2
    if status != "optimal":
        return LPSolution(math.nan, np.full(n, math.nan), np.full(n, math.nan), "numerical-failure", pivots)

    z = cols.cost[basis] @ binv
    x, t = np.clip(z[:n], 0.0, 1.0), z[n:]
    value = math.fsum(inst.masses * t)
    dual_obj = math.fsum(cols.cost[basis] * xb)
    violation = check_primal(inst, x, t)
    diag = {"dual_objective": dual_obj, "max_violation": violation, "ratio_tol": ratio_tol,
            "clip": float(np.max(np.abs(z[:n] - x)))}
    diag["min_basic"] = float(xb.min())  # a negative basic value means the dual certificate is not feasible
    ok = (violation <= FEAS_TOL and abs(value - dual_obj) <= FEAS_TOL and diag["clip"] <= FEAS_TOL
          and diag["min_basic"] >= -FEAS_TOL)
    return LPSolution(value, x, t, "optimal" if ok else "numerical-failure", pivots, diag)


def best_posted_price(inst: LPInstance) -> float:
    tail = np.cumsum(inst.masses[::-1])[::-1]
    return float(np.max(inst.values * tail))


@dataclass
class SandwichReport:
    eps: float
    n: int
    lower: float
    middle: float
    upper: float
    slack: float
    lower_ok: bool
    upper_ok: bool

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok

    def to_dict(self) -> dict[str, Any]:
        return {"eps": self.eps, "n": self.n, "lower": self.lower, "middle": self.middle,
                "upper": self.upper, "slack": self.slack, "passed": self.passed}


def sandwich_check(dist: ValueDistribution, eps: float, n: int, alpha: float | None = None) -> SandwichReport:
    """Delayed revenue <= LP value <= dual bound, each step up to ``2 v_bar f_bar / n``."""
    from .delayed import build_delayed, choose_mu
    from .dual import optimize_beta
    from .mechanism import expected_revenue

    if alpha is None:
        if dist.envelope is None:
            raise ValueError("sandwich_check needs alpha or a declared envelope")
        alpha = dist.envelope.alpha
    if eps > 0:
        mech, _, _ = build_delayed(dist, eps, choose_mu(eps, alpha, dist))
        lower = expected_revenue(mech, dist)
        upper = optimize_beta(dist, eps, alpha)[1].bound
    else:
        lower = upper = dist.r_star
    sol = solve(discretize(dist, n, eps))
    if sol.status != "optimal":
        raise RuntimeError(f"LP failed: {sol.status} {sol.diagnostics}")
    slack = 2.0 * dist.v_bar * dist.f_bar / n
    return SandwichReport(eps, n, lower, sol.value, upper, slack,
                          lower - slack <= sol.value, sol.value <= upper + slack)
