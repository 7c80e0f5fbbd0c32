"""Hard/soft floor mechanisms: the optimal deterministic eps-IC family."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .distributions import ValueDistribution, _bisect_sign
from .mechanism import Mechanism, MechanismError, ReportingMap, Segment, _const, _identity
from .quadrature import adaptive_simpson, golden_section_max

log = logging.getLogger(__name__)

SCAN_POINTS = 10_000


@dataclass(frozen=True)
class HardSoftFloor:
    hard: float
    soft: float
    eps: float

    @property
    def feasible(self) -> bool:
        return self.soft <= self.hard + self.eps


def build_hard_soft(p: float, s: float, v_bar: float = 1.0) -> Mechanism:
    """``x = 1{v >= p}``; pay your bid on ``[p, s)`` and ``s`` above."""
    if not (0.0 <= p <= s <= v_bar):
        raise MechanismError(f"need 0 <= p <= s <= v_bar, got p={p}, s={s}, v_bar={v_bar}")
    segs = []
    if p > 0.0:
        segs.append(Segment(0.0, p, _const(0.0), _const(0.0)))
    if s > p:
        segs.append(Segment(p, s, _const(1.0), _identity))
    segs.append(Segment(s, v_bar, _const(1.0), _const(s)))
    kind = "hard-soft-floor" if s > p else "posted-price"
    params = {"hard": p, "soft": s} if s > p else {"price": p}
    return Mechanism(v_bar, segs, kind=kind, params=params)


def hard_soft_reporting(p: float) -> ReportingMap:
    """Report 0 below the hard floor and the floor itself above it."""

    def forward(v):
        v = np.asarray(v, dtype=float)
        return np.where(v >= p, p, 0.0)

    def inverse_w(r):
        r = np.asarray(r, dtype=float)
        return np.where(r >= p, r, p)

    return ReportingMap("hard-soft", forward, inverse_w, breakpoints=(p,), params={"hard": p})


def det_revenue(dist: ValueDistribution, r: float, eps: float) -> float:
    """``r F(r)-bar + int_r^{r+eps} F-bar``; the upper limit is clamped to ``v_bar``."""
    if eps < 0:
        raise MechanismError("eps must be non-negative")
    dist._check_support(r)
    hi = r + eps
    if hi > dist.v_bar:
        log.info("det_revenue: clamping r + eps = %g to v_bar = %g", hi, dist.v_bar)
        hi = dist.v_bar
    base = float(dist.revenue(np.array([r]))[0])
    if hi <= r:
        return base
    return base + adaptive_simpson(dist.sf, r, hi, tol=1e-14, breakpoints=dist.breakpoints)


def _det_revenue_scan(dist: ValueDistribution, r: np.ndarray, eps: float) -> np.ndarray:
    # coarse vectorized version for the grid scan: composite Simpson with 8 panels
    hi = np.minimum(r + eps, dist.v_bar)
    nodes = np.linspace(0.0, 1.0, 17)
    pts = r[:, None] + (hi - r)[:, None] * nodes[None, :]
    w = np.ones(17)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    integral = (hi - r) / 48.0 * (dist.sf(pts) @ w)
    return dist.revenue(r) + integral


def optimal_det(dist: ValueDistribution, eps: float) -> tuple[float, float, float]:
    """Best hard floor ``r`` with soft floor ``r + eps``; returns ``(r, value, gain)``.

    The gain is measured against the optimal posted-price revenue.
    """
    if eps < 0:
        raise MechanismError("eps must be non-negative")
    if eps == 0:
        return dist.p_star, dist.r_star, 0.0
    grid = np.linspace(0.0, dist.v_bar, SCAN_POINTS)
    i = int(np.argmax(_det_revenue_scan(dist, grid, eps)))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, SCAN_POINTS - 1)]

    def slope(r: float) -> float:
        # d/dr of det_revenue
        top = min(r + eps, dist.v_bar)
        return float(dist.sf(np.array([top]))[0] - r * dist.pdf(np.array([r]))[0])

    if slope(lo) > 0.0 >= slope(hi):
        r = _bisect_sign(slope, lo, hi)
    else:
        r, _ = golden_section_max(lambda q: det_revenue(dist, q, eps), lo, hi, tol=1e-12)
    value = det_revenue(dist, r, eps)
    return float(r), value, value - dist.r_star
