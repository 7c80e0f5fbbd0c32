"""Upper bounds on the eps-IC optimum from a path-based dual certificate.

Only IR on low values and eps-IC along the pairs ``(w(v), v)`` are kept. The
path ``w`` is piecewise linear with a kink at ``p*``:

    w(v) = p* + d + m (v - p*)          for v >= p*
    w(v) = p* + d + (2 - m)(v - p*)     for v <= p*

with ``d = eps^{1-beta}``, ``nu0 = v_bar - eps^beta`` and ``m`` chosen so that
``w(nu0) = v_bar``. The multiplier solves ``lam(v) = f(v) + w'(v) lam(w(v))``
below ``nu0`` and equals ``f`` above, and the bound is ``Phi1 + Phi2`` with

    Phi1 = eps int_mu^v_bar lam
    Phi2 = int_0^v_bar (v f(v) - w'(v)(w(v) - v) lam(w(v)) 1{v <= nu0})^+ dv.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from .distributions import DistributionError, ValueDistribution
from .quadrature import adaptive_simpson

QUAD_TOL = 1e-10
MAX_STEPS = 1_000_000


@dataclass(frozen=True)
class PathCertificate:
    eps: float
    beta: float
    p_star: float
    v_bar: float
    nu0: float
    slope_m: float
    gap: float  # eps^{1-beta}, the distance w(p*) - p*
    mu: float
    thresholds: tuple[float, ...]
    K: int
    phi1: float | None = None
    phi2: float | None = None
    bound: float | None = None
    extras: dict[str, Any] = field(default_factory=dict, compare=False)

    # -- path geometry --------------------------------------------------------

    def w(self, v):
        v = np.asarray(v, dtype=float)
        slope = np.where(v >= self.p_star, self.slope_m, 2.0 - self.slope_m)
        return self.p_star + self.gap + slope * (v - self.p_star)

    def w_dot(self, v):
        v = np.asarray(v, dtype=float)
        return np.where(v >= self.p_star, self.slope_m, 2.0 - self.slope_m)

    def w_inv(self, y):
        y = np.asarray(y, dtype=float)
        kink = self.p_star + self.gap
        slope = np.where(y >= kink, self.slope_m, 2.0 - self.slope_m)
        return self.p_star + (y - kink) / slope

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["thresholds"] = list(self.thresholds)
        out.pop("extras")
        return out


def build_path(dist: ValueDistribution, eps: float, beta: float) -> PathCertificate:
    """Path geometry and threshold ladder ``nu_0 > nu_1 > ... > nu_K`` with ``nu_K <= mu``."""
    if not (0.0 < beta < 0.5):
        raise DistributionError("beta must lie in (0, 1/2)")
    if eps <= 0.0:
        raise DistributionError("the path certificate needs eps > 0")
    p, v_bar = dist.p_star, dist.v_bar
    top, gap = eps ** beta, eps ** (1.0 - beta)
    if not (top < v_bar - p and gap < v_bar - p):
        raise DistributionError(f"path leaves the support for eps={eps}, beta={beta}; eps is too large")
    nu0 = v_bar - top
    m = (v_bar - p - gap) / (nu0 - p)
    if not (1.0 < m < 2.0):
        raise DistributionError(f"path slope m={m} outside (1, 2); eps is too large")
    mu = p * (m - 1.0) + gap
    cert = PathCertificate(eps, beta, p, v_bar, nu0, m, gap, mu, (), 0)
    ladder = [nu0]
    while ladder[-1] > mu:
        ladder.append(float(cert.w_inv(ladder[-1])))
        if len(ladder) > MAX_STEPS:
            raise DistributionError("threshold ladder does not terminate")
    return replace(cert, thresholds=tuple(ladder), K=len(ladder) - 1)


def lambda_ic(cert: PathCertificate, dist: ValueDistribution, v) -> np.ndarray:
    """``lam(v) = sum_j f(w^j(v)) (w^j)'(v)``, iterating ``w`` until it passes ``nu0``."""
    v = np.asarray(v, dtype=float)
    scalar = v.ndim == 0
    v = np.atleast_1d(v)
    if np.any(v < cert.mu * (1.0 - 1e-12)):
        raise DistributionError(f"lambda_ic is defined on [mu, v_bar] = [{cert.mu}, {cert.v_bar}]")
    acc = np.zeros(v.shape)
    weight = np.ones(v.shape)
    cur = v.copy()
    active = np.ones(v.shape, dtype=bool)
    for _ in range(cert.K + 2):
        if not np.any(active):
            break
        acc[active] += weight[active] * dist.pdf(cur[active])
        active &= cur < cert.nu0
        weight[active] *= cert.w_dot(cur[active])
        cur[active] = cert.w(cur[active])
    return acc[0] if scalar else acc


def _integral_lambda(cert: PathCertificate, dist: ValueDistribution, a, b) -> float:
    """``int_a^b lam`` summed over pairs ``(a_i, b_i)``, each inside one ladder step.

    Uses ``int_a^b lam = sum_j F(w^j(b)) - F(w^j(a))``; all pairs advance along
    the path together.
    """
    lo = np.atleast_1d(np.asarray(a, dtype=float)).copy()
    hi = np.atleast_1d(np.asarray(b, dtype=float)).copy()
    active = np.ones(lo.shape, dtype=bool)
    total = []
    for _ in range(cert.K + 2):
        if not np.any(active):
            break
        c_hi = dist.cdf(np.clip(hi[active], 0.0, cert.v_bar))
        c_lo = dist.cdf(np.clip(lo[active], 0.0, cert.v_bar))
        total.append(float(np.sum(c_hi - c_lo)))
        active &= lo < cert.nu0
        lo[active], hi[active] = cert.w(lo[active]), cert.w(hi[active])
    return math.fsum(total)


def _phi1(cert: PathCertificate, dist: ValueDistribution) -> float:
    edges = np.array([cert.v_bar, *cert.thresholds[:-1], cert.mu])
    hi, lo = edges[:-1], edges[1:]
    keep = hi > lo
    return cert.eps * _integral_lambda(cert, dist, lo[keep], hi[keep])


def delta_fn(cert: PathCertificate, dist: ValueDistribution):
    """``Delta(v) = v f(v) - w'(v)(w(v) - v) lam(w(v))`` on ``[0, nu0]``."""

    def delta(v):
        v = np.asarray(v, dtype=float)
        wv = np.maximum(cert.w(v), cert.mu)
        return v * dist.pdf(v) - cert.w_dot(v) * (wv - v) * lambda_ic(cert, dist, wv)

    return delta


def _preimages(cert: PathCertificate, points) -> list[float]:
    out = []
    for b in points:
        y = float(b)
        while y > 0.0 and len(out) < 100_000:
            out.append(y)
            if y <= cert.mu:
                break
            y = float(cert.w_inv(y))
    return out


def _phi2(cert: PathCertificate, dist: ValueDistribution) -> float:
    delta = delta_fn(cert, dist)
    bps = set(cert.thresholds) | set(_preimages(cert, (cert.p_star, *dist.breakpoints)))
    low = adaptive_simpson(lambda v: np.maximum(delta(v), 0.0), 0.0, cert.nu0, tol=QUAD_TOL, breakpoints=bps)
    high = adaptive_simpson(lambda v: v * dist.pdf(v), cert.nu0, cert.v_bar, tol=QUAD_TOL,
                            breakpoints=dist.breakpoints)
    return low + high


def dual_value(dist: ValueDistribution, eps: float, beta: float) -> PathCertificate:
    """Complete certificate with ``phi1``, ``phi2`` and ``bound = phi1 + phi2``."""
    cert = build_path(dist, eps, beta)
    phi1 = _phi1(cert, dist)
    phi2 = _phi2(cert, dist)
    return replace(cert, phi1=phi1, phi2=phi2, bound=phi1 + phi2)


def beta_seed(alpha: float) -> float:
    return (alpha - 1.0) / (2.0 * alpha - 1.0)


def beta_grid(alpha: float, points: int = 21, spacing: float = 0.01) -> list[float]:
    seed = beta_seed(alpha)
    half = points // 2
    grid = [seed + spacing * (i - half) for i in range(points)]
    return [b for b in grid if 0.0 < b < 0.5]


def optimize_beta(dist: ValueDistribution, eps: float, alpha: float) -> tuple[float, PathCertificate]:
    """Smallest certified bound over a 21-point grid around ``(alpha - 1)/(2 alpha - 1)``."""
    best: PathCertificate | None = None
    for b in beta_grid(alpha):
        try:
            cert = dual_value(dist, eps, b)
        except DistributionError:
            continue
        if best is None or cert.bound < best.bound:
            best = cert
    if best is None:
        raise DistributionError(f"no admissible beta for eps={eps}")
    return best.beta, best


def functional_residual(cert: PathCertificate, dist: ValueDistribution, points: int = 1_000) -> float:
    """Max ``|lam(v) - f(v) - w'(v) lam(w(v))|`` on ``[mu, nu0)`` and ``|lam - f|`` on ``[nu0, v_bar]``."""
    v = np.linspace(cert.mu, cert.v_bar, points)
    lam = lambda_ic(cert, dist, v)
    low = v < cert.nu0
    res = np.abs(lam - dist.pdf(v))
    wv = cert.w(v[low])
    res[low] = np.abs(lam[low] - dist.pdf(v[low]) - cert.w_dot(v[low]) * lambda_ic(cert, dist, wv))
    return float(res.max())


def single_crossing_cap(cert: PathCertificate, dist: ValueDistribution, points: int = 4_000
                        ) -> tuple[float, float, float] | None:
    """Tail cap when ``Delta >= 0`` on a final interval ``[x, nu0]``; returns ``(x, tail, cap)``.

    ``x`` starts the last nonnegative run of ``Delta`` on a grid (refined by
    bisection), ``tail`` is the contribution of ``[x, v_bar]`` to ``Phi2`` and
    the cap is ``R(x) + 2 (w(x) - x)``. Returns ``None`` when ``Delta`` is
    nonnegative on the whole grid or negative at ``nu0``.
    """
    delta = delta_fn(cert, dist)
    v = np.linspace(0.0, cert.nu0, points)
    neg = np.flatnonzero(delta(v) < 0.0)
    if neg.size == 0 or neg[-1] == points - 1:
        return None
    lo, hi = v[neg[-1]], v[neg[-1] + 1]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if delta(np.array([mid]))[0] >= 0.0:
            hi = mid
        else:
            lo = mid
    x = hi
    bps = set(cert.thresholds) | set(_preimages(cert, (cert.p_star, *dist.breakpoints)))
    tail = adaptive_simpson(lambda s: np.maximum(delta(s), 0.0), x, cert.nu0, tol=QUAD_TOL, breakpoints=bps)
    tail += adaptive_simpson(lambda s: s * dist.pdf(s), cert.nu0, cert.v_bar, tol=QUAD_TOL,
                             breakpoints=dist.breakpoints)
    cap = float(dist.revenue(np.array([x]))[0] + 2.0 * (cert.w(x) - x))
    return float(x), tail, cap
