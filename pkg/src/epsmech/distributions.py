"""Buyer value distributions on ``[0, v_bar]`` and their revenue curves."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.optimize import brentq

from .quadrature import adaptive_simpson, golden_section_max

VALIDATION_POINTS = 10_000
ENVELOPE_POINTS = 1_000

Array = np.ndarray


class DistributionError(ValueError):
    """Invalid distribution, out-of-support query, or failed construction."""


@dataclass(frozen=True)
class Envelope:
    """Local alpha-power envelope around the optimal price."""

    alpha: float
    kappa_L: float
    kappa_U: float
    ell: float

    def to_dict(self) -> dict[str, float]:
        return {"alpha": self.alpha, "kappa_L": self.kappa_L, "kappa_U": self.kappa_U, "ell": self.ell}


@dataclass(frozen=True)
class EnvelopeReport:
    passed: bool
    form: str
    worst_margin: float  # min over the grid of the smaller of the two inequality slacks
    worst_value: float
    lower_ok: bool
    upper_ok: bool


@dataclass(eq=False)
class ValueDistribution:
    """A value distribution with a density on ``[0, v_bar]``.

    ``cdf`` and ``pdf`` take and return numpy arrays. ``breakpoints`` lists
    interior points where the density may jump or kink; quadrature routines
    use them as panel edges.
    """

    v_bar: float
    cdf: Callable[[Array], Array]
    pdf: Callable[[Array], Array]
    kind: str = "user-supplied"
    envelope: Envelope | None = None
    params: dict[str, Any] = field(default_factory=dict)
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        self._lock = threading.Lock()
        self._optimum: tuple[float, float] | None = None
        self._f_bar: float | None = None

    # -- evaluation -------------------------------------------------------

    def sf(self, v):
        """Survival function ``1 - F(v)``; zero beyond ``v_bar``."""
        v = np.asarray(v, dtype=float)
        out = 1.0 - self.cdf(np.clip(v, 0.0, self.v_bar))
        return np.where(v >= self.v_bar, 0.0, out)

    def revenue(self, v):
        v = np.asarray(v, dtype=float)
        return v * self.sf(v)

    def revenue_derivative(self, v):
        v = np.asarray(v, dtype=float)
        return self.sf(v) - v * self.pdf(v)

    def _check_support(self, v: float) -> None:
        if not (0.0 <= v <= self.v_bar):
            raise DistributionError(f"value {v} outside support [0, {self.v_bar}]")

    @property
    def f_bar(self) -> float:
        """Grid maximum of the density."""
        if self._f_bar is None:
            grid = np.linspace(0.0, self.v_bar, VALIDATION_POINTS)
            extra = np.array([np.nextafter(b, -np.inf) for b in self.breakpoints]
                             + [np.nextafter(b, np.inf) for b in self.breakpoints])
            self._f_bar = float(np.max(self.pdf(np.concatenate([grid, extra]))))
        return self._f_bar

    # -- optimum ------------------------------------------------------------

    @property
    def p_star(self) -> float:
        return self.optimum()[0]

    @property
    def r_star(self) -> float:
        return self.optimum()[1]

    def optimum(self) -> tuple[float, float]:
        with self._lock:
            if self._optimum is None:
                self._optimum = _locate_optimum(self)
        return self._optimum

    # -- serialization ------------------------------------------------------

    def to_config(self) -> dict[str, Any]:
        if self.kind == "user-supplied":
            raise DistributionError("user-supplied distributions have no config form")
        return {"kind": self.kind, "v_bar": self.v_bar, **self.params}

    def validate(self) -> "ValueDistribution":
        """Check the distribution invariants; returns ``self``."""
        cdf0 = float(self.cdf(np.array([0.0]))[0])
        cdf1 = float(self.cdf(np.array([self.v_bar]))[0])
        if abs(cdf0) > 1e-9 or abs(cdf1 - 1.0) > 1e-9:
            raise DistributionError(f"cdf endpoints {cdf0}, {cdf1} are not 0 and 1")
        grid = np.linspace(0.0, self.v_bar, VALIDATION_POINTS)
        dens = self.pdf(grid)
        if np.any(dens < 0.0):
            i = int(np.argmin(dens))
            raise DistributionError(f"negative density {dens[i]} at v={grid[i]}")
        c = self.cdf(grid)
        drops = np.diff(c) < -1e-12
        if np.any(drops):
            i = int(np.argmax(drops))
            raise DistributionError(f"cdf decreases on [{grid[i]}, {grid[i + 1]}]")
        mass = adaptive_simpson(self.pdf, 0.0, self.v_bar, tol=1e-9, breakpoints=self.breakpoints)
        if abs(mass - 1.0) > 1e-6:
            raise DistributionError(f"density integrates to {mass}, not 1")
        if self.envelope is not None:
            env = self.envelope
            if not (0.0 < env.kappa_L <= env.kappa_U):
                raise DistributionError("envelope needs 0 < kappa_L <= kappa_U")
            p = self.p_star
            if not (0.0 < p - env.ell and p + env.ell < self.v_bar):
                raise DistributionError("envelope neighborhood escapes (0, v_bar)")
        return self


def _locate_optimum(dist: ValueDistribution) -> tuple[float, float]:
    """Global maximizer of R on a grid, refined to ~1e-12.

    The smallest grid maximizer wins ties. Refinement uses bisection on the
    sign change of R' when one exists (R is flat to second order at an
    interior optimum, so value comparisons alone stall near 1e-8), and falls
    back to golden section otherwise.
    """
    grid = np.linspace(0.0, dist.v_bar, VALIDATION_POINTS)
    vals = dist.revenue(grid)
    i = int(np.argmax(vals))
    lo = float(grid[max(i - 1, 0)])
    hi = float(grid[min(i + 1, grid.size - 1)])

    def dR(x: float) -> float:
        return float(dist.revenue_derivative(np.array([x]))[0])

    x: float | None = None
    d_lo, d_hi = dR(lo), dR(hi)
    if i not in (0, grid.size - 1):
        # sub-interval holding the sign change
        d_mid = dR(float(grid[i]))
        if d_lo > 0.0 and d_mid <= 0.0:
            x = _bisect_sign(dR, lo, float(grid[i]))
        elif d_mid > 0.0 and d_hi <= 0.0:
            x = _bisect_sign(dR, float(grid[i]), hi)
    if x is None:
        x, _ = golden_section_max(lambda y: float(dist.revenue(np.array([y]))[0]), lo, hi, 1e-10)
    rx = float(dist.revenue(np.array([x]))[0])
    if rx < vals[i]:
        x, rx = float(grid[i]), float(vals[i])
    return x, rx


def _bisect_sign(g: Callable[[float], float], lo: float, hi: float) -> float:
    """Bisection for the point where ``g`` switches from > 0 to <= 0."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Operations


def revenue_curve(dist: ValueDistribution, v: float) -> tuple[float, float]:
    """Return ``(R(v), R'(v))`` with ``R(v) = v (1 - F(v))``."""
    dist._check_support(v)
    arr = np.array([float(v)])
    return float(dist.revenue(arr)[0]), float(dist.revenue_derivative(arr)[0])


def virtual_value(dist: ValueDistribution, v: float) -> float:
    dist._check_support(v)
    arr = np.array([float(v)])
    dens = float(dist.pdf(arr)[0])
    if dens <= 0.0:
        raise DistributionError(f"virtual value undefined: density vanishes at v={v}")
    return float(v) - float(dist.sf(arr)[0]) / dens


def optimal_price(dist: ValueDistribution) -> tuple[float, float]:
    p, r = dist.optimum()
    if dist.envelope is not None and not (0.0 < p < dist.v_bar):
        raise DistributionError(f"declared envelope but optimum p*={p} is not interior")
    return p, r


def envelope_check(
    dist: ValueDistribution,
    alpha: float,
    kappa_L: float,
    kappa_U: float,
    ell: float,
    form: str = "derivative",
    points: int = ENVELOPE_POINTS,
    tol: float = 1e-12,
) -> EnvelopeReport:
    """Test the local alpha-power envelope on a grid of the neighborhood.

    ``form="derivative"`` checks
    ``kL*alpha*|v-p|^alpha <= (p-v) R'(v) <= kU*alpha*|v-p|^alpha``;
    ``form="value"`` checks ``kL*|v-p|^alpha <= R(p)-R(v) <= kU*|v-p|^alpha``.
    """
    p, r = dist.optimum()
    if not (0.0 < p - ell and p + ell < dist.v_bar):
        raise DistributionError(f"neighborhood ({p - ell}, {p + ell}) not inside (0, {dist.v_bar})")
    # open interval: drop the two endpoints
    v = np.linspace(p - ell, p + ell, points + 2)[1:-1]
    power = np.abs(v - p) ** alpha
    if form == "derivative":
        middle = (p - v) * dist.revenue_derivative(v)
        scale = alpha
    elif form == "value":
        middle = r - dist.revenue(v)
        scale = 1.0
    else:
        raise ValueError(f"unknown envelope form {form!r}")
    lower = middle - kappa_L * scale * power
    upper = kappa_U * scale * power - middle
    lower_ok = bool(np.all(lower >= -tol))
    upper_ok = bool(np.all(upper >= -tol))
    margin = np.minimum(lower, upper)
    i = int(np.argmin(margin))
    return EnvelopeReport(
        passed=lower_ok and upper_ok,
        form=form,
        worst_margin=float(margin[i]),
        worst_value=float(v[i]),
        lower_ok=lower_ok,
        upper_ok=upper_ok,
    )


# ---------------------------------------------------------------------------
# Constructors


def uniform(v_bar: float = 1.0) -> ValueDistribution:
    """Uniform on ``[0, v_bar]``: R(v) = v - v^2/v_bar, an exact quadratic envelope."""
    if v_bar <= 0:
        raise DistributionError("v_bar must be positive")

    def cdf(v):
        return np.clip(np.asarray(v, dtype=float) / v_bar, 0.0, 1.0)

    def pdf(v):
        v = np.asarray(v, dtype=float)
        return np.where((v >= 0.0) & (v <= v_bar), 1.0 / v_bar, 0.0)

    env = Envelope(alpha=2.0, kappa_L=1.0 / v_bar, kappa_U=1.0 / v_bar, ell=0.4 * v_bar)
    dist = ValueDistribution(v_bar, cdf, pdf, kind="uniform", envelope=env)
    dist._optimum = (0.5 * v_bar, 0.25 * v_bar)
    return dist.validate()


def truncated_exponential(rate: float = 1.0, v_bar: float = 5.0) -> ValueDistribution:
    """Exponential(rate) conditioned on ``[0, v_bar]``."""
    if rate <= 0 or v_bar <= 0:
        raise DistributionError("rate and v_bar must be positive")
    norm = -math.expm1(-rate * v_bar)

    def cdf(v):
        v = np.clip(np.asarray(v, dtype=float), 0.0, v_bar)
        return -np.expm1(-rate * v) / norm

    def pdf(v):
        v = np.asarray(v, dtype=float)
        inside = (v >= 0.0) & (v <= v_bar)
        return np.where(inside, rate * np.exp(-rate * np.clip(v, 0.0, v_bar)) / norm, 0.0)

    dist = ValueDistribution(v_bar, cdf, pdf, kind="exponential-truncated", params={"rate": rate})
    dist.validate()
    p, _ = dist.optimum()
    # R is concave near p*; a Taylor quadratic gives the curvature constant
    h = 1e-4
    d2 = float((dist.revenue_derivative(np.array([p + h])) - dist.revenue_derivative(np.array([p - h])))[0] / (2 * h))
    k = -0.5 * d2
    ell = 0.25 * min(p, v_bar - p)
    dist.envelope = _fit_envelope(dist, 2.0, k, ell)
    return dist


def _fit_envelope(dist: ValueDistribution, alpha: float, k: float, ell: float) -> Envelope:
    """Tightest derivative-form constants around a curvature guess ``k``."""
    p = dist.p_star
    v = np.linspace(p - ell, p + ell, ENVELOPE_POINTS + 2)[1:-1]
    v = v[np.abs(v - p) > 1e-9 * max(ell, 1.0)]
    ratio = (p - v) * dist.revenue_derivative(v) / (alpha * np.abs(v - p) ** alpha)
    lo, hi = float(np.min(ratio)), float(np.max(ratio))
    if not (lo > 0.0):
        raise DistributionError(f"no alpha={alpha} envelope around p*={p} (curvature guess {k})")
    return Envelope(alpha=alpha, kappa_L=lo * (1 - 1e-9), kappa_U=hi * (1 + 1e-9), ell=ell)


def make_envelope_dist(
    alpha: float,
    p_star: float,
    r_star: float,
    v_bar: float,
    kappa: float | None = None,
) -> ValueDistribution:
    """Distribution whose revenue curve is exactly ``r* - kappa |v - p*|^alpha`` near p*.

    Shape of R:

    * ``[0, a]``: ``R(v) = v`` (no mass below ``a``; keeps F continuous at 0),
    * ``[a, b]``: ``R(v) = r* - kappa |v - p*|^alpha`` with ``a = p* - ell``,
      ``b = p* + ell`` and ``ell`` solving ``r* - kappa ell^alpha = p* - ell``,
    * ``[b, v_bar]``: the straight segment from ``(b, R(b))`` to ``(v_bar, 0)``.

    Then ``1 - F(v) = R(v)/v``. ``kappa`` defaults to ``r* / (2 p*^alpha)``.
    """
    if not alpha > 1.0:
        raise DistributionError("alpha must exceed 1")
    if not (0.0 < p_star < v_bar):
        raise DistributionError("need 0 < p_star < v_bar")
    if not (0.0 < r_star < p_star):
        raise DistributionError(f"need 0 < r_star < p_star (1 - F <= 1 forces R(v) <= v); got r*={r_star}")
    if kappa is None:
        kappa = r_star / (2.0 * p_star**alpha)
    kappa_max = r_star / p_star**alpha
    if not (0.0 < kappa <= kappa_max * (1 + 1e-12)):
        raise DistributionError(f"kappa must lie in (0, {kappa_max}] so the curve reaches R(v)=v")

    def gap(l: float) -> float:
        return (p_star - l) - (r_star - kappa * l**alpha)

    if gap(p_star) >= 0.0:
        ell = p_star
    else:
        ell = brentq(gap, 0.0, p_star, xtol=1e-15, rtol=1e-15)
    a, b = p_star - ell, p_star + ell
    if b > v_bar + 1e-12:
        raise DistributionError(f"power segment [{a}, {b}] overshoots v_bar={v_bar}; use a smaller kappa")
    r_b = r_star - kappa * ell**alpha
    if b >= v_bar - 1e-12:
        # the curve itself reaches zero at v_bar: no right segment
        if abs(r_b) > 1e-12:
            raise DistributionError(f"power segment ends at v_bar with R={r_b} != 0")
        b, slope = v_bar, 0.0
    else:
        slope = r_b / (v_bar - b)

    def R_and_dR(v):
        v = np.asarray(v, dtype=float)
        d = v - p_star
        curve = r_star - kappa * np.abs(d) ** alpha
        dcurve = -kappa * alpha * np.sign(d) * np.abs(d) ** (alpha - 1.0)
        R = np.where(v < a, v, np.where(v <= b, curve, slope * (v_bar - v)))
        dR = np.where(v < a, 1.0, np.where(v <= b, dcurve, -slope))
        R = np.where(v >= v_bar, 0.0, R)
        return R, dR

    def cdf(v):
        v = np.clip(np.asarray(v, dtype=float), 0.0, v_bar)
        R, _ = R_and_dR(v)
        safe = np.where(v > 1e-150, v, 1.0)
        return np.where(v > 1e-150, 1.0 - R / safe, 0.0)

    # when the power segment starts at 0, (R - vR')/v^2 cancels catastrophically
    # near 0; use its Taylor limit -R''(0)/2 there instead
    tiny = 1e-5 * v_bar if a < 1e-9 else 0.0
    f_origin = 0.5 * kappa * alpha * (alpha - 1.0) * p_star ** (alpha - 2.0)

    def pdf(v):
        v = np.asarray(v, dtype=float)
        R, dR = R_and_dR(v)
        safe = np.where(v > 1e-150, v, 1.0)
        dens = np.where(v < tiny, f_origin, (R - v * dR) / safe**2)
        inside = (v >= a) & (v <= v_bar) & ((v > 1e-150) | (tiny > 0.0))
        return np.where(inside, dens, 0.0)

    # declared neighborhood sits strictly inside the exact power segment
    env = Envelope(alpha=alpha, kappa_L=kappa, kappa_U=kappa, ell=0.9 * ell)
    dist = ValueDistribution(
        v_bar,
        cdf,
        pdf,
        kind="envelope-designed",
        envelope=env,
        params={"alpha": alpha, "p_star": p_star, "r_star": r_star, "kappa": kappa},
        breakpoints=tuple(x for x in (a, b) if 0.0 < x < v_bar),
    )
    grid = np.linspace(0.0, v_bar, VALIDATION_POINTS)
    dens = pdf(grid)
    bad = grid[dens < -1e-12]
    if bad.size:
        raise DistributionError(
            f"construction gives a decreasing cdf on [{bad.min()}, {bad.max()}]; lower kappa"
        )
    dist._optimum = (p_star, r_star)
    dist.validate()
    found = _locate_optimum(dist)
    if abs(found[0] - p_star) > 1e-6 or abs(found[1] - r_star) > 1e-12:
        raise DistributionError(f"constructed curve peaks at {found}, not at ({p_star}, {r_star})")
    rep = envelope_check(dist, alpha, kappa, kappa, env.ell)
    if not rep.passed:
        raise DistributionError(f"constructed distribution fails its own envelope check: {rep}")
    return dist


def from_config(cfg: dict[str, Any]) -> ValueDistribution:
    """Build a distribution from ``{kind, v_bar, params...}``."""
    kind = cfg.get("kind")
    v_bar = float(cfg.get("v_bar", 1.0))
    if kind == "uniform":
        return uniform(v_bar)
    if kind == "exponential-truncated":
        return truncated_exponential(float(cfg.get("rate", 1.0)), v_bar)
    if kind == "envelope-designed":
        kappa = cfg.get("kappa")
        return make_envelope_dist(
            float(cfg["alpha"]),
            float(cfg["p_star"]),
            float(cfg["r_star"]),
            v_bar,
            None if kappa is None else float(kappa),
        )
    raise DistributionError(f"unknown distribution kind {kind!r}")
