"""The perturbed delayed mechanism.

Write ``vz = p* - delta`` and ``vm = p* + delta``. Types below ``vz`` report 0,
types in ``[vz, vm + mu]`` under-report by ``mu`` and the top types report
``vm``. The allocation solves

    x' = x / (w(v) - v)                   on [0, vz)
    x' = (x(v) - x(v - mu)) / mu          on [vz, vm]

with ``x(0) = eps / vz`` and ``w(v) = max(vz, v + mu)``. In closed form,
with ``s = (v - vz) / mu``:

    x = eps / (vz - v)                    on [0, vz - mu]
    x = (eps / mu) h(s)                   on [vz - mu, vm]

where ``h(s) = e^{s+1} Gamma(s)``. ``delta`` is chosen so that ``x(vm-) = 1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .distributions import DistributionError, ValueDistribution
from .mechanism import Mechanism, MechanismError, ReportingMap, Segment, expected_revenue
from .quadrature import adaptive_simpson
from .renewal import RenewalTable, gamma, renewal_h, renewal_oracle, table_for

__all__ = [
    "DelayedParams",
    "build_delayed",
    "choose_mu",
    "dde_oracle",
    "dde_solution",
    "delayed_reporting",
    "delayed_revenue",
    "gamma",
    "renewal_oracle",
    "solve_delta",
]

K_SCAN = tuple(2.0 ** -k for k in range(0, 21))


@dataclass(frozen=True)
class DelayedParams:
    eps: float
    mu: float
    delta: float
    p_star: float
    v_bar: float

    @property
    def vz(self) -> float:
        return self.p_star - self.delta

    @property
    def vm(self) -> float:
        return self.p_star + self.delta

    @property
    def z(self) -> float:
        return 2.0 * self.delta / self.mu

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def delta_bracket(mu: float, eps: float) -> tuple[float, float]:
    hi = mu * mu / (4.0 * eps)
    return max(0.0, hi - mu), hi


def solve_delta(mu: float, eps: float) -> float:
    """Root of ``Gamma(z) = (mu / (e eps)) e^{-z}``, returned as ``delta = z mu / 2``.

    Bisection runs on the equivalent ``(eps / mu) h(z) - 1``: both sides of the
    original equation underflow for large ``z`` while ``h`` grows linearly.
    """
    if not (eps > 0.0 and mu > math.e * eps):
        raise MechanismError(f"need mu > e*eps (mu={mu}, eps={eps})")
    ratio = eps / mu

    def g(z: float) -> float:
        return ratio * renewal_h(z) - 1.0

    lo, hi = 0.0, mu / eps  # twice the upper end of the delta bracket, in z units
    if not (g(lo) < 0.0 < g(hi)):
        raise MechanismError("solve_delta: bracket has no sign change")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    z = 0.5 * (lo + hi)
    delta = 0.5 * z * mu
    d_lo, d_hi = delta_bracket(mu, eps)
    slack = 1e-12 * max(1.0, d_hi)
    if not (d_lo - slack <= delta <= d_hi + slack):
        raise MechanismError(f"delta={delta} escapes its bracket [{d_lo}, {d_hi}]")
    return delta


def _check_params(params: DelayedParams) -> None:
    if params.vz - params.mu <= 0.0 or params.vm + params.mu > params.v_bar:
        raise DistributionError(
            f"the window [p*-delta-mu, p*+delta+mu] = [{params.vz - params.mu:.6g}, "
            f"{params.vm + params.mu:.6g}] leaves the support [0, {params.v_bar}]; use a smaller mu"
        )


def make_params(dist: ValueDistribution, eps: float, mu: float) -> DelayedParams:
    params = DelayedParams(eps, mu, solve_delta(mu, eps), dist.p_star, dist.v_bar)
    _check_params(params)
    return params


def _allocation(params: DelayedParams, table: RenewalTable):
    eps, mu, vz, vm = params.eps, params.mu, params.vz, params.vm

    def x(v):
        v = np.asarray(v, dtype=float)
        low = v < vz - mu
        out = np.ones(v.shape)
        out[low] = eps / (vz - v[low])
        mid = ~low & (v < vm)
        out[mid] = (eps / mu) * table.h((v[mid] - vz) / mu)
        return out

    return x


def delayed_reporting(params: DelayedParams) -> ReportingMap:
    vz, vm, mu = params.vz, params.vm, params.mu

    def forward(v):
        v = np.asarray(v, dtype=float)
        return np.where(v < vz, 0.0, np.minimum(v - mu, vm))

    def inverse_w(r):
        r = np.asarray(r, dtype=float)
        return np.maximum(vz, r + mu)

    return ReportingMap("delayed", forward, inverse_w, breakpoints=(vz, vm + mu), params=params.to_dict())


def build_delayed(dist: ValueDistribution, eps: float, mu: float
                  ) -> tuple[Mechanism, ReportingMap, DelayedParams]:
    """Perturbed delayed mechanism for ``(eps, mu)``; ``delta`` from :func:`solve_delta`."""
    params = make_params(dist, eps, mu)
    return _assemble(params) + (params,)


def _assemble(params: DelayedParams) -> tuple[Mechanism, ReportingMap]:
    eps, mu, vz, vm, v_bar = params.eps, params.mu, params.vz, params.vm, params.v_bar
    table = table_for(params.z)
    x = _allocation(params, table)
    # running integral of x from vz - mu: X(v) = eps H((v - vz) / mu)
    X_top = eps * float(table.integral(np.array([params.z]))[0])

    def t_ir(v):
        return np.asarray(v, dtype=float) * x(v)

    def t_ic(v):
        # IC with the downward deviation to v - mu binds; u(v) = eps + X(v - mu)
        v = np.asarray(v, dtype=float)
        return v * x(v) - eps * table.integral((v - mu - vz) / mu)

    top = vm + mu - X_top
    segs = [
        Segment(0.0, vz - mu, x, t_ir),
        Segment(vz - mu, vz, x, t_ir),
        Segment(vz, vm, x, t_ic),
        Segment(vm, vm + mu, x, t_ic),
    ]
    if vm + mu < v_bar:
        segs.append(Segment(vm + mu, v_bar, lambda v: np.ones(np.shape(v)),
                            lambda v: np.full(np.shape(v), top)))
    mech = Mechanism(v_bar, segs, kind="perturbed-delayed", params=params.to_dict())
    return mech, delayed_reporting(params)


def mechanism_from_params(params: DelayedParams) -> tuple[Mechanism, ReportingMap]:
    _check_params(params)
    return _assemble(params)


# ---------------------------------------------------------------------------
# Method-of-steps integrator used as an independent check of the closed form


def dde_solution(params: DelayedParams, grid: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Classical RK4 solution on ``[0, vm]``; ``grid`` steps per delay length ``mu``.

    On ``[0, vz - mu]`` the steps are geometric in ``vz - v`` (uniform in
    ``log(vz - v)``, where the ODE is autonomous). From ``vz - mu`` on the
    step is ``mu / grid`` so that delayed arguments land on stored nodes or
    midpoints; midpoints come from cubic Hermite interpolation.
    """
    eps, mu, vz, vm = params.eps, params.mu, params.vz, params.vm

    def rk4(f, v, y, h):
        k1 = f(v, y)
        k2 = f(v + h / 2, y + h / 2 * k1)
        k3 = f(v + h / 2, y + h / 2 * k2)
        k4 = f(v + h, y + h * k3)
        return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    # region 1: x' = x / (vz - v)
    n1 = grid * max(1, int(math.ceil(math.log(vz / mu))))
    nodes1 = vz - vz * (mu / vz) ** (np.arange(n1 + 1) / n1)
    nodes1[-1] = vz - mu
    vs, xs = [0.0], [eps / vz]
    for a, b in zip(nodes1[:-1], nodes1[1:]):
        xs.append(rk4(lambda v, y: y / (vz - v), a, xs[-1], b - a))
        vs.append(b)

    # region 2 and 3 on a uniform grid U[j] = vz - mu + j h
    h = mu / grid
    ux, ud = [xs[-1]], [xs[-1] / mu]
    d_right = 0.0

    def hist(j: int, theta: float, width: float) -> float:
        if theta == 0.0:
            return ux[j]
        y0, y1, d0, d1 = ux[j], ux[j + 1], ud[j], ud[j + 1]
        if j == grid:
            d0 = d_right
        t2, t3 = theta * theta, theta ** 3
        return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + theta) * width * d0
                + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * width * d1)

    for j in range(grid):
        v = vz - mu + j * h
        ux.append(rk4(lambda _v, y: y / mu, v, ux[-1], h))
        ud.append(ux[-1] / mu)

    # x' jumps at vz: the cell to its right needs the one-sided derivative
    d_right = (ux[grid] - ux[0]) / mu
    steps = (vm - vz) / h
    full = int(math.floor(steps + 1e-9))
    for k in range(full + 1):
        v = vz + k * h
        step = min(h, vm - v)
        if step <= 1e-15 * mu:
            break
        # delayed argument v - mu + c*step sits in uniform cell k
        lag = {c: hist(k, c * step / h, h) for c in (0.0, 0.5, 1.0)}

        def f(vv, y, _v=v, _lag=lag, _step=step):
            c = round((vv - _v) / _step * 2) / 2
            return (y - _lag[c]) / mu

        y = rk4(f, v, ux[-1], step)
        ux.append(y)
        ud.append((y - lag[1.0]) / mu)
    m = len(ux)
    uv = vz - mu + h * np.arange(m)
    uv[-1] = min(uv[-1], vm)
    v_all = np.concatenate([np.array(vs[:-1]), uv])
    x_all = np.concatenate([np.array(xs[:-1]), np.array(ux)])
    return v_all, x_all


def dde_oracle(params: DelayedParams, grid: int = 200) -> float:
    """Max deviation between the integrated DDE and the closed form on ``[0, p* + delta]``."""
    v, x_num = dde_solution(params, grid)
    x_closed = _allocation(params, table_for(params.z))(np.minimum(v, np.nextafter(params.vm, 0.0)))
    return float(np.max(np.abs(x_num - x_closed)))


# ---------------------------------------------------------------------------
# Revenue


def delayed_revenue(dist: ValueDistribution, mech: Mechanism, params: DelayedParams
                    ) -> tuple[float, float]:
    """``(direct, formula)``: ``E[t(v)]`` and the delayed-virtual-value decomposition.

    formula = int_0^vm x(v) (v f(v) - F-bar(v + mu) w'(v)) dv + R(vm) + int_vm^{vm+mu} F-bar
    with ``w' = 0`` below ``vz - mu`` and ``w' = 1`` above.
    """
    direct = expected_revenue(mech, dist)
    mu, vz, vm = params.mu, params.vz, params.vm

    def integrand(v):
        v = np.asarray(v, dtype=float)
        wdot = (v > vz - mu).astype(float)
        return mech.x(v) * (v * dist.pdf(v) - dist.sf(v + mu) * wdot)

    bps = {vz - mu, vz, *dist.breakpoints, *(b - mu for b in dist.breakpoints)}
    first = adaptive_simpson(integrand, 0.0, vm, tol=1e-12, breakpoints=bps)
    soft = adaptive_simpson(dist.sf, vm, vm + mu, tol=1e-13, breakpoints=dist.breakpoints)
    formula = first + float(dist.revenue(np.array([vm]))[0]) + soft
    return direct, formula


def delayed_gain(dist: ValueDistribution, eps: float, mu: float) -> float:
    mech, _, _ = build_delayed(dist, eps, mu)
    return expected_revenue(mech, dist) - dist.r_star


# ---------------------------------------------------------------------------
# Tuning of mu


def admissible_k(eps: float, alpha: float, dist: ValueDistribution, k: float,
                 check_gain: bool = True) -> DelayedParams | None:
    """Parameters for ``mu = k eps^{alpha/(2 alpha - 1)}`` when ``k`` passes every screen."""
    if dist.envelope is None:
        raise DistributionError("choose_mu needs a distribution with a declared envelope")
    mu = k * eps ** (alpha / (2.0 * alpha - 1.0))
    if mu <= math.e * eps:
        return None
    try:
        params = make_params(dist, eps, mu)
    except (DistributionError, MechanismError):
        return None
    kappa_u = dist.envelope.kappa_U
    top = float(dist.sf(np.array([params.vm + mu]))[0])
    if not top > kappa_u * 0.25 ** alpha * k ** (2.0 * alpha - 1.0):
        return None
    if check_gain:
        mech, _ = _assemble(params)
        if expected_revenue(mech, dist) - dist.r_star <= 0.0:
            return None
    return params


def choose_mu_k(eps: float, alpha: float, dist: ValueDistribution) -> tuple[float, float]:
    for k in K_SCAN:
        params = admissible_k(eps, alpha, dist, k)
        if params is not None:
            return params.mu, k
    raise MechanismError(f"no admissible K for eps={eps}: eps too large for the support")


def choose_mu(eps: float, alpha: float, dist: ValueDistribution) -> float:
    """Largest ``mu = K eps^{alpha/(2 alpha - 1)}`` over ``K`` in ``{1, 1/2, 1/4, ...}`` that is admissible."""
    return choose_mu_k(eps, alpha, dist)[0]


def describe(mech: Mechanism, params: DelayedParams) -> dict[str, Any]:
    return {"mechanism": mech.to_dict(), "params": params.to_dict()}
