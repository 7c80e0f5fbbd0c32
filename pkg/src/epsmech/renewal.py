"""The alternating series Gamma(t) and its uniform-renewal interpretation.

``Gamma(t) = sum_{j=0}^{floor(t)+1} (-1)^j e^{-j} / j! * (t + 1 - j)^j``.

With ``h(s) = e^{s+1} Gamma(s)`` we have ``h(s) = m(s + 1) + 1`` where ``m`` is
the renewal function of i.i.d. uniform[0, 1] inter-arrival times. ``h`` solves
``h'(s) = h(s) - h(s - 1)`` for ``s > 0`` with ``h(s) = e^{s+1}`` on ``[-1, 0]``,
grows like ``2s`` and has no exponentially growing mode. The closed-form sum
however cancels terms of size up to ``e^{1.28 (s+1)}``, so it is evaluated in
extended precision. Past ``s = 40`` the transient ``h(s) - 2s - 8/3`` is below
``1e-37`` (it decays like ``e^{-2.09 s}``) and the linear asymptote is used.
"""

from __future__ import annotations

import math
from functools import lru_cache

import mpmath
import numpy as np
from numpy.polynomial import chebyshev as C

CHEB_DEGREE = 24
ASYMPTOTE_FROM = 40.0
TERM_GROWTH = 1.28  # max_c c log((1 - c)/c) + 1: the largest term is ~ e^{1.28 (t + 1)}


def _digits_for(t: float) -> int:
    # keep ~25 significant digits after cancellation
    return 30 + int(math.ceil(TERM_GROWTH * (t + 1.0) / math.log(10.0)))


def _h_asymptote(s):
    return 2.0 * s + 8.0 / 3.0


def _h_mp(s: float) -> mpmath.mpf:
    if s < 0.0:
        raise ValueError("h(s) needs s >= 0")
    n = int(math.floor(s)) + 1
    with mpmath.workdps(_digits_for(s)):
        x = mpmath.mpf(s) + 1
        terms = []
        for j in range(n + 1):
            base = x - j
            terms.append((-1) ** j * base**j * mpmath.exp(base) / mpmath.factorial(j))
        return +mpmath.fsum(terms)


def gamma(t: float) -> float:
    """Evaluate Gamma(t) for ``t >= 0``."""
    t = float(t)
    if t < 0.0:
        raise ValueError("Gamma(t) is defined for t >= 0")
    if t >= ASYMPTOTE_FROM:
        return _h_asymptote(t) * math.exp(-(t + 1.0))
    n = int(math.floor(t)) + 1
    with mpmath.workdps(_digits_for(t)):
        x = mpmath.mpf(t) + 1
        e_inv = -mpmath.exp(-1)
        coef = mpmath.mpf(1)
        terms = [coef]
        for j in range(1, n + 1):
            coef = coef * e_inv / j
            terms.append(coef * (x - j) ** j)
        return float(mpmath.fsum(terms))


def renewal_h(s: float) -> float:
    """``e^{s+1} Gamma(s)``, i.e. one plus the uniform renewal function at ``s + 1``."""
    if s < 0.0:
        if s < -1.0:
            raise ValueError("h(s) is defined for s >= -1")
        return math.exp(s + 1.0)
    if s >= ASYMPTOTE_FROM:
        return _h_asymptote(s)
    return float(_h_mp(s))


class RenewalTable:
    """Piecewise Chebyshev interpolant of ``h`` on ``[-1, s_max]``.

    ``h`` is analytic inside each unit step ``[k, k+1]`` (its derivatives jump
    only at integers), so one degree-24 interpolant per step reproduces the
    extended-precision values to rounding level. Beyond ``ASYMPTOTE_FROM`` the
    linear asymptote and its exact antiderivative take over.
    """

    def __init__(self, s_max: float, degree: int = CHEB_DEGREE):
        self.s_max = float(s_max)
        self.steps = max(1, int(math.ceil(min(self.s_max, ASYMPTOTE_FROM))))
        nodes = np.cos(np.pi * (np.arange(degree + 1) + 0.5) / (degree + 1))
        coeffs = []
        for k in range(self.steps):
            vals = np.array([float(_h_mp(k + 0.5 * (u + 1.0))) for u in nodes])
            coeffs.append(C.chebfit(nodes, vals, degree))
        self._coeffs = np.array(coeffs)
        self._anti = np.array([C.chebint(c, lbnd=-1.0) * 0.5 for c in coeffs])
        # running integral of h from -1 up to each integer step start
        self._base = np.concatenate([[math.e - 1.0], np.cumsum([C.chebval(1.0, a) for a in self._anti])])
        self._base[1:] += math.e - 1.0

    def _far(self, s: np.ndarray) -> np.ndarray:
        far = s >= ASYMPTOTE_FROM
        if np.any(far) and self.steps < ASYMPTOTE_FROM:
            raise ValueError(f"table covers [-1, {self.steps}]; build it with table_for(max(s))")
        return far

    def _locate(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = np.clip(np.floor(s).astype(int), 0, self.steps - 1)
        u = 2.0 * (s - k) - 1.0
        return k, u

    def h(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.empty_like(s)
        neg = s < 0.0
        out[neg] = np.exp(s[neg] + 1.0)
        far = self._far(s)
        out[far] = _h_asymptote(s[far])
        pos = ~neg & ~far
        if np.any(pos):
            k, u = self._locate(s[pos])
            vals = np.empty(k.shape)
            for kk in np.unique(k):
                sel = k == kk
                vals[sel] = C.chebval(u[sel], self._coeffs[kk])
            out[pos] = vals
        return out

    def integral(self, s) -> np.ndarray:
        """``H(s) = int_{-1}^{s} h``."""
        s = np.asarray(s, dtype=float)
        out = np.empty_like(s)
        neg = s < 0.0
        out[neg] = np.expm1(s[neg] + 1.0)
        far = self._far(s)
        if np.any(far):
            s0 = ASYMPTOTE_FROM
            out[far] = self._base[-1] + (s[far] ** 2 - s0 * s0) + 8.0 / 3.0 * (s[far] - s0)
        pos = ~neg & ~far
        if np.any(pos):
            k, u = self._locate(s[pos])
            vals = np.empty(k.shape)
            for kk in np.unique(k):
                sel = k == kk
                vals[sel] = self._base[kk] + C.chebval(u[sel], self._anti[kk])
            out[pos] = vals
        return out


@lru_cache(maxsize=32)
def renewal_table(steps: int) -> RenewalTable:
    return RenewalTable(float(steps))


def table_for(s_max: float) -> RenewalTable:
    return renewal_table(max(1, int(math.ceil(s_max))))


def renewal_oracle(
    t: float, samples: int = 1_000_000, seed: int = 0, block: int = 100_000
) -> tuple[float, float]:
    """Monte Carlo estimate of ``m(t + 1)`` with uniform[0, 1] inter-arrivals.

    Returns ``(estimate, standard_error)``. Samples are drawn in fixed-size
    blocks, each from its own child seed, so the result does not depend on
    how blocks are scheduled.
    """
    if samples < 10_000:
        raise ValueError("renewal_oracle needs at least 1e4 samples")
    horizon = float(t) + 1.0
    n_blocks = -(-samples // block)
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    width = int(math.ceil(2.0 * horizon + 8.0 * math.sqrt(horizon + 1.0) + 16.0))
    counts = []
    remaining = samples
    for child in children:
        size = min(block, remaining)
        remaining -= size
        rng = np.random.default_rng(child)
        arrivals = np.cumsum(rng.random((size, width)), axis=1)
        # extend the rare paths that have not yet passed the horizon
        while np.any(arrivals[:, -1] <= horizon):
            more = arrivals[:, -1:] + np.cumsum(rng.random((size, width)), axis=1)
            arrivals = np.concatenate([arrivals, more], axis=1)
        counts.append(np.count_nonzero(arrivals <= horizon, axis=1))
    n = np.concatenate(counts).astype(float)
    return float(n.mean()), float(n.std(ddof=1) / math.sqrt(n.size))
