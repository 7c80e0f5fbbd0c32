"""Small numerical primitives shared by the rest of the package.

Batch-vectorized adaptive Simpson quadrature (every refinement level is a
single call of the integrand on an array of nodes) and golden-section
maximization.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class QuadratureError(RuntimeError):
    pass


def _simpson(fa, fm, fb, width):
    return width * (fa + 4.0 * fm + fb) / 6.0


def adaptive_simpson(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-10,
    breakpoints: Iterable[float] = (),
    max_depth: int = 48,
    initial_panels: int = 8,
) -> float:
    """Integrate ``f`` over ``[a, b]`` to absolute tolerance ``tol``.

    ``f`` must accept and return numpy arrays. Interior ``breakpoints`` are
    used as panel edges so that kinks and jumps of the integrand never sit
    strictly inside a panel. Endpoints are never evaluated exactly on a
    breakpoint's far side: each panel only sees its own closed interval.
    """
    if b < a:
        return -adaptive_simpson(f, b, a, tol, breakpoints, max_depth, initial_panels)
    if b == a:
        return 0.0
    edges = sorted({a, b, *(float(p) for p in breakpoints if a < p < b)})
    lo_list, hi_list = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sub = np.linspace(lo, hi, initial_panels + 1)
        lo_list.append(sub[:-1])
        hi_list.append(sub[1:])
    lo = np.concatenate(lo_list)
    hi = np.concatenate(hi_list)
    # nudge panel endpoints inward so one-sided limits are used at jumps
    lo_e = np.nextafter(lo, hi)
    hi_e = np.nextafter(hi, lo)
    mid = 0.5 * (lo + hi)
    fa = np.asarray(f(lo_e), dtype=float)
    fb = np.asarray(f(hi_e), dtype=float)
    fm = np.asarray(f(mid), dtype=float)
    whole = _simpson(fa, fm, fb, hi - lo)
    ptol = np.full(lo.shape, tol / lo.size)

    total = 0.0
    parts: list[np.ndarray] = []
    for _ in range(max_depth):
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        flm = np.asarray(f(lm), dtype=float)
        frm = np.asarray(f(rm), dtype=float)
        left = _simpson(fa, flm, fm, mid - lo)
        right = _simpson(fm, frm, fb, hi - mid)
        err = left + right - whole
        # panels a few ulps wide cannot be refined further; a jump of the
        # integrand there (a breakpoint off by rounding) contributes ~1e-15
        tiny = (hi - lo) <= 16.0 * np.spacing(np.maximum(np.abs(lo), np.abs(hi)))
        done = (np.abs(err) <= 15.0 * ptol) | tiny
        if np.any(done):
            parts.append((left + right + err / 15.0)[done])
        keep = ~done
        if not np.any(keep):
            break
        lo, mid, hi = lo[keep], mid[keep], hi[keep]
        fa, fm, fb = fa[keep], fm[keep], fb[keep]
        flm, frm = flm[keep], frm[keep]
        left, right, ptol = left[keep], right[keep], ptol[keep]
        lm, rm = lm[keep], rm[keep]
        lo = np.concatenate([lo, mid])
        hi_new = np.concatenate([mid, hi])
        fa = np.concatenate([fa, fm])
        fb = np.concatenate([fm, fb])
        fm = np.concatenate([flm, frm])
        whole = np.concatenate([left, right])
        mid = np.concatenate([lm, rm])
        hi = hi_new
        ptol = np.concatenate([ptol, ptol]) / 2.0
    else:
        raise QuadratureError(
            f"adaptive Simpson did not converge on [{a}, {b}]; "
            f"{lo.size} panels left, first at [{lo[0]!r}, {hi[0]!r}]"
        )
    if parts:
        total = math.fsum(np.concatenate(parts))
    return total


def golden_section_max(
    f: Callable[[float], float], a: float, b: float, tol: float = 1e-10
) -> tuple[float, float]:
    """Maximize a unimodal scalar function on ``[a, b]``; returns (argmax, max)."""
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def grid_then_golden(
    f_vec: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    points: int = 10_000,
    tol: float = 1e-10,
) -> tuple[float, float]:
    """Global max by a coarse grid scan, refined by golden section.

    Ties on the grid go to the smallest maximizer. The refined point is only
    accepted if it does not lose to the best grid point.
    """
    grid = np.linspace(a, b, points)
    vals = np.asarray(f_vec(grid), dtype=float)
    i = int(np.argmax(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, points - 1)]

    def scalar(x: float) -> float:
        return float(np.asarray(f_vec(np.array([x])))[0])

    x, fx = golden_section_max(scalar, lo, hi, tol)
    if fx < vals[i]:
        return float(grid[i]), float(vals[i])
    return x, fx
