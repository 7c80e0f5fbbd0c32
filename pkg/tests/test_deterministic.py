import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from epsmech import deterministic as De
from epsmech import mechanism as M


def test_build_examples(unif):
    pp = De.build_hard_soft(0.5, 0.5)
    assert pp.kind == "posted-price"
    v = np.linspace(0, 1, 101)
    assert np.array_equal(pp.t(v), M.posted_price(0.5, 1.0).t(v))
    assert M.verify(De.build_hard_soft(0.5, 0.51), unif, 0.01).passed
    rep = M.verify(De.build_hard_soft(0.5, 0.55), unif, 0.01)
    assert not rep.passed and rep.min_ic_slack == pytest.approx(-0.04, abs=1e-9)
    with pytest.raises(M.MechanismError):
        De.build_hard_soft(0.6, 0.5)


def test_det_revenue_examples(unif):
    assert De.det_revenue(unif, 0.5, 0.01) == pytest.approx(0.254950, abs=1e-12)
    assert De.det_revenue(unif, 0.495, 0.01) == pytest.approx(0.254975, abs=1e-12)
    assert De.det_revenue(unif, 0.3, 0.0) == pytest.approx(0.3 * 0.7, abs=1e-15)
    # clamp above v_bar
    assert De.det_revenue(unif, 0.99, 0.05) == pytest.approx(0.99 * 0.01 + 0.5 * 0.01**2, abs=1e-12)


@given(st.floats(0.0, 0.95), st.floats(0.0, 0.05), st.sampled_from([1.5, 2.0, 3.0]))
def test_det_revenue_against_quad(r, eps, a):
    from epsmech.distributions import make_envelope_dist
    d = _env(a)
    ref = r * float(d.sf(np.array([r]))[0]) + integrate.quad(
        lambda v: float(d.sf(np.array([v]))[0]), r, min(r + eps, 1.0), points=list(d.breakpoints), limit=100)[0]
    assert De.det_revenue(d, r, eps) == pytest.approx(ref, abs=1e-10)


_CACHE = {}


def _env(a):
    from epsmech.distributions import make_envelope_dist
    if a not in _CACHE:
        _CACHE[a] = make_envelope_dist(a, 0.5, 0.25, 1.0)
    return _CACHE[a]


def test_optimal_det_uniform(unif):
    r, value, gain = De.optimal_det(unif, 0.01)
    assert r == pytest.approx(0.495, abs=1e-9)
    assert value == pytest.approx(0.254975, abs=1e-12)
    assert gain == pytest.approx(0.004975, abs=1e-12)
    assert De.optimal_det(unif, 0.0) == (0.5, 0.25, 0.0)


@pytest.mark.parametrize("eps", [1e-4, 1e-3, 1e-2])
def test_gain_bounds_and_feasibility(instances, eps):
    for _, d, _ in instances:
        r, value, gain = De.optimal_det(d, eps)
        lower = float(d.sf(np.array([d.p_star]))[0]) * eps - d.f_bar * eps**2
        assert lower - 1e-12 <= gain <= eps + 1e-12
        assert M.verify(De.build_hard_soft(r, r + eps), d, eps).passed


def test_grid_maximum_is_global(unif):
    # brute force over r agrees with the refined optimum
    eps = 0.003
    rs = np.linspace(0.4, 0.6, 2001)
    brute = max(De.det_revenue(unif, r, eps) for r in rs)
    assert De.optimal_det(unif, eps)[1] >= brute - 1e-12


def test_reporting_map_is_best_response():
    mech = De.build_hard_soft(0.4, 0.43)
    rep = De.hard_soft_reporting(0.4)
    for v in (0.1, 0.39, 0.4, 0.6, 0.99):
        u, r = M.best_response(mech, v)
        assert r == pytest.approx(float(rep.forward(np.array([v]))[0]))
