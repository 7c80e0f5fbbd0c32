import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from epsmech import distributions as D


def test_revenue_curve_uniform(unif):
    assert D.revenue_curve(unif, 0.5) == pytest.approx((0.25, 0.0), abs=1e-15)
    assert D.revenue_curve(unif, 0.25) == pytest.approx((0.1875, 0.5), abs=1e-15)
    assert D.revenue_curve(unif, 0.0)[0] == 0.0
    with pytest.raises(D.DistributionError):
        D.revenue_curve(unif, 1.5)


def test_virtual_value(unif):
    assert D.virtual_value(unif, 0.5) == pytest.approx(0.0, abs=1e-15)
    assert D.virtual_value(unif, 1.0) == pytest.approx(1.0)
    assert D.virtual_value(unif, 0.75) == pytest.approx(0.5)


def test_virtual_value_zero_density(env_dists):
    # envelope-designed distributions put no mass near 0
    with pytest.raises(D.DistributionError):
        D.virtual_value(env_dists[2.0], 0.01)


def test_optimal_price_examples(unif, env_dists):
    assert D.optimal_price(unif) == pytest.approx((0.5, 0.25), abs=1e-10)
    assert D.optimal_price(D.uniform(2.0)) == pytest.approx((1.0, 0.5), abs=1e-10)
    p, r = D.optimal_price(env_dists[3.0])
    assert p == pytest.approx(0.5, abs=1e-9) and r == pytest.approx(0.25, abs=1e-12)


def test_optimal_price_located_not_preset():
    # the uniform constructor presets its optimum; rebuild without the cache
    u = D.uniform(1.0)
    fresh = D.ValueDistribution(1.0, u.cdf, u.pdf)
    p, r = fresh.optimum()
    assert p == pytest.approx(0.5, abs=1e-10) and r == pytest.approx(0.25, abs=1e-12)


def test_truncated_exponential_optimum():
    d = D.truncated_exponential(1.0, 5.0)
    # R'(p) = 0 <=> (e^{-p} - e^{-5}) = p e^{-p}
    from scipy.optimize import brentq
    ref = brentq(lambda p: (math.exp(-p) - math.exp(-5)) - p * math.exp(-p), 0.5, 2.0)
    assert d.p_star == pytest.approx(ref, abs=1e-9)
    assert abs(D.revenue_curve(d, d.p_star)[1]) < 1e-6


def test_envelope_check_uniform(unif):
    assert D.envelope_check(unif, 2.0, 1.0, 1.0, 0.4).passed
    assert not D.envelope_check(unif, 3.0, 1.0, 1.0, 0.4).passed
    assert D.envelope_check(unif, 2.0, 1.0, 1.0, 0.4, form="value").passed
    rep = D.envelope_check(unif, 2.0, 1.0, 1.0, 0.4)
    assert abs(rep.worst_margin) < 1e-12  # exact equality everywhere
    with pytest.raises(D.DistributionError):
        D.envelope_check(unif, 2.0, 1.0, 1.0, 0.6)


def test_envelope_forms_agree(env_dists):
    for a, d in env_dists.items():
        e = d.envelope
        for alpha in (a, a + 0.5):
            der = D.envelope_check(d, alpha, e.kappa_L, e.kappa_U, e.ell).passed
            val = D.envelope_check(d, alpha, e.kappa_L, e.kappa_U * math.e, e.ell, form="value").passed
            assert der == val


def test_make_envelope_examples():
    d = D.make_envelope_dist(1.5, 0.5, 0.2, 1.0)
    e = d.envelope
    assert D.envelope_check(d, 1.5, e.kappa_L, e.kappa_U, e.ell).passed
    # an alpha=1.5 curve is too sharp at p* for any quadratic upper envelope
    for k_up in (e.kappa_U, 10 * e.kappa_U):
        rep2 = D.envelope_check(d, 2.0, e.kappa_L, k_up, e.ell)
        assert not rep2.passed and not rep2.upper_ok
    d2 = D.make_envelope_dist(2.0, 0.5, 0.25, 1.0)
    assert D.envelope_check(d2, 2.0, d2.envelope.kappa_L, d2.envelope.kappa_U, d2.envelope.ell).passed
    with pytest.raises(D.DistributionError):
        D.make_envelope_dist(2.0, 0.5, 0.5, 1.0)


@given(st.floats(1.2, 4.0), st.floats(0.3, 0.7), st.floats(0.3, 0.9))
def test_envelope_dist_invariants(alpha, p, frac):
    r = frac * p * 0.9
    try:
        d = D.make_envelope_dist(alpha, p, r, 1.0)
    except D.DistributionError:
        return  # geometry did not fit; construction errors are the contract
    v = np.linspace(0, 1, 2001)
    c = d.cdf(v)
    assert abs(c[0]) < 1e-9 and abs(c[-1] - 1) < 1e-9
    assert np.all(np.diff(c) >= -1e-12)
    assert np.all(d.pdf(v) >= 0)
    mass, _ = integrate.quad(lambda x: float(d.pdf(np.array([x]))[0]), 0, 1, points=list(d.breakpoints), limit=200)
    assert mass == pytest.approx(1.0, abs=1e-6)
    assert d.p_star == pytest.approx(p, abs=1e-8)


def test_config_roundtrip(env_dists):
    for d in env_dists.values():
        cfg = json.loads(json.dumps(d.to_config()))
        d2 = D.from_config(cfg)
        assert d2.p_star == pytest.approx(d.p_star) and d2.f_bar == pytest.approx(d.f_bar)
    with pytest.raises(D.DistributionError):
        D.from_config({"kind": "nope"})


def test_f_bar(unif, env_dists):
    assert unif.f_bar == pytest.approx(1.0)
    assert env_dists[2.0].f_bar > 1.0
