import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from epsmech import dual as du
from epsmech.delayed import build_delayed, choose_mu
from epsmech.distributions import DistributionError
from epsmech.mechanism import expected_revenue


@pytest.fixture(scope="module")
def cert_u(unif):
    return du.dual_value(unif, 1e-3, 1 / 3)


def test_geometry(cert_u):
    c = cert_u
    assert float(c.w(c.p_star)) == pytest.approx(c.p_star + 1e-3 ** (2 / 3), rel=1e-14)
    assert float(c.w(c.nu0)) == pytest.approx(c.v_bar, abs=1e-14)
    assert 1.0 < c.slope_m < 2.0
    assert c.thresholds[-1] <= c.mu < c.thresholds[-2]
    # the ladder length is of order log(1/eps)/log(m) scaled by the step structure
    est = math.log((c.v_bar - c.p_star) / c.gap) / math.log(c.slope_m) + 1
    assert est / 4 <= c.K <= 4 * est


def test_ladder_property(cert_u):
    t = np.array(cert_u.thresholds)
    assert np.all(np.diff(t) < 0)
    assert np.allclose(cert_u.w(t[1:]), t[:-1], rtol=0, atol=1e-13)


@given(st.floats(0.0, 1.0))
def test_w_inverse(y):
    c = du.build_path(__import__("epsmech").distributions.uniform(1.0), 1e-3, 1 / 3)
    assert float(c.w(c.w_inv(y))) == pytest.approx(y, abs=1e-13)


def test_lambda_properties(unif, cert_u):
    v = np.linspace(cert_u.nu0, 1.0, 50)
    assert np.allclose(du.lambda_ic(cert_u, unif, v), unif.pdf(v), rtol=0, atol=0)
    v = np.linspace(cert_u.mu, 1.0, 1000)
    assert np.all(du.lambda_ic(cert_u, unif, v) >= 0)
    assert du.functional_residual(cert_u, unif) <= 1e-8
    with pytest.raises(DistributionError):
        du.lambda_ic(cert_u, unif, cert_u.mu / 2)


def test_phi1_exact_and_bounded(unif, cert_u):
    # independent Riemann check of eps * int_mu^1 lam
    v = np.linspace(cert_u.mu, 1.0, 400_001)
    lam = du.lambda_ic(cert_u, unif, v)
    approx = cert_u.eps * np.sum(0.5 * (lam[1:] + lam[:-1]) * np.diff(v))
    assert cert_u.phi1 == pytest.approx(approx, rel=1e-4)
    assert cert_u.phi1 <= cert_u.eps * (cert_u.K + 1)


def test_bound_near_revenue_for_tiny_eps(unif):
    c = du.dual_value(unif, 1e-8, 1 / 3)
    assert 0.25 <= c.bound <= 0.25 + 1e-4


def test_bound_above_delayed(instances):
    for name, d, a in instances:
        for eps in (1e-2, 1e-3, 1e-4):
            beta, c = du.optimize_beta(d, eps, a)
            mech, _, _ = build_delayed(d, eps, choose_mu(eps, a, d))
            assert c.bound >= expected_revenue(mech, d) - 1e-12, (name, eps)
            assert c.phi1 <= eps * (c.K + 1)
            assert du.functional_residual(c, d) <= 1e-8


def test_optimize_beta_picks_minimum(env_dists):
    d = env_dists[2.0]
    beta, c = du.optimize_beta(d, 1e-3, 2.0)
    others = [du.dual_value(d, 1e-3, b).bound for b in du.beta_grid(2.0)]
    assert c.bound == min(others)
    assert du.beta_seed(2.0) == pytest.approx(1 / 3)
    assert len(du.beta_grid(2.0)) == 21
    assert all(0 < b < 0.5 for b in du.beta_grid(1.01))


def test_domain_errors(unif):
    with pytest.raises(DistributionError):
        du.build_path(unif, 1e-3, 0.6)
    with pytest.raises(DistributionError):
        du.build_path(unif, 0.0, 0.3)
    with pytest.raises(DistributionError):
        du.build_path(unif, 0.2, 0.3)


def test_single_crossing_cap(unif, cert_u):
    out = du.single_crossing_cap(cert_u, unif)
    assert out is not None
    x, tail, cap = out
    assert cert_u.mu < x < cert_u.nu0
    assert tail <= cap
    delta = du.delta_fn(cert_u, unif)
    assert np.all(delta(np.linspace(x, cert_u.nu0, 500)[1:]) >= -1e-12)


def test_serialization(cert_u):
    d = cert_u.to_dict()
    assert d["K"] == cert_u.K and len(d["thresholds"]) == cert_u.K + 1
    assert d["bound"] == pytest.approx(d["phi1"] + d["phi2"])
