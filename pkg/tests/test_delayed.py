import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from epsmech import delayed as dl
from epsmech.distributions import DistributionError
from epsmech.mechanism import MechanismError, best_response, envelope_utility_check, expected_revenue, verify
from epsmech.renewal import renewal_h

from conftest import EPS_SMALL


@given(st.floats(1e-6, 1e-2), st.floats(3.0, 1e4))
def test_solve_delta_root_and_bracket(eps, ratio):
    mu = ratio * eps
    delta = dl.solve_delta(mu, eps)
    lo, hi = dl.delta_bracket(mu, eps)
    assert lo - 1e-12 <= delta <= hi * (1 + 1e-12)
    assert eps / mu * renewal_h(2 * delta / mu) == pytest.approx(1.0, rel=1e-9)


def test_solve_delta_near_threshold():
    # as mu -> e eps the root z -> 0
    eps = 1e-3
    assert dl.solve_delta(math.e * eps * (1 + 1e-6), eps) < 1e-6
    with pytest.raises(MechanismError):
        dl.solve_delta(2 * eps, eps)


def test_delta_asymptotics():
    # delta ~ mu^2 / (4 eps) - mu/... for mu >> eps: the ratio tends to one
    eps = 1e-6
    mu = 1e-3
    assert dl.solve_delta(mu, eps) / (mu * mu / (4 * eps)) == pytest.approx(1.0, rel=0.01)


@pytest.fixture(scope="module")
def built(instances):
    out = []
    for name, d, a in instances:
        for eps in EPS_SMALL:
            mu = dl.choose_mu(eps, a, d)
            mech, rep, params = dl.build_delayed(d, eps, mu)
            out.append((name, d, a, eps, mech, rep, params))
    return out


def test_structure(built):
    for name, d, a, eps, mech, rep, p in built:
        assert mech.kind == "perturbed-delayed"
        assert mech.x(np.array([0.0]))[0] == eps / (p.p_star - p.delta)
        assert abs(mech.x(np.array([np.nextafter(p.vm, 0)]))[0] - 1.0) <= 1e-8
        v = np.linspace(0, 1, 5001)
        assert np.all(np.diff(mech.x(v)) >= 0.0)
        assert np.all(mech.x(v[v >= p.vm]) == 1.0)


def test_ir_binds_below_and_reporting_map(built):
    for name, d, a, eps, mech, rep, p in built[::3]:
        v = np.linspace(0, p.vz, 50, endpoint=False)
        assert np.allclose(mech.t(v), v * mech.x(v), atol=1e-15)
        for val in np.linspace(p.vz + 1e-9, 1.0, 9):
            u, r = best_response(mech, val, extra_reports=rep.forward(np.array([val])))
            mapped = float(rep.forward(np.array([val]))[0])
            assert u == pytest.approx(val * mech.x(np.array([mapped]))[0] - mech.t(np.array([mapped]))[0], abs=1e-12)
            # truthful report is within eps of the best response
            truthful = val * mech.x(np.array([val]))[0] - mech.t(np.array([val]))[0]
            assert u - truthful <= eps + 1e-12


def test_verify_and_envelope(built):
    for name, d, a, eps, mech, rep, p in built:
        r = verify(mech, d, eps, reporting=rep)
        assert r.passed, (name, eps, r.to_dict())
        assert min(r.min_ir_slack, r.min_ic_slack) >= -1e-8
        assert envelope_utility_check(mech, rep, eps) <= 1e-6


def test_dde_oracle(built):
    for name, d, a, eps, mech, rep, p in built:
        assert dl.dde_oracle(p) <= 1e-6


def test_pure_ode_region():
    # below vz - mu, x solves x' = x / (vz - v) in closed form
    p = dl.make_params(__import__("epsmech").distributions.uniform(1.0), 1e-3, 0.02)
    v, x = dl.dde_solution(p)
    lo = v <= p.vz - p.mu
    assert np.max(np.abs(x[lo] - p.eps / (p.vz - v[lo]))) <= 1e-9


def test_revenue_formula_agreement(built):
    for name, d, a, eps, mech, rep, p in built:
        direct, formula = dl.delayed_revenue(d, mech, p)
        assert abs(direct - formula) <= 1e-7
        assert direct == pytest.approx(expected_revenue(mech, d), abs=1e-12)


def test_revenue_against_scipy(unif):
    eps = 1e-3
    mech, _, p = dl.build_delayed(unif, eps, dl.choose_mu(eps, 2.0, unif))
    pts = sorted({p.vz - p.mu, p.vz, p.vm, p.vm + p.mu})
    ref = integrate.quad(lambda v: float(mech.t(np.array([v]))[0]), 0, 1, points=pts, limit=400, epsabs=1e-13)[0]
    assert expected_revenue(mech, unif) == pytest.approx(ref, abs=1e-10)


def test_gain_positive(built):
    for name, d, a, eps, mech, rep, p in built:
        assert expected_revenue(mech, d) > d.r_star


@pytest.mark.parametrize("eps", [1e-4, 1e-5, 1e-6])
def test_delta_exceeds_mu_for_small_eps(instances, eps):
    for name, d, a in instances:
        mu, _ = dl.choose_mu_k(eps, a, d)
        assert dl.solve_delta(mu, eps) >= mu


def test_halving_k_keeps_admissibility(instances):
    for name, d, a in instances:
        for eps in (1e-3, 1e-4):
            _, k = dl.choose_mu_k(eps, a, d)
            for j in range(1, 4):
                smaller = k * 2.0 ** -j
                if smaller * eps ** (a / (2 * a - 1)) > 4 * math.e * eps:
                    assert dl.admissible_k(eps, a, d, smaller, check_gain=False) is not None


def test_domain_errors(unif):
    with pytest.raises(DistributionError):
        dl.build_delayed(unif, 1e-3, 0.4)
    with pytest.raises(MechanismError):
        dl.build_delayed(unif, 1e-3, 1e-3)


def test_roundtrip_params(built):
    name, d, a, eps, mech, rep, p = built[0]
    again, _ = dl.mechanism_from_params(dl.DelayedParams(**p.to_dict()))
    v = np.linspace(0, 1, 777)
    assert np.array_equal(again.x(v), mech.x(v)) and np.array_equal(again.t(v), mech.t(v))
