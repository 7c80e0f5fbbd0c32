import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog
from scipy.sparse import lil_matrix

from epsmech import lp as L


def highs_value(inst):
    """Independent oracle: the primal LP handed to scipy's HiGHS."""
    n, v, f, eps = inst.n, inst.values, inst.masses, inst.eps
    rows = n + n * (n - 1)
    A = lil_matrix((rows, 2 * n))
    b = np.zeros(rows)
    for i in range(n):
        A[i, i], A[i, n + i] = -v[i], 1.0
    r = n
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            A[r, j] += v[i]
            A[r, n + j] -= 1.0
            A[r, i] -= v[i]
            A[r, n + i] += 1.0
            b[r] = eps
            r += 1
    c = np.concatenate([np.zeros(n), -f])
    bounds = [(0, 1)] * n + [(None, None)] * n
    res = linprog(c, A_ub=A.tocsr(), b_ub=b, bounds=bounds, method="highs")
    assert res.status == 0
    return -res.fun


def test_discretize(unif):
    inst = L.discretize(unif, 4, 0.01)
    assert np.allclose(inst.values, [0.125, 0.375, 0.625, 0.875])
    assert np.allclose(inst.masses, 0.25)
    with pytest.raises(ValueError):
        L.discretize(unif, 1, 0.0)
    with pytest.raises(ValueError):
        L.LPInstance(np.array([0.5, 0.4]), np.array([0.5, 0.5]), 0.0)


def test_single_point():
    sol = L.solve(L.LPInstance(np.array([0.7]), np.array([1.0]), 0.05))
    assert sol.status == "optimal" and sol.value == pytest.approx(0.7)


@pytest.mark.parametrize("n", [5, 20, 40])
def test_zero_eps_is_posted_price(unif, env_dists, n):
    for d in (unif, env_dists[2.0]):
        inst = L.discretize(d, n, 0.0)
        assert L.solve(inst).value == pytest.approx(L.best_posted_price(inst), abs=1e-10)


@pytest.mark.parametrize("eps", [1e-3, 1e-2, 0.05])
def test_against_highs(unif, env_dists, eps):
    for d in (unif, env_dists[1.5], env_dists[3.0]):
        inst = L.discretize(d, 25, eps)
        sol = L.solve(inst)
        assert sol.status == "optimal"
        assert sol.value == pytest.approx(highs_value(inst), abs=1e-8)
        assert L.check_primal(inst, sol.x, sol.t) <= 1e-9


@given(st.integers(2, 12), st.floats(0.0, 0.1), st.integers(0, 2**31 - 1))
def test_random_instances_against_highs(n, eps, seed):
    rng = np.random.default_rng(seed)
    v = np.sort(rng.choice(np.arange(1, 200), size=n, replace=False)) / 200.0
    m = rng.random(n) + 0.05
    inst = L.LPInstance(v, m / m.sum(), eps)
    sol = L.solve(inst)
    assert sol.status == "optimal"
    assert sol.value == pytest.approx(highs_value(inst), abs=1e-8)


def test_monotone_in_eps_and_interior_allocation(unif):
    vals = [L.solve(L.discretize(unif, 30, e)).value for e in (0.0, 1e-3, 1e-2, 3e-2)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    sol = L.solve(L.discretize(unif, 30, 1e-2))
    assert np.any((sol.x > 1e-6) & (sol.x < 1 - 1e-6))


def test_check_primal_detects_violation(unif):
    inst = L.discretize(unif, 10, 0.0)
    x = np.zeros(10)
    t = np.zeros(10)
    t[0] = 1.0
    assert L.check_primal(inst, x, t) > 0.5


def test_sandwich_small_n(env_dists):
    rep = L.sandwich_check(env_dists[2.0], 1e-3, 40)
    assert rep.passed, rep.to_dict()
    assert rep.lower <= rep.upper


def test_degenerate_envelope_instance_against_highs(env_dists):
    # envelope-designed distributions put no mass on the bottom cells; this instance once stalled on a wrong basis
    inst = L.discretize(env_dists[2.0], 150, 1e-3)
    sol = L.solve(inst)
    assert sol.status == "optimal" and sol.diagnostics["min_basic"] >= -1e-9
    assert sol.value == pytest.approx(highs_value(inst), abs=1e-9)
