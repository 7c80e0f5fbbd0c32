import pytest
from hypothesis import settings

from epsmech import distributions as D

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

ALPHAS = (1.5, 2.0, 3.0)
EPS_SMALL = (1e-2, 1e-3, 1e-4)


@pytest.fixture(scope="session")
def unif():
    return D.uniform(1.0)


@pytest.fixture(scope="session")
def env_dists():
    return {a: D.make_envelope_dist(a, 0.5, 0.25, 1.0) for a in ALPHAS}


@pytest.fixture(scope="session")
def instances(unif, env_dists):
    """(name, dist, alpha) for the uniform and the three envelope-designed distributions."""
    out = [("uniform", unif, 2.0)]
    out += [(f"envelope-{a}", d, a) for a, d in env_dists.items()]
    return out
