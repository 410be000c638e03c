import numpy as np
import pytest

from lqrpg import lqr, presets


@pytest.fixture(scope="session")
def scalar():
    return presets.scalar()


@pytest.fixture(scope="session")
def bench():
    return presets.benchmark3()


@pytest.fixture(scope="session")
def boeing():
    return presets.boeing747()


@pytest.fixture(scope="session", params=presets.PRESET_NAMES)
def problem(request):
    return presets.get(request.param)


def random_stable_gains(prob, count, rng, max_tries=100_000, scale=None):
    """Random stabilising gains around ``K0`` with cost below ``4 C(K0)``."""
    sys, cost = prob.system, prob.cost
    C0 = lqr.cost(sys, cost, prob.K0)
    scale = scale if scale is not None else 0.3 / (1.0 + np.linalg.norm(sys.B, 2))
    out = []
    for _ in range(max_tries):
        K = prob.K0 + scale * rng.standard_normal(prob.K0.shape)
        if lqr.is_stabilizing(sys, K) and lqr.cost(sys, cost, K) < 4.0 * C0:
            out.append(K)
            if len(out) == count:
                return out
    raise RuntimeError("could not sample enough stabilising gains")
