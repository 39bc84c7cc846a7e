import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar


def brute_kstar(beta, v, lo=-40.0, hi=40.0, points=20001):
    """sup_u u (v - beta(1/u)) by a dense log grid plus a bounded refine."""
    lu = np.linspace(lo, hi, points)
    u = np.exp(lu)
    vals = u * (v - beta(1.0 / u))
    k = int(np.argmax(vals))
    a, b = lu[max(k - 1, 0)], lu[min(k + 1, points - 1)]
    res = minimize_scalar(lambda x: -math.exp(x) * (v - float(beta(math.exp(-x)))),
                          bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    return max(float(vals[k]), -res.fun, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
