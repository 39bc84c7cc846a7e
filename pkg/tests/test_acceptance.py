"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``PASS criterion k`` or ``FAIL criterion k`` line; run
with ``pytest -s tests/test_acceptance.py`` to see them.
"""
import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import dblquad
from scipy.optimize import brentq

from poincare_rates.comparison import chain_strong, chain_weak, chain_weak_conjugate, fitted_exponent
from poincare_rates.kernels import ExpExp, estimate_decay, imh_beta, imh_rate, imh_step
from poincare_rates.oracle import necessity_beta, random_reversible_chain, verify_theorem1
from poincare_rates.rate_core import LognormalTail, Polynomial, RateBound, StrongPI, Tabulated
from poincare_rates.weights import (
    abc_tail_constant,
    averaged_moment_bound,
    budget_sigma_star,
    lognormal_avar_bound,
    lognormal_Finv,
    lognormal_mixing_n,
    lognormal_sigma_star,
    product_required_N,
)


def criterion(k, budget):
    """Run ``body`` under a wall-clock budget and print one verdict line."""

    def wrap(body):
        def test():
            t0 = time.perf_counter()
            try:
                body()
                elapsed = time.perf_counter() - t0
                assert budget is None or elapsed < budget, f"runtime {elapsed:.1f}s over {budget}s"
            except BaseException:
                print(f"\nFAIL criterion {k}")
                raise
            print(f"\nPASS criterion {k} ({elapsed:.2f}s)")

        test.__name__ = body.__name__
        return test

    return wrap


@criterion(1, 1.0)
def test_polynomial_rate_recovery():
    c0, c1 = 1.0, 2.0
    closed = RateBound(Polynomial(c0, c1), mode="infinity")
    numeric = RateBound(Polynomial(c0, c1), mode="infinity", closed_form=False)
    n = np.geomspace(1, 1e6, 40)
    env = 27 * n**-2.0
    assert np.all(numeric.Finv(n) <= env * (1 + 1e-6))
    assert np.all(closed.Finv(n) <= env * (1 + 1e-12))
    big = n > math.sqrt(27)
    assert np.array_equal(closed.envelope(n)[big], c0 * (1 + c1) ** (1 + c1) * n[big] ** -c1)
    # analytic conjugate and rate integral
    v = np.geomspace(1e-4, 0.9, 12)
    C = c0 * c1 / (c0 * (1 + c1)) ** (1 + 1 / c1)
    assert np.allclose(numeric.kstar(v), C * v ** (1 + 1 / c1), rtol=1e-6, atol=0)
    Ct = (1 + c1) ** (1 + 1 / c1) * c0 ** (1 / c1)
    assert np.allclose(numeric.F(v), Ct * v ** (-1 / c1), rtol=1e-6, atol=0)


@criterion(2, None)
def test_strong_pi_exactness():
    n = np.arange(1, 101, dtype=float)
    for cp in (0.01, 0.3, 1.0):
        rb = RateBound(StrongPI(1.0, cp))
        assert np.allclose(rb.Finv(n), np.exp(-cp * n), rtol=1e-10, atol=0)


@criterion(3, 10.0)
def test_chaining_exponent():
    b1, b2 = Polynomial(1, 1), Polynomial(1, 1)
    assert fitted_exponent(RateBound(chain_weak(b1, b2))) == pytest.approx(1 / 3, abs=0.02)
    rb = RateBound(chain_weak(b1, b2), floor=False)
    v = np.array([0.02, 0.05, 0.2, 0.5])
    assert np.allclose(rb.kstar(v), chain_weak_conjugate(b1, b2, v), rtol=1e-4, atol=0)


def _imh_quadrature_beta(fam, s):
    x_s = brentq(lambda x: float(fam.dominating_log_weight(x)) - math.log(s), 0.0, 200.0, xtol=1e-15)
    dens = lambda x: math.exp(float(fam.log_target(x)))
    inner, _ = dblquad(lambda y, x: dens(x) * dens(y), 0.0, x_s, 0.0, x_s, epsabs=1e-13, epsrel=1e-12)
    return 0.5 * (1 - inner)


@criterion(4, 120.0)
def test_imh_example():
    fam = ExpExp(1.0, 2.0)
    s = np.array([1.0, 1.5, 2.0, 4.0, 10.0, 100.0, 1e4])
    # for this pair the profile is (1 - (1 - 1/s)^2) / 2
    assert np.allclose(imh_beta(fam, s), 0.5 * (1 - (1 - 1 / s) ** 2), rtol=1e-12, atol=0)
    for sv in (1.5, 4.0, 50.0):
        assert imh_beta(fam, sv) == pytest.approx(_imh_quadrature_beta(fam, sv), abs=1e-6)
    # two copies per replica: 5000 replicas x 100 steps x 2 = 10^6 transitions
    f = lambda x: (x > 1.0) - math.exp(-1.0)
    n = [0, 1, 2, 5, 10, 20, 50, 100]
    est = estimate_decay(
        f, n, step=lambda x, r: imh_step(fam, x, r)[0], init=lambda r, m: fam.sample_target(r, m),
        replicas=5000, seed=2024, bound=lambda k: imh_rate(fam).Finv(k.astype(float)),
    )
    assert est.replicas * max(n) * 2 >= 10**6
    assert np.allclose(est.bound[1:], np.minimum(4.0 / np.asarray(n[1:], float), 1.0), rtol=1e-9)
    assert est.within_bound(3.0)


@criterion(5, 300.0)
def test_finite_state_battery():
    rng = np.random.default_rng(5)
    violations = 0
    for k in range(50):
        chain = random_reversible_chain(int(rng.integers(2, 11)), rng)
        rep = verify_theorem1(chain, n_max=200, seed=k)
        assert rep.route == "P"
        violations += len(rep.violations)
    assert violations == 0
    sabotaged = verify_theorem1(random_reversible_chain(8, rng), n_max=200, beta_scale=0.5)
    assert not sabotaged.ok


@criterion(6, 60.0)
def test_necessity_round_trip():
    for q in (1.0, 2.0):
        gamma = lambda m, q=q: np.asarray(m, dtype=float) ** -q
        s = np.geomspace(1.5, 1e7, 300)
        b1 = necessity_beta(gamma, s)
        assert np.all(b1 <= math.e * gamma(np.floor(s)) * (1 + 1e-12))
        keep = np.concatenate([[True], np.diff(b1) < 0])
        prof = Tabulated(tuple(s[keep]), tuple(b1[keep]), tail_exponent=q, interp="step")
        back = RateBound(prof, a=1.0, mode="a")
        n = np.geomspace(1e3, 1e5, 15)
        slope = -np.polyfit(np.log(n), back.log_Finv(n), 1)[0]
        assert slope == pytest.approx(q, abs=0.1)


@criterion(7, 60.0)
def test_lognormal_suite():
    # (a) closed form dominates the numeric rate
    n = np.array([1.0, 10.0, 1e2, 1e3, 1e4])
    for sigma in (0.5, 1.0, 2.0):
        for cp in (0.1, 0.5, 1.0):
            numeric = RateBound(chain_strong(cp, LognormalTail(sigma)), a=1.0, mode="a")
            assert np.all(numeric.Finv(n) <= lognormal_Finv(sigma, cp, n) * (1 + 1e-9))
    # (b) mixing time reaches eps^2
    for eps, sigma, cp in itertools.product((0.5, 0.1, 1e-3), (0.5, 1.0, 2.0), (0.1, 1.0)):
        assert lognormal_Finv(sigma, cp, lognormal_mixing_n(eps, sigma, cp)) <= eps**2
    # (c) large-budget limit
    h = 1e6
    assert abs(math.sqrt(h) * budget_sigma_star(h) - 3.0) < 1e-2
    # (d) interior optimum of the variance-per-cost ratio
    s1 = lognormal_sigma_star(1.0)
    assert s1 == pytest.approx(0.973, abs=0.01)
    for cp in (0.05, 0.1, 0.5):
        assert abs(lognormal_sigma_star(cp) - s1) < 1e-6


def _enumerate_power(N, q, m):
    total = Fraction(0)
    for draws in itertools.product((0, 1), repeat=N):
        k = sum(draws)
        total += q**k * (1 - q) ** (N - k) * k**m
    return total


@criterion(8, 30.0)
def test_abc_and_averaging():
    ells = [Fraction(1, 10), Fraction(1, 2), Fraction(4, 5)]
    masses = [Fraction(1, 5), Fraction(1, 2), Fraction(3, 10)]
    neg = lambda j: sum(m * e ** (-j) for e, m in zip(ells, masses))
    for N in range(1, 9):
        for p in range(1, 5):
            want = sum(m * _enumerate_power(N, e, p + 1) / (N * e) ** (p + 1) for e, m in zip(ells, masses))
            assert abc_tail_constant(neg, N, p).c == want
    for var, N in [(1.0, 100), (0.37, 7), (2.5, 1), (0.125, 64)]:
        assert averaged_moment_bound({2: var}, N, 2) == 1 + var / N
    pairs = [(T, a) for T in (1, 3, 10, 50, 200) for a in (Fraction(1, 4), Fraction(1, 2), Fraction(1), Fraction(3))]
    for T, a in pairs:
        # smallest N with N - 1/2 - aT >= sqrt(aT), as ceiling arithmetic
        r = a * T
        N = math.ceil(Fraction(1, 2) + r)
        while (N - Fraction(1, 2) - r) ** 2 < r:
            N += 1
        assert product_required_N(T, float(a)) == N


@criterion(9, 60.0)
def test_sigma_curve_shape():
    sigma = np.linspace(0.1, 3.0, 59)
    ratio = np.array([lognormal_avar_bound(float(s), 1.0)[1] for s in sigma])
    assert np.all(np.isfinite(ratio))
    k = int(np.argmin(ratio))
    assert 0 < k < sigma.size - 1
    # one sign change in the slope, from falling to rising
    d = np.sign(np.diff(ratio))
    assert np.all(d[:k] < 0) and np.all(d[k:] > 0)
    # convex-looking in log scale
    assert np.all(np.diff(np.log(ratio), 2) > -1e-9)
