import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.integrate import quad
from scipy.optimize import minimize_scalar
from scipy.special import erfc, lambertw

from poincare_rates.oracle import FiniteChain, exact_asymptotic_variance, osc_scale, sharpest_beta_table
from poincare_rates.rate_core import DomainError, LognormalTail, Polynomial, RateBound, StrongPI
from poincare_rates.comparison import chain_strong
from poincare_rates.weights import (
    ABC,
    Averaged,
    Bounded,
    Lognormal,
    MomentBound,
    abc_tail_constant,
    asymptotic_variance_bound,
    averaged_moment_bound,
    binomial_moment,
    budget_cost,
    budget_sigma_star,
    budget_split,
    lambert_w,
    lognormal_avar_bound,
    lognormal_avar_direct_sum,
    lognormal_beta,
    lognormal_Finv,
    lognormal_mixing_n,
    lognormal_sigma_star,
    lognormal_tail_integral,
    product_integral,
    product_integral_finite,
    product_required_N,
    product_tail_bound,
    stirling2,
)

# -- averaging ----------------------------------------------------------------


def test_second_moment_exact():
    for var, N in [(1.0, 100), (0.37, 7), (2.5, 1)]:
        assert averaged_moment_bound({2: var}, N, 2) == 1 + var / N
    assert averaged_moment_bound({2: 1.0}, 100, 2) == pytest.approx(1.01, rel=1e-15)


def test_second_moment_enumeration():
    # W in {0, 2} with equal mass: mean 1, variance 1
    for N in range(1, 9):
        exact = sum(Fraction(sum(w), N) ** 2 for w in itertools.product((0, 2), repeat=N)) / 2**N
        assert averaged_moment_bound({2: 1.0}, N, 2) == pytest.approx(float(exact), rel=1e-15)


def _inverse_gamma_central(shape, k):
    d = stats.invgamma(shape, scale=shape - 1)
    val, _ = quad(lambda w: abs(w - 1) ** k * d.pdf(w), 0, np.inf, limit=400, epsrel=1e-12)
    return val


def test_inverse_gamma_bound_decreasing():
    mom = {k: _inverse_gamma_central(6, k) for k in (2, 3, 4)}
    assert mom[2] == pytest.approx(1 / 4, rel=1e-8)  # (s-1)^2/((s-1)(s-2)) - 1
    vals = [averaged_moment_bound(mom, N, 4) for N in (1, 10, 100)]
    assert all(v >= 1 for v in vals)
    assert vals[0] > vals[1] > vals[2]


def test_averaged_rate_one_over_n():
    mom = {2: 0.5, 3: 0.8, 4: 1.3}
    scaled = [(averaged_moment_bound(mom, N, 4) - 1) * N for N in (1e2, 1e3, 1e4, 1e5)]
    target = 6 * mom[2]
    errs = [abs(x - target) for x in scaled]
    assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
    assert errs[-1] < 0.02 * target


def test_averaged_model_profile():
    m = Averaged((1.0, 0.5), N=4, p=3)
    assert m.beta_prime() == Polynomial(m.moment_bound(), 2)
    with pytest.raises(DomainError):
        averaged_moment_bound({2: 1.0}, 0, 2)


# -- ABC ------------------------------------------------------------------------


def _enumerate_power(N, q, m):
    return sum(math.comb(N, k) * q**k * (1 - q) ** (N - k) * Fraction(k) ** m for k in range(N + 1))


def test_stirling_small_values():
    assert [stirling2(4, k) for k in range(5)] == [0, 1, 7, 6, 1]
    q, N = Fraction(3, 10), 6
    assert binomial_moment(N, q, 2) == N * q + N * (N - 1) * q**2


@pytest.mark.parametrize("q", [Fraction(1, 10), Fraction(3, 10), Fraction(1, 2), Fraction(9, 10)])
def test_binomial_moments_enumeration(q):
    for N in range(1, 9):
        for m in range(1, 6):
            assert binomial_moment(N, q, m) == _enumerate_power(N, q, m)


def test_abc_single_draw():
    ell = Fraction(1, 4)
    for p in range(1, 5):
        tail = abc_tail_constant(lambda j: ell ** (-j), 1, p)
        assert tail.c == ell ** (-p)
        assert not tail.fell_back


def _abc_enumeration(ells, masses, N, p):
    total = Fraction(0)
    for ell, m in zip(ells, masses):
        total += m * _enumerate_power(N, ell, p + 1) / (N * ell) ** (p + 1)
    return total


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_abc_constant_enumeration(p):
    ells = [Fraction(1, 10), Fraction(1, 2), Fraction(4, 5)]
    masses = [Fraction(1, 5), Fraction(1, 2), Fraction(3, 10)]
    neg = lambda j: sum(m * e ** (-j) for e, m in zip(ells, masses))
    for N in range(1, 9):
        assert abc_tail_constant(neg, N, p).c == _abc_enumeration(ells, masses, N, p)


@pytest.mark.parametrize("q", [Fraction(1, 10), Fraction(1, 2)])
def test_abc_first_order_constant(q):
    for N in range(1, 6):
        c = abc_tail_constant(lambda j: q ** (-j), N, 1).c
        assert c == _abc_enumeration([q], [1], N, 1)
        assert c == Fraction(N - 1, N) + 1 / (N * q)


def test_abc_fallback_and_model():
    neg = [1.0, 2.0, math.inf]
    t = abc_tail_constant(neg, 5, 2)
    assert t.fell_back and t.p == 1
    model = ABC((0.5, 1.0), (0.5, 0.5), N=3, p=2)
    assert model.beta_prime()(2.0) == pytest.approx(model.tail().c / 4.0)
    with pytest.raises(DomainError):
        ABC((0.0,), (1.0,), N=1)


# -- products of averages -----------------------------------------------------------


def _required_N_oracle(T, alpha):
    N = 1
    while True:
        d = N - Fraction(1, 2) - alpha * T
        if d >= 0 and d * d >= alpha * T:
            return N
        N += 1


def test_required_N_examples():
    assert product_required_N(1, 1.0) == 3
    assert product_required_N(100, 1.0) == 111


def test_required_N_twenty_pairs():
    pairs = [(T, a) for T in (1, 3, 10, 50, 200) for a in (Fraction(1, 4), Fraction(1, 2), Fraction(1), Fraction(3))]
    assert len(pairs) == 20
    for T, a in pairs:
        assert product_required_N(T, float(a)) == _required_N_oracle(T, a)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 500), st.floats(0.01, 5.0), st.integers(1, 50), st.floats(0.0, 2.0))
def test_required_N_monotone(T, a, dT, da):
    assert product_required_N(T + dT, a) >= product_required_N(T, a)
    assert product_required_N(T, a + da) >= product_required_N(T, a)


def test_product_tail_and_integral():
    s = np.array([1.0, 4.0, 9.0])
    assert np.allclose(product_tail_bound(1.0, 3, s), s**-2.0)
    assert product_integral_finite(1, 1, 1, 1, 2.0)
    assert not product_integral_finite(1, 1, 1, 1, 0.5)
    assert product_integral(1, 1, 1, 1, 0.5) == math.inf
    # pi ~ exp(-c x^2), M_p(x) = b x
    b, c, alpha = 1.3, 0.7, 0.9
    beta = b / alpha
    want = math.exp(beta**2 / (4 * c)) * erfc(-beta / (2 * math.sqrt(c)))
    assert product_integral(b, 1.0, c, 2.0, alpha) == pytest.approx(want, rel=1e-6)


# -- lognormal -------------------------------------------------------------------------


def test_lognormal_beta_examples():
    assert lognormal_beta(1.0, math.exp(0.5)) == 1.0
    assert lognormal_beta(1.0, 0.3) == 1.0
    assert lognormal_beta(1.0, math.exp(2.5)) == pytest.approx(math.exp(-2), rel=1e-14)
    exact = stats.norm.sf(0.5)
    assert exact == pytest.approx(0.3085, abs=1e-4)
    assert exact <= lognormal_beta(1.0, math.e) == pytest.approx(math.exp(-1 / 8), rel=1e-14)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_lognormal_mean_one(sigma):
    w = Lognormal(sigma).sample(np.random.default_rng(3), 10**6)
    assert abs(w.mean() - 1) <= 3 * w.std(ddof=1) / 1e3


@pytest.mark.parametrize("sigma", [0.3, 1.0, 2.0])
def test_lognormal_beta_dominates_gaussian_tail(sigma):
    s = np.geomspace(1e-2, 1e8, 200)
    exact = stats.norm.sf((np.log(s) - sigma**2 / 2) / sigma)
    assert np.all(exact <= lognormal_beta(sigma, s) * (1 + 1e-12))


def test_lambert_w():
    assert lambert_w(0.0) == 0.0
    assert lambert_w(math.e) == pytest.approx(1.0, rel=1e-15)
    for x in (1e-6, 1.0, 1e6):
        w = lambert_w(x)
        assert w * math.exp(w) == pytest.approx(x, rel=1e-12)
    x = np.geomspace(1e-12, 1e300, 200)
    assert np.allclose(lambert_w(x), lambertw(x).real, rtol=1e-13)
    with pytest.raises(DomainError):
        lambert_w(-0.1)


def test_lognormal_Finv_examples():
    assert lognormal_Finv(1.0, 0.5, 0.0, cap=False) == pytest.approx(4.0)
    assert lognormal_Finv(1.0, 0.5, 0.0) == 1.0
    n = 2 * math.e * math.exp(0.5)
    assert lognormal_Finv(1.0, 1.0, n, cap=False) == pytest.approx(2 * math.exp(-0.5), rel=1e-12)
    assert lognormal_Finv(1.0, 1.0, n) == 1.0


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("cp", [0.1, 1.0])
def test_lognormal_closed_form_dominates_numeric(sigma, cp):
    rb = RateBound(chain_strong(cp, LognormalTail(sigma)), a=1.0, mode="a")
    n = np.array([1e2, 1e3, 1e4])
    assert np.all(rb.Finv(n) <= lognormal_Finv(sigma, cp, n))


def test_mixing_n():
    n = lognormal_mixing_n(0.1, 1.0, 0.5)
    assert lognormal_Finv(1.0, 0.5, n) <= 0.01
    h = 2 * math.log(2)
    want = 2 * math.sqrt(h) * math.exp(0.5 + math.sqrt(h))
    assert lognormal_mixing_n(1.0, 1.0, 1.0) == pytest.approx(want, rel=1e-11)
    ns = [lognormal_mixing_n(e, 1.0, 0.5) for e in (0.5, 0.1, 0.01, 1e-4)]
    assert all(b > a for a, b in zip(ns, ns[1:]))


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1.0), st.floats(0.05, 3.0), st.floats(0.01, 1.0))
def test_mixing_n_property(eps, sigma, cp):
    if eps**2 * cp >= 2:
        return
    n = lognormal_mixing_n(eps, sigma, cp)
    assert lognormal_Finv(sigma, cp, n) <= eps**2


def test_budget_limit():
    h = 1e6
    assert math.sqrt(h) * budget_sigma_star(h) == pytest.approx(3.0, abs=1e-2)


@pytest.mark.parametrize("h", [1.0, 4.0, 25.0])
def test_budget_against_grid(h):
    grid = np.linspace(0.01, 5.0, 5000)
    k = int(np.argmin(budget_cost(grid, h)))
    res = minimize_scalar(lambda s: float(budget_cost(s, h)), bounds=(grid[k - 1], grid[k + 1]),
                          method="bounded", options={"xatol": 1e-10})
    assert budget_sigma_star(h) == pytest.approx(res.x, abs=1e-4)


def test_budget_report():
    r1 = budget_split(0.1, 0.5, 50.0)
    r2 = budget_split(0.1, 0.5, 100.0)
    assert r2.N_bar == pytest.approx(2 * r1.N_bar)
    assert r1.sigma_star == pytest.approx(budget_sigma_star(r1.H))
    assert r1.n_star == lognormal_mixing_n(0.1, r1.sigma_star, 0.5)
    assert r1.n_bar <= r1.n_bar_bound
    assert dict(r1.rows())["H"] == r1.H


def test_lognormal_tail_integral_quadrature():
    for sigma, cp in [(0.5, 1.0), (1.0, 0.3), (2.0, 1.0)]:
        A, B = 1 / (2 * sigma**2), cp * sigma**2 / (2 * math.exp(sigma**2 / 2))
        f = lambda x: math.exp(-A * lambertw(B * x).real ** 2)
        want, _ = quad(f, 0, np.inf, limit=500, epsrel=1e-11)
        assert lognormal_tail_integral(sigma, cp) == pytest.approx(want, rel=1e-6)


def test_sigma_star():
    s1 = lognormal_sigma_star(1.0)
    assert s1 == pytest.approx(0.973, abs=0.01)
    for cp in (0.1, 0.5):
        assert lognormal_sigma_star(cp) == pytest.approx(s1, abs=1e-6)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_direct_sum_below_integral(sigma):
    assert lognormal_avar_direct_sum(sigma, 1.0) <= lognormal_avar_bound(sigma, 1.0)[0]


# -- asymptotic variance -------------------------------------------------------------------


def test_avar_strong():
    cp, phi, l2 = 0.3, 1.0, 0.2
    res = asymptotic_variance_bound(RateBound(StrongPI(1.0, cp)), phi, l2)
    assert res.value == pytest.approx(-l2 + 4 * phi / (1 - math.exp(-cp)), rel=1e-14)


def test_avar_polynomial():
    assert asymptotic_variance_bound(RateBound(Polynomial(1.0, 0.5)), 1.0, 0.1).divergent
    res = asymptotic_variance_bound(RateBound(Polynomial(1.0, 2.0), mode="a"), 1.0, 0.1)
    n = np.arange(0, 2_000_001, dtype=float)
    direct = float(np.sum(RateBound(Polynomial(1.0, 2.0), mode="a").Finv(n)))
    assert res.rate_sum >= direct


def test_avar_two_state():
    p01, p10 = 0.2, 0.1
    chain = FiniteChain(np.array([[1 - p01, p01], [p10, 1 - p10]]))
    lam = 1 - p01 - p10
    f = np.array([-chain.pi[1], chain.pi[0]]) / np.sqrt(chain.pi[0] * chain.pi[1])
    l2 = float(chain.pi @ f**2)
    exact = l2 * (1 + lam) / (1 - lam)
    assert exact_asymptotic_variance(chain, f) == pytest.approx(exact, rel=1e-10)
    prof, *_ = sharpest_beta_table(chain, "P")
    rb = RateBound(prof, a=osc_scale(chain), mode="a")
    res = asymptotic_variance_bound(rb, float(np.ptp(f) ** 2), l2)
    assert res.value >= exact


def test_weight_models():
    assert Bounded(2.0).beta_prime() == StrongPI(1.0, 0.5)
    assert MomentBound(3, 2.0).beta_prime()(2.0) == pytest.approx(0.25)
    assert Lognormal(sigma0_sq=4.0, N=16).sigma == pytest.approx(0.5)
    rng = np.random.default_rng(0)
    w = Lognormal(1.0).sample_size_biased(rng, 10**6)
    assert np.mean(1 / w) == pytest.approx(1.0, abs=0.01)
