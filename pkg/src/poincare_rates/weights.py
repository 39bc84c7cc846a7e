"""Pseudo-marginal weight models and what their tails imply.

Every model exposes ``beta_prime()``: a decay profile dominating the
pi-averaged size-biased tail ``s -> int pi(dx) pi_x~(W >= s)``, ready to be
chained with the marginal chain's inequality. The lognormal case also gets
closed-form rates, mixing times, a budget split between iterations and
particles, and an asymptotic-variance bound.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
from scipy.integrate import quad
from scipy.special import erfc

from .rate_core import (
    BetaFn,
    CallableBeta,
    DomainError,
    LognormalTail,
    Polynomial,
    RateBound,
    StrongPI,
    _as_array,
)

__all__ = [
    "Averaged",
    "ABC",
    "ProductOfAverages",
    "Lognormal",
    "Bounded",
    "MomentBound",
    "Generic",
    "AbcTail",
    "BudgetReport",
    "AvarResult",
    "mz_constant",
    "averaged_moment_bound",
    "stirling2",
    "falling_factorial",
    "binomial_moment",
    "abc_tail_constant",
    "product_required_N",
    "product_tail_bound",
    "product_integral_finite",
    "product_integral",
    "lognormal_beta",
    "lambert_w",
    "lognormal_rate_envelope",
    "lognormal_Finv",
    "lognormal_mixing_n",
    "budget_cost",
    "budget_sigma_star",
    "budget_split",
    "lognormal_tail_integral",
    "lognormal_avar_bound",
    "lognormal_avar_direct_sum",
    "lognormal_sigma_star",
    "asymptotic_variance_bound",
]


# ---------------------------------------------------------------------------
# averaging
# ---------------------------------------------------------------------------


def mz_constant(k: int) -> float:
    """Moment-inequality constant ``B_k`` with ``E|sum Y_i|^k <= B_k N^{k/2} E|Y|^k``.

    ``(k - 1)^{k/2}`` is admissible for every ``k >= 2`` and exact at ``k = 2``.
    """
    if k < 2:
        raise DomainError("k must be at least 2")
    return 1.0 if k == 2 else float((k - 1) ** (k / 2.0))


def averaged_moment_bound(
    moments: Mapping[int, float],
    N: int,
    p: int,
    constants: Mapping[int, float] | None = None,
) -> float:
    """Bound on ``E[(N^{-1} sum W_i)^p]`` for i.i.d. mean-one ``W_i``.

    ``moments[k]`` is ``E|W_1 - 1|^k`` for ``k = 2..p``; ``constants``
    overrides the default ``B_k`` table.
    """
    if int(p) != p or p < 2:
        raise DomainError("p must be an integer >= 2")
    if N < 1:
        raise DomainError("N must be at least 1")
    missing = [k for k in range(2, p + 1) if k not in moments]
    if missing:
        raise ValueError(f"missing central moment order(s) {missing}")
    total = 1.0
    for k in range(2, p + 1):
        b_k = mz_constant(k) if constants is None or k not in constants else constants[k]
        total += math.comb(p, k) * b_k * moments[k] / N ** (k / 2.0)
    return total


# ---------------------------------------------------------------------------
# ABC weights
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def stirling2(m: int, k: int) -> int:
    """Stirling number of the second kind, by the standard recurrence."""
    if m < 0 or k < 0:
        raise DomainError("arguments must be nonnegative")
    if m == k:
        return 1
    if k == 0 or k > m:
        return 0
    return k * stirling2(m - 1, k) + stirling2(m - 1, k - 1)


def falling_factorial(n: int, k: int) -> int:
    out = 1
    for i in range(k):
        out *= n - i
    return out


def binomial_moment(N: int, q, m: int):
    """``E[Bin(N, q)^m]``; exact when ``q`` is a ``Fraction``."""
    return sum(stirling2(m, k) * falling_factorial(N, k) * q**k for k in range(1, m + 1))


@dataclass(frozen=True)
class AbcTail:
    """Coefficient ``c`` with ``int pi(dx) pi_x~(W_N >= s) <= c s^{-p}``."""

    c: float
    p: int
    fell_back: bool


def abc_tail_constant(neg_moments, N: int, p: int) -> AbcTail:
    """Tail coefficient for averaged ABC weights.

    ``neg_moments(j)`` returns ``int pi(dx) ell(x)^{-j}`` (``ell`` the
    acceptance probability) for ``j = 0..p``; a sequence indexed by ``j``
    works too. If any needed moment is infinite the computation falls back
    to ``p = 1``, which needs only ``j <= 1``.
    """
    if int(p) != p or p < 1:
        raise DomainError("p must be a positive integer")
    if N < 1:
        raise DomainError("N must be at least 1")
    get = neg_moments if callable(neg_moments) else (lambda j: neg_moments[j])
    vals = [get(j) for j in range(p + 1)]
    if p > 1 and not all(math.isfinite(float(v)) for v in vals):
        res = abc_tail_constant(neg_moments, N, 1)
        return AbcTail(res.c, 1, True)
    # E_Q[W^{p+1}] with Bin(N, ell) = N ell W, averaged over pi
    m = p + 1
    exact = all(isinstance(v, (int, Fraction)) for v in vals)
    total = 0 if exact else 0.0
    for k in range(1, m + 1):
        coef = stirling2(m, k) * falling_factorial(N, k)
        coef = Fraction(coef, N**m) if exact else coef / N**m
        total += coef * vals[m - k]
    return AbcTail(total, p, False)


# ---------------------------------------------------------------------------
# products of averages
# ---------------------------------------------------------------------------


def product_required_N(T: int, alpha: float) -> int:
    """Smallest integer ``N >= alpha T + 1/2 + sqrt(alpha T)``."""
    if T < 1 or not alpha > 0:
        raise DomainError("need T >= 1 and alpha > 0")
    return math.ceil(alpha * T + 0.5 + math.sqrt(alpha * T))


def product_tail_bound(mp_integral: float, p: int, s):
    """``s^{1-p} * int pi(dx) exp(M_p(x)/alpha)``."""
    if not mp_integral >= 0:
        raise DomainError("the integral must be nonnegative")
    s = _as_array(s)
    if np.any(s <= 0):
        raise DomainError("s must be positive")
    out = s ** (1.0 - p) * mp_integral
    return float(out) if out.ndim == 0 else out


def product_integral_finite(b: float, k: float, c: float, ell: float, alpha: float) -> bool:
    """Whether ``int pi(dx) exp(b x^k / alpha)`` is finite for ``pi ~ exp(-c x^ell)`` on ``R_+``."""
    if ell != k:
        return ell > k
    return alpha > b / c


def product_integral(b: float, k: float, c: float, ell: float, alpha: float) -> float:
    """``int pi(dx) exp(b x^k / alpha)`` by quadrature; ``inf`` when divergent."""
    if not product_integral_finite(b, k, c, ell, alpha):
        return math.inf
    log_norm = math.lgamma(1.0 / ell) - math.log(ell) - math.log(c) / ell

    def integrand(x):
        return math.exp(b * x**k / alpha - c * x**ell - log_norm)

    val, _ = quad(integrand, 0.0, math.inf, epsabs=0.0, epsrel=1e-12, limit=400)
    return val


# ---------------------------------------------------------------------------
# weight models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Averaged:
    """Average of ``N`` i.i.d. mean-one weights with central moments up to ``p``."""

    moments: tuple
    N: int
    p: int
    variant = "averaged"

    def moment_bound(self) -> float:
        return averaged_moment_bound(dict(zip(range(2, self.p + 1), self.moments)), self.N, self.p)

    def beta_prime(self) -> BetaFn:
        # the size-biased law has moment of order p - 1
        return Polynomial(self.moment_bound(), self.p - 1)


@dataclass(frozen=True)
class ABC:
    """Averaged ABC indicator weights over a discrete parameter law.

    ``ell[i]`` is the acceptance probability at the i-th support point and
    ``pi[i]`` the ABC posterior mass there.
    """

    ell: tuple
    pi: tuple
    N: int
    p: int = 1
    variant = "abc"

    def __post_init__(self):
        ell = np.asarray(self.ell, dtype=float)
        if np.any(ell <= 0) or np.any(ell > 1):
            raise DomainError("acceptance probabilities must lie in (0, 1]")

    def neg_moment(self, j: int) -> float:
        return float(np.sum(np.asarray(self.pi) * np.asarray(self.ell, dtype=float) ** (-j)))

    def tail(self) -> AbcTail:
        return abc_tail_constant(self.neg_moment, self.N, self.p)

    def beta_prime(self) -> BetaFn:
        t = self.tail()
        return Polynomial(t.c, t.p)


@dataclass(frozen=True)
class ProductOfAverages:
    """Product of ``T`` averages of ``N`` weights each."""

    T: int
    N: int
    alpha: float
    p: int
    mp_integral: float
    variant = "product"

    def __post_init__(self):
        need = product_required_N(self.T, self.alpha)
        if self.N < need:
            raise DomainError(f"N={self.N} is below the required {need}")
        if not math.isfinite(self.mp_integral):
            raise DomainError("the M_p integral diverges; no tail bound at this alpha")

    def beta_prime(self) -> BetaFn:
        return Polynomial(self.mp_integral, self.p - 1)


@dataclass(frozen=True)
class Lognormal:
    """Mean-one lognormal weights, ``log W ~ N(-sigma^2/2, sigma^2)``.

    Passing ``sigma0_sq`` and ``N`` instead sets ``sigma^2 = sigma0_sq / N``.
    """

    sigma: float | None = None
    sigma0_sq: float | None = None
    N: int | None = None
    variant = "lognormal"

    def __post_init__(self):
        if self.sigma is None:
            if self.sigma0_sq is None or self.N is None:
                raise ValueError("give sigma, or sigma0_sq together with N")
            object.__setattr__(self, "sigma", math.sqrt(self.sigma0_sq / self.N))
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")

    def beta_prime(self) -> BetaFn:
        return LognormalTail(self.sigma)

    def sample(self, rng: np.random.Generator, size=None):
        return np.exp(rng.normal(-0.5 * self.sigma**2, self.sigma, size))

    def sample_size_biased(self, rng: np.random.Generator, size=None):
        """Draws from ``w Q(dw)``: the weight law at stationarity."""
        return np.exp(rng.normal(0.5 * self.sigma**2, self.sigma, size))


@dataclass(frozen=True)
class Bounded:
    """Weights bounded by ``w_bar``; ``w_bar = 1`` means exact densities."""

    w_bar: float
    variant = "bounded"

    def __post_init__(self):
        if not self.w_bar >= 1:
            raise DomainError("w_bar must be at least 1")

    def beta_prime(self) -> BetaFn:
        return StrongPI(1.0, 1.0 / self.w_bar)

    def sample(self, rng: np.random.Generator, size=None):
        if self.w_bar != 1:
            raise ValueError("only the degenerate case w_bar = 1 has a canonical sampler")
        return np.ones(size) if size is not None else 1.0


@dataclass(frozen=True)
class MomentBound:
    """``E_{pi_x~}[W^k] <= m_k`` uniformly in ``x``."""

    k: float
    m_k: float
    variant = "moment"

    def beta_prime(self) -> BetaFn:
        return Polynomial(self.m_k, self.k)


@dataclass(frozen=True)
class Generic:
    """User-supplied pi-averaged tail ``s -> int pi(dx) pi_x~(W >= s)``."""

    tail: Callable
    variant = "generic"

    def beta_prime(self) -> BetaFn:
        return CallableBeta(lambda s: np.minimum(np.asarray(self.tail(s), dtype=float), 1.0), "weight tail")


# ---------------------------------------------------------------------------
# lognormal rates
# ---------------------------------------------------------------------------


def lognormal_beta(sigma: float, s):
    """``exp(-((log s - sigma^2/2)_+)^2 / (2 sigma^2))``."""
    out = LognormalTail(sigma)(_as_array(s))
    return float(out) if np.ndim(out) == 0 else out


def lambert_w(x, tol: float = 1e-15, max_iter: int = 100):
    """Principal branch of Lambert W on ``[0, inf)`` by Halley iteration."""
    x = _as_array(x)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise DomainError("lambert_w is implemented for x >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        big = x > math.e
        l1 = np.log(np.where(big, x, math.e))
        w = np.where(big, l1 - np.log(l1) + np.log(l1) / l1, np.log1p(x))
        w = np.where(np.isinf(x), np.inf, w)
        for _ in range(max_iter):
            ew = np.exp(w)
            f = w * ew - x
            wp1 = w + 1.0
            step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
            step = np.where(np.isfinite(step), step, 0.0)
            w = w - step
            if np.all(np.abs(step) <= tol * np.abs(w)):
                break
    return float(w) if w.ndim == 0 else w


def lognormal_rate_envelope(sigma: float, x):
    """Closed-form bound on ``F^{-1}(x)`` for the lognormal tail profile (``a = 1``), uncapped."""
    x = _as_array(x)
    sig2 = sigma**2
    w = lambert_w(x * sig2 / (2.0 * math.exp(0.5 * sig2)))
    return 2.0 * np.exp(-np.square(w) / (2.0 * sig2))


def lognormal_Finv(sigma: float, c_p: float, n, cap: bool = True):
    """Closed-form pseudo-marginal rate with lognormal weights and spectral gap ``c_p``.

    Capped at 1 by default: ``||P^n f||^2 <= Phi(f)`` always holds.
    """
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    if not 0 < c_p <= 1:
        raise DomainError("c_p must lie in (0, 1]")
    n = _as_array(n)
    if np.any(n < 0):
        raise DomainError("n must be nonnegative")
    sig2 = sigma**2
    w = lambert_w(c_p * n * sig2 / (2.0 * math.exp(0.5 * sig2)))
    out = (2.0 / c_p) * np.exp(-np.square(w) / (2.0 * sig2))
    if cap:
        out = np.minimum(out, 1.0)
    return float(out) if out.ndim == 0 else out


def _h_of(epsilon: float, c_p: float) -> float:
    if not 0 < epsilon <= 1:
        raise DomainError("epsilon must lie in (0, 1]")
    if not 0 < c_p <= 1:
        raise DomainError("c_p must lie in (0, 1]")
    h = 2.0 * math.log(2.0 / (epsilon**2 * c_p))
    if not h > 0:
        raise DomainError("need epsilon^2 < 2 / c_p")
    return h


def lognormal_mixing_n(epsilon: float, sigma: float, c_p: float) -> float:
    """Iterations after which the lognormal rate is at most ``epsilon^2``."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    rh = math.sqrt(_h_of(epsilon, c_p))
    n = 2.0 * rh / (c_p * sigma) * math.exp(0.5 * sigma**2 + rh * sigma)
    # nudge up so the bound holds after rounding too
    return n * (1.0 + 1e-12)


def budget_cost(sigma, h: float):
    """Total cost ``n * N`` up to the factor ``2 sigma0^2 / c_p``."""
    sigma = _as_array(sigma)
    rh = math.sqrt(h)
    return rh * np.exp(0.5 * sigma**2 + sigma * rh) / sigma**3


def budget_sigma_star(h: float) -> float:
    """Exact minimiser of :func:`budget_cost`, the positive root of ``s^2 + sqrt(h) s - 3``."""
    if not h > 0:
        raise DomainError("h must be positive")
    # cancellation-free form of (sqrt(h + 12) - sqrt(h)) / 2
    return 6.0 / (math.sqrt(h + 12.0) + math.sqrt(h))


@dataclass
class BudgetReport:
    """Cost-optimal split between iterations ``n`` and particles ``N``.

    ``sigma_bar``, ``n_bar_bound`` and ``budget_bound`` are ``None`` when
    ``H < 1``; ``N_bar`` is then evaluated at ``sigma_star``.
    """

    epsilon: float
    c_p: float
    sigma0_sq: float
    H: float
    sigma_star: float
    n_star: float
    N_star: float
    budget_star: float
    sigma_bar: float | None
    N_bar: float | None
    n_bar: float | None
    n_bar_bound: float | None
    budget_bound: float | None

    def rows(self):
        return list(asdict(self).items())


def budget_split(epsilon: float, c_p: float, sigma0_sq: float) -> BudgetReport:
    if not sigma0_sq > 0:
        raise DomainError("sigma0_sq must be positive")
    h = _h_of(epsilon, c_p)
    rh = math.sqrt(h)
    s_star = budget_sigma_star(h)
    n_star = lognormal_mixing_n(epsilon, s_star, c_p)
    N_star = sigma0_sq / s_star**2
    fields = dict(sigma_bar=None, N_bar=None, n_bar=None, n_bar_bound=None, budget_bound=None)
    if h >= 1.0:
        s_bar = 3.0 / rh
        log_term = math.log(2.0 / (c_p * epsilon**2))
        fields = dict(
            sigma_bar=s_bar,
            N_bar=2.0 / 9.0 * sigma0_sq * log_term,
            n_bar=lognormal_mixing_n(epsilon, s_bar, c_p),
            n_bar_bound=4.0 * math.exp(7.5) / (3.0 * c_p) * log_term,
            budget_bound=8.0 * sigma0_sq * math.exp(7.5) / (27.0 * c_p) * log_term**2,
        )
    return BudgetReport(
        epsilon=epsilon,
        c_p=c_p,
        sigma0_sq=sigma0_sq,
        H=h,
        sigma_star=s_star,
        n_star=n_star,
        N_star=N_star,
        budget_star=n_star * N_star,
        **fields,
    )


def _lognormal_ab(sigma: float, c_p: float):
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    if not 0 < c_p <= 1:
        raise DomainError("c_p must lie in (0, 1]")
    return 1.0 / (2.0 * sigma**2), c_p * sigma**2 / (2.0 * math.exp(0.5 * sigma**2))


def lognormal_tail_integral(sigma: float, c_p: float, start: float = 0.0) -> float:
    """``int_start^inf exp(-A W(B x)^2) dx`` with ``A = 1/(2 sigma^2)``, ``B = c_p sigma^2 / (2 e^{sigma^2/2})``.

    Substituting ``u = W(B x)`` turns it into a Gaussian integral.
    """
    A, B = _lognormal_ab(sigma, c_p)
    u0 = float(lambert_w(B * start))
    c = 1.0 / (2.0 * A)
    lo = math.sqrt(A) * (u0 - c)
    # int_{u0}^inf exp(-A u^2 + u) (1 + u) du, written around the vertex u = c
    gauss = 0.5 * math.sqrt(math.pi) * erfc(lo)
    first = (1.0 + c) * gauss / math.sqrt(A)
    second = math.exp(-lo * lo) / (2.0 * A)
    return math.exp(1.0 / (4.0 * A)) * (first + second) / B


def lognormal_avar_bound(sigma: float, c_p: float):
    """``(v, v / sigma^2)`` where ``v = int_0^inf exp(-A W(B x)^2) dx``.

    ``(2 / c_p) v`` bounds ``sum_{n >= 1}`` of the lognormal rate.
    """
    v = lognormal_tail_integral(sigma, c_p, 0.0)
    return v, v / sigma**2


def lognormal_avar_direct_sum(sigma: float, c_p: float, n_terms: int = 100_000) -> float:
    """``sum_{n >= 1} exp(-A W(B n)^2)`` summed to ``n_terms`` plus an integral tail bound."""
    A, B = _lognormal_ab(sigma, c_p)
    n = np.arange(1, n_terms + 1, dtype=float)
    head = float(np.sum(np.exp(-A * np.square(lambert_w(B * n)))))
    return head + lognormal_tail_integral(sigma, c_p, float(n_terms))


def lognormal_sigma_star(c_p: float = 1.0, lo: float = 0.1, hi: float = 3.0, tol: float = 1e-10) -> float:
    """Minimiser of ``sigma -> v(sigma) / sigma^2`` by golden-section search."""
    g = (math.sqrt(5.0) - 1.0) / 2.0

    def obj(s):
        return math.log(lognormal_avar_bound(s, c_p)[1])

    a, b = lo, hi
    x1, x2 = b - g * (b - a), a + g * (b - a)
    f1, f2 = obj(x1), obj(x2)
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - g * (b - a)
            f1 = obj(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + g * (b - a)
            f2 = obj(x2)
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# asymptotic variance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AvarResult:
    """``value`` is ``None`` when the summed rate diverges."""

    value: float | None
    divergent: bool
    rate_sum: float | None


_GL16_X, _GL16_W = np.polynomial.legendre.leggauss(16)


def _rate_sum(rb: RateBound, n_head: int = 1000):
    """Upper bound on ``sum_{n >= 0} F^{-1}(n)``, or None if it diverges."""
    if rb.closed == "strong_pi":
        return rb.a / -math.expm1(-rb.beta.c_p)
    n = np.arange(n_head + 1, dtype=float)
    head = float(np.sum(rb.Finv(n)))
    x0 = float(n_head)
    if rb.closed == "polynomial":
        c0, c1 = rb.beta.c0, rb.beta.c1
        if c1 <= 1:
            return None
        ct = (1.0 + c1) ** (1.0 + 1.0 / c1) * c0 ** (1.0 / c1)
        offset = 0.0 if rb._mode_inf(None) else rb.a ** (-1.0 / c1)
        # int_{x0}^inf (x/ct + offset)^{-c1} dx
        return head + ct * (x0 / ct + offset) ** (1.0 - c1) / (c1 - 1.0)
    # int_{x0}^inf F^{-1} = int_{t0}^inf exp(-t) / kappa(t) dt, t0 = -log F^{-1}(x0)
    t0 = -float(np.asarray(rb.log_Finv(x0, cap=False)).ravel()[0])
    edges = np.arange(t0, t0 + 1000.0 + 1e-9, 2.5)
    mids = 0.5 * (edges[:-1] + edges[1:])[:, None]
    half = 0.5 * np.diff(edges)[:, None]
    t = mids + half * _GL16_X[None, :]
    log_g = -t - rb.log_kappa(t.ravel()).reshape(t.shape)
    peak = float(np.max(log_g))
    if not np.isfinite(peak) or float(np.max(log_g[-1])) > peak - 40.0:
        return None
    tail = float(np.sum(half * _GL16_W[None, :] * np.exp(log_g)))
    return head + tail


def asymptotic_variance_bound(rb: RateBound, phi_f: float, l2_f_sq: float) -> AvarResult:
    """``-||f||^2 + 4 Phi(f) sum_{n >= 0} F^{-1}(n)`` for a reversible kernel."""
    if phi_f < 0 or l2_f_sq < 0:
        raise DomainError("phi_f and l2_f_sq must be nonnegative")
    if l2_f_sq > rb.a * phi_f * (1 + 1e-12):
        raise DomainError("need ||f||^2 <= a Phi(f)")
    total = _rate_sum(rb)
    if total is None:
        return AvarResult(None, True, None)
    return AvarResult(-l2_f_sq + 4.0 * phi_f * total, False, total)
