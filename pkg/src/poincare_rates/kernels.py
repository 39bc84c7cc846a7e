"""Concrete kernels: independent Metropolis-Hastings and pseudo-marginal chains.

Samplers are vectorized over independent chains. Replica work is split into
fixed blocks of ``BLOCK`` replicas; block ``b`` draws from
``SeedSequence(seed, spawn_key=(b,))``. The block layout never depends on
the thread count, so results are identical for any ``threads``.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .comparison import chain_strong, chain_weak
from .oracle import FiniteChain, exact_decay
from .rate_core import (
    BetaFn,
    DomainError,
    PhiFunctional,
    Polynomial,
    RateBound,
    Rescaled,
    StrongPI,
    Tabulated,
    _as_array,
)
from .weights import Bounded, Lognormal, lognormal_rate_envelope

__all__ = [
    "BLOCK",
    "ExpExp",
    "PolyPoly",
    "Custom",
    "IMHTrajectory",
    "imh_beta",
    "imh_rate",
    "imh_acceptance_probability",
    "imh_step",
    "imh_sample",
    "imh_kernel_density",
    "FiniteTarget",
    "PMSpec",
    "PMTrajectory",
    "pm_beta_prime",
    "pm_rate",
    "pm_sample",
    "mh_sample",
    "DecayEstimate",
    "estimate_decay",
    "replica_rng",
]

BLOCK = 256


def replica_rng(seed: int, block: int) -> np.random.Generator:
    """Generator owned by replica block ``block``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))


# ---------------------------------------------------------------------------
# IMH families
# ---------------------------------------------------------------------------


class _IMHFamily:
    """Target/proposal pair with ``w = pi/q`` unbounded above."""

    def log_ratio(self, x):
        return self.log_target(x) - self.log_proposal(x)


@dataclass(frozen=True)
class ExpExp(_IMHFamily):
    """Target ``a1 e^{-a1 x}``, proposal ``a2 e^{-a2 x}`` on ``(0, inf)``, ``a2 > a1``."""

    a1: float
    a2: float
    variant = "expexp"

    def __post_init__(self):
        if not 0 < self.a1 < self.a2:
            raise DomainError("need 0 < a1 < a2")

    @property
    def exponent(self) -> float:
        return self.a1 / (self.a2 - self.a1)

    def log_target(self, x):
        x = _as_array(x)
        return np.where(x > 0, math.log(self.a1) - self.a1 * x, -np.inf)

    def log_proposal(self, x):
        x = _as_array(x)
        return np.where(x > 0, math.log(self.a2) - self.a2 * x, -np.inf)

    def sample_proposal(self, rng, size=None):
        return rng.exponential(1.0 / self.a2, size)

    def sample_target(self, rng, size=None):
        return rng.exponential(1.0 / self.a1, size)

    def target_tail(self, c: float) -> float:
        """``pi(x > c)``."""
        return math.exp(-self.a1 * max(c, 0.0))

    def dominating_log_weight(self, x):
        """``log(c w(x))`` with ``c = a2/a1 >= 1``: the unnormalised density ratio."""
        return (self.a2 - self.a1) * _as_array(x)


@dataclass(frozen=True)
class PolyPoly(_IMHFamily):
    """Target ``b1 x^{-1-b1}``, proposal ``b2 x^{-1-b2}`` on ``[1, inf)``, ``b2 > b1``."""

    b1: float
    b2: float
    variant = "polypoly"

    def __post_init__(self):
        if not 0 < self.b1 < self.b2:
            raise DomainError("need 0 < b1 < b2")

    @property
    def exponent(self) -> float:
        return self.b1 / (self.b2 - self.b1)

    def log_target(self, x):
        x = _as_array(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(x >= 1, math.log(self.b1) - (1.0 + self.b1) * np.log(x), -np.inf)

    def log_proposal(self, x):
        x = _as_array(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(x >= 1, math.log(self.b2) - (1.0 + self.b2) * np.log(x), -np.inf)

    def sample_proposal(self, rng, size=None):
        return (1.0 - rng.random(size)) ** (-1.0 / self.b2)

    def sample_target(self, rng, size=None):
        return (1.0 - rng.random(size)) ** (-1.0 / self.b1)

    def target_tail(self, c: float) -> float:
        """``pi(x > c)``."""
        return max(c, 1.0) ** (-self.b1)

    def dominating_log_weight(self, x):
        """``log(c w(x))`` with ``c = b2/b1 >= 1``."""
        return (self.b2 - self.b1) * np.log(_as_array(x))


@dataclass(frozen=True, eq=False)
class Custom(_IMHFamily):
    """User-supplied normalised log-densities and a proposal sampler.

    ``pi(w <= s) = E_q[w 1{w <= s}]`` is estimated from ``n_draws`` proposal
    draws. The truncated weight is bounded by ``s``, so the estimate has
    finite variance even when ``w`` itself does not, which is the usual case
    for a target with heavier tails than the proposal.
    """

    log_target: Callable
    log_proposal: Callable
    sample_proposal: Callable
    n_draws: int = 1_000_000
    seed: int = 0
    tail_exponent: float = 1.0
    se_tol: float = 1e-3
    variant = "custom"

    @cached_property
    def _table(self):
        rng = np.random.default_rng(self.seed)
        y = np.asarray(self.sample_proposal(rng, self.n_draws), dtype=float)
        lw = np.asarray(self.log_target(y) - self.log_proposal(y), dtype=float)
        # NaN counts as a zero-weight draw; +inf stays above every threshold
        lw = np.sort(np.where(np.isnan(lw), -np.inf, lw))
        w = np.exp(np.minimum(lw, 700.0))
        return lw, np.cumsum(w), np.cumsum(w * w)

    def mass_below(self, s):
        """Estimate and standard error of ``pi(w <= s)``."""
        lw, cw, cw2 = self._table
        n = lw.size
        s = _as_array(s)
        with np.errstate(divide="ignore"):
            k = np.searchsorted(lw, np.log(s), side="right")
        m1 = np.where(k > 0, cw[np.maximum(k - 1, 0)], 0.0) / n
        m2 = np.where(k > 0, cw2[np.maximum(k - 1, 0)], 0.0) / n
        se = np.sqrt(np.maximum(m2 - m1 * m1, 0.0) / n)
        return np.minimum(m1, 1.0), se


def imh_beta(spec, s, return_se: bool = False):
    """``pi x pi(A(s)^c) / 2`` with ``A(s) = {max(w(x), w(y)) <= s}``.

    The closed-form families use the unnormalised density ratio, a constant
    multiple ``c >= 1`` of ``w``; any such multiple gives a valid profile.
    """
    s = _as_array(s)
    if isinstance(spec, (ExpExp, PolyPoly)):
        if np.any(s < 1):
            raise DomainError("closed forms are stated for s >= 1")
        tail = s ** (-spec.exponent)
        out = 0.5 * (1.0 - (1.0 - tail) ** 2)
        se = np.zeros_like(out)
    elif isinstance(spec, Custom):
        if np.any(s <= 0):
            raise DomainError("s must be positive")
        F, se_F = spec.mass_below(s)
        out = 0.5 * (1.0 - F**2)
        se = F * se_F
        if np.any(se > spec.se_tol):
            warnings.warn("Monte Carlo standard error of the IMH profile exceeds se_tol", RuntimeWarning)
    else:
        raise TypeError("unknown IMH family")
    if np.ndim(out) == 0:
        out, se = float(out), float(se)
    return (out, se) if return_se else out


def imh_rate(spec, a: float = 1.0) -> RateBound:
    """Rate for an IMH chain (always positive, so the profile applies to ``P`` directly).

    Closed-form families use the envelope ``s^{-exponent}``; ``Custom`` uses
    the Monte Carlo table plus three standard errors with step interpolation.
    """
    if isinstance(spec, (ExpExp, PolyPoly)):
        return RateBound(Polynomial(1.0, spec.exponent), a=a)
    if isinstance(spec, Custom):
        lw = spec._table[0]
        hi = float(np.exp(min(lw[np.isfinite(lw)][-1], 700.0)))
        s = np.geomspace(min(1e-3, hi / 10), hi, 200)
        val, se = imh_beta(spec, s, return_se=True)
        val = np.minimum(val + 3 * se, 0.5)
        keep = [0]
        for k in range(1, len(val)):
            if val[k] < val[keep[-1]]:
                keep.append(k)
        prof = Tabulated(tuple(s[keep]), tuple(val[keep]), tail_exponent=spec.tail_exponent, interp="step")
        return RateBound(prof, a=a)
    raise TypeError("unknown IMH family")


def imh_acceptance_probability(spec, x, n_draws: int, rng) -> tuple[float, float]:
    """Direct Monte Carlo of ``E[1 ^ w(Y)/w(x)]``, ``Y ~ q``, with its SE."""
    y = spec.sample_proposal(rng, n_draws)
    with np.errstate(over="ignore"):
        acc = np.minimum(1.0, np.exp(spec.log_ratio(y) - spec.log_ratio(np.asarray(x, dtype=float))))
    return float(acc.mean()), float(acc.std(ddof=1) / math.sqrt(n_draws))


def imh_kernel_density(spec, x, y):
    """Off-diagonal part ``a(x, y) q(y)`` of the IMH kernel."""
    with np.errstate(over="ignore"):
        ratio = np.exp(spec.log_ratio(y) - spec.log_ratio(x))
    return np.minimum(1.0, ratio) * np.exp(spec.log_proposal(y))


@dataclass
class IMHTrajectory:
    states: np.ndarray
    accepted: int
    nonfinite: int

    @property
    def acceptance_rate(self) -> float:
        steps = (self.states.shape[0] - 1) * int(np.prod(self.states.shape[1:], dtype=int))
        return self.accepted / steps if steps else float("nan")


def imh_step(spec, x, rng):
    """One vectorized IMH transition; returns ``(x_new, accepted, nonfinite)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(spec.sample_proposal(rng, x.shape), dtype=float)
    u = rng.random(x.shape)
    lw_y = spec.log_ratio(y)
    bad = ~np.isfinite(lw_y)
    with np.errstate(invalid="ignore"):
        accept = (np.log(u) < lw_y - spec.log_ratio(x)) & ~bad
    return np.where(accept, y, x), accept, bad


def imh_sample(spec, x0, n_steps: int, rng_seed: int) -> IMHTrajectory:
    """IMH trajectory from ``x0`` (scalar or array of independent chains)."""
    rng = np.random.default_rng(rng_seed)
    x = np.array(x0, dtype=float)
    states = np.empty((n_steps + 1,) + x.shape)
    states[0] = x
    accepted = nonfinite = 0
    for k in range(1, n_steps + 1):
        x, acc, bad = imh_step(spec, x, rng)
        accepted += int(np.sum(acc))
        nonfinite += int(np.sum(bad))
        states[k] = x
    return IMHTrajectory(states, accepted, nonfinite)


# ---------------------------------------------------------------------------
# decay estimation
# ---------------------------------------------------------------------------


@dataclass
class DecayEstimate:
    """Estimates of ``||P^n f||^2`` on ``n`` with standard errors."""

    n: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    replicas: int
    bound: np.ndarray | None = None

    def within_bound(self, k_se: float = 3.0) -> bool:
        if self.bound is None:
            raise ValueError("no bound attached")
        return bool(np.all(self.estimate <= self.bound + k_se * self.se))

    def rows(self):
        b = self.bound if self.bound is not None else np.full(self.n.shape, np.nan)
        return [(float(n), float(e), float(s), float(bb)) for n, e, s, bb in zip(self.n, self.estimate, self.se, b)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["n", "estimate", "se", "bound"])
            for row in self.rows():
                wr.writerow([f"{v:.17g}" for v in row])


def _decay_block(step, f, init, grid, block, count, seed):
    rng = replica_rng(seed, block)
    x0 = np.asarray(init(rng, count), dtype=float)
    x, xp = x0.copy(), x0.copy()
    out = np.empty((grid.size, count))
    f0 = f(x0)
    pos = 0
    if grid[0] == 0:
        out[0] = f0 * f0
        pos = 1
    for k in range(1, int(grid[-1]) + 1):
        x = step(x, rng)
        xp = step(xp, rng)
        if pos < grid.size and grid[pos] == k:
            out[pos] = f(x) * f(xp)
            pos += 1
    return out


def estimate_decay(
    f: Callable,
    n_grid,
    *,
    chain: FiniteChain | None = None,
    step: Callable | None = None,
    init: Callable | None = None,
    replicas: int = 1000,
    seed: int = 0,
    threads: int | None = None,
    bound=None,
) -> DecayEstimate:
    """``||P^n f||^2 = E_pi[(P^n f)^2]`` on ``n_grid``.

    With ``chain`` the value is exact. Otherwise each replica draws
    ``X_0 ~ pi`` from ``init(rng, m)`` and runs two conditionally
    independent copies with ``step(x, rng)``; ``f(X_n) f(X'_n)`` is then
    unbiased for ``(P^n f)^2`` averaged over ``X_0``. ``f`` must be centered.
    """
    grid = np.unique(np.asarray(n_grid, dtype=int))
    if grid.size == 0 or grid[0] < 0:
        raise DomainError("n_grid must be nonnegative")
    bnd = None if bound is None else np.asarray(bound(grid) if callable(bound) else bound, dtype=float)
    if chain is not None:
        vals = np.asarray(exact_decay(chain, f, grid), dtype=float)
        return DecayEstimate(grid, vals, np.zeros_like(vals), 0, bnd)
    if step is None or init is None:
        raise ValueError("unsupported mode: a non-finite kernel needs a stationary init and a step")
    blocks = [(b, min(BLOCK, replicas - b * BLOCK)) for b in range(math.ceil(replicas / BLOCK))]
    workers = threads or os.cpu_count() or 1
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda bc: _decay_block(step, f, init, grid, bc[0], bc[1], seed), blocks))
    samples = np.concatenate(parts, axis=1)
    est = samples.mean(axis=1)
    se = samples.std(axis=1, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.full(grid.shape, np.nan)
    return DecayEstimate(grid, est, se, replicas, bnd)


# ---------------------------------------------------------------------------
# pseudo-marginal
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FiniteTarget:
    """Finite-state marginal target with a proposal matrix ``Q``."""

    pi: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        if np.any(pi <= 0) or not math.isclose(pi.sum(), 1.0, rel_tol=1e-12):
            raise ValueError("pi must be a positive probability vector")
        if Q.shape != (pi.size, pi.size) or np.max(np.abs(Q.sum(axis=1) - 1)) > 1e-12:
            raise ValueError("Q must be a row-stochastic matrix matching pi")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "Q", Q)

    def propose(self, x, rng):
        cdf = np.cumsum(self.Q, axis=1)
        u = rng.random(np.shape(x))
        idx = np.asarray(x, dtype=int)
        return (u[..., None] > cdf[idx]).sum(axis=-1)

    def log_ratio(self, x, y):
        """``log pi(y) Q(y, x) - log pi(x) Q(x, y)``."""
        with np.errstate(divide="ignore"):
            num = np.log(self.pi[y]) + np.log(self.Q[y, x])
            den = np.log(self.pi[x]) + np.log(self.Q[x, y])
        return num - den

    def mh_matrix(self) -> np.ndarray:
        """Transition matrix of the marginal MH chain."""
        d = self.pi.size
        P = np.zeros((d, d))
        for i in range(d):
            for j in range(d):
                if i != j and self.Q[i, j] > 0:
                    P[i, j] = self.Q[i, j] * min(1.0, self.pi[j] * self.Q[j, i] / (self.pi[i] * self.Q[i, j]))
            P[i, i] = 1.0 - P[i].sum()
        return P


@dataclass(frozen=True, eq=False)
class PMSpec:
    """Pseudo-marginal chain built on a marginal chain.

    Exactly one of ``c_p`` (spectral gap of the marginal chain) or
    ``marginal_beta`` (its decay profile) must be given. ``tail_factor``
    multiplies the weight tail; 1 is correct for the oscillation penalty,
    because the 1/2 in the Dirichlet form absorbs the factor 2 from
    splitting the joint tail over the two weights.
    """

    weights: object
    c_p: float | None = None
    marginal_beta: BetaFn | None = None
    phi: PhiFunctional = field(default_factory=PhiFunctional)
    target: FiniteTarget | None = None
    tail_factor: float = 1.0

    def __post_init__(self):
        if (self.c_p is None) == (self.marginal_beta is None):
            raise ValueError("give exactly one of c_p or marginal_beta")
        if self.c_p is not None and not 0 < self.c_p <= 1:
            raise DomainError("c_p must lie in (0, 1]")
        if not self.tail_factor >= 1:
            raise DomainError("tail_factor must be at least 1")


def _beta_prime(spec: PMSpec) -> BetaFn:
    b = spec.weights.beta_prime()
    return b if spec.tail_factor == 1 else Rescaled(b, spec.tail_factor, 1.0)


def pm_beta_prime(spec: PMSpec, s):
    """pi-averaged size-biased weight tail bound at ``s``."""
    s = _as_array(s)
    if np.any(s <= 0):
        raise DomainError("s must be positive")
    out = _beta_prime(spec)(s)
    return float(out) if np.ndim(out) == 0 else out


def pm_rate(spec: PMSpec) -> RateBound:
    """Rate of the pseudo-marginal chain (positive, so no left-gap correction).

    Bounded weights with a marginal gap give a gap ``c_p / w_bar``
    directly. Lognormal weights carry their closed-form envelope, obtained
    by rescaling the unscaled lognormal rate.
    """
    w = spec.weights
    if spec.c_p is not None:
        if isinstance(w, Bounded):
            return RateBound(StrongPI(1.0, spec.c_p / w.w_bar), a=spec.phi.a)
        beta = chain_strong(spec.c_p, _beta_prime(spec))
        env = None
        if isinstance(w, Lognormal) and spec.tail_factor == 1:
            c, sigma = spec.c_p, w.sigma
            env = lambda n: lognormal_rate_envelope(sigma, c * _as_array(n)) / c
        return RateBound(beta, a=spec.phi.a, envelope_fn=env)
    return RateBound(chain_weak(spec.marginal_beta, _beta_prime(spec)), a=spec.phi.a)


@dataclass
class PMTrajectory:
    x: np.ndarray
    w: np.ndarray
    accepted: int


def pm_sample(spec: PMSpec, x0, w0, n_steps: int, rng_seed: int) -> PMTrajectory:
    """Joint chain on ``(x, w)``; ``x0`` and ``w0`` may be arrays of chains.

    Per step: propose ``y``, draw ``u ~ Q_y``, accept with probability
    ``1 ^ r(x, y) u / w``. A zero proposed weight is always rejected.
    """
    if spec.target is None:
        raise ValueError("sampling needs a finite target")
    rng = np.random.default_rng(rng_seed)
    x = np.array(x0, dtype=int)
    w = np.broadcast_to(np.asarray(w0, dtype=float), x.shape).copy()
    if np.any(w <= 0):
        raise DomainError("initial weights must be positive")
    xs = np.empty((n_steps + 1,) + x.shape, dtype=int)
    ws = np.empty((n_steps + 1,) + x.shape)
    xs[0], ws[0] = x, w
    accepted = 0
    for k in range(1, n_steps + 1):
        y = spec.target.propose(x, rng)
        u = np.broadcast_to(spec.weights.sample(rng, x.shape), x.shape)
        v = rng.random(x.shape)
        with np.errstate(divide="ignore"):
            log_acc = spec.target.log_ratio(x, y) + np.log(u) - np.log(w)
            accept = np.log(v) < log_acc
        x = np.where(accept, y, x)
        w = np.where(accept, u, w)
        accepted += int(np.sum(accept))
        xs[k], ws[k] = x, w
    return PMTrajectory(xs, ws, accepted)


def mh_sample(target: FiniteTarget, x0, n_steps: int, rng_seed: int) -> np.ndarray:
    """Marginal MH trajectory with the same draw order as :func:`pm_sample`."""
    rng = np.random.default_rng(rng_seed)
    x = np.array(x0, dtype=int)
    xs = np.empty((n_steps + 1,) + x.shape, dtype=int)
    xs[0] = x
    for k in range(1, n_steps + 1):
        y = target.propose(x, rng)
        v = rng.random(x.shape)
        with np.errstate(divide="ignore"):
            accept = np.log(v) < target.log_ratio(x, y)
        x = np.where(accept, y, x)
        xs[k] = x
    return xs
