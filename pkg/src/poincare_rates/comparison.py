"""Composing functional inequalities across kernels.

A base inequality for one kernel plus a Dirichlet-form comparison with a
second kernel yields an inequality for the second kernel. The helpers here
build the resulting decay profile, either in closed form (strong gap,
spectral-gap correction) or as a numeric infimum over splittings
``s = s1 * s2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .rate_core import (
    BetaFn,
    Capped,
    CallableBeta,
    DomainError,
    Polynomial,
    RateBound,
    Rescaled,
    StrongPI,
    _as_array,
    beta_from_config,
)

__all__ = [
    "InfimumBeta",
    "TailPower",
    "ChainLink",
    "SequenceReport",
    "chain_strong",
    "chain_weak",
    "chain_weak_conjugate",
    "spectral_gap_correct",
    "dirichlet_domination_beta",
    "weakly_lazy_tail",
    "beta_sequence_limit",
    "apply_chain",
    "fitted_exponent",
]

_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


def chain_strong(c_p: float, beta_prime: BetaFn) -> BetaFn:
    """Profile ``s -> beta_prime(c_p s) / c_p`` from a spectral gap ``c_p``."""
    if not 0 < c_p <= 1:
        raise DomainError("c_p must lie in (0, 1]")
    if c_p == 1.0:
        return beta_prime
    if isinstance(beta_prime, Polynomial):
        b = beta_prime
        return Polynomial(b.c0 * c_p ** (-b.c1) / c_p, b.c1)
    return Rescaled(beta_prime, 1.0 / c_p, c_p)


def spectral_gap_correct(beta: BetaFn, c_gap: float) -> BetaFn:
    """Profile ``s -> beta(c_gap s)`` transferring an inequality from P to P^2."""
    if not 0 < c_gap <= 1:
        raise DomainError("c_gap must lie in (0, 1]")
    if c_gap == 1.0:
        return beta
    if isinstance(beta, Polynomial):
        return Polynomial(beta.c0 * c_gap ** (-beta.c1), beta.c1)
    return Rescaled(beta, 1.0, c_gap)


@dataclass(frozen=True, eq=False)
class InfimumBeta(BetaFn):
    """``beta(s) = inf_{s1 s2 = s} {s1 * beta2(s2) + beta1(s1)}``.

    ``beta1`` is the base inequality, ``beta2`` the comparison between the
    two Dirichlet forms. The penalty of the result is the larger of the two
    input penalties, so ``a`` is their maximum.
    """

    beta1: BetaFn
    beta2: BetaFn
    a: float = 1.0
    grid_points: int = 400
    half_width: float = 30.0
    variant = "infimum"

    def _log_objective(self, x, ls):
        with np.errstate(invalid="ignore"):
            return np.logaddexp(
                x + self.beta2.log_beta_of_log(ls - x), self.beta1.log_beta_of_log(x)
            )

    def log_beta_of_log(self, ls):
        ls = _as_array(ls)
        shape = ls.shape
        flat = ls.ravel()
        out = np.empty_like(flat)
        for start in range(0, flat.size, 256):
            out[start:start + 256] = self._minimize(flat[start:start + 256])
        return out.reshape(shape)

    def _minimize(self, ls):
        lo = -self.half_width + np.minimum(ls, 0.0)
        hi = self.half_width + np.maximum(ls, 0.0)
        frac = np.linspace(0.0, 1.0, self.grid_points)
        xs = lo[:, None] + (hi - lo)[:, None] * frac[None, :]
        vals = self._log_objective(xs, ls[:, None])
        k = np.argmin(vals, axis=1)
        rows = np.arange(ls.size)
        best = vals[rows, k]
        step = (hi - lo) / (self.grid_points - 1)
        a = xs[rows, k] - step
        b = xs[rows, k] + step
        x1 = b - _GOLD * (b - a)
        x2 = a + _GOLD * (b - a)
        f1 = self._log_objective(x1, ls)
        f2 = self._log_objective(x2, ls)
        for _ in range(60):
            left = f1 <= f2
            b = np.where(left, x2, b)
            a = np.where(left, a, x1)
            xn = np.where(left, b - _GOLD * (b - a), a + _GOLD * (b - a))
            fn = self._log_objective(xn, ls)
            x1, x2 = np.where(left, xn, x2), np.where(left, x1, xn)
            f1, f2 = np.where(left, fn, f2), np.where(left, f1, fn)
        return np.minimum(best, np.minimum(f1, f2))

    @cached_property
    def _surrogate(self):
        grid = np.arange(-60.0, 60.0 + 1e-9, 0.05)
        vals = self.log_beta_of_log(grid)
        vals = np.where(np.isfinite(vals), vals, -1e4)
        # enforce monotonicity against rounding in the inner minimisation
        vals = np.minimum.accumulate(vals)
        return grid, vals, PchipInterpolator(grid, vals, extrapolate=False)

    def fast(self):
        grid, vals, interp = self._surrogate
        slope_lo = (vals[1] - vals[0]) / (grid[1] - grid[0])
        slope_hi = min((vals[-1] - vals[-2]) / (grid[-1] - grid[-2]), 0.0)

        def log_fast(ls):
            ls = _as_array(ls)
            inside = np.clip(ls, grid[0], grid[-1])
            out = interp(inside)
            out = np.where(ls < grid[0], vals[0] + slope_lo * (ls - grid[0]), out)
            return np.where(ls > grid[-1], vals[-1] + slope_hi * (ls - grid[-1]), out)

        return _LogCallable(log_fast)


@dataclass(frozen=True, eq=False)
class _LogCallable(BetaFn):
    log_fn: Callable
    variant = "surrogate"

    def log_beta_of_log(self, ls):
        return self.log_fn(ls)


def chain_weak(beta1: BetaFn, beta2: BetaFn, a1: float = 1.0, a2: float = 1.0) -> InfimumBeta:
    """Compose a base profile ``beta1`` with a comparison profile ``beta2``."""
    return InfimumBeta(beta1, beta2, a=max(a1, a2))


def chain_weak_conjugate(beta1: BetaFn, beta2: BetaFn, v, a: float = 1.0):
    """The composed conjugate evaluated as ``K2*(K1*(v))``."""
    rb1 = RateBound(beta1, a=a, floor=False)
    rb2 = RateBound(beta2, a=a, floor=False)
    return rb2.kstar(rb1.kstar(v))


@dataclass(frozen=True, eq=False)
class TailPower(BetaFn):
    """``s -> tail(s) ** exponent`` for a tail-mass function ``tail``."""

    tail: Callable
    exponent: float
    variant = "tail_power"

    def log_beta_of_log(self, ls):
        with np.errstate(over="ignore", divide="ignore"):
            s = np.exp(_as_array(ls))
            mass = np.clip(np.asarray(self.tail(s), dtype=float), 0.0, 1.0)
            return self.exponent * np.log(mass)


def dirichlet_domination_beta(eps_tail: Callable, p: float) -> TailPower:
    """Comparison profile ``s -> eps_tail(s) ** (1/q)`` with ``1/p + 1/q = 1``.

    ``p = inf`` (oscillation penalty) gives exponent 1.
    """
    if not p > 1:
        raise DomainError("p must exceed 1")
    inv_q = 1.0 if math.isinf(p) else 1.0 - 1.0 / p
    return TailPower(eps_tail, inv_q)


def weakly_lazy_tail(eps_values: Sequence[float], masses: Sequence[float]) -> Callable:
    """``s -> mu(1/eps(X) >= s)`` for a finitely supported laziness ``eps``."""
    eps = np.asarray(eps_values, dtype=float)
    m = np.asarray(masses, dtype=float)
    if np.any(eps <= 0) or np.any(eps > 1):
        raise DomainError("laziness values must lie in (0, 1]")
    if np.any(m < 0) or not math.isclose(m.sum(), 1.0, rel_tol=1e-12):
        raise ValueError("masses must be a probability vector")

    def tail(s):
        s = _as_array(s)
        return np.sum(m * (1.0 / eps >= s[..., None]), axis=-1)

    return tail


@dataclass
class SequenceReport:
    iotas: list
    gaps: list
    ordered: bool
    decreasing: bool
    n_grid: np.ndarray = field(repr=False)


def beta_sequence_limit(
    betas: Callable[[float], BetaFn] | Sequence[BetaFn],
    beta1: BetaFn,
    iotas: Sequence[float],
    n_grid=None,
    s_grid=None,
    a: float = 1.0,
) -> SequenceReport:
    """Track ``sup_n {F_iota^{-1}(n) - F_1^{-1}(n)}`` along a decreasing ``iotas``.

    Each profile of the family must dominate ``beta1`` on ``s_grid``; a
    violation raises ``ValueError`` naming the offending ``(iota, s)``.
    """
    family = list(betas) if not callable(betas) else [betas(i) for i in iotas]
    if len(family) != len(iotas):
        raise ValueError("one profile per iota is required")
    n_grid = np.unique(np.concatenate([np.arange(0, 101), np.geomspace(100, 1e5, 200)])) \
        if n_grid is None else np.asarray(n_grid, dtype=float)
    s_grid = np.geomspace(1e-3, 1e4, 400) if s_grid is None else np.asarray(s_grid, dtype=float)
    base_vals = beta1(s_grid)
    for iota, b in zip(iotas, family):
        bad = np.nonzero(b(s_grid) < base_vals * (1 - 1e-12))[0]
        if bad.size:
            raise ValueError(
                f"profile at iota={iota} falls below the limit at s={s_grid[bad[0]]:.6g}"
            )
    ref = RateBound(beta1, a=a, mode="a").Finv(n_grid)
    gaps, ordered = [], True
    for b in family:
        cur = RateBound(b, a=a, mode="a").Finv(n_grid)
        diff = cur - ref
        ordered &= bool(np.all(diff >= -1e-9))
        gaps.append(float(np.max(diff)))
    decreasing = all(g2 <= g1 + 1e-12 for g1, g2 in zip(gaps, gaps[1:]))
    return SequenceReport(list(iotas), gaps, ordered, decreasing, n_grid)


def fitted_exponent(rb: RateBound, n_lo: float = 1e3, n_hi: float = 1e6, points: int = 25) -> float:
    """Least-squares slope of ``-log F^{-1}(n)`` against ``log n``."""
    n = np.geomspace(n_lo, n_hi, points)
    y = rb.log_Finv(n, cap=False)
    return float(-np.polyfit(np.log(n), y, 1)[0])


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainLink:
    """One step of a comparison pipeline.

    kinds:
      ``"compare"``       comparison profile ``beta`` between Dirichlet forms
      ``"spectral_gap"``  left spectral gap ``c_gap`` (P to P^2)
      ``"weakly_lazy"``   laziness values/masses with exponent ``p``
    """

    kind: str
    beta: BetaFn | None = None
    c_gap: float | None = None
    eps_values: tuple = ()
    masses: tuple = ()
    p: float = math.inf

    @classmethod
    def from_config(cls, cfg: dict) -> "ChainLink":
        kind = cfg.get("kind")
        rest = {k: v for k, v in cfg.items() if k != "kind"}
        if kind == "compare":
            if set(rest) != {"beta"}:
                raise ValueError("a 'compare' link takes exactly the key 'beta'")
            return cls(kind, beta=beta_from_config(rest["beta"]))
        if kind == "spectral_gap":
            if set(rest) != {"c_gap"}:
                raise ValueError("a 'spectral_gap' link takes exactly the key 'c_gap'")
            return cls(kind, c_gap=float(rest["c_gap"]))
        if kind == "weakly_lazy":
            allowed = {"eps_values", "masses", "p"}
            if not {"eps_values", "masses"} <= set(rest) <= allowed:
                raise ValueError(f"a 'weakly_lazy' link takes keys {sorted(allowed)}")
            p = rest.get("p", "inf")
            return cls(
                kind,
                eps_values=tuple(rest["eps_values"]),
                masses=tuple(rest["masses"]),
                p=float(p),
            )
        raise ValueError(f"unknown link kind {kind!r}")


def apply_chain(base: BetaFn, links: Sequence[ChainLink], a: float = 1.0) -> BetaFn:
    """Apply ``links`` in order; an empty list returns ``base`` unchanged."""
    cur = base
    for link in links:
        if link.kind == "spectral_gap":
            cur = spectral_gap_correct(cur, link.c_gap)
            continue
        if link.kind == "compare":
            comp = link.beta
        elif link.kind == "weakly_lazy":
            comp = dirichlet_domination_beta(weakly_lazy_tail(link.eps_values, link.masses), link.p)
        else:
            raise ValueError(f"unknown link kind {link.kind!r}")
        if isinstance(cur, StrongPI):
            cur = Capped(chain_strong(cur.c_p, comp), cur.a)
        else:
            cur = chain_weak(cur, comp, a1=a, a2=a)
    return cur
