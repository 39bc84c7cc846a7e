"""Exact checks on finite state spaces.

Everything here is computed from the transition matrix: decay of
``||P^n f||^2`` by eigendecomposition in the pi-weighted inner product,
Dirichlet forms as quadratic forms, and the sharpest decay profile for the
oscillation penalty by maximising a quadratic form over the unit box.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rate_core import (
    BetaFn,
    DomainError,
    PhiFunctional,
    RateBound,
    Rescaled,
    Tabulated,
    _as_array,
)

__all__ = [
    "FiniteChain",
    "random_reversible_chain",
    "center",
    "dirichlet_form",
    "exact_decay",
    "decay_by_powers",
    "osc_scale",
    "sharpest_beta",
    "sharpest_beta_maximisers",
    "two_state_beta",
    "sharpest_beta_table",
    "necessity_beta",
    "necessity_beta_simple",
    "Counterexample",
    "VerifyReport",
    "verify_theorem1",
    "exact_asymptotic_variance",
]

_SELECTORS = ("P", "P*P", "P2")


@dataclass
class FiniteChain:
    """Row-stochastic matrix with its stationary law.

    ``pi`` is computed from the leading left eigenvector when omitted.
    """

    P: np.ndarray
    pi: np.ndarray | None = None
    reversible: bool = field(init=False)

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("P must be a square matrix")
        if np.any(P < -1e-15) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("P must be row-stochastic to 1e-12")
        if self.pi is None:
            vals, vecs = np.linalg.eig(P.T)
            v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
            pi = v / v.sum()
        else:
            pi = np.array(self.pi, dtype=float)
        if pi.shape != (P.shape[0],) or np.any(pi <= 0):
            raise ValueError("pi must be a positive vector matching P")
        pi = pi / pi.sum()
        if np.max(np.abs(pi @ P - pi)) > 1e-10:
            raise ValueError("pi is not stationary for P to 1e-10")
        self.P, self.pi = P, pi
        flow = pi[:, None] * P
        self.reversible = bool(np.max(np.abs(flow - flow.T)) <= 1e-10)

    @classmethod
    def from_csv(cls, matrix_path, pi_path=None) -> "FiniteChain":
        P = np.loadtxt(matrix_path, delimiter=",", ndmin=2)
        pi = None if pi_path is None else np.loadtxt(pi_path, delimiter=",", ndmin=1)
        return cls(P, pi)

    @property
    def d(self) -> int:
        return self.P.shape[0]

    def adjoint(self) -> np.ndarray:
        return self.P.T * self.pi[None, :] / self.pi[:, None]

    def kernel(self, selector: str) -> np.ndarray:
        if selector == "P":
            return self.P
        if selector == "P*P":
            return self.adjoint() @ self.P
        if selector == "P2":
            return self.P @ self.P
        raise ValueError(f"selector must be one of {_SELECTORS}")

    def symmetrized(self) -> np.ndarray:
        """``D^{1/2} P D^{-1/2}``; symmetric iff the chain is reversible."""
        r = np.sqrt(self.pi)
        return r[:, None] * self.P / r[None, :]

    def spectrum(self):
        """Eigenvalues (ascending) and pi-orthonormal eigenvectors of a reversible chain."""
        if not self.reversible:
            raise DomainError("the spectral route needs a reversible chain")
        S = self.symmetrized()
        vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
        return vals, vecs / np.sqrt(self.pi)[:, None]

    def min_eigenvalue(self) -> float:
        return float(self.spectrum()[0][0])

    def is_positive(self, tol: float = 1e-12) -> bool:
        return self.min_eigenvalue() >= -tol

    def c_gap(self) -> float:
        """Distance of the spectrum's bottom from -1."""
        return 1.0 + self.min_eigenvalue()

    def gap(self, selector: str = "P") -> float:
        """Smallest nonzero eigenvalue of ``Id - T`` on centered functions."""
        vals, _ = self.spectrum()
        lam = vals[:-1]
        if selector == "P":
            return float(1.0 - lam.max())
        return float(1.0 - np.max(lam**2))

    def dirichlet_matrix(self, selector: str) -> np.ndarray:
        """Symmetric ``M`` with ``E(T, f) = f^T M f``."""
        T = self.kernel(selector)
        A = self.pi[:, None] * (np.eye(self.d) - T)
        return 0.5 * (A + A.T)


def random_reversible_chain(d: int, rng: np.random.Generator, positive: bool = True) -> FiniteChain:
    """Random reversible chain; ``positive`` applies the half-lazy map ``(Id + P)/2``."""
    if d < 2:
        raise DomainError("need at least two states")
    W = rng.exponential(size=(d, d))
    W = W + W.T
    if not positive:
        np.fill_diagonal(W, 0.0)
    deg = W.sum(axis=1)
    P = W / deg[:, None]
    if positive:
        P = 0.5 * (np.eye(d) + P)
    P = P / P.sum(axis=1, keepdims=True)
    return FiniteChain(P, deg / deg.sum())


def center(f, pi) -> np.ndarray:
    f = _as_array(f)
    return f - np.dot(pi, f)


def dirichlet_form(chain: FiniteChain, selector: str, f) -> float:
    """``<(Id - T) f, f>_pi`` with ``T`` one of ``P``, ``P*P``, ``P2``."""
    f = _as_array(f)
    if f.shape != (chain.d,):
        raise ValueError("f has the wrong dimension")
    f = center(f, chain.pi)
    return float(f @ chain.dirichlet_matrix(selector) @ f)


def exact_decay(chain: FiniteChain, f, n):
    """``||P^n f||_2^2`` for centered ``f``; ``n`` may be an array."""
    f = center(f, chain.pi)
    if f.shape != (chain.d,):
        raise ValueError("f has the wrong dimension")
    n = np.asarray(n)
    if not chain.reversible:
        return decay_by_powers(chain, f, n)
    vals, vecs = chain.spectrum()
    coef = vecs.T @ (chain.pi * f)
    # f is centered, so its weight on the constant eigenvector is roundoff
    top = int(np.argmax(vals))
    if np.ptp(vecs[:, top]) < 1e-8 * np.max(np.abs(vecs[:, top])):
        coef[top] = 0.0
    with np.errstate(divide="ignore"):
        terms = np.abs(vals)[None, :] ** (2.0 * n.reshape(-1, 1)) * coef[None, :] ** 2
    out = terms.sum(axis=1).reshape(n.shape)
    return float(out) if out.ndim == 0 else out


def decay_by_powers(chain: FiniteChain, f, n):
    """Same quantity by repeated application of ``P``."""
    f = center(f, chain.pi)
    n = np.asarray(n)
    flat = n.ravel().astype(int)
    out = np.empty(flat.shape, dtype=float)
    order = np.argsort(flat)
    g, k = f.copy(), 0
    for idx in order:
        while k < flat[idx]:
            # P keeps the mean at zero; re-centering only strips roundoff
            g = center(chain.P @ g, chain.pi)
            k += 1
        out[idx] = float(np.dot(chain.pi, g * g))
    out = out.reshape(n.shape)
    return float(out) if out.ndim == 0 else out


def osc_scale(chain: FiniteChain) -> float:
    """``max_A pi(A)(1 - pi(A))``: the largest ``||f||^2 / osc(f)^2``.

    Past 20 states the subset scan is skipped for the universal bound 1/4.
    """
    if chain.d > 20:
        return 0.25
    masses = np.array([0.0])
    for p in chain.pi:
        masses = np.concatenate([masses, masses + p])
    return float(np.max(masses * (1.0 - masses)))


# ---------------------------------------------------------------------------
# sharpest profile
# ---------------------------------------------------------------------------


def _box_max(A, B, s_values, starts, sweeps=200, warmup=4, keep=32):
    """``max f^T (A - s B) f`` over ``f`` in ``[0,1]^d`` by exact coordinate ascent.

    After ``warmup`` sweeps only the ``keep`` best starts per ``s`` continue.
    Returns the best value and maximiser per ``s``.
    """
    s = np.asarray(s_values, dtype=float)
    d = A.shape[0]
    f = np.broadcast_to(starts, (s.size,) + starts.shape).copy()  # (S, R, d)
    fA, fB = f @ A, f @ B
    sv = s[:, None]

    def value():
        return np.einsum("srd,srd->sr", f, fA) - sv * np.einsum("srd,srd->sr", f, fB)

    for sweep in range(sweeps):
        if sweep == warmup and f.shape[1] > keep:
            top = np.argsort(-value(), axis=1)[:, :keep]
            f = np.take_along_axis(f, top[..., None], axis=1)
            fA = np.take_along_axis(fA, top[..., None], axis=1)
            fB = np.take_along_axis(fB, top[..., None], axis=1)
        moved = 0.0
        for i in range(d):
            mii = A[i, i] - sv * B[i, i]
            # linear coefficient from the other coordinates
            lin = (fA[..., i] - f[..., i] * A[i, i]) - sv * (fB[..., i] - f[..., i] * B[i, i])
            concave = mii < 0
            with np.errstate(divide="ignore", invalid="ignore"):
                interior = np.clip(-lin / np.where(concave, mii, -1.0), 0.0, 1.0)
            # convex or linear in f_i: best endpoint
            endpoint = (mii + 2.0 * lin > 0).astype(float)
            new = np.where(concave, interior, endpoint)
            delta = new - f[..., i]
            if np.any(delta):
                f[..., i] = new
                fA += delta[..., None] * A[i]
                fB += delta[..., None] * B[i]
                moved = max(moved, float(np.max(np.abs(delta))))
        if moved < 1e-13:
            break
    q = value()
    best = np.argmax(q, axis=1)
    rows = np.arange(s.size)
    return q[rows, best], f[rows, best]


def _starts(d, rng, n_random):
    pts = []
    if d <= 10:
        pts.append(np.array(list(itertools.product((0.0, 1.0), repeat=d))))
    else:
        pts.append(rng.integers(0, 2, size=(1024, d)).astype(float))
    pts.append(rng.random((n_random, d)))
    return np.concatenate(pts)


def _quadratic_parts(chain: FiniteChain, selector: str):
    pi = chain.pi
    A = np.diag(pi) - np.outer(pi, pi)
    return A, chain.dirichlet_matrix(selector)


def sharpest_beta_maximisers(
    chain: FiniteChain,
    selector: str,
    s_values,
    n_random: int = 20,
    seed: int = 0,
):
    """Sharpest ``beta(s)`` for the oscillation penalty, with maximising ``f``.

    ``beta(s) = sup {||f||^2 - s E(T, f)} / osc(f)^2``; by homogeneity the
    sup runs over ``f`` in the unit box. Multi-start coordinate ascent from
    every vertex (``d <= 10``) plus ``n_random`` random interior points.
    """
    s = _as_array(s_values).ravel()
    if np.any(s <= 0):
        raise DomainError("s must be positive")
    A, B = _quadratic_parts(chain, selector)
    rng = np.random.default_rng(seed)
    starts = _starts(chain.d, rng, n_random)
    vals, fs = _box_max(A, B, s, starts)
    if chain.d <= 3:
        v2, f2 = _dense_sweep(A, B, s)
        better = v2 > vals
        vals = np.where(better, v2, vals)
        fs = np.where(better[:, None], f2, fs)
    return np.maximum(vals, 0.0), fs


def _dense_sweep(A, B, s, points=401):
    """Brute force over permutations of ``(0, 1, x)``, ``x`` on a fine grid."""
    d = A.shape[0]
    xs = np.linspace(0.0, 1.0, points)
    cands = []
    for perm in set(itertools.permutations(range(d))):
        for x in xs:
            base = [0.0, 1.0] + [x] * (d - 2)
            cands.append([base[perm[j]] for j in range(d)])
    F = np.unique(np.array(cands), axis=0)
    qa = np.einsum("kd,de,ke->k", F, A, F)
    qb = np.einsum("kd,de,ke->k", F, B, F)
    q = qa[None, :] - s[:, None] * qb[None, :]
    best = np.argmax(q, axis=1)
    return q[np.arange(s.size), best], F[best]


def sharpest_beta(chain: FiniteChain, selector: str, phi: PhiFunctional, s, **kw):
    """Sharpest decay profile value(s) at ``s``; only the oscillation penalty is supported."""
    if phi.kind != "osc":
        raise NotImplementedError("exact sharpest profile is implemented for the oscillation penalty")
    vals, _ = sharpest_beta_maximisers(chain, selector, s, **kw)
    out = vals.reshape(np.shape(s))
    return float(out) if out.ndim == 0 else out


def two_state_beta(p01: float, p10: float, selector: str, s):
    """Closed form for two states: ``max(0, pi0 pi1 - s * E(T, 1_{state 1}))``."""
    pi0, pi1 = p10 / (p01 + p10), p01 / (p01 + p10)
    lam = 1.0 - p01 - p10
    e_ind = pi0 * pi1 * (1.0 - lam if selector == "P" else 1.0 - lam**2)
    return np.maximum(0.0, pi0 * pi1 - _as_array(s) * e_ind)


def sharpest_beta_table(
    chain: FiniteChain,
    selector: str,
    points: int = 48,
    s_min: float = 1e-3,
    seed: int = 0,
    scale: float = 1.0,
):
    """Tabulated sharpest profile with step interpolation and a zero at ``1/gap``.

    Returns ``(profile, s_grid, values, maximisers)``; ``scale`` multiplies
    the values (anything below 1 produces an invalid profile, which the
    verifier must catch).
    """
    gap = chain.gap("P" if selector == "P" else "P*P")
    if not gap > 0:
        raise DomainError("the chain has no spectral gap")
    s_end = 1.0 / gap
    s_grid = np.geomspace(min(s_min, 0.5 * s_end), s_end, points + 1)[:-1]
    vals, fs = sharpest_beta_maximisers(chain, selector, s_grid, seed=seed)
    vals = vals * scale
    keep = [0]
    for k in range(1, len(vals)):
        if vals[k] < vals[keep[-1]] and vals[k] > 0:
            keep.append(k)
    s_tab = np.append(s_grid[keep], s_end)
    b_tab = np.append(vals[keep], 0.0)
    prof = Tabulated(tuple(s_tab), tuple(b_tab), tail_exponent=1.0, interp="step")
    return prof, s_grid, vals, fs


# ---------------------------------------------------------------------------
# necessity
# ---------------------------------------------------------------------------


def _necessity_core(gamma, s, cutoff, t_points, n_points, simple):
    s = _as_array(s)
    if np.any(s <= 1):
        raise DomainError("s must exceed 1")
    flat = s.ravel()
    t = np.unique(np.concatenate([flat, np.geomspace(flat.min(), flat.max() * cutoff, t_points)]))
    n_geo = np.unique(np.floor(np.geomspace(2.0, 4.0 * t.max() + 2.0, n_points)))
    n_all = np.unique(np.concatenate([n_geo, np.maximum(np.floor(t), 2.0), np.maximum(np.floor(t) + 1, 2.0)]))
    g = np.asarray(gamma(n_all), dtype=float)
    # an underflowed gamma(n) is dropped: fewer candidates only raise the infimum
    n_all = n_all[g > 0]
    if n_all.size == 0:
        raise ValueError("gamma vanishes on every candidate n")
    log_g = np.log(g[g > 0])
    out = np.empty_like(t)
    for lo in range(0, t.size, 256):
        tt = t[lo:lo + 256, None]
        nn = n_all[None, :]
        if simple:
            x = nn / (tt - 1.0)
            terms = log_g[None, :] - np.log(x) + x
        else:
            terms = (
                nn * np.log(tt) - (nn - 1.0) * np.log(tt - 1.0)
                + (nn - 1.0) * np.log(nn - 1.0) - nn * np.log(nn) + log_g[None, :]
            )
        out[lo:lo + 256] = np.min(terms, axis=1)
    if simple:
        out = out - math.log(2.0)
    # sup over t >= s: suffix maximum over the grid
    suffix = np.maximum.accumulate(out[::-1])[::-1]
    res = np.exp(suffix[np.searchsorted(t, flat)]).reshape(s.shape)
    return float(res) if res.ndim == 0 else res


def necessity_beta(gamma: Callable, s, cutoff: float = 1e6, t_points: int = 1500, n_points: int = 600):
    """Profile for ``P^2`` implied by ``||P^n f||^2 <= gamma(n) Phi(f)``.

    ``sup_{t >= s} inf_{n >= 2} t^n (t-1)^{1-n} (n-1)^{n-1} n^{-n} gamma(n)``.
    The inner infimum runs over a geometric set of integers that always
    includes ``floor(t)`` and ``floor(t) + 1``; the outer supremum over a
    log grid on ``[s, s * cutoff]`` containing ``s`` itself. Both choices
    can only increase the value at the requested points.
    """
    return _necessity_core(gamma, s, cutoff, t_points, n_points, simple=False)


def necessity_beta_simple(gamma: Callable, s, cutoff: float = 1e6, t_points: int = 1500, n_points: int = 600):
    """The looser ``(1/2) sup_t inf_n gamma(n) ((t-1)/n) exp(n/(t-1))``."""
    return _necessity_core(gamma, s, cutoff, t_points, n_points, simple=True)


# ---------------------------------------------------------------------------
# verification battery
# ---------------------------------------------------------------------------


@dataclass
class Counterexample:
    kind: str
    f: list
    n: float
    lhs: float
    rhs: float


@dataclass
class VerifyReport:
    """Outcome of a decay-bound verification on one chain."""

    violations: list
    worst_ratio: float
    checks: int
    route: str
    c_gap: float

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_theorem1(
    chain: FiniteChain,
    phi: PhiFunctional | None = None,
    n_max: int = 200,
    n_functions: int = 20,
    seed: int = 0,
    beta_scale: float = 1.0,
    rel_tol: float = 1e-9,
) -> VerifyReport:
    """Check ``||P^n f||^2 <= Phi(f) F_a^{-1}(n)`` on a battery of ``f``.

    Positive chains use the profile of ``E(P, .)`` directly; other
    reversible chains with a left gap use ``s -> beta(c_gap s)`` for ``P^2``.
    The inequality defining the profile is re-checked at its maximisers, so
    an understated profile is caught even when the decay bound has slack.
    """
    phi = PhiFunctional("osc") if phi is None else phi
    if phi.kind != "osc":
        raise NotImplementedError("verification uses the oscillation penalty")
    if not chain.reversible:
        raise DomainError("verification needs a reversible chain")
    positive = chain.is_positive()
    c_gap = chain.c_gap()
    if not positive and not c_gap > 1e-12:
        raise DomainError("no left spectral gap: periodic chain")
    a = osc_scale(chain)
    prof, s_grid, vals, fs = sharpest_beta_table(chain, "P", seed=seed, scale=beta_scale)
    violations, checks = [], 0
    # the defining inequality at the maximisers
    B = chain.dirichlet_matrix("P")
    for s, f in zip(s_grid, fs):
        fc = center(f, chain.pi)
        lhs = float(np.dot(chain.pi, fc * fc))
        rhs = s * float(fc @ B @ fc) + float(prof(s)) * phi(f)
        checks += 1
        if lhs > rhs * (1 + rel_tol) + 1e-15:
            violations.append(Counterexample("profile", f.tolist(), float(s), lhs, rhs))
    route = "P" if positive else "P2"
    beta_used = prof if positive else Rescaled(prof, 1.0, c_gap)
    rb = RateBound(beta_used, a=a, mode="a")
    rng = np.random.default_rng(seed + 1)
    _, vecs = chain.spectrum()
    battery = [rng.standard_normal(chain.d) for _ in range(n_functions)]
    battery += [rng.integers(0, 2, chain.d).astype(float) for _ in range(n_functions)]
    battery += [vecs[:, k] for k in range(chain.d - 1)]
    battery += list(fs[:: max(1, len(fs) // 8)])
    n = np.arange(n_max + 1, dtype=float)
    bound_n = rb.Finv(n)
    worst = 0.0
    for f in battery:
        ph = phi(f)
        if ph <= 0:
            continue
        lhs = exact_decay(chain, f, n)
        rhs = ph * bound_n
        live = lhs > 1e-14
        if np.any(live):
            worst = max(worst, float(np.max(lhs[live] / rhs[live])))
        checks += n.size
        bad = np.nonzero(lhs > rhs * (1 + rel_tol) + 1e-15)[0]
        if bad.size:
            k = bad[0]
            violations.append(Counterexample("decay", list(map(float, f)), float(n[k]), float(lhs[k]), float(rhs[k])))
    return VerifyReport(violations, worst, checks, route, c_gap)


def exact_asymptotic_variance(chain: FiniteChain, f) -> float:
    """``v(f, P) = sum_k (1 + l_k)/(1 - l_k) <f, e_k>^2`` over nonunit eigenvalues."""
    f = center(f, chain.pi)
    vals, vecs = chain.spectrum()
    coef = vecs.T @ (chain.pi * f)
    # f is centered, so its weight on the constant eigenvector is roundoff
    top = int(np.argmax(vals))
    if np.ptp(vecs[:, top]) < 1e-8 * np.max(np.abs(vecs[:, top])):
        coef[top] = 0.0
    keep = vals < 1.0 - 1e-12
    return float(np.sum((1.0 + vals[keep]) / (1.0 - vals[keep]) * coef[keep] ** 2))
