"""Decay profiles, their convex conjugates, and the rate integral.

A decay profile ``beta`` is a nonincreasing map ``s -> beta(s)`` with
``beta(s) -> 0``. From it we build ``K(u) = u * beta(1/u)``, the conjugate
``K*(v) = sup_u {u v - K(u)}``, the rate integral ``F(x) = int_x^a dv / K*(v)``
and its inverse, which bounds ``||P^n f||^2 / Phi(f)``.

All numerics run in ``t = -log v`` so that rates decaying like
``exp(-n**gamma)`` stay representable far past the double-precision floor.
"""

from __future__ import annotations

import math
from dataclasses import MISSING, dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "DivergentTailError",
    "BetaFn",
    "StrongPI",
    "Polynomial",
    "StretchedExp",
    "LognormalTail",
    "Tabulated",
    "CallableBeta",
    "Rescaled",
    "Capped",
    "FromAlpha",
    "AlphaFn",
    "PhiFunctional",
    "RateBound",
    "StretchedEnvelope",
    "eval_beta",
    "beta_to_alpha",
    "alpha_to_beta",
    "kstar",
    "F",
    "F_inverse",
    "rescale",
    "stretched_exp_rate",
    "rockner_wang_rate",
    "l2_to_tv",
    "beta_from_config",
]


class DomainError(ValueError):
    """Argument outside the domain of the requested map."""


class DivergentTailError(ValueError):
    """The integral of 1/K* beyond ``a`` does not converge."""


# log-s range that every profile must be able to answer on
_LS_MIN, _LS_MAX = -2000.0, 2000.0
_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


def _as_array(x):
    return np.asarray(x, dtype=float)


def _bisect_first_true(pred, lo, hi, n_iter=64):
    """Vectorized bisection for the smallest point where ``pred`` holds.

    ``pred`` must be monotone (False then True) on every row; ``lo`` is
    assumed False and ``hi`` True. Returns the upper end of the final bracket.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        ok = pred(mid)
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return hi


# ---------------------------------------------------------------------------
# decay profiles
# ---------------------------------------------------------------------------


class BetaFn:
    """Base class for decay profiles.

    Subclasses implement :meth:`log_beta_of_log`, the natural log of
    ``beta(exp(ls))``; everything else derives from it.
    """

    variant = "abstract"

    def log_beta_of_log(self, ls):
        raise NotImplementedError

    def __call__(self, s):
        s = _as_array(s)
        with np.errstate(divide="ignore"):
            return np.exp(self.log_beta_of_log(np.log(s)))

    def log(self, s):
        with np.errstate(divide="ignore"):
            return self.log_beta_of_log(np.log(_as_array(s)))

    def alpha(self, r):
        """``inf{s > 0 : beta(s) <= r}`` evaluated by bisection on log s."""
        r = _as_array(r)
        with np.errstate(divide="ignore"):
            lr = np.log(r)
        shape = r.shape
        lr = lr.ravel()
        below = self.log_beta_of_log(np.full_like(lr, _LS_MIN)) <= lr
        above = self.log_beta_of_log(np.full_like(lr, _LS_MAX)) <= lr
        ls = _bisect_first_true(
            lambda x: self.log_beta_of_log(x) <= lr,
            np.full_like(lr, _LS_MIN),
            np.full_like(lr, _LS_MAX),
        )
        with np.errstate(over="ignore"):
            out = np.exp(ls)
        out = np.where(below, 0.0, out)
        out = np.where(above, out, np.inf)
        return out.reshape(shape)

    def to_config(self) -> dict:
        raise TypeError(f"{type(self).__name__} has no config form")

    def fast(self) -> "BetaFn":
        """A cheap-to-evaluate stand-in used by the conjugate search."""
        return self


@dataclass(frozen=True)
class StrongPI(BetaFn):
    """``beta(s) = a * 1{s <= 1/c_p}``: a spectral gap ``c_p``."""

    a: float = 1.0
    c_p: float = 1.0
    variant = "strong_pi"

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError("a must be positive")
        if not 0 < self.c_p <= 1:
            raise DomainError("c_p must lie in (0, 1]")

    def log_beta_of_log(self, ls):
        ls = _as_array(ls)
        return np.where(ls <= -math.log(self.c_p), math.log(self.a), -np.inf)

    def alpha(self, r):
        r = _as_array(r)
        return np.where(r < self.a, 1.0 / self.c_p, 0.0)

    def to_config(self):
        return {"variant": self.variant, "a": self.a, "c_p": self.c_p}


@dataclass(frozen=True)
class Polynomial(BetaFn):
    """``beta(s) = c0 * s**(-c1)``."""

    c0: float = 1.0
    c1: float = 1.0
    variant = "polynomial"

    def __post_init__(self):
        if not (self.c0 > 0 and self.c1 > 0):
            raise DomainError("c0 and c1 must be positive")

    def log_beta_of_log(self, ls):
        return math.log(self.c0) - self.c1 * _as_array(ls)

    def alpha(self, r):
        r = _as_array(r)
        with np.errstate(over="ignore", divide="ignore"):
            return (self.c0 / r) ** (1.0 / self.c1)

    def to_config(self):
        return {"variant": self.variant, "c0": self.c0, "c1": self.c1}


@dataclass(frozen=True)
class StretchedExp(BetaFn):
    """``beta(s) = eta0 * exp(-eta1 * s**eta2)``."""

    eta0: float = 1.0
    eta1: float = 1.0
    eta2: float = 1.0
    variant = "stretched_exp"

    def __post_init__(self):
        if not (self.eta0 > 0 and self.eta1 > 0 and self.eta2 > 0):
            raise DomainError("eta0, eta1, eta2 must be positive")

    def log_beta_of_log(self, ls):
        with np.errstate(over="ignore"):
            return math.log(self.eta0) - self.eta1 * np.exp(self.eta2 * _as_array(ls))

    def to_config(self):
        return {
            "variant": self.variant,
            "eta0": self.eta0,
            "eta1": self.eta1,
            "eta2": self.eta2,
        }


@dataclass(frozen=True)
class LognormalTail(BetaFn):
    """Sub-Gaussian tail ``exp(-((log s - sigma^2/2)_+)^2 / (2 sigma^2))``."""

    sigma: float = 1.0
    variant = "lognormal_tail"

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")

    def log_beta_of_log(self, ls):
        sig2 = self.sigma**2
        excess = np.maximum(_as_array(ls) - 0.5 * sig2, 0.0)
        return -(excess**2) / (2.0 * sig2)

    def to_config(self):
        return {"variant": self.variant, "sigma": self.sigma}


@dataclass(frozen=True)
class Tabulated(BetaFn):
    """Profile known on a grid.

    ``interp="loglog"`` interpolates linearly in (log s, log beta);
    ``interp="step"`` holds each value until the next grid point, which
    upper-bounds any nonincreasing profile through the same points. Past
    the last point the tail decays like ``s**(-tail_exponent)``; a final
    value of exactly 0 means the profile vanishes from there on.
    """

    s: tuple
    beta: tuple
    tail_exponent: float
    interp: str = "loglog"
    variant = "tabulated"

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        if s.ndim != 1 or s.shape != b.shape or s.size < 2:
            raise ValueError("grid must be two matching 1-D sequences of length >= 2")
        if np.any(s <= 0) or np.any(np.diff(s) <= 0):
            raise ValueError("grid points must be positive and strictly increasing")
        if np.any(np.diff(b) >= 0):
            raise ValueError("tabulated values must be strictly decreasing")
        if np.any(b[:-1] <= 0) or b[-1] < 0:
            raise ValueError("tabulated values must be positive (a trailing 0 is allowed)")
        if self.interp not in ("loglog", "step"):
            raise ValueError(f"unknown interpolation {self.interp!r}")
        if not self.tail_exponent > 0:
            raise ValueError("tail_exponent must be declared and positive")
        object.__setattr__(self, "s", tuple(s.tolist()))
        object.__setattr__(self, "beta", tuple(b.tolist()))

    def log_beta_of_log(self, ls):
        ls = _as_array(ls)
        xs = np.log(np.asarray(self.s))
        b = np.asarray(self.beta)
        zero_end = b[-1] == 0.0
        with np.errstate(divide="ignore"):
            ys = np.log(b)
        if self.interp == "step":
            idx = np.searchsorted(xs, ls, side="right") - 1
            out = ys[np.clip(idx, 0, len(xs) - 1)]
        else:
            npos = len(xs) - 1 if zero_end else len(xs)
            out = np.interp(ls, xs[:npos], ys[:npos])
            # continue the first segment's slope to the left
            slope0 = (ys[1] - ys[0]) / (xs[1] - xs[0]) if npos > 1 else 0.0
            out = np.where(ls < xs[0], ys[0] + slope0 * (ls - xs[0]), out)
            if zero_end:
                # linear in s down to the zero
                s0, s1 = self.s[-2], self.s[-1]
                sv = np.exp(np.clip(ls, xs[-2], xs[-1]))
                frac = np.clip((s1 - sv) / (s1 - s0), 0.0, 1.0)
                with np.errstate(divide="ignore"):
                    last = ys[-2] + np.log(frac)
                out = np.where(ls > xs[-2], last, out)
        if zero_end:
            return np.where(ls >= xs[-1], -np.inf, out)
        tail = ys[-1] - self.tail_exponent * (ls - xs[-1])
        return np.where(ls > xs[-1], tail, out)

    def to_config(self):
        return {
            "variant": self.variant,
            "s": list(self.s),
            "beta": list(self.beta),
            "tail_exponent": self.tail_exponent,
            "interp": self.interp,
        }


@dataclass(frozen=True)
class CallableBeta(BetaFn):
    """Opaque profile given by a vectorized callable ``s -> beta(s)``."""

    fn: Callable
    label: str = "callable"
    variant = "callable"

    def log_beta_of_log(self, ls):
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            s = np.exp(_as_array(ls))
            vals = np.asarray(self.fn(s), dtype=float)
            return np.log(np.maximum(vals, 0.0))


@dataclass(frozen=True)
class Rescaled(BetaFn):
    """``s -> c1 * base(c2 * s)``."""

    base: BetaFn
    c1: float
    c2: float
    variant = "rescaled"

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise DomainError("rescaling constants must be positive")

    def log_beta_of_log(self, ls):
        return math.log(self.c1) + self.base.log_beta_of_log(_as_array(ls) + math.log(self.c2))

    def alpha(self, r):
        return self.base.alpha(_as_array(r) / self.c1) / self.c2

    def to_config(self):
        return {
            "variant": self.variant,
            "base": self.base.to_config(),
            "c1": self.c1,
            "c2": self.c2,
        }


@dataclass(frozen=True)
class Capped(BetaFn):
    """``s -> min(cap, base(s))``."""

    base: BetaFn
    cap: float
    variant = "capped"

    def log_beta_of_log(self, ls):
        return np.minimum(math.log(self.cap), self.base.log_beta_of_log(ls))

    def to_config(self):
        return {"variant": self.variant, "base": self.base.to_config(), "cap": self.cap}


@dataclass(frozen=True)
class AlphaFn:
    """Weak-inequality profile ``r -> alpha(r)``.

    Either wraps a decay profile (``alpha(r) = inf{s : beta(s) <= r}``) or
    a direct callable.
    """

    beta: BetaFn | None = None
    fn: Callable | None = None

    def __post_init__(self):
        if (self.beta is None) == (self.fn is None):
            raise ValueError("give exactly one of beta or fn")

    def __call__(self, r):
        r = _as_array(r)
        if self.fn is not None:
            return np.asarray(self.fn(r), dtype=float)
        return self.beta.alpha(r)


@dataclass(frozen=True)
class FromAlpha(BetaFn):
    """``beta(s) = inf{r > 0 : alpha(r) <= s}`` for a given ``alpha``."""

    alpha_fn: AlphaFn
    variant = "from_alpha"

    def __call__(self, s):
        s = _as_array(s)
        if np.any(s <= 0):
            raise DomainError("s must be positive")
        shape = s.shape
        sv = s.ravel()
        lo, hi = np.full_like(sv, -745.0), np.full_like(sv, 745.0)
        # exp saturates to inf at the top of the bracket, which is the intended limit
        with np.errstate(over="ignore"):
            ok_lo = self.alpha_fn(np.exp(lo)) <= sv
            lr = _bisect_first_true(lambda x: self.alpha_fn(np.exp(x)) <= sv, lo, hi)
            out = np.where(ok_lo, 0.0, np.exp(lr))
        return out.reshape(shape)

    def log_beta_of_log(self, ls):
        with np.errstate(over="ignore"):
            s = np.maximum(np.exp(_as_array(ls)), np.finfo(float).tiny)
        with np.errstate(divide="ignore"):
            return np.log(self(s))


def eval_beta(beta: BetaFn, s):
    """Evaluate a profile; ``s`` must be positive."""
    s_arr = _as_array(s)
    if np.any(~(s_arr > 0)):
        raise DomainError("beta is defined for s > 0 only")
    out = beta(s_arr)
    return float(out) if out.ndim == 0 else out


def beta_to_alpha(beta: BetaFn) -> AlphaFn:
    return AlphaFn(beta=beta)


def alpha_to_beta(alpha: AlphaFn) -> BetaFn:
    return FromAlpha(alpha)


_VARIANTS = {
    "strong_pi": StrongPI,
    "polynomial": Polynomial,
    "stretched_exp": StretchedExp,
    "lognormal_tail": LognormalTail,
    "tabulated": Tabulated,
}


def beta_from_config(cfg: dict) -> BetaFn:
    """Build a profile from ``{"variant": ..., **params}``.

    Unknown variants and unknown or missing keys raise ``ValueError``.
    """
    if not isinstance(cfg, dict) or "variant" not in cfg:
        raise ValueError("beta config needs a 'variant' key")
    name = cfg["variant"]
    params = {k: v for k, v in cfg.items() if k != "variant"}
    if name == "rescaled":
        _check_keys(params, {"base", "c1", "c2"}, name)
        return Rescaled(beta_from_config(params["base"]), float(params["c1"]), float(params["c2"]))
    if name == "capped":
        _check_keys(params, {"base", "cap"}, name)
        return Capped(beta_from_config(params["base"]), float(params["cap"]))
    if name not in _VARIANTS:
        raise ValueError(f"unknown beta variant {name!r}; expected one of {sorted(_VARIANTS)}")
    cls = _VARIANTS[name]
    allowed = set(cls.__dataclass_fields__)
    required = {
        k for k, f in cls.__dataclass_fields__.items()
        if f.default is MISSING and f.default_factory is MISSING
    }
    unknown = set(params) - allowed
    if unknown:
        raise ValueError(f"unknown key(s) {sorted(unknown)} for variant {name!r}")
    missing = required - set(params)
    if missing:
        raise ValueError(f"missing key(s) {sorted(missing)} for variant {name!r}")
    if name == "tabulated":
        params = dict(params, s=tuple(params["s"]), beta=tuple(params["beta"]))
    return cls(**params)


def _check_keys(params, expected, name):
    if set(params) != expected:
        raise ValueError(
            f"variant {name!r} takes keys {sorted(expected)}, got {sorted(params)}"
        )


# ---------------------------------------------------------------------------
# Phi functionals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhiFunctional:
    """Scale-quadratic penalty ``Phi(f)`` on functions of a finite state space.

    ``kind`` is ``"osc"`` (squared oscillation), ``"two_p"`` (``4 ||f||_{2p}^2``)
    or ``"l2"`` (``||f||^2``, only meaningful with a spectral gap).
    """

    kind: str = "osc"
    p: float = math.inf
    a: float = 1.0

    def __post_init__(self):
        if self.kind not in ("osc", "two_p", "l2"):
            raise ValueError(f"unknown Phi kind {self.kind!r}")
        if self.kind == "two_p" and not self.p > 1:
            raise DomainError("p must exceed 1")

    def __call__(self, f, pi=None):
        f = _as_array(f)
        if self.kind == "osc":
            return float((f.max() - f.min()) ** 2)
        if pi is None:
            raise ValueError("weights pi are needed for norm-based Phi")
        pi = _as_array(pi)
        if self.kind == "l2":
            return float(np.sum(pi * f**2))
        p2 = 2.0 * self.p
        return float(4.0 * np.sum(pi * np.abs(f) ** p2) ** (2.0 / p2))


# ---------------------------------------------------------------------------
# conjugate in log coordinates
# ---------------------------------------------------------------------------

_GRID_POINTS = 2000
_GRID_WIDTH = math.log(1e24)  # 24 decades, as for a [1e-12, 1e12] window
_GOLDEN_ITERS = 48
_ROW_CHUNK = 512
_Y_TOP = 700.0


def _log_kappa_numeric(logbeta, t):
    """``log(K*(v) / v)`` at ``v = exp(-t)`` for a profile given by ``logbeta``.

    ``logbeta`` maps log s to log beta(s). The maximiser in log u lies below
    ``-log alpha(v)``, the largest u with ``K(u) <= u v``; we scan 24 decades
    under that point, slide the window down if the scan peaks at its lower
    edge, then refine by golden section.
    """
    t = _as_array(t).ravel()
    out = np.empty_like(t)
    for start in range(0, t.size, _ROW_CHUNK):
        out[start:start + _ROW_CHUNK] = _log_kappa_chunk(logbeta, t[start:start + _ROW_CHUNK])
    return out


def _log_kappa_chunk(logbeta, t):
    lv = -t
    # the objective is positive only where beta(1/u) < v
    below = logbeta(np.full_like(t, _LS_MIN)) < lv
    above = logbeta(np.full_like(t, _LS_MAX)) < lv
    if np.any(~above):
        raise DomainError("profile does not fall below v inside the resolvable range")
    ls_alpha = _bisect_first_true(
        lambda x: logbeta(x) < lv, np.full_like(t, _LS_MIN), np.full_like(t, _LS_MAX)
    )
    # when beta never exceeds v the scan starts at the top of the float range;
    # a maximiser pinned there with a huge value means K*(v) is infinite
    below = below | (-ls_alpha > _Y_TOP)
    y_hi = np.where(below, _Y_TOP, -ls_alpha)

    def objective(y, tt):
        # log(u * (1 - beta(1/u) / v)) with u = exp(y)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            r = logbeta(-y) + tt
            val = y + np.log(-np.expm1(np.minimum(r, 0.0)))
        return np.where(r >= 0, -np.inf, val)

    steps = np.linspace(-_GRID_WIDTH, 0.0, _GRID_POINTS)
    h = steps[1] - steps[0]
    best_y = np.empty_like(t)
    best_val = np.full_like(t, -np.inf)
    todo = np.arange(t.size)
    offset = np.zeros_like(t)
    for _ in range(60):
        if todo.size == 0:
            break
        ys = (y_hi[todo] - offset[todo])[:, None] + steps[None, :]
        vals = objective(ys, t[todo][:, None])
        k = np.argmax(vals, axis=1)
        best_y[todo] = ys[np.arange(todo.size), k]
        best_val[todo] = vals[np.arange(todo.size), k]
        at_edge = (k == 0) & np.isfinite(best_val[todo]) & (vals[:, 0] > vals[:, 1])
        offset[todo[at_edge]] += _GRID_WIDTH
        todo = todo[at_edge]

    lo = best_y - h
    hi = best_y + h
    x1 = hi - _GOLD * (hi - lo)
    x2 = lo + _GOLD * (hi - lo)
    f1 = objective(x1, t)
    f2 = objective(x2, t)
    for _ in range(_GOLDEN_ITERS):
        left = f1 >= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x_new = np.where(left, hi - _GOLD * (hi - lo), lo + _GOLD * (hi - lo))
        f_new = objective(x_new, t)
        x1, x2 = np.where(left, x_new, x2), np.where(left, x1, x_new)
        f1, f2 = np.where(left, f_new, f2), np.where(left, f1, f_new)
    refined = np.maximum(np.maximum(f1, f2), best_val)
    unbounded = below & (best_y >= _Y_TOP - h) & (best_val > _Y_TOP - 50.0)
    return np.where(unbounded, np.inf, refined)


# ---------------------------------------------------------------------------
# rate bound
# ---------------------------------------------------------------------------

_GL_ORDER = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)
_GL_VINV = np.linalg.inv(np.polynomial.legendre.legvander(_GL_X, _GL_ORDER - 1))


class _PanelTable:
    """Piecewise Legendre representation of ``t -> int 1/kappa``.

    Each panel stores the Legendre series of the integrand interpolated at
    Gauss nodes; the running integral is exact for that interpolant, so the
    table's ``F`` and its inverse are consistent to rounding.
    """

    def __init__(self):
        self.edges = []  # panel (left, right) in increasing t
        self.coef = []  # antiderivative series per panel, zero at the left edge
        self.mass = []

    def add(self, left, right, integrand):
        half = 0.5 * (right - left)
        series = _GL_VINV @ integrand
        anti = np.polynomial.legendre.legint(series, lbnd=-1.0) * half
        self.edges.append((left, right))
        self.coef.append(anti)
        self.mass.append(float(np.dot(_GL_W, integrand) * half))

    def finalize(self):
        order = np.argsort([e[0] for e in self.edges])
        self.left = np.array([self.edges[i][0] for i in order])
        self.right = np.array([self.edges[i][1] for i in order])
        self.anti = np.array([self.coef[i] for i in order])
        m = np.array([self.mass[i] for i in order])
        self.cum = np.concatenate([[0.0], np.cumsum(m)])

    @property
    def t_min(self):
        return self.left[0]

    @property
    def t_max(self):
        return self.right[-1]

    def integral_to(self, t):
        """``int_{t_min}^{t} 1/kappa``, vectorized over ``t``."""
        t = np.clip(_as_array(t), self.t_min, self.t_max)
        idx = np.clip(np.searchsorted(self.right, t, side="left"), 0, len(self.left) - 1)
        x = 2.0 * (t - self.left[idx]) / (self.right[idx] - self.left[idx]) - 1.0
        basis = np.polynomial.legendre.legvander(x, self.anti.shape[1] - 1)
        part = np.einsum("...k,...k->...", basis, self.anti[idx])
        return self.cum[idx] + part

    def solve(self, target):
        """Smallest ``t`` with ``integral_to(t) = target`` (vectorized)."""
        target = _as_array(target)
        idx = np.searchsorted(self.cum, target, side="left") - 1
        idx = np.clip(idx, 0, len(self.left) - 1)
        lo = self.left[idx].copy()
        hi = self.right[idx].copy()
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            go_right = self.integral_to(mid) < target
            lo = np.where(go_right, mid, lo)
            hi = np.where(go_right, hi, mid)
        return 0.5 * (lo + hi)


@dataclass
class StretchedEnvelope:
    """Constants of the explicit stretched-exponential envelope.

    ``F_a^{-1}(n) <= c_prime * exp(-(c * (1 + eta2) / eta2 * n) ** gamma)``
    for ``n`` past ``burn_in``, with ``gamma = eta2 / (1 + eta2)``.
    """

    c: float
    c_prime: float
    v0: float
    burn_in: float
    eta: float
    gamma: float

    def __call__(self, n):
        n = _as_array(n)
        scale = self.c / self.gamma
        return self.c_prime * np.exp(-((scale * n) ** self.gamma))


@dataclass
class RateBound:
    """Rate objects derived from a decay profile.

    Parameters
    ----------
    beta : BetaFn
        The decay profile.
    a : float
        ``sup ||f||^2 / Phi(f)``; 1 for oscillation and 2p-norm penalties.
    mode : {"auto", "a", "infinity"}
        Which rate integral ``F`` refers to. ``"auto"`` integrates to
        infinity when that tail converges and stops at ``a`` otherwise.
    closed_form : bool
        Use exact formulas for the strong-gap and polynomial profiles.
    floor : bool
        Replace ``beta(s)`` by ``max(beta(s), a (1 - s)_+)``. Any genuine
        profile already dominates this floor, and it guarantees
        ``K*(v) <= v`` on ``[0, a]``.
    envelope_fn : callable, optional
        Known closed-form upper bound on ``F^{-1}``; overrides the built-in
        strong-gap and polynomial envelopes.
    """

    beta: BetaFn
    a: float = 1.0
    mode: str = "auto"
    closed_form: bool = True
    floor: bool = True
    F_cap: float = 1e13
    envelope_fn: Callable | None = None
    uses_F_infinity: bool = field(init=False)
    closed: str | None = field(init=False)
    tail_mass: float = field(init=False)

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError("a must be positive")
        if self.mode not in ("auto", "a", "infinity"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self._fast_beta = self.beta.fast()
        self.closed = self._detect_closed_form() if self.closed_form else None
        self._t_a = -math.log(self.a)
        if self.closed is None:
            self._build_forward()
        tail = self._tail_integral()
        if tail is None:
            if self.mode == "infinity":
                raise DivergentTailError("integral of 1/K* beyond a diverges")
            self.uses_F_infinity = False
            self.tail_mass = math.inf
        else:
            self.tail_mass = tail
            self.uses_F_infinity = self.mode in ("auto", "infinity")

    # -- profile with floor -------------------------------------------------

    def log_beta_eff(self, ls):
        lb = self._fast_beta.log_beta_of_log(ls)
        if not self.floor:
            return lb
        ls = _as_array(ls)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            fl = math.log(self.a) + np.log1p(-np.minimum(np.exp(ls), 1.0))
        return np.maximum(lb, fl)

    def _detect_closed_form(self):
        b = self.beta
        if isinstance(b, StrongPI) and math.isclose(b.a, self.a):
            return "strong_pi"
        if isinstance(b, Polynomial):
            # the floor stays inactive iff c0 >= a * max_s s^c1 (1 - s)
            c1 = b.c1
            peak = c1**c1 / (1.0 + c1) ** (1.0 + c1)
            if not self.floor or b.c0 >= self.a * peak:
                return "polynomial"
        return None

    # -- log kappa ---------------------------------------------------------------

    def log_kappa(self, t):
        """``log(K*(v)/v)`` at ``v = exp(-t)``; ``inf`` where ``K*`` is infinite."""
        t = _as_array(t)
        if self.closed == "strong_pi":
            return np.where(t >= self._t_a, math.log(self.beta.c_p), np.inf)
        if self.closed == "polynomial":
            c0, c1 = self.beta.c0, self.beta.c1
            logC = math.log(c0 * c1) - (1.0 + 1.0 / c1) * math.log(c0 * (1.0 + c1))
            return logC - t / c1
        return _log_kappa_numeric(self.log_beta_eff, t).reshape(t.shape)

    def _integrand(self, t):
        with np.errstate(over="ignore"):
            return np.exp(-self.log_kappa(t))

    # -- tables -----------------------------------------------------------------

    def _build_forward(self):
        table = _PanelTable()
        left, h = self._t_a, 0.25
        total = 0.0
        while total < self.F_cap:
            right = left + h
            nodes = left + (right - left) * (_GL_X + 1.0) / 2.0
            vals = self._integrand(nodes)
            if not np.all(np.isfinite(vals)):
                raise DomainError("rate integrand overflowed before reaching F_cap")
            spread = abs(math.log(vals[-1] / vals[0])) if vals[0] > 0 and vals[-1] > 0 else 0.0
            if spread > 2.0 and h > 1e-6:
                h *= 0.5
                continue
            table.add(left, right, vals)
            total += table.mass[-1]
            left = right
            if spread < 1.0:
                h *= 1.5
        table.finalize()
        self._fwd = table

    def _tail_integral(self):
        """``int_a^inf dv/K*(v)`` by doubling the truncation, or None if divergent."""
        if self.closed == "strong_pi":
            self._tail = None
            return 0.0
        if self.closed == "polynomial":
            self._tail = None
            c0, c1 = self.beta.c0, self.beta.c1
            ct = (1.0 + c1) ** (1.0 + 1.0 / c1) * c0 ** (1.0 / c1)
            return ct * self.a ** (-1.0 / c1)
        table = _PanelTable()
        right, h = self._t_a, 0.25
        total, length, checked = 0.0, 1.0, None
        while True:
            left = right - h
            nodes = left + (right - left) * (_GL_X + 1.0) / 2.0
            vals = self._integrand(nodes)
            vals = np.where(np.isfinite(vals), vals, 0.0)
            spread = 0.0
            if vals[0] > 0 and vals[-1] > 0:
                spread = abs(math.log(vals[-1] / vals[0]))
            if spread > 2.0 and h > 1e-6:
                h *= 0.5
                continue
            table.add(left, right, vals)
            total += table.mass[-1]
            right = left
            if spread < 1.0:
                h *= 1.5
            while self._t_a - right >= length:
                if checked is not None:
                    inc = total - checked
                    if inc <= 1e-12 * max(total, 1.0):
                        table.finalize()
                        self._tail = table
                        return total
                checked = total
                length *= 2.0
            if length > 2.0**13:
                self._tail = None
                return None

    # -- public evaluators --------------------------------------------------------

    def _mode_inf(self, mode):
        mode = self.mode if mode is None else mode
        if mode == "infinity" or (mode == "auto" and self.uses_F_infinity):
            if self.tail_mass == math.inf:
                raise DivergentTailError("integral of 1/K* beyond a diverges")
            return True
        return False

    def kstar(self, v):
        """Convex conjugate ``K*(v)`` on ``[0, a]``."""
        v = _as_array(v)
        if np.any(v < 0) or np.any(v > self.a * (1 + 1e-12)):
            raise DomainError("K* is evaluated on [0, a]")
        pos = v > 0
        out = np.zeros_like(v)
        out[pos] = v[pos] * np.exp(self.log_kappa(-np.log(v[pos])))
        return float(out) if out.ndim == 0 else out

    def log_F_t(self, t, mode=None):
        """Rate integral as a function of ``t = -log x``."""
        t = _as_array(t)
        inf_mode = self._mode_inf(mode)
        if self.closed == "strong_pi":
            base = (t - self._t_a) / self.beta.c_p
            return np.maximum(base, 0.0) if not inf_mode else np.where(t < self._t_a, 0.0, base)
        if self.closed == "polynomial":
            c0, c1 = self.beta.c0, self.beta.c1
            ct = (1.0 + c1) ** (1.0 + 1.0 / c1) * c0 ** (1.0 / c1)
            full = ct * np.exp(t / c1)
            return full if inf_mode else full - ct * self.a ** (-1.0 / c1)
        fwd = self._fwd.integral_to(np.maximum(t, self._t_a))
        if not inf_mode:
            return fwd
        if self._tail is None:
            return fwd + self.tail_mass
        back = self.tail_mass - self._tail.cum[-1] + self._tail.integral_to(np.minimum(t, self._t_a))
        return np.where(t < self._t_a, back, fwd + self.tail_mass)

    def F(self, x, mode=None):
        """``F(x) = int_x^{a or inf} dv / K*(v)``."""
        x = _as_array(x)
        inf_mode = self._mode_inf(mode)
        if np.any(x <= 0) or (not inf_mode and np.any(x > self.a * (1 + 1e-12))):
            raise DomainError("F is evaluated on (0, a] (or (0, inf) in infinity mode)")
        out = self.log_F_t(-np.log(x), mode)
        if not inf_mode:
            out = np.where(x >= self.a, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def log_Finv(self, n, mode=None, cap=True):
        """``log F^{-1}(n)``; stays finite where ``F^{-1}`` underflows."""
        n = _as_array(n)
        if np.any(n < 0):
            raise DomainError("n must be nonnegative")
        inf_mode = self._mode_inf(mode)
        if self.closed == "strong_pi":
            out = math.log(self.a) - self.beta.c_p * n
        elif self.closed == "polynomial":
            c0, c1 = self.beta.c0, self.beta.c1
            ct = (1.0 + c1) ** (1.0 + 1.0 / c1) * c0 ** (1.0 / c1)
            offset = 0.0 if inf_mode else self.a ** (-1.0 / c1)
            with np.errstate(divide="ignore"):
                out = -c1 * np.log(n / ct + offset)
        else:
            if np.any(n > self._fwd.cum[-1] + (self.tail_mass if inf_mode else 0.0)):
                raise DomainError("n beyond the tabulated range of F")
            if inf_mode:
                out = np.empty_like(n)
                fwd_part = n >= self.tail_mass
                out[fwd_part] = -self._fwd.solve(n[fwd_part] - self.tail_mass)
                if np.any(~fwd_part):
                    if self._tail is None:
                        out[~fwd_part] = np.inf
                    else:
                        # tail table is measured from its lower end
                        target = self._tail.cum[-1] - (self.tail_mass - n[~fwd_part])
                        target = np.maximum(target, 0.0)
                        out[~fwd_part] = -self._tail.solve(target)
            else:
                out = -self._fwd.solve(n)
        if cap:
            out = np.minimum(out, math.log(self.a))
        return out

    def Finv(self, n, mode=None, cap=True):
        """``F^{-1}(n)``: bounds ``||P^n f||^2 / Phi(f)``. Capped at ``a`` by default."""
        out = np.exp(self.log_Finv(n, mode, cap))
        return float(out) if np.ndim(out) == 0 else out

    def envelope(self, n):
        """Closed-form upper envelope where one is known, else None."""
        n = _as_array(n)
        if self.envelope_fn is not None:
            return np.minimum(self.a, np.asarray(self.envelope_fn(n), dtype=float))
        if self.closed == "strong_pi":
            return self.a * np.exp(-self.beta.c_p * n)
        if self.closed == "polynomial":
            c0, c1 = self.beta.c0, self.beta.c1
            with np.errstate(divide="ignore"):
                return np.minimum(self.a, c0 * (1.0 + c1) ** (1.0 + c1) * n ** (-c1))
        return None


# ---------------------------------------------------------------------------
# functional interface
# ---------------------------------------------------------------------------


def kstar(rb: RateBound, v):
    return rb.kstar(v)


def F(rb: RateBound, x, mode=None):
    return rb.F(x, mode)


def F_inverse(rb: RateBound, n, mode=None):
    return rb.Finv(n, mode)


def rescale(rb: RateBound, c1: float, c2: float) -> RateBound:
    """Bound object for ``s -> c1 * beta(c2 s)``, same ``a`` and mode."""
    if not (c1 > 0 and c2 > 0):
        raise DomainError("rescaling constants must be positive")
    if c1 == 1.0 and c2 == 1.0:
        return rb
    b = rb.beta
    if isinstance(b, Polynomial):
        new = Polynomial(c1 * b.c0 * c2 ** (-b.c1), b.c1)
    else:
        new = Rescaled(b, c1, c2)
    return RateBound(new, a=rb.a, mode=rb.mode, closed_form=rb.closed_form, floor=rb.floor)


def stretched_exp_rate(rb: RateBound, n, eta: float | None = None):
    """Numeric ``F_a^{-1}(n)`` with the explicit envelope constants.

    Returns ``(values, envelope)`` where ``envelope`` is a
    :class:`StretchedEnvelope`; ``eta`` in ``(0, eta1)`` defaults to ``eta1/2``.
    """
    b = rb.beta
    if not isinstance(b, StretchedExp):
        raise TypeError("stretched_exp_rate needs a StretchedExp profile")
    eta = 0.5 * b.eta1 if eta is None else float(eta)
    if not 0 < eta < b.eta1:
        raise DomainError("eta must lie in (0, eta1)")
    e2 = b.eta2
    c = 0.5 * eta ** (1.0 / e2)
    # v0: largest v below min(1, a) such that the correction term is at most
    # half of the leading term for every smaller v
    vmax = 0.5 * min(1.0, rb.a)
    lw = np.linspace(math.log(vmax), -700.0, 20000)
    ell = -lw
    ok = b.eta0 * np.exp(lw * (b.eta1 / eta - 1.0)) <= c * ell ** (-1.0 / e2)
    bad = np.nonzero(~ok)[0]
    v0 = float(np.exp(lw[bad[-1] + 1])) if bad.size else vmax
    burn_in = float(np.asarray(rb.F(v0, mode="a")).ravel()[0])
    gamma = e2 / (1.0 + e2)
    k = (c * (1.0 + e2) / e2) ** gamma
    gap = math.floor(burn_in) + 1.0 - burn_in
    c_prime = math.exp(k * gamma * burn_in * gap ** (gamma - 1.0))
    env = StretchedEnvelope(c=c, c_prime=c_prime, v0=v0, burn_in=burn_in, eta=eta, gamma=gamma)
    return rb.Finv(n, mode="a"), env


def rockner_wang_rate(alpha: AlphaFn, n: int, a: float = 1.0, tol: float = 1e-13) -> float:
    """``inf{r > 0 : (1 - 1/max(alpha(r), 1))**n <= r}`` by bisection on ``[0, a]``."""
    if n < 1:
        raise DomainError("n must be at least 1")

    def holds(r):
        al = np.maximum(alpha(np.array([r]))[0], 1.0)
        return (1.0 - 1.0 / al) ** n <= r

    lo, hi = 0.0, a
    while not holds(hi):
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if holds(mid):
            hi = mid
        else:
            lo = mid
    return hi


def l2_to_tv(rb: RateBound, phi_of_density: float, n):
    """Total-variation bound ``sqrt(Phi(dnu/dmu - 1) * F^{-1}(n))``."""
    if phi_of_density < 0:
        raise DomainError("Phi of the density must be nonnegative")
    return np.sqrt(phi_of_density * rb.Finv(n))
