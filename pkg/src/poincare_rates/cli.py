"""Command-line entry point.

Every command reads an optional JSON config, fills in defaults, validates
keys strictly, writes CSV (or prints a table) and echoes the fully
resolved config to ``<out>/config.json``. Re-running from that echo
reproduces the same output byte for byte.

Config layout::

    {"seed": 0, "threads": null, "format": "csv", "out": "results",
     "<command>": {...}}

For ``pm`` the command block is keyed by the task name, e.g.
``{"pm": {"budget": {"epsilon": 0.1, ...}}}``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .comparison import ChainLink, apply_chain, chain_strong, fitted_exponent
from .kernels import ExpExp, PolyPoly, estimate_decay, imh_beta, imh_rate, imh_step
from .oracle import (
    FiniteChain,
    necessity_beta,
    random_reversible_chain,
    sharpest_beta,
    two_state_beta,
    verify_theorem1,
)
from .rate_core import (
    LognormalTail,
    PhiFunctional,
    Polynomial,
    RateBound,
    beta_from_config,
    beta_to_alpha,
    rockner_wang_rate,
)
from .weights import (
    ABC,
    budget_split,
    lognormal_avar_bound,
    lognormal_Finv,
    lognormal_mixing_n,
    lognormal_sigma_star,
    product_integral,
    product_integral_finite,
    product_required_N,
    product_tail_bound,
)

PM_TASKS = ("lognormal-rate", "mixing", "budget", "avar-curve", "abc", "product")

DEFAULTS = {
    "rate": {
        "beta": {"variant": "polynomial", "c0": 1.0, "c1": 2.0},
        "a": 1.0,
        "mode": "auto",
        "n_min": 1.0,
        "n_max": 1e6,
        "points": 61,
        "rockner_wang": False,
    },
    "chain": {
        "base": {"variant": "polynomial", "c0": 1.0, "c1": 1.0},
        "links": [{"kind": "compare", "beta": {"variant": "polynomial", "c0": 1.0, "c1": 1.0}}],
        "a": 1.0,
        "s_min": 1e-3,
        "s_max": 1e6,
        "n_min": 1.0,
        "n_max": 1e6,
        "points": 61,
    },
    "imh": {
        "family": {"variant": "expexp", "a1": 1.0, "a2": 2.0},
        "s_max": 1e6,
        "points": 61,
        "n_max": 100,
        "empirical": True,
        "replicas": 5000,
        "threshold": 1.0,
    },
    "pm": {
        "lognormal-rate": {"sigma": [0.5, 1.0, 2.0], "c_p": [1.0, 0.1], "n": [1, 10, 100, 1000, 10000]},
        "mixing": {"epsilon": 0.1, "sigma": [0.5, 1.0, 1.5], "c_p": 0.5},
        "budget": {"epsilon": 0.1, "c_p": 0.5, "sigma0_sq": 100.0},
        "avar-curve": {"c_p": 1.0, "sigma_min": 0.1, "sigma_max": 3.0, "points": 59},
        "abc": {"ell": [0.2, 0.5, 0.9], "pi": [0.2, 0.3, 0.5], "N": 10, "p": 2, "s": [1, 10, 100, 1000]},
        "product": {"T": 10, "alpha": 2.0, "p": 2, "b": 1.0, "k": 1.0, "c": 1.0, "ell": 1.0,
                    "s": [1, 10, 100, 1000]},
    },
    "verify": {
        "chains": 50,
        "d": 10,
        "n_max": 200,
        "positive": True,
        "beta_scale": 1.0,
        "necessity_exponent": 2.0,
        "two_state": [0.3, 0.2],
    },
}

GLOBAL_KEYS = {"seed", "threads", "format", "out"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def _merge(defaults: dict, given: dict, path: str) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown key(s) at {path.rstrip('.') or '<root>'}: {sorted(unknown)}")
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(defaults[k], dict) and k not in ("beta", "base", "family"):
            if not isinstance(v, dict):
                raise ConfigError(f"{path}{k} must be an object")
            out[k] = _merge(defaults[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def resolve(command: str, raw: dict, args, task: str | None = None) -> dict:
    allowed = GLOBAL_KEYS | set(DEFAULTS)
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    res = {
        "seed": raw.get("seed", 0),
        "threads": raw.get("threads"),
        "format": raw.get("format", "csv"),
        "out": raw.get("out", "results"),
    }
    for key in ("seed", "threads", "format", "out"):
        val = getattr(args, key, None)
        if val is not None:
            res[key] = val
    if res["format"] not in ("csv", "table"):
        raise ConfigError("format must be 'csv' or 'table'")
    if not isinstance(res["seed"], int) or not 0 <= res["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    block = raw.get(command, {})
    if command == "pm":
        if set(block) - {task}:
            raise ConfigError(f"pm block may only contain the key {task!r}, got {sorted(block)}")
        res["pm"] = {task: _merge(DEFAULTS["pm"][task], block.get(task, {}), f"pm.{task}.")}
    else:
        res[command] = _merge(DEFAULTS[command], block, f"{command}.")
    return res


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return "" if v is None else str(v)


class Emitter:
    def __init__(self, cfg: dict, stream=None):
        self.fmt = cfg["format"]
        self.out = Path(cfg["out"])
        self.stream = stream or sys.stdout
        self.written: list[Path] = []
        if self.fmt == "csv":
            self.out.mkdir(parents=True, exist_ok=True)
            (self.out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")

    def table(self, name: str, header: list[str], rows):
        if self.fmt == "csv":
            p = self.out / f"{name}.csv"
            with open(p, "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(header)
                for row in rows:
                    wr.writerow([_fmt(v) for v in row])
            self.written.append(p)
            return
        cells = [[_fmt(v) if not isinstance(v, float) else f"{v:.6g}" for v in row] for row in rows]
        widths = [max(len(h), *(len(c[i]) for c in cells)) if cells else len(h) for i, h in enumerate(header)]
        print(f"# {name}", file=self.stream)
        print("  ".join(h.rjust(w) for h, w in zip(header, widths)), file=self.stream)
        for c in cells:
            print("  ".join(x.rjust(w) for x, w in zip(c, widths)), file=self.stream)

    def note(self, msg: str):
        print(msg, file=self.stream)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _beta(block: dict, path: str):
    try:
        return beta_from_config(block)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{path}: {e}") from None


def _log_grid(lo, hi, points):
    return np.geomspace(float(lo), float(hi), int(points))


def cmd_rate(cfg: dict, em: Emitter) -> int:
    c = cfg["rate"]
    beta = _beta(c["beta"], "rate.beta")
    rb = RateBound(beta, a=float(c["a"]), mode=c["mode"])
    n = _log_grid(c["n_min"], c["n_max"], c["points"])
    finv = rb.Finv(n)
    with np.errstate(divide="ignore"):
        slope = np.gradient(np.log(finv), np.log(n))
    header = ["n", "F_inverse", "slope"]
    cols = [n, finv, slope]
    if rb.closed is not None:
        header.append("envelope")
        cols.append(rb.envelope(n))
    if c["rockner_wang"]:
        alpha = beta_to_alpha(beta)
        header.append("rockner_wang")
        cols.append(np.array([rockner_wang_rate(alpha, max(1, int(round(k))), a=rb.a) for k in n]))
    em.table("rate", header, zip(*cols))
    return 0


def cmd_chain(cfg: dict, em: Emitter) -> int:
    c = cfg["chain"]
    base = _beta(c["base"], "chain.base")
    links = []
    for i, link in enumerate(c["links"]):
        try:
            links.append(ChainLink.from_config(link))
        except (ValueError, TypeError) as e:
            raise ConfigError(f"chain.links[{i}]: {e}") from None
    a = float(c["a"])
    composed = apply_chain(base, links, a=a)
    s = _log_grid(c["s_min"], c["s_max"], c["points"])
    em.table("beta", ["s", "beta"], zip(s, composed(s)))
    rb = RateBound(composed, a=a)
    n = _log_grid(c["n_min"], c["n_max"], c["points"])
    em.table("rate", ["n", "F_inverse"], zip(n, rb.Finv(n)))
    all_poly = isinstance(base, Polynomial) and links and all(
        lk.kind == "compare" and isinstance(lk.beta, Polynomial) for lk in links
    )
    if all_poly:
        em.note(f"fitted exponent: {fitted_exponent(rb):.6f}")
        e = base.c1
        for lk in links:
            e = e * lk.beta.c1 / (1.0 + e + lk.beta.c1)
        em.note(f"predicted exponent: {e:.6f}")
    return 0


def _imh_family(block: dict):
    block = dict(block)
    name = block.pop("variant", None)
    kinds = {"expexp": (ExpExp, {"a1", "a2"}), "polypoly": (PolyPoly, {"b1", "b2"})}
    if name not in kinds:
        raise ConfigError(f"imh.family.variant must be one of {sorted(kinds)}")
    cls, keys = kinds[name]
    if set(block) != keys:
        raise ConfigError(f"imh.family for {name!r} takes exactly {sorted(keys)}")
    return cls(**{k: float(v) for k, v in block.items()})


def cmd_imh(cfg: dict, em: Emitter) -> int:
    c = cfg["imh"]
    fam = _imh_family(c["family"])
    s = _log_grid(1.0, c["s_max"], c["points"])
    em.table("beta", ["s", "beta"], zip(s, imh_beta(fam, s)))
    rb = imh_rate(fam)
    n = np.arange(1, int(c["n_max"]) + 1, dtype=float)
    em.table("bound", ["n", "F_inverse", "envelope"], zip(n, rb.Finv(n), rb.envelope(n)))
    if c["empirical"]:
        thr = float(c["threshold"])
        mass = fam.target_tail(thr)

        def f(x):
            return (x > thr) - mass

        est = estimate_decay(
            f,
            np.arange(0, int(c["n_max"]) + 1),
            step=lambda x, rng: imh_step(fam, x, rng)[0],
            init=lambda rng, m: fam.sample_target(rng, m),
            replicas=int(c["replicas"]),
            seed=cfg["seed"],
            threads=cfg["threads"],
            bound=lambda k: rb.Finv(k.astype(float)),
        )
        em.table("decay", ["n", "estimate", "se", "bound"], est.rows())
        ok = est.within_bound(3.0)
        em.note(f"empirical decay within bound (3 SE): {ok}")
    return 0


def _pm_lognormal_rate(c, em):
    rows = []
    for sigma in c["sigma"]:
        for cp in c["c_p"]:
            rb = RateBound(chain_strong(float(cp), LognormalTail(float(sigma))), a=1.0, mode="a")
            n = np.asarray(c["n"], dtype=float)
            closed = lognormal_Finv(float(sigma), float(cp), n)
            numeric = rb.Finv(n)
            rows += [(sigma, cp, k, cf, nu) for k, cf, nu in zip(n, closed, numeric)]
    em.table("lognormal_rate", ["sigma", "c_p", "n", "closed_form", "numeric"], rows)


def _pm_mixing(c, em):
    rows = []
    eps, cp = float(c["epsilon"]), float(c["c_p"])
    for sigma in c["sigma"]:
        n = lognormal_mixing_n(eps, float(sigma), cp)
        rows.append((sigma, n, float(lognormal_Finv(float(sigma), cp, n)), eps**2))
    em.table("mixing", ["sigma", "n", "F_inverse_at_n", "epsilon_sq"], rows)


def _pm_budget(c, em):
    rep = budget_split(float(c["epsilon"]), float(c["c_p"]), float(c["sigma0_sq"]))
    em.table("budget", ["quantity", "value"], rep.rows())
    if rep.sigma_bar is not None:
        em.note(f"sqrt(H) * sigma_star: {math.sqrt(rep.H) * rep.sigma_star:.6f} (tends to 3)")


def _pm_avar_curve(c, em):
    cp = float(c["c_p"])
    sig = np.linspace(float(c["sigma_min"]), float(c["sigma_max"]), int(c["points"]))
    rows = []
    for s in sig:
        v, ratio = lognormal_avar_bound(float(s), cp)
        rows.append((s, v, ratio, math.log(ratio)))
    em.table("avar_curve", ["sigma", "v_tilde", "v_over_sigma_sq", "log_v_over_sigma_sq"], rows)
    em.note(f"sigma_star: {lognormal_sigma_star(cp, float(c['sigma_min']), float(c['sigma_max'])):.6f}")


def _pm_abc(c, em):
    model = ABC(tuple(c["ell"]), tuple(c["pi"]), int(c["N"]), int(c["p"]))
    tail = model.tail()
    s = np.asarray(c["s"], dtype=float)
    em.table("abc", ["s", "tail_bound"], zip(s, model.beta_prime()(s)))
    note = " (fell back to p = 1)" if tail.fell_back else ""
    em.note(f"tail constant: {float(tail.c):.17g} at p = {tail.p}{note}")


def _pm_product(c, em):
    T, alpha, p = int(c["T"]), float(c["alpha"]), int(c["p"])
    b, k, cc, ell = (float(c[x]) for x in ("b", "k", "c", "ell"))
    N = product_required_N(T, alpha)
    em.note(f"required N: {N}")
    if not product_integral_finite(b, k, cc, ell, alpha):
        em.note("moment integral diverges at this alpha")
        return
    mp = product_integral(b, k, cc, ell, alpha)
    s = np.asarray(c["s"], dtype=float)
    em.table("product", ["s", "tail_bound"], zip(s, product_tail_bound(mp, p, s)))
    em.note(f"moment integral: {mp:.17g}")


_PM = {
    "lognormal-rate": _pm_lognormal_rate,
    "mixing": _pm_mixing,
    "budget": _pm_budget,
    "avar-curve": _pm_avar_curve,
    "abc": _pm_abc,
    "product": _pm_product,
}


def cmd_pm(cfg: dict, em: Emitter, task: str) -> int:
    _PM[task](cfg["pm"][task], em)
    return 0


def cmd_verify(cfg: dict, em: Emitter) -> int:
    c = cfg["verify"]
    rng = np.random.default_rng(cfg["seed"])
    rows, dumps = [], []
    for k in range(int(c["chains"])):
        chain = random_reversible_chain(int(c["d"]), rng, positive=bool(c["positive"]))
        rep = verify_theorem1(chain, n_max=int(c["n_max"]), seed=cfg["seed"] + k, beta_scale=float(c["beta_scale"]))
        rows.append((k, rep.route, rep.checks, len(rep.violations), rep.worst_ratio))
        if rep.violations:
            dumps.append({"chain": k, "P": chain.P.tolist(), "violations": [asdict(v) for v in rep.violations[:5]]})
    em.table("verify", ["chain", "route", "checks", "violations", "worst_ratio"], rows)
    bad = sum(r[3] for r in rows)

    # polynomial decay -> profile -> rate exponent
    q = float(c["necessity_exponent"])
    s = np.geomspace(2.0, 1e4, 40)
    b1 = necessity_beta(lambda m: m ** (-q), s)
    em.table("necessity", ["s", "beta"], zip(s, b1))
    slope = -np.polyfit(np.log(s[s > 10]), np.log(b1[s > 10]), 1)[0]
    em.note(f"necessity profile exponent: {slope:.4f} (expected {q:.4f})")

    p01, p10 = (float(x) for x in c["two_state"])
    two = FiniteChain(np.array([[1 - p01, p01], [p10, 1 - p10]]))
    s2 = np.geomspace(1e-2, 1.0 / two.gap("P"), 12)
    exact = two_state_beta(p01, p10, "P", s2)
    numeric = sharpest_beta(two, "P", PhiFunctional("osc"), s2)
    err = float(np.max(np.abs(exact - numeric)))
    em.note(f"two-state closed form max error: {err:.3g}")
    if err > 1e-9:
        bad += 1

    if dumps:
        path = Path(cfg["out"]) / "counterexamples.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(dumps, indent=1) + "\n")
        em.note(f"counterexamples written to {path}")
    em.note(f"violations: {bad}")
    return 1 if bad else 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--format", choices=("csv", "table"))
    p = argparse.ArgumentParser(prog="poincare-rates", description="Convergence-rate bounds from decay profiles.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("rate", parents=[common], help="rate curve of a single profile")
    sub.add_parser("chain", parents=[common], help="compose profiles along a comparison pipeline")
    sub.add_parser("imh", parents=[common], help="independent Metropolis-Hastings bound and simulation")
    pm = sub.add_parser("pm", parents=[common], help="pseudo-marginal calculators")
    pm.add_argument("task", choices=PM_TASKS)
    sub.add_parser("verify", parents=[common], help="finite-state verification battery")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
        task = getattr(args, "task", None)
        cfg = resolve(args.command, raw, args, task)
        em = Emitter(cfg)
        if args.command == "pm":
            code = cmd_pm(cfg, em, task)
        else:
            code = {"rate": cmd_rate, "chain": cmd_chain, "imh": cmd_imh, "verify": cmd_verify}[args.command](cfg, em)
    except (ConfigError, ValueError, TypeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for p in em.written:
        print(f"wrote {p}")
    return code


if __name__ == "__main__":
    sys.exit(main())
