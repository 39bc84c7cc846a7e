"""Random finite-state battery for the decay bound.

Draws reversible chains, computes the sharpest profile numerically and checks
||P^n f||^2 <= osc(f)^2 F^{-1}(n) exactly through the spectrum. Non-positive
chains go through the two-step route. Prints one line per chain.

    python3 scripts/verify_battery.py --chains 200 --d-max 10 --mixed
"""
import argparse
import time

import numpy as np

from poincare_rates.oracle import random_reversible_chain, verify_theorem1


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--chains", type=int, default=50)
    ap.add_argument("--d-max", type=int, default=10)
    ap.add_argument("--n-max", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--beta-scale", type=float, default=1.0, help="below 1 understates the profile")
    ap.add_argument("--mixed", action="store_true", help="also draw non-positive chains")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    bad = 0
    t0 = time.perf_counter()
    for k in range(args.chains):
        d = int(rng.integers(2, args.d_max + 1))
        positive = not (args.mixed and rng.random() < 0.5)
        rep = verify_theorem1(random_reversible_chain(d, rng, positive=positive), n_max=args.n_max,
                              seed=k, beta_scale=args.beta_scale)
        bad += not rep.ok
        print(f"{k:4d} d={d:2d} route={rep.route:2s} worst={rep.worst_ratio:.4f} "
              f"violations={len(rep.violations)}")
    print(f"chains with violations: {bad}/{args.chains} in {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
