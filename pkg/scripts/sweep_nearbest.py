"""Sweep the near-best tolerance for v = x^alpha and print #D against eps.

The near-best cardinality should grow slowly (sub-algebraically) in 1/eps.
Below about 1e-4 the element touching the singularity reaches the depth cap,
so smaller tolerances end in a budget or stagnation exit.
"""

import argparse
import math

import numpy as np

from hpafem.driver import decay_fit
from hpafem.error_functional import LocalErrorOracle
from hpafem.mesh1d import RootPartition
from hpafem.problems import xalpha
from hpafem.tree_approx import BudgetExceeded, Stagnation, nearbest_tree


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alpha", type=float, default=0.7)
    ap.add_argument("--delta", type=float, default=1.0)
    ap.add_argument("--growth", choices=["h", "hp"], default="hp")
    ap.add_argument("--max-N", type=int, default=2000)
    ap.add_argument("--eps", type=float, nargs="+", default=[10.0**-k for k in np.arange(1, 4.5, 0.5)])
    args = ap.parse_args()

    prob = xalpha(args.alpha)
    roots = RootPartition()
    oracle = LocalErrorOracle(prob.u_exact, prob.data, args.delta, roots)
    dofs, errs = [], []
    print(f"{'eps':>10} {'#D':>5} {'E^1/2':>10} {'trimmed':>7} {'max_d':>5}")
    for eps in args.eps:
        try:
            res = nearbest_tree(eps, oracle, roots, max_N=args.max_N, growth=args.growth)
        except (BudgetExceeded, Stagnation) as exc:
            print(f"{eps:10.2e} stopped: {exc}", flush=True)
            break
        last = res.trace[-1]
        dofs.append(res.partition.total_dof)
        errs.append(math.sqrt(res.achieved_error))
        print(f"{eps:10.2e} {dofs[-1]:5d} {errs[-1]:10.3e} {last.num_trimmed:7d} {last.max_d:5d}", flush=True)
    fit = decay_fit(dofs, errs)
    if not fit.ok:
        print(f"decay fit unavailable: {fit.note}")
        return
    print(f"decay fit: tau={fit.tau:.3f} eta={fit.eta:.3f} r2={fit.r2:.4f}")


if __name__ == "__main__":
    main()
