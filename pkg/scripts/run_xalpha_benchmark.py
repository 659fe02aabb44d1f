"""Run hp-AFEM on -u'' = f with u = x^alpha - x and report the decay fit.

Usage: python scripts/run_xalpha_benchmark.py --iters 22 --out runs/xalpha_bench.csv
"""

import argparse
import csv
import time

from hpafem.driver import decay_fit, derive_params, hp_afem
from hpafem.problems import xalpha


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alpha", type=float, default=0.7)
    ap.add_argument("--iters", type=int, default=22)
    ap.add_argument("--mu", type=float, default=0.1)
    ap.add_argument("--safety", type=float, default=0.25)
    ap.add_argument("--growth", choices=["h", "hp"], default="hp")
    ap.add_argument("--out", default=None, help="optional CSV of the iteration records")
    args = ap.parse_args()

    prob = xalpha(args.alpha)
    params = derive_params(prob.data, B=2.0, mu=args.mu, safety=args.safety)
    print(f"delta={params.delta:.3g} omega={params.omega:.4g} ratio={params.ratio:.4f} rho={params.rho:.4g}")
    t0 = time.perf_counter()

    def show(r):
        print(f"i={r.i:3d} eps={r.eps:.3e} #D={r.dofs_nearbest:4d} #Dbar={r.dofs_reduce:4d} "
              f"err={r.true_error:.3e} osc={r.osc:.3e} ({time.perf_counter() - t0:.1f}s)")

    recs = hp_afem(prob.data, params, prob.u_exact, max_iters=args.iters, growth=args.growth, callback=show)
    fit = decay_fit([r.dofs_nearbest for r in recs], [r.true_error for r in recs])
    print(f"decay fit: tau={fit.tau:.3f} eta={fit.eta:.3f} r2={fit.r2:.4f} {fit.note}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(recs[0].CSV_FIELDS)
            for r in recs:
                w.writerow(r.row().values())


if __name__ == "__main__":
    main()
