"""Near-best approximation of a function with a lacunary derivative.

v' is a zero-mean polynomial of degree 2^L orthogonal to linears on all dyadic
intervals above level L, so low-degree refinements gain almost nothing until
the tree backtracks by trimming to a single high-degree element. The greedy
result is compared with the exhaustive optimum over depth-limited partitions.
"""

import argparse
import math

from hpafem.error_functional import LocalErrorOracle
from hpafem.mesh1d import ElementId, RootPartition
from hpafem.problems import lacunary
from hpafem.tree_approx import enumerate_partitions, nearbest_tree


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--L", type=int, default=3)
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.5, 0.2, 0.1, 0.01, 1e-4])
    args = ap.parse_args()

    prob = lacunary(args.L)
    roots = RootPartition()
    oracle = LocalErrorOracle(prob.target, prob.data, 1.0, roots)
    budget = 2**args.L + 2
    parts = enumerate_partitions([ElementId(0, 0, 0)], budget, args.depth)
    costs = [(sum(oracle(k, d) for k, d in p), sum(d for _, d in p)) for p in parts]
    print(f"{len(parts)} partitions with #D <= {budget} and depth <= {args.depth}")
    for eps in args.eps:
        res = nearbest_tree(eps, oracle, roots, max_N=200)
        best = min((n for e, n in costs if e <= eps * eps), default=None)
        elems = " ".join(f"({e.element.level},{e.element.position};{e.degree})" for e in res.partition)
        print(f"eps={eps:8.1e} greedy #D={res.partition.total_dof:3d} "
              f"E^1/2={math.sqrt(res.achieved_error):.2e} optimum #D={best}  {elems}")


if __name__ == "__main__":
    main()
