"""Compare the two ghost-tree growth rules and both modified-error rules.

Checks the near-best bound E_N <= 2N/(N-n+1) sigma_n on random subadditive
oracles (exact rational arithmetic) and reports violations per variant.
"""

import argparse
import math
from fractions import Fraction

from hpafem.acceptance import tree_corpus
from hpafem.mesh1d import RootPartition
from hpafem.tree_approx import GhostTree, brute_force_sigma, greedy_h_step

DEPTH, N_MAX = 4, 8


def sequence(oracle, growth, rule):
    t = GhostTree(RootPartition(), oracle, rule, max_level=DEPTH, growth=growth)
    out = {t.n_leaves: t.error}
    while t.n_leaves < N_MAX and t.error > 0 and t.can_grow():
        greedy_h_step(t)
        out[t.n_leaves] = t.error
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--oracles", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    corpus = tree_corpus(args.seed, args.oracles)
    sigmas = [[brute_force_sigma(n, o, DEPTH) for n in range(1, N_MAX + 1)] for o in corpus]
    for growth in ("hp", "h"):
        for rule in ("recursive", "parent"):
            triples = bad = 0
            worst = 0.0
            for o, sig in zip(corpus, sigmas):
                for N, E in sequence(o, growth, rule).items():
                    for n in range(1, N + 1):
                        triples += 1
                        bound = Fraction(2 * N, N - n + 1) * sig[n - 1]
                        if E > bound:
                            bad += 1
                            worst = max(worst, float(E / bound) if bound else math.inf)
            share = 100 * (1 - bad / triples)
            print(f"growth={growth:2s} rule={rule:9s} triples={triples:5d} violations={bad:3d} "
                  f"({share:.2f}% hold) worst ratio={worst:.3g}")


if __name__ == "__main__":
    main()
