"""Random rational error oracles for exercising the tree algorithms.

Values are ``Fraction`` so every inequality can be checked exactly. Each
oracle is h-subadditive (``e_{K',d} + e_{K'',d} <= e_{K,d}``) and
non-increasing in ``d``; nodes are generated lazily from a per-node seed, so
the master tree is unbounded.
"""

from __future__ import annotations

import random
from fractions import Fraction

from hpafem.mesh1d import ElementId

_GRID = 8  # shares are multiples of 1/_GRID


class RandomTreeOracle:
    """Deterministic random ``e_{K,d}`` on the dyadic tree.

    Args:
        seed: Instance seed.
        stall_prob: Probability that one child keeps its parent's full error
            (no error reduction), which exercises the modified-error penalty.
        p_decay: Probability that raising ``d`` keeps the error unchanged.
    """

    supports_zero = False

    def __init__(self, seed: int, stall_prob: float = 0.25, p_decay: float = 0.3):
        self.seed = seed
        self.stall_prob = stall_prob
        self.p_decay = p_decay
        self._vals: dict[ElementId, list[Fraction]] = {}
        self._shares: dict[ElementId, list[tuple[Fraction, Fraction]]] = {}

    def _rng(self, k: ElementId, tag: int) -> random.Random:
        return random.Random(hash((self.seed, k.root, k.level, k.position, tag)) & 0xFFFFFFFF)

    def _share(self, parent: ElementId, d: int) -> tuple[Fraction, Fraction]:
        lst = self._shares.setdefault(parent, [])
        while len(lst) < d:
            rng = self._rng(parent, 1000 + len(lst))
            if rng.random() < self.stall_prob:
                a, b = Fraction(1), Fraction(0)
                if rng.random() < 0.5:
                    a, b = b, a
            else:
                ia = rng.randint(0, _GRID)
                ib = rng.randint(0, _GRID - ia)
                a, b = Fraction(ia, _GRID), Fraction(ib, _GRID)
            lst.append((a, b))
        return lst[d - 1]

    def _extend(self, k: ElementId, d: int) -> list[Fraction]:
        vals = self._vals.setdefault(k, [])
        while len(vals) < d:
            n = len(vals) + 1
            if k.level == 0:
                rng = self._rng(k, n)
                if n == 1:
                    v = Fraction(rng.randint(1, 64), 64)
                elif rng.random() < self.p_decay:
                    v = vals[-1]
                else:
                    v = vals[-1] * Fraction(rng.randint(0, _GRID), _GRID)
            else:
                parent = k.parent()
                a, b = self._share(parent, n)
                share = a if k.position % 2 == 0 else b
                v = share * self(parent, n)
                if vals:
                    v = min(v, vals[-1])
            vals.append(v)
        return vals

    def __call__(self, k: ElementId, d: int) -> Fraction:
        if d < 1:
            raise ValueError("this oracle has no d = 0 value")
        return self._extend(k, d)[d - 1]


class TableOracle:
    """Oracle backed by an explicit ``{(k, d): value}`` table.

    Missing ``d`` fall back to the largest tabulated ``d' <= d``, which keeps
    monotonicity in ``d``; missing nodes raise ``KeyError``.
    """

    def __init__(self, table: dict[tuple[ElementId, int], object], supports_zero: bool = False):
        self.table = dict(table)
        self.supports_zero = supports_zero

    def __call__(self, k: ElementId, d: int):
        for dd in range(d, -1, -1):
            if (k, dd) in self.table:
                return self.table[(k, dd)]
        raise KeyError((k, d))
