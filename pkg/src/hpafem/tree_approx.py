"""Near-best tree approximation on the binary master tree.

Contains the h-greedy driven by harmonic-mean modified errors, the hp
trimming of a ghost h-tree into a subordinate hp-tree, the hp near-best
wrapper with an error-threshold stopping rule, unification of several roots
into a single tree, and exhaustive oracles for small instances.

Error oracles are callables ``oracle(k, d) -> float`` on element ids and
integer ``d >= 1`` (``d = 0`` only when ``oracle.supports_zero`` is true).
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Iterable, Protocol, Sequence, Union

from hpafem.mesh1d import MAX_LEVEL, ElementId, HPartition, HpPartition, RootPartition

log = logging.getLogger(__name__)

MODIFIED_RULES = ("parent", "recursive")
GROWTH_RULES = ("h", "hp")


class ErrorOracle(Protocol):
    supports_zero: bool

    def __call__(self, k: ElementId, d: int) -> float: ...


class BudgetExceeded(RuntimeError):
    """The tree reached ``max_N`` leaves before the error target was met."""

    def __init__(self, msg: str, trace: list):
        super().__init__(msg)
        self.trace = trace


class Stagnation(RuntimeError):
    """No leaf can be bisected but the error target is not met."""

    def __init__(self, msg: str, trace: list):
        super().__init__(msg)
        self.trace = trace


class ExhaustiveBudgetExceeded(RuntimeError):
    """Brute-force enumeration would exceed its combinatorial budget."""


@dataclass(frozen=True, order=True)
class SyntheticId:
    """Node of the unification layer above the real roots.

    ``virtual`` nodes are empty padding domains with zero error that consume
    no cardinality.
    """

    height: int
    index: int
    virtual: bool = False


NodeKey = Union[ElementId, SyntheticId]


def _is_real(k: NodeKey) -> bool:
    return isinstance(k, ElementId)


@dataclass
class GhostNode:
    key: NodeKey
    parent: NodeKey | None
    children: tuple[NodeKey, NodeKey] | None = None
    e1: float = 0.0
    e_mod: float = 0.0
    d_count: int = 1
    e_hp: float = 0.0
    trimmed: bool = False
    split: tuple[int, int] | None = None  # degree split of a trimmed synthetic node


@dataclass
class WorkCounters:
    steps: int = 0
    node_updates: int = 0
    max_path: int = 0
    oracle_calls: int = 0


def modified_error(e: float, parent_value: float) -> float:
    """Harmonic combination ``1/(1/e + 1/parent_value)``, zero when ``e == 0``."""
    if e == 0 or parent_value == 0:
        return 0.0
    return e * parent_value / (e + parent_value)


class ExtendedErrors:
    """Errors of synthetic nodes: optimal split of ``d`` among the two children.

    Calling the object gives ``e_{K,d}`` on any node of the unified tree.
    """

    def __init__(self, call: Callable[[ElementId, int], float], min_real: int):
        self.call = call
        self.min_real = min_real
        self.memo: dict[tuple[SyntheticId, int], tuple[float, tuple[int, int] | None]] = {}
        self.supports_zero = min_real == 0
        self.children: dict[SyntheticId, tuple[NodeKey, NodeKey]] = {}

    def min_degree(self, k: NodeKey) -> int:
        if _is_real(k):
            return self.min_real
        if k.virtual:
            return 0
        a, b = self.children[k]
        return self.min_degree(a) + self.min_degree(b)

    def value(self, k: NodeKey, d: int) -> float:
        return self.best(k, d)[0]

    __call__ = value

    def best(self, k: NodeKey, d: int) -> tuple[float, tuple[int, int] | None]:
        if _is_real(k):
            if d < self.min_real:
                return math.inf, None
            return self.call(k, d), None
        if k.virtual:
            return (0.0, None) if d >= 0 else (math.inf, None)
        hit = self.memo.get((k, d))
        if hit is not None:
            return hit
        a, b = self.children[k]
        lo_a, lo_b = self.min_degree(a), self.min_degree(b)
        best: tuple[float, tuple[int, int] | None] = (math.inf, None)
        for da in range(lo_a, d - lo_b + 1):
            val = self.value(a, da) + self.value(b, d - da)
            if val < best[0]:
                best = (val, (da, d - da))
        self.memo[(k, d)] = best
        return best


@dataclass
class UnifiedRoots:
    children: dict[SyntheticId, tuple[NodeKey, NodeKey]]
    top: NodeKey
    oracle: ExtendedErrors
    n_virtual: int


def unify_roots(
    roots: Sequence[ElementId], oracle: ErrorOracle, allow_zero: bool | None = None
) -> UnifiedRoots:
    """Pair roots level by level into a single virtual root.

    An odd node out at any level is paired with a virtual (empty) domain, so
    at most ``ceil(log2 R) - 1`` virtual domains are created.

    Args:
        roots: The real root element ids.
        oracle: Error oracle on real elements.
        allow_zero: Whether real roots may receive ``d = 0`` in a split;
            defaults to ``oracle.supports_zero``.

    Returns:
        The unified tree: synthetic nodes with their children, the single
        top node, and the extended oracle (the given oracle on real nodes,
        the optimal-split error on synthetic ones, zero on virtual ones).
    """
    if not roots:
        raise ValueError("need at least one root")
    if allow_zero is None:
        allow_zero = bool(getattr(oracle, "supports_zero", False))
    ext = ExtendedErrors(oracle, 0 if allow_zero else 1)
    layer: list[NodeKey] = list(roots)
    height = 0
    n_virtual = 0
    while len(layer) > 1:
        height += 1
        if len(layer) % 2:
            layer.append(SyntheticId(height - 1, n_virtual, virtual=True))
            n_virtual += 1
        nxt = []
        for i in range(0, len(layer), 2):
            s = SyntheticId(height, i // 2)
            ext.children[s] = (layer[i], layer[i + 1])
            nxt.append(s)
        layer = nxt
    return UnifiedRoots(ext.children, layer[0], ext, n_virtual)


class GhostTree:
    """Ghost h-tree with its subordinate hp-tree kept up to date.

    Args:
        roots: The root partition; all its roots start as leaves.
        oracle: Local error oracle ``e_{K,d}``.
        modified_rule: ``"parent"`` combines ``e_K`` with the parent's ``e``;
            ``"recursive"`` combines it with the parent's modified error.
        max_level: Leaves at this level are never bisected.
        allow_zero: Let synthetic splits give a real root ``d = 0``.
        growth: ``"h"`` bisects the leaf with the largest modified error built
            from ``e_{K,1}``; ``"hp"`` builds the same recursive harmonic chain
            from the tree-dependent hp errors ``e_K(T)``, so subtrees that are
            already resolved by trimming stop attracting bisections.
    """

    def __init__(
        self,
        roots: RootPartition,
        oracle: ErrorOracle,
        modified_rule: str = "recursive",
        max_level: int = MAX_LEVEL,
        allow_zero: bool = False,
        growth: str = "hp",
    ):
        if modified_rule not in MODIFIED_RULES:
            raise ValueError(f"unknown modified rule {modified_rule!r}")
        if growth not in GROWTH_RULES:
            raise ValueError(f"unknown growth rule {growth!r}")
        self.growth = growth
        self.roots = roots
        self.oracle = oracle
        self.modified_rule = modified_rule
        self.max_level = max_level
        self.counters = WorkCounters()
        self.nodes: dict[NodeKey, GhostNode] = {}
        self._heap: list = []
        self._tie = itertools.count()

        real_roots = roots.roots()
        unified = unify_roots(real_roots, self._call, allow_zero=allow_zero)
        children = unified.children
        self._ext_children = children
        self._ext = unified.oracle
        self.top = unified.top
        parents: dict[NodeKey, NodeKey] = {}
        for s, (a, b) in children.items():
            parents[a] = s
            parents[b] = s
        for r in real_roots:
            e1 = self._call(r, 1)
            node = GhostNode(r, parents.get(r), e1=e1, e_mod=e1, d_count=1, e_hp=e1)
            self.nodes[r] = node
            self._push(node)
        # synthetic layer, built bottom-up by height
        for s in sorted(children, key=lambda s: s.height):
            a, b = children[s]
            for c in (a, b):
                if isinstance(c, SyntheticId) and c.virtual:
                    self.nodes[c] = GhostNode(c, s, d_count=0)
            self.nodes[s] = GhostNode(s, parents.get(s), children=(a, b))
            self._recompute(s)

    # oracle access with accounting
    def _call(self, k: ElementId, d: int) -> float:
        self.counters.oracle_calls += 1
        val = self.oracle(k, d)  # kept exact for rational test oracles
        if not val >= 0:
            raise ValueError(f"error oracle returned {val} for {k!r}, d={d}")
        return val

    def _push(self, node: GhostNode) -> None:
        k = node.key
        if node.e_mod > 0 and k.level < self.max_level:
            heapq.heappush(self._heap, (-node.e_mod, k.sort_key(), next(self._tie), k))

    def _value(self, k: NodeKey, d: int) -> float:
        return self._ext(k, d)

    def _recompute(self, k: NodeKey) -> None:
        node = self.nodes[k]
        self.counters.node_updates += 1
        if node.children is None:
            if isinstance(k, SyntheticId):  # virtual padding
                node.d_count, node.e_hp, node.trimmed = 0, 0.0, False
                return
            node.d_count, node.e_hp, node.trimmed, node.split = 1, node.e1, True, None
            return
        a, b = (self.nodes[c] for c in node.children)
        node.d_count = a.d_count + b.d_count
        below = a.e_hp + b.e_hp
        if _is_real(k):
            whole, split = self._value(k, node.d_count), None
        else:
            whole, split = self._ext_split(k, node.d_count)
        if whole <= below:
            node.e_hp, node.trimmed, node.split = whole, True, split
        else:
            node.e_hp, node.trimmed, node.split = below, False, None

    def _ext_split(self, s: SyntheticId, d: int) -> tuple[float, tuple[int, int] | None]:
        return self._ext.best(s, d)

    # public surface
    @property
    def leaves(self) -> list[ElementId]:
        out = [k for k, n in self.nodes.items() if _is_real(k) and n.children is None]
        return sorted(out, key=ElementId.sort_key)

    @property
    def n_leaves(self) -> int:
        return self.nodes[self.top].d_count

    @property
    def error(self) -> float:
        """Current hp error ``e_hp`` of the (unified) root."""
        return self.nodes[self.top].e_hp

    def _hp_candidates(self) -> tuple[ElementId | None, int]:
        """Leaf maximizing the harmonic chain of hp errors; also count of visits."""
        best_key, best = None, None
        visits = 0
        stack: list[tuple[NodeKey, float]] = []
        for r in self.roots.roots():
            stack.append((r, self.nodes[r].e_hp))
        while stack:
            k, chain = stack.pop()
            visits += 1
            node = self.nodes[k]
            if node.children is None:
                if chain > 0 and k.level < self.max_level:
                    key = (chain, tuple(-v for v in k.sort_key()))
                    if best is None or key > best:
                        best, best_key = key, k
                continue
            for c in node.children:
                stack.append((c, modified_error(self.nodes[c].e_hp, chain)))
        return best_key, visits

    def can_grow(self) -> bool:
        if self.growth == "hp":
            return self._hp_candidates()[0] is not None
        while self._heap:
            k = self._heap[0][3]
            if self.nodes[k].children is None:
                return True
            heapq.heappop(self._heap)
        return False

    def select_leaf(self) -> ElementId | None:
        """Leaf with the largest modified error (canonical order breaks ties)."""
        if self.growth == "hp":
            k, visits = self._hp_candidates()
            self.counters.node_updates += visits
            return k
        return self._heap[0][3] if self.can_grow() else None

    def bisect(self, k: ElementId) -> list[NodeKey]:
        """Bisect leaf ``k``; return its ancestry path, bottom-up, including ``k``."""
        node = self.nodes[k]
        if node.children is not None:
            raise ValueError(f"{k!r} is not a leaf")
        kids = k.children()
        node.children = kids
        ref = node.e_mod if self.modified_rule == "recursive" else node.e1
        for c in kids:
            e1 = self._call(c, 1)
            cn = GhostNode(c, k, e1=e1, e_mod=modified_error(e1, ref), d_count=1, e_hp=e1)
            self.nodes[c] = cn
            self._push(cn)
        path: list[NodeKey] = []
        cur: NodeKey | None = k
        while cur is not None:
            path.append(cur)
            cur = self.nodes[cur].parent
        return path

    def hp_partition_pairs(self) -> list[tuple[ElementId, int]]:
        out: list[tuple[ElementId, int]] = []
        stack: list[tuple[NodeKey, int | None]] = [(self.top, None)]
        while stack:
            k, forced = stack.pop()
            node = self.nodes.get(k)
            if isinstance(k, SyntheticId) and k.virtual:
                continue
            if forced is not None:
                if _is_real(k):
                    if forced > 0:
                        out.append((k, forced))
                    continue
                _, split = self._ext_split(k, forced)
                a, b = self._ext_children[k]
                stack.extend([(a, split[0]), (b, split[1])])
                continue
            if node.children is None:
                out.append((k, 1))
                continue
            if node.trimmed:
                if _is_real(k):
                    out.append((k, node.d_count))
                else:
                    a, b = self._ext_children[k]
                    stack.extend([(a, node.split[0]), (b, node.split[1])])
                continue
            stack.extend((c, None) for c in node.children)
        return sorted(out, key=lambda kd: kd[0].sort_key())

    def stats(self) -> tuple[int, int]:
        """``(num_trimmed, max_d)`` of the current hp partition."""
        pairs = self.hp_partition_pairs()
        trimmed = sum(1 for _, d in pairs if d > 1)
        return trimmed, max(d for _, d in pairs)


def greedy_h_step(t: GhostTree) -> GhostTree:
    """Bisect the leaf with the largest modified error and update the hp-tree."""
    k = t.select_leaf()
    if k is None:
        raise Stagnation("no leaf can be bisected", [])
    path = t.bisect(k)
    hp_update(t, path)
    t.counters.steps += 1
    t.counters.max_path = max(t.counters.max_path, len(path))
    return t


def hp_update(t: GhostTree, path: Sequence[NodeKey]) -> GhostTree:
    """Recompute leaf counts and hp errors along ``path`` (bottom-up) only."""
    for k in path:
        t._recompute(k)
    return t


def extract_hp_partition(t: GhostTree) -> HpPartition:
    return HpPartition.from_pairs(t.roots, t.hp_partition_pairs())


@dataclass(frozen=True)
class TraceRow:
    N: int
    E: float
    num_trimmed: int
    max_d: int


@dataclass
class NearBestResult:
    partition: HpPartition
    achieved_error: float
    data_projections: Any = None
    trace: list[TraceRow] = field(default_factory=list)
    counters: WorkCounters | None = None


def nearbest_tree(
    eps: float,
    oracle: ErrorOracle,
    roots: RootPartition | None = None,
    max_N: int = 10_000,
    modified_rule: str = "recursive",
    max_level: int = MAX_LEVEL,
    allow_zero: bool = False,
    growth: str = "hp",
) -> NearBestResult:
    """First partition of the greedy hp sequence with ``E^{1/2} <= eps``.

    Args:
        eps: Target accuracy (square root of the global error).
        oracle: Local error oracle.
        roots: Root partition; a single root by default.
        max_N: Maximal number of ghost-tree leaves.
        modified_rule: See ``GhostTree``.
        max_level: Refinement depth cap.
        allow_zero: See ``GhostTree``.
        growth: See ``GhostTree``.

    Raises:
        BudgetExceeded: ``max_N`` leaves reached first; carries the trace.
        Stagnation: Only zero-modified-error or depth-capped leaves remain.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    roots = roots or RootPartition()
    t = GhostTree(roots, oracle, modified_rule, max_level, allow_zero, growth)
    target = eps * eps
    trace: list[TraceRow] = []

    def record() -> None:
        nt, md = t.stats()
        trace.append(TraceRow(t.n_leaves, t.error, nt, md))

    record()
    while t.error > target:
        if t.n_leaves >= max_N:
            raise BudgetExceeded(
                f"hp near-best exceeded {max_N} leaves at E^(1/2)={math.sqrt(t.error):.3e}",
                trace,
            )
        if not t.can_grow():
            raise Stagnation(
                f"no refinable leaf left at E^(1/2)={math.sqrt(t.error):.3e} > {eps:.3e}", trace
            )
        greedy_h_step(t)
        record()
    return NearBestResult(extract_hp_partition(t), t.error, None, trace, t.counters)


def hp_nearbest(
    eps: float,
    v: Any,
    data: Any,
    delta: float,
    max_N: int = 10_000,
    roots: RootPartition | None = None,
    modified_rule: str = "recursive",
    growth: str = "hp",
) -> NearBestResult:
    """hp near-best approximation of ``v`` and the data, with data projections.

    The caller is responsible for a root partition that passed the
    root-fineness check.
    """
    from hpafem.error_functional import LocalErrorOracle, project_data

    roots = roots or RootPartition()
    oracle = LocalErrorOracle(v, data, delta, roots)
    res = nearbest_tree(eps, oracle, roots, max_N, modified_rule, growth=growth)
    res.data_projections = project_data(res.partition, data)
    return res


def h_greedy(
    oracle: ErrorOracle,
    n_max: int,
    roots: RootPartition | None = None,
    modified_rule: str = "recursive",
    max_level: int = MAX_LEVEL,
) -> list[tuple[HPartition, float]]:
    """Pure h-greedy: partitions ``K_N`` with ``E = sum e_{K,1}``, ``N = R..n_max``."""
    roots = roots or RootPartition()
    t = GhostTree(roots, oracle, modified_rule, max_level)
    out = []
    while True:
        leaves = t.leaves
        out.append((HPartition(roots, tuple(leaves)), sum(t.nodes[k].e1 for k in leaves)))
        if len(leaves) >= n_max or not t.can_grow():
            break
        t.bisect(t.select_leaf())
    return out


# exhaustive oracles ---------------------------------------------------------

def _enumerate_subtree(k: ElementId, budget: int, depth_cap: int, hp: bool):
    """Yield ``(pairs, cardinality)`` for every partition of ``k`` within budget."""
    if hp:
        for d in range(1, budget + 1):
            yield [(k, d)], d
    elif budget >= 1:
        yield [(k, 1)], 1
    if k.level >= depth_cap or budget < 2:
        return
    a, b = k.children()
    for pa, na in _enumerate_subtree(a, budget - 1, depth_cap, hp):
        for pb, nb in _enumerate_subtree(b, budget - na, depth_cap, hp):
            yield pa + pb, na + nb


def enumerate_partitions(
    roots: Sequence[ElementId], budget: int, depth_cap: int, hp: bool = True, limit: int = 2_000_000
) -> list[list[tuple[ElementId, int]]]:
    """All (h or hp) partitions of the roots with cardinality at most ``budget``."""
    out: list[list[tuple[ElementId, int]]] = []

    def rec(i: int, left: int, acc: list) -> None:
        if i == len(roots):
            out.append(list(acc))
            if len(out) > limit:
                raise ExhaustiveBudgetExceeded(f"more than {limit} partitions")
            return
        remaining = len(roots) - i - 1
        for pairs, n in _enumerate_subtree(roots[i], left - remaining, depth_cap, hp):
            rec(i + 1, left - n, acc + pairs)

    if budget >= len(roots):
        rec(0, budget, [])
    return out


def brute_force_sigma(
    N: int,
    oracle: ErrorOracle,
    depth_cap: int,
    roots: Sequence[ElementId] | None = None,
    hp: bool = True,
) -> float:
    """Exact ``min E_D`` over partitions with ``#D <= N`` by full enumeration."""
    roots = list(roots or [ElementId(0, 0, 0)])
    parts = enumerate_partitions(roots, N, depth_cap, hp)
    if not parts:
        return math.inf
    return min(sum(oracle(k, d) for k, d in p) for p in parts)


def dp_sigma(
    N: int,
    oracle: ErrorOracle,
    depth_cap: int,
    roots: Sequence[ElementId] | None = None,
    hp: bool = True,
) -> float:
    """Same quantity as ``brute_force_sigma`` by dynamic programming over (node, budget)."""
    roots = list(roots or [ElementId(0, 0, 0)])

    @lru_cache(maxsize=None)
    def best(k: ElementId, n: int) -> float:
        if n < 1:
            return math.inf
        val = oracle(k, n) if hp else oracle(k, 1)
        if k.level < depth_cap:
            a, b = k.children()
            for na in range(1, n):
                val = min(val, best(a, na) + best(b, n - na))
        return val

    # knapsack over roots
    row = {0: 0.0}
    for r in roots:
        nxt: dict[int, float] = {}
        for used, acc in row.items():
            for n in range(1, N - used + 1):
                v = acc + best(r, n)
                if v < nxt.get(used + n, math.inf):
                    nxt[used + n] = v
        row = nxt
    return min(row.values(), default=math.inf)


def independent_hp_error(
    tree_leaves: Iterable[ElementId], oracle: ErrorOracle, roots: Sequence[ElementId]
) -> float:
    """Recompute the trimmed hp error of a ghost tree from its leaf set alone.

    Used as an independent check of ``GhostTree``; supports one root only.
    """
    leaves = set(tree_leaves)
    if len(roots) != 1:
        raise ValueError("single root only")

    def rec(k: ElementId) -> tuple[float, int]:
        if k in leaves:
            return oracle(k, 1), 1
        a, b = k.children()
        ea, na = rec(a)
        eb, nb = rec(b)
        n = na + nb
        return min(ea + eb, oracle(k, n)), n

    return rec(roots[0])[0]
