import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpafem.mesh1d import ElementId, HpPartition, RootPartition
from hpafem.random_oracles import RandomTreeOracle, TableOracle
from hpafem.tree_approx import (
    BudgetExceeded,
    GhostTree,
    Stagnation,
    brute_force_sigma,
    dp_sigma,
    enumerate_partitions,
    extract_hp_partition,
    greedy_h_step,
    h_greedy,
    hp_update,
    independent_hp_error,
    modified_error,
    nearbest_tree,
    unify_roots,
)

ROOT = ElementId(0, 0, 0)
UNIT = RootPartition()
L, R = ROOT.children()


class FnOracle:
    supports_zero = False

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, k, d):
        return self.fn(k, d)


def build(oracle, bisections, **kw):
    """Ghost tree grown by bisecting the given leaves, hp info kept current."""
    t = GhostTree(UNIT, oracle, **kw)
    for k in bisections:
        hp_update(t, t.bisect(k))
    return t


# -- h-greedy -----------------------------------------------------------------

def test_greedy_bisects_argmax_leaf():
    vals = {ROOT: 1.0, L: 0.9, R: 0.1}
    t = build(FnOracle(lambda k, d: vals.get(k, 0.01)), [ROOT], modified_rule="parent", growth="h")
    # parent rule: e_mod = 1/(1/e + 1/1)
    assert t.nodes[L].e_mod > t.nodes[R].e_mod
    assert t.select_leaf() == L
    greedy_h_step(t)
    assert t.nodes[L].children is not None and t.nodes[R].children is None


def test_ties_are_broken_by_canonical_order():
    t = build(FnOracle(lambda k, d: Fraction(1, 2**k.level)), [ROOT], growth="h")
    assert t.select_leaf() == L
    t = build(FnOracle(lambda k, d: Fraction(1, 2**k.level)), [ROOT], growth="hp")
    assert t.select_leaf() == L


def test_harmonic_mean_of_equal_values():
    assert modified_error(Fraction(1), Fraction(1)) == Fraction(1, 2)
    assert modified_error(0.0, 1.0) == 0.0
    t = build(FnOracle(lambda k, d: Fraction(1)), [ROOT], growth="h")
    assert t.nodes[L].e_mod == Fraction(1, 2) == t.nodes[R].e_mod


def _stalled_chain(rule, depth):
    # the left-most branch never reduces the error; everything else is exact
    oracle = FnOracle(lambda k, d: Fraction(1) if k.position == 0 else Fraction(0))
    path = [ElementId(0, lvl, 0) for lvl in range(depth)]
    t = build(oracle, path, modified_rule=rule, growth="h")
    return [t.nodes[ElementId(0, lvl, 0)].e_mod for lvl in range(depth + 1)]


def test_stalled_branch_recursive_rule():
    chain = _stalled_chain("recursive", 6)
    assert chain == [Fraction(1, lvl + 1) for lvl in range(7)]


def test_stalled_branch_parent_rule():
    chain = _stalled_chain("parent", 6)
    assert chain == [Fraction(1)] + [Fraction(1, 2)] * 6


def test_stalled_branch_yields_to_other_leaves():
    # left child keeps the full error forever, right child has a modest error
    def fn(k, d):
        if k.position == 0:
            return Fraction(1)
        if k == R:
            return Fraction(1, 4)
        return Fraction(1, 4) * Fraction(1, 3) ** (k.level - 1)

    t = GhostTree(UNIT, FnOracle(fn), growth="h")
    for _ in range(6):
        greedy_h_step(t)
    assert any(R.is_ancestor_of(k) for k in t.leaves)


def test_zero_error_leaves_are_never_bisected():
    t = GhostTree(UNIT, FnOracle(lambda k, d: Fraction(0)), growth="h")
    assert not t.can_grow()
    with pytest.raises(Stagnation):
        greedy_h_step(t)


# -- hp-update and extraction ---------------------------------------------------

def test_single_bisection_takes_the_better_option():
    for whole in (Fraction(1, 10), Fraction(9, 10)):
        vals = {(ROOT, 1): Fraction(1), (ROOT, 2): whole, (L, 1): Fraction(1, 4), (R, 1): Fraction(1, 4)}
        t = build(TableOracle(vals), [ROOT])
        assert t.error == min(whole, Fraction(1, 2))
        assert t.nodes[ROOT].trimmed == (whole <= Fraction(1, 2))
        assert t.nodes[ROOT].d_count == 2


def test_hp_update_touches_only_the_path():
    t = GhostTree(UNIT, FnOracle(lambda k, d: Fraction(1, 3**k.level * d)))
    for _ in range(12):
        greedy_h_step(t)
    k = max(t.leaves, key=lambda k: k.level)
    assert k.level >= 3
    before = t.counters.node_updates
    path = t.bisect(k)
    hp_update(t, path)
    assert t.counters.node_updates - before == len(path) == k.level + 1


def _trimmed_tree():
    A0, A1 = L.children()
    B0, B1 = R.children()
    trimmed = {A0, B0, B1}

    def fn(k, d):
        if k in trimmed and d >= 2:
            return Fraction(0)
        return Fraction(1, 4**k.level)

    a10, a11 = A1.children()
    b00, b01 = B0.children()
    steps = [ROOT, L, R, A0, A1, a11, B0, b01, B1]
    return build(FnOracle(fn), steps), (A0, B0, B1)


def test_ten_leaf_tree_trims_three_subtrees():
    t, (A0, B0, B1) = _trimmed_tree()
    assert t.n_leaves == 10
    d = extract_hp_partition(t)
    trimmed = {e.element: e.degree for e in d.elements if e.degree > 1}
    assert trimmed == {A0: 2, B0: 3, B1: 2}
    assert d.total_dof == t.n_leaves
    assert all(t.nodes[k].trimmed for k in (A0, B0, B1))
    assert not t.nodes[ROOT].trimmed


def test_leaf_counts_are_additive():
    t, _ = _trimmed_tree()
    for k, node in t.nodes.items():
        if isinstance(k, ElementId) and node.children is not None:
            a, b = (t.nodes[c] for c in node.children)
            assert node.d_count == a.d_count + b.d_count
            assert node.e_hp == min(a.e_hp + b.e_hp, t.oracle(k, node.d_count))


def test_extraction_without_trimming():
    # strictly h-subadditive, no gain from p: nothing is ever trimmed
    t = build(FnOracle(lambda k, d: Fraction(1, 4**k.level)), [ROOT, L, R])
    d = extract_hp_partition(t)
    assert all(e.degree == 1 for e in d.elements) and len(d) == 4


def test_extraction_fully_trimmed():
    t = build(FnOracle(lambda k, d: Fraction(1, d * d)), [ROOT, L, R])
    d = extract_hp_partition(t)
    assert [(e.element, e.degree) for e in d.elements] == [(ROOT, 4)]


@given(st.integers(0, 2**32 - 1), st.integers(1, 20))
def test_partition_error_matches_independent_recomputation(seed, steps):
    oracle = RandomTreeOracle(seed)
    t = GhostTree(UNIT, oracle, max_level=3)
    for _ in range(steps):
        if not t.can_grow():
            break
        greedy_h_step(t)
    d = extract_hp_partition(t)
    assert d.total_dof == t.n_leaves
    assert sum(oracle(e.element, e.degree) for e in d.elements) == t.error
    assert independent_hp_error(t.leaves, oracle, [ROOT]) == t.error


# -- exhaustive oracles -------------------------------------------------------------

def test_brute_force_small_budgets():
    oracle = RandomTreeOracle(11)
    assert brute_force_sigma(1, oracle, 3) == oracle(ROOT, 1)
    assert brute_force_sigma(2, oracle, 3) == min(oracle(ROOT, 2), oracle(L, 1) + oracle(R, 1))


def test_enumeration_counts():
    # h-partitions of a depth-2 tree: 1 + 1 * ... = 5
    assert len(enumerate_partitions([ROOT], 4, 2, hp=False)) == 5
    hp_parts = enumerate_partitions([ROOT], 2, 1, hp=True)
    assert sorted(sum(d for _, d in p) for p in hp_parts) == [1, 2, 2]


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.booleans())
def test_brute_force_matches_dynamic_programming(seed, N, hp):
    oracle = RandomTreeOracle(seed)
    assert brute_force_sigma(N, oracle, 3, hp=hp) == dp_sigma(N, oracle, 3, hp=hp)


def _sigmas(oracle, N, hp):
    return [brute_force_sigma(n, oracle, 4, hp=hp) for n in range(1, N + 1)]


@given(st.integers(0, 2**32 - 1))
def test_h_greedy_instance_optimality(seed):
    oracle = RandomTreeOracle(seed)
    seq = h_greedy(oracle, 8, max_level=4)
    sig = _sigmas(oracle, 8, hp=False)
    for part, E in seq:
        N = len(part.leaves)
        for n in range(1, N + 1):
            assert E * (N - n + 1) <= N * sig[n - 1]


@given(st.integers(0, 2**32 - 1))
def test_hp_near_bestness_bound(seed):
    oracle = RandomTreeOracle(seed)
    sig = _sigmas(oracle, 8, hp=True)
    t = GhostTree(UNIT, oracle, max_level=4)
    while True:
        N = t.n_leaves
        for n in range(1, N + 1):
            assert t.error * (N - n + 1) <= 2 * N * sig[n - 1]
        if N >= 8 or t.error == 0 or not t.can_grow():
            break
        greedy_h_step(t)


@given(st.integers(0, 2**32 - 1), st.sampled_from(["h", "hp"]))
def test_trace_is_monotone(seed, growth):
    oracle = RandomTreeOracle(seed)
    try:
        res = nearbest_tree(1e-9, oracle, max_N=30, growth=growth, max_level=6)
        rows = res.trace
    except (BudgetExceeded, Stagnation) as exc:
        rows = exc.trace
    Es = [r.E for r in rows]
    assert all(b <= a for a, b in zip(Es, Es[1:]))
    assert [r.N for r in rows] == list(range(1, len(rows) + 1))


# -- multiple roots ---------------------------------------------------------------

def test_single_root_is_identity():
    u = unify_roots([ROOT], RandomTreeOracle(1))
    assert u.top == ROOT and u.children == {} and u.n_virtual == 0


def test_two_roots_split_matches_brute_force():
    grid = (Fraction(0), Fraction(1, 2), Fraction(1))
    r0, r1 = ElementId(0, 0, 0), ElementId(1, 0, 0)
    for vals in itertools.product(grid, repeat=4):
        table = {(r0, 1): vals[0], (r0, 2): min(vals[:2]), (r1, 1): vals[2], (r1, 2): min(vals[2:])}
        table.update({(r0, d): table[(r0, 2)] for d in (3, 4)})
        table.update({(r1, d): table[(r1, 2)] for d in (3, 4)})
        oracle = TableOracle(table)
        u = unify_roots([r0, r1], oracle)
        for d in range(2, 5):
            expected = min(oracle(r0, a) + oracle(r1, d - a) for a in range(1, d))
            assert u.oracle(u.top, d) == expected


def test_zero_degree_allows_empty_roots():
    r0, r1 = ElementId(0, 0, 0), ElementId(1, 0, 0)
    oracle = TableOracle({(r0, 0): 5, (r0, 1): 1, (r1, 0): 0, (r1, 1): 0}, supports_zero=True)
    u = unify_roots([r0, r1], oracle)
    assert u.oracle(u.top, 1) == 1
    assert u.oracle.best(u.top, 1)[1] == (1, 0)


@pytest.mark.parametrize("R,virtual", [(2, 0), (3, 1), (4, 0), (5, 2), (6, 1), (8, 0)])
def test_virtual_domain_count(R, virtual):
    roots = [ElementId(i, 0, 0) for i in range(R)]
    u = unify_roots(roots, RandomTreeOracle(0))
    assert u.n_virtual == virtual <= max(math.ceil(math.log2(R)) - 1, 0)
    for s, kids in u.children.items():
        for c in kids:
            if getattr(c, "virtual", False):
                assert u.oracle(c, 0) == 0


def test_multi_root_nearbest_partition():
    roots = RootPartition((0.0, 0.2, 0.5, 1.0))
    oracle = RandomTreeOracle(9)
    res = nearbest_tree(0.05, oracle, roots, max_N=200, max_level=10)
    d = res.partition
    assert {e.element.root for e in d.elements} == {0, 1, 2}
    assert sum(oracle(e.element, e.degree) for e in d.elements) == res.achieved_error
    assert res.achieved_error <= 0.05**2


def test_budget_exceeded_carries_trace():
    with pytest.raises(BudgetExceeded) as info:
        nearbest_tree(1e-30, FnOracle(lambda k, d: Fraction(1, 2**k.level)), max_N=5)
    assert len(info.value.trace) == 5


def test_polynomial_input_returns_root_immediately():
    res = nearbest_tree(1e-3, FnOracle(lambda k, d: Fraction(0)))
    assert res.partition == HpPartition.uniform(UNIT, 0, 1)
    assert res.achieved_error == 0
