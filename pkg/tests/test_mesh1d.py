import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpafem.mesh1d import (
    MAX_LEVEL,
    ConfigurationMismatch,
    ElementId,
    HPartition,
    HpPartition,
    MeshError,
    RootPartition,
    bisect_element,
    children,
    refines,
    total_dof,
)

ROOT = ElementId(0, 0, 0)
UNIT = RootPartition()


def hp(pairs, roots=UNIT):
    return HpPartition.from_pairs(roots, pairs)


def test_children_of_root():
    a, b = children(ROOT)
    assert UNIT.interval(a) == (0.0, 0.5)
    assert UNIT.interval(b) == (0.5, 1.0)


def test_children_of_right_half():
    a, b = children(ElementId(0, 1, 1))
    assert UNIT.interval(a) == (0.5, 0.75)
    assert UNIT.interval(b) == (0.75, 1.0)


def test_children_with_offset_root():
    roots = RootPartition((0.0, 0.5, 1.0))
    a, b = children(ElementId(1, 0, 0))
    assert roots.interval(a) == (0.5, 0.75)
    assert roots.interval(b) == (0.75, 1.0)


def test_parent_and_sibling():
    k = ElementId(0, 3, 5)
    assert k.parent() == ElementId(0, 2, 2)
    assert k.sibling() == ElementId(0, 3, 4)
    assert ROOT.parent() is None and ROOT.sibling() is None


@given(st.integers(0, 40), st.data())
def test_children_tile_parent(level, data):
    pos = data.draw(st.integers(0, 2**level - 1))
    roots = RootPartition((0.0, 0.3, 1.0))
    k = ElementId(1, level, pos)
    a, b = k.children()
    ka, kb = roots.interval(k), roots.interval(a)
    assert kb[0] == ka[0]
    assert roots.interval(a)[1] == roots.interval(b)[0]
    assert roots.interval(b)[1] == ka[1]
    assert a.parent() == k == b.parent()


def test_depth_cap_is_a_hard_error():
    deep = ElementId(0, MAX_LEVEL, 0)
    with pytest.raises(MeshError, match="maximum refinement depth"):
        deep.children()
    with pytest.raises(MeshError):
        ElementId(0, MAX_LEVEL + 1, 0)


def test_total_dof_examples():
    d = hp([(ElementId(0, 1, 0), 2), (ElementId(0, 1, 1), 3)])
    assert total_dof(d) == 5
    assert total_dof(hp([(ROOT, 1)])) == 1
    assert total_dof(HpPartition.uniform(UNIT, 2, 2)) == 8


def test_refines_examples():
    d = hp([(ElementId(0, 1, 0), 2), (ElementId(0, 1, 1), 3)])
    assert refines(d, d)
    assert refines(hp([(ROOT, 2)]), d)
    assert not refines(hp([(ROOT, 3)]), d)


def test_refines_rejects_mismatched_roots():
    with pytest.raises(ConfigurationMismatch):
        refines(hp([(ROOT, 1)]), hp([(ROOT, 1), (ElementId(1, 0, 0), 1)], RootPartition((0, 0.5, 1))))


def test_tiling_violations_are_rejected():
    with pytest.raises(MeshError):
        HPartition(UNIT, (ElementId(0, 1, 0),))  # gap
    with pytest.raises(MeshError):
        HPartition(UNIT, (ROOT, ElementId(0, 1, 0)))  # overlap / ancestor


def _all_partitions(k, depth):
    yield [k]
    if k.level < depth:
        a, b = k.children()
        for pa in _all_partitions(a, depth):
            for pb in _all_partitions(b, depth):
                yield pa + pb


def _depth3_hp():
    out = []
    for leaves in _all_partitions(ROOT, 2):
        for degs in itertools.product((1, 2), repeat=len(leaves)):
            out.append(hp(list(zip(leaves, degs))))
    return out


def test_refines_is_a_partial_order():
    parts = _depth3_hp()
    for a in parts:
        assert refines(a, a)
    for a, b in itertools.product(parts, repeat=2):
        if refines(a, b) and refines(b, a):
            assert a == b
    sample = parts[::3]
    for a, b, c in itertools.product(sample, repeat=3):
        if refines(a, b) and refines(b, c):
            assert refines(a, c)


@given(st.lists(st.tuples(st.integers(0, 50), st.booleans()), max_size=12))
def test_bisection_and_p_increment_refine(ops):
    d = HpPartition.uniform(UNIT, 0, 1)
    for idx, do_bisect in ops:
        e = d.elements[idx % len(d.elements)]
        new = bisect_element(d, e.element) if do_bisect else d.with_degrees({e.element: e.degree + 1})
        assert refines(d, new)
        assert total_dof(new) > total_dof(d)
        d = new


def test_serialization_round_trip():
    roots = RootPartition((0.0, 0.25, 1.0))
    d = HpPartition.from_pairs(
        roots, [(ElementId(0, 0, 0), 3), (ElementId(1, 1, 0), 1), (ElementId(1, 1, 1), 2)]
    )
    text = d.dumps()
    assert text.splitlines()[1] == "0 0 0 3"
    assert HpPartition.loads(text) == d


def test_canonical_order_is_by_left_endpoint():
    d = hp([(ElementId(0, 1, 1), 1), (ElementId(0, 2, 1), 1), (ElementId(0, 2, 0), 1)])
    assert [iv[0] for iv in d.intervals()] == [0.0, 0.25, 0.5]
