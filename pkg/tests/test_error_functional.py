import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpafem.error_functional import (
    DataBoundsError,
    LocalErrorOracle,
    ProblemData,
    ensure_root_fineness,
    global_error,
    global_oscillation,
    local_error,
    oscillation,
    project_data,
    validate_root_fineness,
)
from hpafem.mesh1d import ElementId, HPartition, HpPartition, RootPartition
from hpafem.polyspace import Function1D
from hpafem.problems import function_from_expr

ROOT = ElementId(0, 0, 0)
UNIT = RootPartition()
ZERO = Function1D.constant(0.0)
ONE = Function1D.constant(1.0)


def data(f1="0", f2="0", nu="1", sigma="0", nu_star=1.0, nu_sup=1.0, sigma_sup=0.0, **kw):
    return ProblemData(
        function_from_expr(f1), function_from_expr(f2), function_from_expr(nu),
        function_from_expr(sigma), nu_star, nu_sup, sigma_sup, **kw,
    )


def test_oscillation_of_linear_load():
    assert oscillation(ROOT, 1, data(f1="x")) == pytest.approx(1 / 12, abs=1e-14)


def test_oscillation_vanishes_for_projected_data():
    d = data(f1="1 + x", f2="x**2", nu="1 + x", sigma="x", nu_star=1, nu_sup=2, sigma_sup=1)
    assert oscillation(ROOT, 2, d) == pytest.approx(0.0, abs=1e-28)
    assert oscillation(ROOT, 1, d) > 0


def test_local_error_examples():
    v = function_from_expr("x**2")
    br = local_error(ROOT, 1, v, data(), 1.0)
    assert br.e_v == pytest.approx(1 / 3, abs=1e-14)
    assert br.osc2 == 0.0 and br.total == br.e_v
    v = function_from_expr("x*(1 - x)")
    assert local_error(ROOT, 2, v, data(), 0.5).total == pytest.approx(0.0, abs=1e-28)


def test_delta_scales_oscillation_only():
    v = function_from_expr("sin(3*x)")
    d = data(f1="exp(x)")
    a = local_error(ROOT, 2, v, d, 1.0)
    b = local_error(ROOT, 2, v, d, 0.01)
    assert a.e_v == b.e_v
    assert b.total - b.e_v == pytest.approx(100 * (a.total - a.e_v), rel=1e-12)


def _child_sum(oracle, k, d):
    return sum(oracle(c, d) for c in k.children())


@given(st.sampled_from(["x**(3/4)", "sin(7*x)", "exp(-x)*x**3", "abs(x - 1/3)"]),
       st.integers(1, 6), st.integers(0, 4), st.data())
def test_oracle_monotone_and_h_subadditive(expr, d, level, draw):
    pos = draw.draw(st.integers(0, 2**level - 1))
    k = ElementId(0, level, pos)
    sing = (0.0, 1 / 3) if "**(3" in expr or "abs" in expr else ()
    v = function_from_expr(expr, singularities=sing)
    dat = data(f1="cos(5*x)", f2="x**4", nu="2 + sin(x)", sigma="x", nu_star=2, nu_sup=3, sigma_sup=1)
    oracle = LocalErrorOracle(v, dat, 0.3, UNIT)
    e = oracle(k, d)
    assert oracle(k, d + 1) <= e * (1 + 1e-11) + 1e-28
    assert _child_sum(oracle, k, d) <= e * (1 + 1e-11) + 1e-28


def test_oracle_cache_matches_direct_evaluation():
    v = function_from_expr("sin(4*x)")
    d = data(f1="x**3")
    oracle = LocalErrorOracle(v, d, 0.2, UNIT)
    k = ElementId(0, 2, 1)
    for p in (1, 3, 9, 2):
        assert oracle(k, p) == pytest.approx(local_error(k, p, v, d, 0.2).total, rel=1e-12, abs=1e-30)
    assert oracle.evaluations <= 3


def test_zero_degree_is_opt_in():
    v = function_from_expr("x")
    with pytest.raises(ValueError):
        LocalErrorOracle(v, data(), 1.0, UNIT)(ROOT, 0)
    z = LocalErrorOracle(v, data(), 1.0, UNIT, allow_zero=True)
    assert z(ROOT, 0) == pytest.approx(1.0, abs=1e-14)


def test_global_error_sums_local_values():
    v = function_from_expr("x**3")
    d = data(f1="x")
    part = HpPartition.uniform(UNIT, 2, 2)
    total = sum(local_error(e.element, e.degree, v, d, 0.5).total for e in part.elements)
    assert global_error(part, v, d, 0.5) == pytest.approx(total, rel=1e-13)


def test_global_oscillation_is_square_root_of_sum():
    d = data(f1="x**2")
    part = HpPartition.uniform(UNIT, 1, 1)
    total = sum(oscillation(e.element, 1, d) for e in part.elements)
    assert global_oscillation(part, d) == pytest.approx(math.sqrt(total), rel=1e-13)


def test_projected_data_degrees():
    d = data(f1="exp(x)", f2="sin(x)", nu="1 + x**2", sigma="x", nu_star=1, nu_sup=2, sigma_sup=1)
    part = HpPartition.from_pairs(UNIT, [(ElementId(0, 1, 0), 1), (ElementId(0, 1, 1), 3)])
    proj = project_data(part, d)
    assert [q.degree for q in proj.f1.pieces] == [0, 2]
    assert [q.degree for q in proj.f2.pieces] == [1, 3]
    assert [q.degree for q in proj.nu.pieces] == [2, 4]


def test_data_bounds_are_checked():
    with pytest.raises(DataBoundsError):
        data(nu="1 + x", nu_star=1.5, nu_sup=2)
    with pytest.raises(DataBoundsError):
        data(sigma="-x", nu_star=1, nu_sup=1)


def test_root_fineness_repair():
    d = data(nu="1 + 50*x**2", sigma="0", nu_star=1, nu_sup=51)
    roots = ensure_root_fineness(UNIT, d)
    assert len(roots.breakpoints) > 2
    assert validate_root_fineness(HPartition.root_partition(roots), d)
    assert not validate_root_fineness(HPartition.root_partition(UNIT), d)
