import numpy as np
import pytest

from hpafem.mesh1d import ElementId, HpPartition, RootPartition
from hpafem.error_functional import LocalErrorOracle
from hpafem.problems import (
    ExpressionError,
    build_problem,
    lacunary,
    lacunary_polynomial,
    manufactured,
    parse_expression,
    xalpha,
)


def test_expression_whitelist():
    parse_expression("sin(pi*x) + exp(-x**2)")
    for bad in ("__import__('os')", "y + 1", "open(x)"):
        with pytest.raises(ExpressionError):
            parse_expression(bad)


def test_manufactured_load_is_consistent():
    prob = manufactured("sin(pi*x)", nu="1 + x", sigma="2")
    xs = np.linspace(0.1, 0.9, 5)
    expected = np.pi**2 * (1 + xs) * np.sin(np.pi * xs) - np.pi * np.cos(np.pi * xs) + 2 * np.sin(np.pi * xs)
    assert np.allclose(prob.data.f1(xs), expected)
    assert prob.data.nu_star == pytest.approx(1.0) and prob.data.nu_sup == pytest.approx(2.0)


def test_xalpha_uses_flux_form():
    prob = xalpha(0.7)
    xs = np.array([0.25, 0.5])
    assert np.allclose(prob.data.f1(xs), 0.0)
    assert np.allclose(prob.data.f2(xs), -(0.7 * xs**-0.3 - 1))
    assert prob.data.singularities == (0.0,)
    with pytest.raises(ValueError):
        xalpha(0.3)


@pytest.mark.parametrize("L", [1, 2, 3, 4])
def test_lacunary_polynomial_properties(L):
    q = lacunary_polynomial(L)
    assert q.degree <= 2**L
    xg, wg = np.polynomial.legendre.leggauss(2**L + 4)
    x, w = (xg + 1) / 2, wg / 2
    assert np.dot(w, q(x) ** 2) == pytest.approx(1.0, rel=1e-12)
    assert abs(np.dot(w, q(x))) < 1e-12
    for level in range(L):
        for k in range(2**level):
            a, b = k * 2.0**-level, (k + 1) * 2.0**-level
            xi = a + (b - a) * x
            assert abs(np.dot(w * (b - a), q(xi) * (xi - (a + b) / 2))) < 1e-12


def test_lacunary_derivative_resists_coarse_low_degree():
    prob = lacunary(3)
    oracle = LocalErrorOracle(prob.target, prob.data, 1.0, RootPartition())
    whole = oracle(ElementId(0, 0, 0), 9)
    assert whole < 1e-20
    coarse = HpPartition.uniform(RootPartition(), 2, 2)
    assert sum(oracle(e.element, e.degree) for e in coarse.elements) > 0.1


def test_registry():
    assert build_problem("poly-exact").name == "poly-exact"
    assert build_problem("inline", {"u": "x*(1-x)"}).u_exact is not None
    with pytest.raises(KeyError):
        build_problem("nope")
