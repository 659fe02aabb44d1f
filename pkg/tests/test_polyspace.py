import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpafem.polyspace import (
    ElementSamples,
    Function1D,
    InputFunctionError,
    LegendrePoly,
    PiecewisePoly,
    UnsupportedDegree,
    antiderivative,
    gauss_legendre,
    h1_seminorm,
    project_h1,
    project_l2,
)

X = Function1D.polynomial([0, 1])
X2 = Function1D.polynomial([0, 0, 1])


def power(alpha):
    return Function1D(
        lambda x: np.asarray(x, float) ** alpha,
        lambda x: alpha * np.asarray(x, float) ** (alpha - 1),
        singularities=(0.0,),
        name=f"x^{alpha}",
    )


def test_quadrature_exact_on_monomials():
    for n in (1, 4, 11, 30):
        rule = gauss_legendre(n)
        for k in range(2 * n):
            exact = (1 - (-1) ** (k + 1)) / (k + 1)
            approx = float(np.dot(rule.weights, rule.nodes**k))
            assert abs(approx - exact) <= 1e-13 * max(1.0, abs(exact))


def test_l2_projection_examples():
    q = project_l2(X, (0.0, 1.0), 0)
    assert q.degree == 0 and q.coeffs[0] == pytest.approx(0.5, abs=1e-15)
    q = project_l2(X2, (0.0, 1.0), 1)
    xs = np.linspace(0, 1, 7)
    assert np.allclose(q(xs), xs - 1 / 6, atol=1e-14)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(-3, 3), st.floats(0.01, 2))
def test_l2_projection_reproduces_polynomials(coeffs, a, h):
    f = Function1D.polynomial(coeffs)
    p = len(coeffs) - 1
    q = project_l2(f, (a, a + h), p)
    xs = np.linspace(a, a + h, 9)
    scale = max(1.0, np.max(np.abs(f(xs))))
    assert np.max(np.abs(q(xs) - f(xs))) <= 1e-12 * scale


def test_l2_projection_orthogonality_and_idempotence():
    f = Function1D(np.sin, np.cos, name="sin")
    a, b, p = 0.2, 1.7, 5
    q = project_l2(f, (a, b), p)
    again = project_l2(q, (a, b), p)
    assert np.allclose(again.coeffs, q.coeffs, atol=1e-13)
    xg, wg = np.polynomial.legendre.leggauss(40)
    x = a + (xg + 1) * (b - a) / 2
    w = wg * (b - a) / 2
    r = f(x) - q(x)
    for n in range(p + 1):
        basis = LegendrePoly(a, b, np.eye(p + 1)[n])
        assert abs(np.dot(w, r * basis(x))) <= 1e-12


def test_non_finite_input_is_rejected():
    bad = Function1D(lambda x: np.full_like(np.asarray(x, float), np.nan), name="nan")
    with pytest.raises(InputFunctionError):
        project_l2(bad, (0.0, 1.0), 2)


def test_h1_projection_examples():
    q = project_h1(X2, (0.0, 1.0), 1)
    xs = np.linspace(0, 1, 5)
    assert np.allclose(q(xs), xs - 1 / 6, atol=1e-14)
    tent = Function1D(lambda x: np.abs(np.asarray(x) - 0.5), lambda x: np.sign(np.asarray(x) - 0.5),
                      singularities=(0.5,))
    q = project_h1(tent, (0.0, 1.0), 1)
    assert np.allclose(q(xs), 0.25, atol=1e-13)
    cubic = Function1D.polynomial([1, -2, 0, 3])
    q = project_h1(cubic, (0.0, 2.0), 3)
    assert np.allclose(q(xs), cubic(xs), atol=1e-13)


def test_h1_projection_needs_positive_degree():
    with pytest.raises(UnsupportedDegree):
        project_h1(X2, (0.0, 1.0), 0)


def test_h1_projection_derivative_and_mean():
    v = power(0.7)
    q = project_h1(v, (0.0, 1.0), 4)
    dq = project_l2(v.derivative(), (0.0, 1.0), 3)
    assert np.allclose(q.derivative().coeffs, dq.coeffs, atol=1e-12)
    assert q.mean() == pytest.approx(1 / 1.7, abs=1e-12)


def test_h1_seminorm_examples():
    q = project_l2(Function1D.polynomial([0, 1, -1]), (0.0, 1.0), 2)  # x(1-x)
    assert h1_seminorm(q) ** 2 == pytest.approx(1 / 3, abs=1e-14)
    assert h1_seminorm(LegendrePoly.constant(0.0, 1.0, 3.0)) == 0.0
    assert h1_seminorm(project_l2(X, (0.0, 1.0), 1)) == pytest.approx(1.0, abs=1e-14)


def test_antiderivative_examples():
    one = PiecewisePoly([0.0, 1.0], [LegendrePoly.constant(0.0, 1.0, 1.0)])
    r = antiderivative(one, 0.0)
    assert np.allclose(r(np.linspace(0, 1, 5)), np.linspace(0, 1, 5), atol=1e-15)
    sign = PiecewisePoly(
        [0.0, 0.5, 1.0], [LegendrePoly.constant(0.0, 0.5, 1.0), LegendrePoly.constant(0.5, 1.0, -1.0)]
    )
    tent = antiderivative(sign, 0.0)
    assert float(tent(0.5)) == pytest.approx(0.5, abs=1e-15)
    assert float(tent(1.0)) == pytest.approx(0.0, abs=1e-15)
    w = PiecewisePoly(
        [0.0, 0.3, 1.0],
        [LegendrePoly(0.0, 0.3, np.array([1.0, 0.2, -0.1])), LegendrePoly(0.3, 1.0, np.array([0.5, 0.1, 0.3]))],
    )
    # make w continuous, then recover it from its derivative
    w = antiderivative(w.derivative(), 0.7)
    again = antiderivative(w.derivative(), float(w(0.0)))
    xs = np.linspace(0, 1, 11)
    assert np.max(np.abs(again(xs) - w(xs))) <= 1e-13


def _test_functions():
    out = [power(a) for a in (0.55, 0.7, 0.9, 1.5)]
    out += [Function1D(np.sin, np.cos), Function1D(np.exp, np.exp)]
    out += [Function1D(lambda x, c=c: np.sin(c * np.asarray(x)), lambda x, c=c: c * np.cos(c * np.asarray(x)))
            for c in (3, 7, 15, 31)]
    out += [Function1D.polynomial(np.random.default_rng(s).normal(size=9)) for s in range(10)]
    return out


def test_degree_monotonicity_of_projection_errors():
    for f in _test_functions():
        errs = ElementSamples.build(f, 0.0, 1.0, 12).projection_errors()
        assert np.all(np.diff(errs) <= 1e-14 * max(errs[0], 1e-300) + 1e-28)
        derrs = ElementSamples.build(f.derivative(), 0.0, 1.0, 12).projection_errors()
        assert np.all(np.diff(derrs) <= 1e-12 * max(derrs[0], 1e-300) + 1e-28)


def test_h_subadditivity_of_h1_errors():
    for f in _test_functions():
        for p in (1, 2, 4):
            whole = ElementSamples.build(f.derivative(), 0.0, 1.0, p - 1).projection_errors()[p - 1]
            halves = sum(
                ElementSamples.build(f.derivative(), a, b, p - 1).projection_errors()[p - 1]
                for a, b in ((0.0, 0.5), (0.5, 1.0))
            )
            assert halves <= whole * (1 + 1e-10) + 1e-26


def test_singular_quadrature_accuracy():
    # int_0^1 (x^-0.3)^2 dx = 1/0.4
    f = power(0.7).derivative()
    s = ElementSamples.build(f, 0.0, 1.0, 3)
    assert s.norm_sq() == pytest.approx(0.49 / 0.4, rel=1e-10)


def test_piecewise_json_round_trip():
    w = PiecewisePoly(
        [0.0, 0.25, 1.0],
        [LegendrePoly(0.0, 0.25, np.array([1.0, -0.5])), LegendrePoly(0.25, 1.0, np.array([0.0, 1.0, 2.0]))],
    )
    back = PiecewisePoly.from_json(w.to_json())
    xs = np.linspace(0, 1, 13)
    assert np.array_equal(back(xs), w(xs))


def test_endpoint_evaluation_matches_recurrence():
    rng = np.random.default_rng(3)
    c = rng.normal(size=20)
    q = LegendrePoly(0.0, 2.0, c)
    assert float(q(2.0)) == pytest.approx(np.sum(c), rel=1e-13)
    assert float(q(0.0)) == pytest.approx(np.sum(c * (-1.0) ** np.arange(20)), rel=1e-13)
    assert math.isclose(float(q(1.0)), np.polynomial.legendre.legval(0.0, c), rel_tol=1e-13)
