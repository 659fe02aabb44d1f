"""Built-in problems and the expression parser used by configuration files."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
import sympy as sp
from numpy.polynomial import legendre as leg

from hpafem.error_functional import ProblemData
from hpafem.polyspace import Function1D, LegendrePoly, PiecewisePoly

ALLOWED_FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "exp": sp.exp,
    "abs": sp.Abs,
    "sqrt": sp.sqrt,
    "pi": sp.pi,
}
_X = sp.Symbol("x", real=True)
_TOKEN = re.compile(r"\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|[A-Za-z]\w*")


class ExpressionError(ValueError):
    """An expression uses something outside the permitted grammar."""


def parse_expression(text: str) -> sp.Expr:
    """Parse an arithmetic expression in ``x``.

    Only numbers, ``x``, ``+ - * / **``, parentheses and the names in
    ``ALLOWED_FUNCTIONS`` are accepted.
    """
    src = str(text).replace("^", "**")
    for ch in src:
        if not (ch.isalnum() or ch in " .+-*/()"):
            raise ExpressionError(f"character {ch!r} not allowed in {text!r}")
    for tok in _TOKEN.findall(src):
        if tok[0].isalpha() and tok not in ALLOWED_FUNCTIONS and tok != "x":
            raise ExpressionError(f"unknown name {tok!r} in {text!r}")
    try:
        tree = sp.parse_expr(src, local_dict={"x": _X, **ALLOWED_FUNCTIONS}, evaluate=True)
    except Exception as exc:  # sympy raises a zoo of exception types
        raise ExpressionError(f"cannot parse {text!r}: {exc}") from exc
    names = {str(s) for s in tree.free_symbols}
    if names - {"x"}:
        raise ExpressionError(f"unknown names {sorted(names - {'x'})} in {text!r}")
    allowed = {sp.sin, sp.cos, sp.exp, sp.Abs}
    for node in sp.preorder_traversal(tree):
        if isinstance(node, sp.Function) and node.func not in allowed:
            raise ExpressionError(f"function {node.func} not allowed in {text!r}")
    return tree


def _vectorize(expr: sp.Expr) -> Callable[[Any], np.ndarray]:
    fn = sp.lambdify(_X, expr, modules="numpy")
    return lambda x: np.broadcast_to(np.asarray(fn(np.asarray(x, dtype=float)), dtype=float), np.shape(x))


def function_from_expr(
    expr: sp.Expr | str, singularities: tuple[float, ...] = (), name: str = ""
) -> Function1D:
    """``Function1D`` with a symbolic derivative; polynomials are flagged as such."""
    if isinstance(expr, str):
        name = name or expr
        expr = parse_expression(expr)
    deg = None
    if expr.is_polynomial(_X):
        deg = int(sp.Poly(expr, _X).degree()) if expr.free_symbols else 0
    return Function1D(
        _vectorize(expr),
        _vectorize(sp.diff(expr, _X)),
        singularities=singularities,
        poly_degree=deg,
        name=name or str(expr),
    )


@dataclass
class Problem:
    name: str
    data: ProblemData
    u_exact: Function1D | None = None
    approximation_only: bool = False
    target: Any = None  # function to approximate in approximation-only mode


def manufactured(
    u: str | sp.Expr,
    nu: str | sp.Expr = "1",
    sigma: str | sp.Expr = "0",
    singularities: tuple[float, ...] = (),
    name: str = "manufactured",
    flux_form: bool = False,
) -> Problem:
    """Problem with exact solution ``u``.

    The load is ``f1 = -(nu u')' + sigma u`` by default; with ``flux_form``
    it is split as ``f1 = sigma u``, ``f2 = -nu u'``, which keeps ``f1``
    regular for singular ``u``.
    """
    u_e = parse_expression(u) if isinstance(u, str) else u
    nu_e = parse_expression(nu) if isinstance(nu, str) else nu
    sg_e = parse_expression(sigma) if isinstance(sigma, str) else sigma
    flux = nu_e * sp.diff(u_e, _X)
    if flux_form:
        f1, f2 = sp.simplify(sg_e * u_e), sp.simplify(-flux)
    else:
        f1, f2 = sp.simplify(-sp.diff(flux, _X) + sg_e * u_e), sp.Integer(0)
    xs = np.linspace(0, 1, 4097)
    nu_f, sg_f = _vectorize(nu_e), _vectorize(sg_e)
    nu_vals = nu_f(xs)
    sg_vals = sg_f(xs)
    data = ProblemData(
        f1=function_from_expr(f1, singularities),
        f2=function_from_expr(f2, singularities),
        nu=function_from_expr(nu_e),
        sigma=function_from_expr(sg_e),
        nu_star=float(np.min(nu_vals)),
        nu_sup=float(np.max(nu_vals)),
        sigma_sup=float(max(np.max(sg_vals), 0.0)),
        singularities=singularities,
        name=name,
    )
    return Problem(name, data, function_from_expr(u_e, singularities))


def xalpha(alpha: float = 0.7) -> Problem:
    """``-u'' = f2'`` with ``u = x^alpha - x`` and ``f2 = -u'``, singular at 0."""
    if not 0.5 < alpha < 1:
        raise ValueError("alpha must lie in (1/2, 1) for an L2 flux")
    a = sp.Rational(alpha).limit_denominator(10**6)
    return manufactured(_X**a - _X, singularities=(0.0,), name=f"xalpha({alpha})", flux_form=True)


def poly_exact() -> Problem:
    """``-u'' = 2`` with ``u = x(1 - x)``."""
    return manufactured(_X * (1 - _X), name="poly-exact")


def lacunary_polynomial(L: int) -> LegendrePoly:
    """Zero-mean polynomial of degree ``2^L`` on [0, 1], L2-orthogonal to zero-mean
    linears on every dyadic interval of level below ``L``; normalized in L2.

    Constants satisfy the orthogonality constraints trivially, so the zero-mean
    condition and one extra degree are needed for a non-constant solution.
    """
    p = 2**L
    rows = [np.eye(p + 1)[0]]
    xg, wg = leg.leggauss(p + 4)
    for level in range(L):
        h = 2.0**-level
        for k in range(2**level):
            a, b = k * h, (k + 1) * h
            x = a + (xg + 1) * h / 2
            w = wg * h / 2
            V = leg.legvander(2 * x - 1, p)
            rows.append((w * (x - (a + b) / 2)) @ V)
    A = np.array(rows)
    _, s, vt = np.linalg.svd(A)
    c = vt[-1]
    c = c / math.sqrt(np.sum(c**2 / (2 * np.arange(p + 1) + 1)))
    if c[np.argmax(np.abs(c))] < 0:
        c = -c
    return LegendrePoly(0.0, 1.0, c)


def lacunary(L: int = 3) -> Problem:
    """Approximation-only benchmark: ``v`` whose derivative is lacunary.

    With zero data the error functional of ``v`` reduces to H1 best
    approximation errors, i.e. L2 errors of the lacunary ``v'``.
    """
    w = lacunary_polynomial(L)
    v = w.antiderivative(0.0)
    zero = Function1D.constant(0.0)
    data = ProblemData(zero, zero, Function1D.constant(1.0), zero, 1.0, 1.0, 0.0, name=f"lacunary({L})")
    return Problem(
        f"lacunary({L})", data, None, approximation_only=True, target=PiecewisePoly([0.0, 1.0], [v])
    )


def inline(params: dict) -> Problem:
    """Problem from expressions: keys ``u`` (manufactured) or ``f1``/``f2``, plus
    ``nu``, ``sigma``, optional ``nu_star``/``nu_sup``/``sigma_sup`` and
    ``singularities``."""
    sing = tuple(float(s) for s in params.get("singularities", ()))
    nu = str(params.get("nu", "1"))
    sigma = str(params.get("sigma", "0"))
    if "u" in params:
        prob = manufactured(
            str(params["u"]), nu, sigma, sing, name="inline", flux_form=bool(params.get("flux_form", False))
        )
        d = prob.data
        for key in ("nu_star", "nu_sup", "sigma_sup"):
            if key in params:
                setattr(d, key, float(params[key]))
        return prob
    xs = np.linspace(0, 1, 4097)
    nu_f = function_from_expr(nu)
    sg_f = function_from_expr(sigma)
    data = ProblemData(
        f1=function_from_expr(str(params.get("f1", "0")), sing),
        f2=function_from_expr(str(params.get("f2", "0")), sing),
        nu=nu_f,
        sigma=sg_f,
        nu_star=float(params.get("nu_star", np.min(nu_f(xs)))),
        nu_sup=float(params.get("nu_sup", np.max(nu_f(xs)))),
        sigma_sup=float(params.get("sigma_sup", max(np.max(sg_f(xs)), 0.0))),
        singularities=sing,
        name="inline",
    )
    return Problem("inline", data)


REGISTRY: dict[str, Callable[..., Problem]] = {
    "xalpha": xalpha,
    "poly-exact": poly_exact,
    "lacunary": lacunary,
}


def build_problem(name: str, params: dict | None = None) -> Problem:
    params = dict(params or {})
    if name == "inline":
        return inline(params)
    if name not in REGISTRY:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(REGISTRY) + ['inline']}")
    return REGISTRY[name](**params)
