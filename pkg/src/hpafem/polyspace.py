"""Legendre polynomials on intervals, quadrature, and the element projectors.

Polynomials on an element ``[a, b]`` are stored as coefficient vectors with
respect to Legendre polynomials composed with the affine map onto ``[-1, 1]``.
Because the basis is orthogonal, the L2 projection is a diagonal solve and the
squared L2 norm is a weighted sum of squared coefficients.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Sequence

import numpy as np
from numpy.polynomial import legendre as leg

# geometric grading towards declared singular points
GRADING_RATIO = 0.15
GRADING_LEVELS = 40
MIN_QUAD_POINTS = 32


class InputFunctionError(ValueError):
    """An input function returned non-finite values or lacks a derivative."""


class UnsupportedDegree(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on [-1, 1]; ``order`` is the number of nodes."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def exact_degree(self) -> int:
        return 2 * self.order - 1


@lru_cache(maxsize=256)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = leg.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gauss_legendre(n: int) -> QuadratureRule:
    x, w = _leggauss(int(n))
    return QuadratureRule(x, w, int(n))


def quad_points_for(p: int) -> int:
    """Node count used for non-polynomial integrands at degree ``p``."""
    return max(2 * p + 8, MIN_QUAD_POINTS)


def to_reference(x: np.ndarray, a: float, b: float) -> np.ndarray:
    return (2.0 * np.asarray(x, dtype=float) - a - b) / (b - a)


def from_reference(xi: np.ndarray, a: float, b: float) -> np.ndarray:
    return 0.5 * (a + b) + 0.5 * (b - a) * np.asarray(xi, dtype=float)


def _graded_cells(lo: float, hi: float, at_left: bool) -> list[tuple[float, float]]:
    h = hi - lo
    cuts = [h * GRADING_RATIO**k for k in range(GRADING_LEVELS + 1)] + [0.0]
    cells = [(cuts[k + 1], cuts[k]) for k in range(len(cuts) - 1)]
    if at_left:
        return [(lo + s, lo + t) for s, t in cells]
    return [(hi - t, hi - s) for s, t in cells]


def composite_rule(
    a: float,
    b: float,
    npts: int,
    cuts: Sequence[float] = (),
    singularities: Sequence[float] = (),
) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule on ``[a, b]`` split at ``cuts`` and singular points.

    Sub-intervals touching a singular point are graded geometrically towards
    it, which integrates algebraic endpoint singularities such as ``x**-0.6``
    to near machine precision.

    Returns:
        Physical nodes and weights, nodes in increasing order.
    """
    sing = sorted(s for s in singularities if a <= s <= b)
    pts = sorted({a, b, *(c for c in cuts if a < c < b), *(s for s in sing if a < s < b)})
    xi, wi = _leggauss(npts)
    xs, ws = [], []
    for lo, hi in zip(pts, pts[1:]):
        left = any(abs(s - lo) <= 1e-15 * max(1.0, abs(lo)) for s in sing)
        right = any(abs(s - hi) <= 1e-15 * max(1.0, abs(hi)) for s in sing)
        if left and right:
            mid = 0.5 * (lo + hi)
            cells = _graded_cells(lo, mid, True) + _graded_cells(mid, hi, False)
        elif left:
            cells = _graded_cells(lo, hi, True)
        elif right:
            cells = _graded_cells(lo, hi, False)
        else:
            cells = [(lo, hi)]
        for c0, c1 in cells:
            if c1 <= c0:
                continue
            xs.append(from_reference(xi, c0, c1))
            ws.append(0.5 * (c1 - c0) * wi)
    x = np.concatenate(xs)
    w = np.concatenate(ws)
    order = np.argsort(x, kind="stable")
    return x[order], w[order]


@dataclass(frozen=True, eq=False)
class LegendrePoly:
    """Polynomial on ``[a, b]`` in the affinely mapped Legendre basis."""

    a: float
    b: float
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float)).copy()
        if c.size == 0:
            c = np.zeros(1)
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zero(cls, a: float, b: float) -> LegendrePoly:
        return cls(a, b, np.zeros(1))

    @classmethod
    def constant(cls, a: float, b: float, value: float) -> LegendrePoly:
        return cls(a, b, np.array([float(value)]))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def h(self) -> float:
        return self.b - self.a

    def __call__(self, x: Any) -> np.ndarray:
        return leg.legval(to_reference(x, self.a, self.b), self.coeffs)

    def derivative(self) -> LegendrePoly:
        if self.degree == 0:
            return LegendrePoly.zero(self.a, self.b)
        return LegendrePoly(self.a, self.b, leg.legder(self.coeffs, scl=2.0 / self.h))

    def antiderivative(self, value_at_left: float = 0.0) -> LegendrePoly:
        c = leg.legint(self.coeffs, lbnd=-1, k=value_at_left, scl=0.5 * self.h)
        return LegendrePoly(self.a, self.b, c)

    def integral(self) -> float:
        return float(self.coeffs[0] * self.h)

    def mean(self) -> float:
        return float(self.coeffs[0])

    def l2_norm_sq(self) -> float:
        n = np.arange(len(self.coeffs))
        return float(self.h * np.sum(self.coeffs**2 / (2 * n + 1)))

    def h1_seminorm_sq(self) -> float:
        return self.derivative().l2_norm_sq()

    def padded(self, degree: int) -> np.ndarray:
        out = np.zeros(max(degree, self.degree) + 1)
        out[: len(self.coeffs)] = self.coeffs
        return out

    def trimmed(self, degree: int) -> LegendrePoly:
        """Truncate to ``degree``; for this basis that is the L2 projection."""
        return LegendrePoly(self.a, self.b, self.coeffs[: degree + 1])

    def _same_interval(self, other: LegendrePoly) -> None:
        if self.a != other.a or self.b != other.b:
            raise ValueError("polynomials live on different intervals")

    def __add__(self, other: LegendrePoly) -> LegendrePoly:
        self._same_interval(other)
        return LegendrePoly(self.a, self.b, leg.legadd(self.coeffs, other.coeffs))

    def __sub__(self, other: LegendrePoly) -> LegendrePoly:
        self._same_interval(other)
        return LegendrePoly(self.a, self.b, leg.legsub(self.coeffs, other.coeffs))

    def __mul__(self, other: LegendrePoly | float) -> LegendrePoly:
        if isinstance(other, LegendrePoly):
            self._same_interval(other)
            return LegendrePoly(self.a, self.b, leg.legmul(self.coeffs, other.coeffs))
        return LegendrePoly(self.a, self.b, self.coeffs * float(other))

    __rmul__ = __mul__

    def __neg__(self) -> LegendrePoly:
        return LegendrePoly(self.a, self.b, -self.coeffs)

    def restrict(self, a: float, b: float) -> LegendrePoly:
        """Re-expand on a sub-interval (exact up to rounding)."""
        if a == self.a and b == self.b:
            return self
        xi, w = _leggauss(self.degree + 1)
        vals = self(from_reference(xi, a, b))
        return LegendrePoly(a, b, _legendre_coeffs_from_samples(vals, xi, w, self.degree))


def _legendre_coeffs_from_samples(
    vals: np.ndarray, xi: np.ndarray, w: np.ndarray, degree: int
) -> np.ndarray:
    V = leg.legvander(xi, degree)
    n = np.arange(degree + 1)
    return (0.5 * (2 * n + 1)) * (V.T @ (w * vals))


class Function1D:
    """A function on [0, 1] with an optional derivative and singular points.

    Args:
        f: Vectorized callable.
        df: Vectorized derivative, if known.
        singularities: Points where ``f`` or ``df`` is not smooth; quadrature
            is graded towards them.
        poly_degree: Set when ``f`` is a polynomial of this degree, allowing
            exact quadrature.
    """

    def __init__(
        self,
        f: Callable[[np.ndarray], np.ndarray],
        df: Callable[[np.ndarray], np.ndarray] | None = None,
        singularities: Sequence[float] = (),
        poly_degree: int | None = None,
        name: str = "",
    ):
        self.f = f
        self.df = df
        self.singularities = tuple(float(s) for s in singularities)
        self.poly_degree = poly_degree
        self.name = name

    def __call__(self, x: Any) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.broadcast_to(np.asarray(self.f(x), dtype=float), x.shape)
        if not np.all(np.isfinite(y)):
            raise InputFunctionError(f"non-finite value in function {self.name!r}")
        return np.array(y)

    def derivative(self) -> Function1D:
        if self.df is None:
            raise InputFunctionError(f"derivative of {self.name!r} is not available")
        deg = None if self.poly_degree is None else max(self.poly_degree - 1, 0)
        return Function1D(self.df, None, self.singularities, deg, self.name + "'")

    @classmethod
    def constant(cls, value: float, name: str = "") -> Function1D:
        v = float(value)
        return cls(
            lambda x: np.full_like(np.asarray(x, dtype=float), v),
            lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            poly_degree=0,
            name=name or repr(v),
        )

    @classmethod
    def polynomial(cls, power_coeffs: Sequence[float], name: str = "") -> Function1D:
        """Polynomial from monomial coefficients, lowest degree first."""
        c = np.asarray(power_coeffs, dtype=float)
        dc = np.polynomial.polynomial.polyder(c) if len(c) > 1 else np.zeros(1)
        return cls(
            lambda x: np.polynomial.polynomial.polyval(x, c),
            lambda x: np.polynomial.polynomial.polyval(x, dc),
            poly_degree=len(c) - 1,
            name=name,
        )

    def __repr__(self) -> str:
        return f"Function1D({self.name!r})"


class PiecewisePoly:
    """Piecewise polynomial over strictly increasing breakpoints on [0, 1]."""

    def __init__(self, breakpoints: Sequence[float], pieces: Sequence[LegendrePoly]):
        bp = [float(b) for b in breakpoints]
        if len(bp) != len(pieces) + 1:
            raise ValueError("need one piece per gap between breakpoints")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        for p, (a, b) in zip(pieces, zip(bp, bp[1:])):
            if p.a != a or p.b != b:
                raise ValueError("piece interval does not match its breakpoints")
        self.breakpoints = tuple(bp)
        self.pieces = tuple(pieces)
        self.singularities: tuple[float, ...] = ()

    @classmethod
    def zero(cls, breakpoints: Sequence[float] = (0.0, 1.0)) -> PiecewisePoly:
        bp = list(breakpoints)
        return cls(bp, [LegendrePoly.zero(a, b) for a, b in zip(bp, bp[1:])])

    @property
    def max_degree(self) -> int:
        return max(p.degree for p in self.pieces)

    @property
    def poly_degree(self) -> int | None:
        return self.max_degree if len(self.pieces) == 1 else None

    def piece_index(self, x: float) -> int:
        i = bisect_right(self.breakpoints, x) - 1
        return min(max(i, 0), len(self.pieces) - 1)

    def __call__(self, x: Any) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        idx = np.searchsorted(self.breakpoints, flat, side="right") - 1
        idx = np.clip(idx, 0, len(self.pieces) - 1)
        out = np.empty_like(flat)
        for i in np.unique(idx):
            m = idx == i
            out[m] = self.pieces[i](flat[m])
        return out.reshape(x.shape)

    def derivative(self) -> PiecewisePoly:
        return PiecewisePoly(self.breakpoints, [p.derivative() for p in self.pieces])

    def pieces_on(self, a: float, b: float) -> list[LegendrePoly]:
        """Pieces restricted to the overlap with ``[a, b]``."""
        out = []
        for p in self.pieces:
            lo, hi = max(a, p.a), min(b, p.b)
            if hi > lo:
                out.append(p.restrict(lo, hi))
        return out

    def cuts(self) -> tuple[float, ...]:
        return self.breakpoints[1:-1]

    def h1_seminorm_sq(self) -> float:
        return sum(p.h1_seminorm_sq() for p in self.pieces)

    def l2_norm_sq(self) -> float:
        return sum(p.l2_norm_sq() for p in self.pieces)

    def __add__(self, other: PiecewisePoly) -> PiecewisePoly:
        return combine(self, other, lambda p, q: p + q)

    def __sub__(self, other: PiecewisePoly) -> PiecewisePoly:
        return combine(self, other, lambda p, q: p - q)

    def scaled(self, s: float) -> PiecewisePoly:
        return PiecewisePoly(self.breakpoints, [p * s for p in self.pieces])

    def to_json(self) -> str:
        return json.dumps(
            {
                "breakpoints": list(self.breakpoints),
                "coeffs": [p.coeffs.tolist() for p in self.pieces],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> PiecewisePoly:
        obj = json.loads(text)
        bp = obj["breakpoints"]
        pieces = [LegendrePoly(a, b, c) for a, b, c in zip(bp, bp[1:], obj["coeffs"])]
        return cls(bp, pieces)

    def __repr__(self) -> str:
        return f"PiecewisePoly({len(self.pieces)} pieces, max degree {self.max_degree})"


def common_breakpoints(*polys: PiecewisePoly) -> list[float]:
    pts = sorted({b for p in polys for b in p.breakpoints})
    return pts


def combine(
    u: PiecewisePoly,
    v: PiecewisePoly,
    op: Callable[[LegendrePoly, LegendrePoly], LegendrePoly],
) -> PiecewisePoly:
    """Apply a piecewise operation on the common refinement of two partitions."""
    bp = common_breakpoints(u, v)
    pieces = []
    for a, b in zip(bp, bp[1:]):
        m = 0.5 * (a + b)
        pu = u.pieces[u.piece_index(m)].restrict(a, b)
        pv = v.pieces[v.piece_index(m)].restrict(a, b)
        pieces.append(op(pu, pv))
    return PiecewisePoly(bp, pieces)


Evaluable = Any  # Function1D | PiecewisePoly | LegendrePoly | callable


def _poly_degree(f: Evaluable) -> int | None:
    if isinstance(f, LegendrePoly):
        return f.degree
    if isinstance(f, PiecewisePoly):
        return f.max_degree
    return getattr(f, "poly_degree", None)


def _cuts(f: Evaluable) -> tuple[float, ...]:
    if isinstance(f, PiecewisePoly):
        return f.cuts()
    return ()


def _singularities(f: Evaluable) -> tuple[float, ...]:
    return tuple(getattr(f, "singularities", ()))


def _evaluate(f: Evaluable, x: np.ndarray) -> np.ndarray:
    y = np.asarray(f(x), dtype=float)
    y = np.broadcast_to(y, np.shape(x)).copy()
    if not np.all(np.isfinite(y)):
        raise InputFunctionError("input function produced non-finite values")
    return y


def derivative_of(f: Evaluable) -> Evaluable:
    if isinstance(f, (LegendrePoly, PiecewisePoly, Function1D)):
        return f.derivative()
    raise InputFunctionError("derivative unavailable for a plain callable")


def element_rule(
    f: Evaluable, a: float, b: float, p: int, extra: Sequence[Evaluable] = ()
) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature adequate for integrating ``f`` times degree-``p`` polynomials.

    Polynomial inputs get an exact rule per smooth piece; anything else gets
    ``max(2p + 8, 32)`` nodes per piece plus grading at declared singular
    points.
    """
    funcs = (f, *extra)
    degs = [_poly_degree(g) for g in funcs]
    cuts = sorted({c for g in funcs for c in _cuts(g)})
    sing = sorted({s for g in funcs for s in _singularities(g)})
    if all(d is not None for d in degs):
        # integrands are at most products of two such polynomials
        n = max(max(degs), p) + 2
    else:
        n = quad_points_for(p)
    return composite_rule(a, b, n, cuts, sing)


def legendre_coefficients(
    f: Evaluable, a: float, b: float, p: int, rule: tuple[np.ndarray, np.ndarray] | None = None
) -> np.ndarray:
    x, w = rule if rule is not None else element_rule(f, a, b, p)
    vals = _evaluate(f, x)
    V = leg.legvander(to_reference(x, a, b), p)
    n = np.arange(p + 1)
    return ((2 * n + 1) / (b - a)) * (V.T @ (w * vals))


def project_l2(f: Evaluable, interval: tuple[float, float], p: int) -> LegendrePoly:
    """L2(K)-orthogonal projection of ``f`` onto polynomials of degree ``p``."""
    if p < 0:
        raise UnsupportedDegree("L2 projection needs p >= 0")
    a, b = interval
    return LegendrePoly(a, b, legendre_coefficients(f, a, b, p))


def mean_value(f: Evaluable, a: float, b: float, p: int = 0) -> float:
    x, w = element_rule(f, a, b, max(p, 1))
    return float(np.dot(w, _evaluate(f, x)) / (b - a))


def project_h1(v: Evaluable, interval: tuple[float, float], p: int) -> LegendrePoly:
    """Mean-preserving H1-type projection onto polynomials of degree ``p``.

    The result ``q`` satisfies ``q' = Pi0_{p-1} v'`` and has the same mean as
    ``v`` on the element, so it minimizes the H1 seminorm distance to ``v``.
    """
    if p < 1:
        raise UnsupportedDegree("H1 projection requires p >= 1")
    a, b = interval
    dv = derivative_of(v)
    dq = project_l2(dv, interval, p - 1)
    q = dq.antiderivative(0.0)
    shift = mean_value(v, a, b, p) - q.mean()
    c = q.coeffs.copy()
    c[0] += shift
    return LegendrePoly(a, b, c)


def h1_seminorm(q: LegendrePoly | PiecewisePoly) -> float:
    return float(np.sqrt(q.h1_seminorm_sq()))


def l2_error_sq(f: Evaluable, q: LegendrePoly, rule=None) -> float:
    x, w = rule if rule is not None else element_rule(f, q.a, q.b, q.degree, (q,))
    r = _evaluate(f, x) - q(x)
    return float(np.dot(w, r * r))


def antiderivative(q: PiecewisePoly, value_at_zero: float = 0.0) -> PiecewisePoly:
    """Continuous piecewise antiderivative with prescribed value at x = 0."""
    pieces = []
    left = float(value_at_zero)
    for p in q.pieces:
        r = p.antiderivative(left)
        pieces.append(r)
        left = float(r(p.b))
    return PiecewisePoly(q.breakpoints, pieces)


def piecewise_from_pieces(pieces: Sequence[LegendrePoly]) -> PiecewisePoly:
    bp = [pieces[0].a] + [p.b for p in pieces]
    return PiecewisePoly(bp, list(pieces))


@dataclass
class ElementSamples:
    """A function sampled on a composite rule over one element.

    Projection coefficients and errors for every degree up to ``max_degree``
    come from one set of samples. Legendre values are generated by the
    three-term recurrence, so memory stays linear in the number of nodes.
    """

    a: float
    b: float
    x: np.ndarray
    w: np.ndarray
    values: np.ndarray
    max_degree: int

    @classmethod
    def build(cls, f: Evaluable, a: float, b: float, max_degree: int) -> ElementSamples:
        x, w = element_rule(f, a, b, max_degree)
        return cls(a, b, x, w, _evaluate(f, x), max_degree)

    def _sweep(self, p: int, want_errors: bool) -> tuple[np.ndarray, np.ndarray]:
        xi = to_reference(self.x, self.a, self.b)
        h = self.b - self.a
        coeffs = np.empty(p + 1)
        errs = np.empty(p + 1)
        wf = self.w * self.values
        r = self.values.copy() if want_errors else None
        p_prev, p_cur = np.zeros_like(xi), np.ones_like(xi)
        for n in range(p + 1):
            if n > 0:
                p_prev, p_cur = p_cur, ((2 * n - 1) * xi * p_cur - (n - 1) * p_prev) / n
            c = (2 * n + 1) / h * float(np.dot(wf, p_cur))
            coeffs[n] = c
            if want_errors:
                r -= c * p_cur
                errs[n] = float(np.dot(self.w, r * r))
        return coeffs, errs

    def coefficients(self, p: int | None = None) -> np.ndarray:
        p = self.max_degree if p is None else p
        return self._sweep(p, False)[0]

    def projection_errors(self) -> np.ndarray:
        """Squared L2 errors of the projections onto degrees 0..max_degree."""
        return self._sweep(self.max_degree, True)[1]

    def norm_sq(self) -> float:
        return float(np.dot(self.w, self.values**2))
