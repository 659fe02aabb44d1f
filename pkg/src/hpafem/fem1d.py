"""Conforming hp-Galerkin discretization on an hp-partition.

The trial space consists of continuous piecewise polynomials of degree
``p_D`` on each element that vanish at 0 and 1. The basis is made of hat
functions at interior breakpoints plus integrated-Legendre bubbles
``(P_k - P_{k-2}) / sqrt(2(2k-1))``, ``k = 2..p_D``, on each element.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from numpy.polynomial import legendre as leg

from hpafem.mesh1d import HpPartition
from hpafem.polyspace import (
    ElementSamples,
    Evaluable,
    LegendrePoly,
    PiecewisePoly,
    _evaluate,
    derivative_of,
    element_rule,
    gauss_legendre,
    from_reference,
    project_h1,
    to_reference,
)

SYMMETRY_TOL = 1e-13


class CoercivityError(RuntimeError):
    """The assembled matrix is not positive definite."""


def shape_coefficients(p: int) -> np.ndarray:
    """Legendre coefficients of the element shape functions, one row each.

    Row 0 and 1 are the left and right hats, rows 2.. the bubbles of degree
    2..p.
    """
    c = np.zeros((p + 1, p + 1))
    c[0, :2] = [0.5, -0.5]
    c[1, :2] = [0.5, 0.5]
    for k in range(2, p + 1):
        s = 1.0 / np.sqrt(2.0 * (2 * k - 1))
        c[k, k] = s
        c[k, k - 2] = -s
    return c


@dataclass(frozen=True)
class ConformingSpace:
    """Global numbering: interior hats first, then bubbles element by element."""

    partition: HpPartition
    n_hats: int = field(init=False)
    bubble_offsets: tuple[int, ...] = field(init=False)
    dim: int = field(init=False)

    def __post_init__(self) -> None:
        n_el = len(self.partition)
        offs = []
        pos = n_el - 1
        for e in self.partition.elements:
            offs.append(pos)
            pos += e.degree - 1
        object.__setattr__(self, "n_hats", n_el - 1)
        object.__setattr__(self, "bubble_offsets", tuple(offs))
        object.__setattr__(self, "dim", pos)

    def local_dofs(self, i: int) -> list[int | None]:
        """Global indices of element ``i``'s shape functions (None for boundary hats)."""
        n_el = len(self.partition)
        p = self.partition.elements[i].degree
        left = i - 1 if i > 0 else None
        right = i if i < n_el - 1 else None
        off = self.bubble_offsets[i]
        return [left, right] + list(range(off, off + p - 1))

    def element_coefficients(self, coeffs: np.ndarray) -> list[LegendrePoly]:
        """Legendre representation of the function with global ``coeffs``."""
        pieces = []
        for i, ((a, b), e) in enumerate(zip(self.partition.intervals(), self.partition.elements)):
            shape = shape_coefficients(e.degree)
            loc = np.array([0.0 if g is None else coeffs[g] for g in self.local_dofs(i)])
            pieces.append(LegendrePoly(a, b, loc @ shape))
        return pieces

    def to_piecewise(self, coeffs: np.ndarray) -> PiecewisePoly:
        pieces = self.element_coefficients(coeffs)
        return PiecewisePoly([pieces[0].a] + [q.b for q in pieces], pieces)


@dataclass(frozen=True)
class GalerkinSolution:
    space: ConformingSpace
    coefficients: np.ndarray
    fingerprint: str
    matrix: np.ndarray = field(repr=False)
    load: np.ndarray = field(repr=False)

    @property
    def partition(self) -> HpPartition:
        return self.space.partition

    @property
    def as_piecewise(self) -> PiecewisePoly:
        return self.space.to_piecewise(self.coefficients)

    def energy_sq(self) -> float:
        """``a(u_D, u_D)``, from the stored matrix."""
        c = self.coefficients
        return float(c @ self.matrix @ c)

    def residual_norm(self) -> float:
        """Relative algebraic residual of the linear solve."""
        r = self.matrix @ self.coefficients - self.load
        scale = max(np.linalg.norm(self.load), 1e-300)
        return float(np.linalg.norm(r) / scale)


def _subintervals(a: float, b: float, funcs: Sequence[Evaluable]) -> list[tuple[float, float]]:
    cuts = sorted({c for f in funcs if isinstance(f, PiecewisePoly) for c in f.cuts() if a < c < b})
    pts = [a, *cuts, b]
    return list(zip(pts, pts[1:]))


def _element_nodes(a: float, b: float, p: int, funcs: Sequence[Evaluable]):
    """Quadrature on ``[a, b]`` exact for products of two degree-``p`` shapes and data."""
    if all(isinstance(f, (PiecewisePoly, LegendrePoly)) for f in funcs):
        deg = max([f.max_degree if isinstance(f, PiecewisePoly) else f.degree for f in funcs] + [0])
        rule = gauss_legendre(p + (deg + 1) // 2 + 2)
        xs, ws = [], []
        for lo, hi in _subintervals(a, b, funcs):
            xs.append(from_reference(rule.nodes, lo, hi))
            ws.append(rule.weights * (hi - lo) / 2)
        return np.concatenate(xs), np.concatenate(ws)
    return element_rule(funcs[0], a, b, 2 * p + 2, tuple(funcs[1:]))


def _check_data(lam: tuple[Evaluable, Evaluable]) -> None:
    nu = lam[0]
    if isinstance(nu, PiecewisePoly):
        x = np.linspace(0.0, 1.0, 257)
        if np.min(nu(x)) <= 0:
            raise CoercivityError("diffusion coefficient is not positive")


def assemble(
    space: ConformingSpace,
    lam: tuple[Evaluable, Evaluable],
    f: tuple[Evaluable, Evaluable] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Stiffness matrix of ``a(u, v) = int nu u'v' + sigma u v`` and the load vector.

    The load is ``<f, v> = int f1 v - f2 v'``; it is zero when ``f`` is None.
    """
    nu, sigma = lam
    A = np.zeros((space.dim, space.dim))
    F = np.zeros(space.dim)
    funcs: list[Evaluable] = [nu, sigma] + (list(f) if f is not None else [])
    for i, ((a, b), e) in enumerate(zip(space.partition.intervals(), space.partition.elements)):
        p = e.degree
        x, w = _element_nodes(a, b, p, funcs)
        xi = to_reference(x, a, b)
        shape = shape_coefficients(p)
        V = leg.legvander(xi, p)
        phi = V @ shape.T
        dshape = np.array([leg.legder(row) if p > 0 else [0.0] for row in shape])
        dphi = (leg.legvander(xi, p - 1) @ dshape.T) * (2.0 / (b - a))
        nu_x = _evaluate(nu, x)
        sg_x = _evaluate(sigma, x)
        loc = dphi.T @ (w[:, None] * nu_x[:, None] * dphi) + phi.T @ (w[:, None] * sg_x[:, None] * phi)
        if f is not None:
            f1_x = _evaluate(f[0], x)
            f2_x = _evaluate(f[1], x)
            loc_f = phi.T @ (w * f1_x) - dphi.T @ (w * f2_x)
        dofs = space.local_dofs(i)
        idx = [j for j, g in enumerate(dofs) if g is not None]
        glob = [dofs[j] for j in idx]
        A[np.ix_(glob, glob)] += loc[np.ix_(idx, idx)]
        if f is not None:
            F[glob] += loc_f[idx]
    A = 0.5 * (A + A.T)
    return A, F


def _fingerprint(space: ConformingSpace, f, lam) -> str:
    h = hashlib.sha256(space.partition.dumps().encode())
    for g in (*f, *lam):
        if isinstance(g, PiecewisePoly):
            h.update(g.to_json().encode())
        else:
            h.update(repr(g).encode())
    return h.hexdigest()[:16]


def solve(
    space: ConformingSpace,
    f_D: tuple[Evaluable, Evaluable],
    lam_D: tuple[Evaluable, Evaluable],
) -> GalerkinSolution:
    """Galerkin solution ``a(u_D, v) = <f, v>`` for all ``v`` in the space.

    Raises:
        CoercivityError: The system matrix is not positive definite.
    """
    _check_data(lam_D)
    A, F = assemble(space, lam_D, f_D)
    if space.dim == 0:
        c = np.zeros(0)
    else:
        try:
            c = sla.cho_solve(sla.cho_factor(A, lower=True), F)
        except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
            raise CoercivityError(
                "stiffness matrix is not positive definite; check root fineness"
            ) from exc
    return GalerkinSolution(space, c, _fingerprint(space, f_D, lam_D), A, F)


def _cells(funcs: Sequence[Evaluable]) -> list[tuple[float, float]]:
    bps = sorted({0.0, 1.0} | {c for g in funcs if isinstance(g, PiecewisePoly) for c in g.cuts()})
    return list(zip(bps, bps[1:]))


def _degree(g: Evaluable) -> int | None:
    if isinstance(g, PiecewisePoly):
        return g.max_degree
    if isinstance(g, LegendrePoly):
        return g.degree
    return getattr(g, "poly_degree", None)


def energy_error_sq(u: Evaluable, w: Evaluable | None, lam: tuple[Evaluable, Evaluable]) -> float:
    """``a(u - w, u - w)`` by quadrature on the common breakpoints.

    Polynomial integrands are integrated exactly; other inputs use the graded
    composite rule at their declared singular points.
    """
    nu, sigma = lam
    du = derivative_of(u)
    dw = derivative_of(w) if w is not None else None
    funcs = [g for g in (u, du, w, dw, nu, sigma) if g is not None]
    degs = [_degree(g) for g in funcs]
    p = sum(d for d in degs if d is not None) + 1
    total = 0.0
    for a, b in _cells(funcs):
        x, wt = element_rule(u, a, b, p, tuple(funcs[1:]))
        e = _evaluate(u, x)
        de = _evaluate(du, x)
        if w is not None:
            e = e - _evaluate(w, x)
            de = de - _evaluate(dw, x)
        total += float(np.dot(wt, _evaluate(nu, x) * de * de + _evaluate(sigma, x) * e * e))
    return total


def energy_error(u: Evaluable, w: Evaluable | None, lam: tuple[Evaluable, Evaluable]) -> float:
    return float(np.sqrt(max(energy_error_sq(u, w, lam), 0.0)))


def energy_norm_sq(v: Evaluable, lam: tuple[Evaluable, Evaluable]) -> float:
    """``a(v, v)``."""
    return energy_error_sq(v, None, lam)


def energy_norm(v: Evaluable, lam: tuple[Evaluable, Evaluable]) -> float:
    return float(np.sqrt(max(energy_norm_sq(v, lam), 0.0)))


def best_conforming_approx(v: Evaluable, d: HpPartition) -> tuple[PiecewisePoly, float]:
    """Conforming H1-seminorm best approximation from elementwise projections.

    On each element the derivative of the result is the L2 projection of
    ``v'`` onto degree ``p_D - 1``; gluing these antiderivatives from
    ``v(0) = 0`` yields a continuous function that again vanishes at 1, since
    each projection preserves the integral of ``v'``.

    Returns:
        ``(w, err)`` with ``err = |v - w|_{H1}`` integrated globally.
    """
    pieces = []
    left = 0.0
    for (a, b), e in zip(d.intervals(), d.elements):
        q = project_h1(v, (a, b), e.degree)
        c = q.coeffs.copy()
        c[0] += left - float(q(a))
        q = LegendrePoly(a, b, c)
        pieces.append(q)
        left = float(q(b))
    w_pp = PiecewisePoly([pieces[0].a] + [q.b for q in pieces], pieces)
    dv, dw = derivative_of(v), w_pp.derivative()
    err_sq = 0.0
    for q in dw.pieces:
        x, wts = element_rule(dv, q.a, q.b, q.degree, (q,))
        r = _evaluate(dv, x) - q(x)
        err_sq += float(np.dot(wts, r * r))
    return w_pp, float(np.sqrt(err_sq))


def broken_best_error(v: Evaluable, d: HpPartition) -> float:
    """``sqrt(sum_D inf_q |v - q|^2_{H1(K_D)})`` computed element by element."""
    dv = derivative_of(v)
    total = 0.0
    for (a, b), e in zip(d.intervals(), d.elements):
        s = ElementSamples.build(dv, a, b, e.degree - 1)
        total += float(s.projection_errors()[e.degree - 1])
    return float(np.sqrt(total))
