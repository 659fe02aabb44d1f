"""Residual indicators, Doerfler marking, p-enrichment, and the REDUCE loop.

For piecewise polynomial data the residual of a Galerkin solution is a
piecewise polynomial ``r``, and its dual norm splits into local terms
``|z_K|^2_{H1(K)}`` where ``-z_K'' = r`` on ``K`` with zero boundary values.
The local problems are solved exactly by polynomial antiderivatives.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from hpafem.fem1d import ConformingSpace, GalerkinSolution, energy_error, solve
from hpafem.mesh1d import ElementId, HpPartition, MeshError
from hpafem.polyspace import Evaluable, LegendrePoly, PiecewisePoly

log = logging.getLogger(__name__)

MAX_DEGREE = 600
EST_ROUNDOFF = 1e-12  # estimator relative to |||u_D||| treated as zero


class DegreeBudgetExceeded(RuntimeError):
    """p-enrichment pushed a degree beyond ``MAX_DEGREE``."""


@dataclass(frozen=True)
class ResidualPoly:
    element: ElementId
    poly: LegendrePoly


@dataclass(frozen=True)
class IndicatorSet:
    elements: tuple[ElementId, ...]
    eta2: np.ndarray

    @property
    def est_sq(self) -> float:
        return float(np.sum(self.eta2))

    @property
    def est(self) -> float:
        return math.sqrt(self.est_sq)

    def as_dict(self) -> dict[ElementId, float]:
        return dict(zip(self.elements, map(float, self.eta2)))

    def sum_over(self, marked: set[ElementId]) -> float:
        return float(sum(e for k, e in zip(self.elements, self.eta2) if k in marked))


def _piece(f: Evaluable, a: float, b: float) -> LegendrePoly:
    if isinstance(f, LegendrePoly):
        return f if (f.a, f.b) == (a, b) else f.restrict(a, b)
    if not isinstance(f, PiecewisePoly):
        raise TypeError("residuals need piecewise polynomial data")
    pieces = f.pieces_on(a, b)
    if len(pieces) != 1:
        raise MeshError(f"data has breakpoints inside element [{a}, {b}]")
    q = pieces[0]
    return q if (q.a, q.b) == (a, b) else q.restrict(a, b)


def residual_poly(
    u_D: GalerkinSolution,
    f_D: tuple[Evaluable, Evaluable],
    lam_D: tuple[Evaluable, Evaluable],
    k: ElementId,
) -> ResidualPoly:
    """``r = f1 + f2' + (nu u')' - sigma u`` on element ``k``, in Legendre form."""
    part = u_D.partition
    if k not in part:
        raise MeshError(f"{k!r} is not an element of the solution's partition")
    i = [e.element for e in part.elements].index(k)
    a, b = part.roots.interval(k)
    u = u_D.space.element_coefficients(u_D.coefficients)[i]
    f1, f2 = (_piece(g, a, b) for g in f_D)
    nu, sigma = (_piece(g, a, b) for g in lam_D)
    r = f1 + f2.derivative() + (nu * u.derivative()).derivative() - sigma * u
    return ResidualPoly(k, r)


def local_indicator(r: ResidualPoly | LegendrePoly) -> float:
    """``|z|^2_{H1(K)}`` for ``-z'' = r`` on ``K``, ``z = 0`` at both ends."""
    poly = r.poly if isinstance(r, ResidualPoly) else r
    if not np.any(poly.coeffs):
        return 0.0
    a, b = poly.a, poly.b
    w = poly.antiderivative(0.0).antiderivative(0.0)
    wa, wb = float(w(a)), float(w(b))
    # z = -w + linear interpolant of w, so z vanishes at a and b
    lin = LegendrePoly(a, b, np.array([(wa + wb) / 2, (wb - wa) / 2]))
    z = lin - w
    return float(z.h1_seminorm_sq())


def estimate(
    u_D: GalerkinSolution,
    f_D: tuple[Evaluable, Evaluable],
    lam_D: tuple[Evaluable, Evaluable],
    d: HpPartition | None = None,
) -> IndicatorSet:
    d = d or u_D.partition
    if d != u_D.partition:
        raise MeshError("estimate: partition differs from the solution's partition")
    pieces = u_D.space.element_coefficients(u_D.coefficients)
    eta2 = []
    for (a, b), u in zip(d.intervals(), pieces):
        f1, f2 = (_piece(g, a, b) for g in f_D)
        nu, sigma = (_piece(g, a, b) for g in lam_D)
        r = f1 + f2.derivative() + (nu * u.derivative()).derivative() - sigma * u
        eta2.append(local_indicator(r))
    return IndicatorSet(tuple(e.element for e in d.elements), np.array(eta2))


def mark(ind: IndicatorSet, theta: float) -> set[ElementId]:
    """Minimal Doerfler set: the shortest prefix of indicators sorted descending.

    Ties are broken by the canonical element order.
    """
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    order = sorted(range(len(ind.elements)), key=lambda j: (-ind.eta2[j], j))
    order = [j for j in order if ind.eta2[j] > 0]
    if not order:
        return set()
    csum = np.cumsum(ind.eta2[order])
    target = theta * csum[-1]
    n = int(np.searchsorted(csum, target, side="left")) + 1
    return {ind.elements[j] for j in order[: min(n, len(order))]}


def enriched_degree(p: int, p_hat: int) -> int:
    return p_hat + p + 3


def refine(
    d: HpPartition, marked: set[ElementId], data_degrees: dict[ElementId, int]
) -> HpPartition:
    """Raise each marked element's degree to ``p_hat + p + 3``; no bisection."""
    if not marked:
        return d
    new = {}
    for k in marked:
        if k not in d:
            raise MeshError(f"marked {k!r} is not in the partition")
        p = enriched_degree(d.degree_of(k), data_degrees[k])
        if p > MAX_DEGREE:
            raise DegreeBudgetExceeded(f"degree {p} on {k!r} exceeds {MAX_DEGREE}")
        new[k] = p
    return d.with_degrees(new)


@dataclass(frozen=True)
class ReduceParams:
    theta: float
    rho: float
    alpha_star: float
    alpha_sup: float

    def __post_init__(self) -> None:
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if not 0 < self.alpha_star <= self.alpha_sup:
            raise ValueError("need 0 < alpha_* <= alpha^*")

    @property
    def ratio(self) -> float:
        return self.alpha_star / self.alpha_sup

    @property
    def kappa(self) -> float:
        return math.sqrt(max(1.0 - self.ratio * self.theta, 0.0))

    @property
    def M(self) -> int:
        """Smallest ``M >= 0`` with ``sqrt(alpha^*/alpha_*) kappa^M <= rho``."""
        target = self.rho * math.sqrt(self.ratio)
        if target >= 1:
            return 0
        if self.kappa == 0:
            return 1
        return max(0, math.ceil(math.log(target) / math.log(self.kappa) - 1e-12))

    @property
    def estimator_target_ratio(self) -> float:
        """``est_i <= rho (alpha_*/alpha^*) est_0`` implies the REDUCE guarantee."""
        return self.rho * self.ratio


@dataclass(frozen=True)
class ReduceStep:
    i: int
    est: float
    energy_error: float | None
    dofs: int
    num_marked: int
    est2_marked: float
    energy_increment_sq: float | None  # |||u_{i+1} - u_i|||^2 after the refinement


@dataclass
class ReduceResult:
    partition: HpPartition
    solution: GalerkinSolution
    steps: list[ReduceStep]
    M: int
    exit_reason: str
    params: ReduceParams

    @property
    def iterations(self) -> int:
        return len(self.steps) - 1

    @property
    def est(self) -> float:
        return self.steps[-1].est


def reduce(
    rho: float,
    d: HpPartition,
    f_D: tuple[Evaluable, Evaluable],
    lam_D: tuple[Evaluable, Evaluable],
    theta: float,
    alpha_star: float,
    alpha_sup: float,
    data_degrees: dict[ElementId, int] | None = None,
    estimator_exit: bool = True,
    u_exact: Any = None,
    max_iters: int | None = None,
) -> ReduceResult:
    """SOLVE, ESTIMATE, MARK, REFINE until the error is reduced by ``rho``.

    Runs the a priori number ``M`` of iterations, stopping early when the
    estimator vanishes (up to roundoff relative to ``|||u_D|||``) or (with ``estimator_exit``) when
    ``est_i <= rho (alpha_*/alpha^*) est_0``, which certifies the same bound.

    Args:
        rho: Requested reduction of the error relative to the best
            approximation from the input space.
        d: Input partition; the data must be polynomial on its elements.
        f_D: ``(f1, f2)`` piecewise polynomials.
        lam_D: ``(nu, sigma)`` piecewise polynomials.
        theta: Doerfler parameter.
        alpha_star: Coercivity constant.
        alpha_sup: Continuity constant.
        data_degrees: ``p_hat`` per element; defaults to the input degrees.
        estimator_exit: Enable the estimator-based early exit.
        u_exact: Optional exact solution of the data problem, for traces.
        max_iters: Optional cap below ``M``.
    """
    params = ReduceParams(theta, rho, alpha_star, alpha_sup)
    M = params.M if max_iters is None else min(params.M, max_iters)
    data_degrees = data_degrees or {e.element: e.degree for e in d}
    lam = lam_D

    def err(sol: GalerkinSolution) -> float | None:
        return None if u_exact is None else energy_error(u_exact, sol.as_piecewise, lam)

    sol = solve(ConformingSpace(d), f_D, lam_D)
    ind = estimate(sol, f_D, lam_D, d)
    est0 = ind.est
    steps: list[ReduceStep] = []
    reason = "a priori iteration count reached"
    i = 0
    while True:
        if ind.est <= EST_ROUNDOFF * math.sqrt(max(sol.energy_sq(), 0.0)):
            steps.append(ReduceStep(i, ind.est, err(sol), d.total_dof, 0, 0.0, None))
            reason = "estimator vanished"
            break
        if estimator_exit and ind.est <= params.estimator_target_ratio * est0:
            steps.append(ReduceStep(i, ind.est, err(sol), d.total_dof, 0, 0.0, None))
            reason = "estimator target reached"
            break
        if i >= M:
            steps.append(ReduceStep(i, ind.est, err(sol), d.total_dof, 0, 0.0, None))
            break
        marked = mark(ind, theta)
        d_new = refine(d, marked, data_degrees)
        sol_new = solve(ConformingSpace(d_new), f_D, lam_D)
        incr = energy_error(sol_new.as_piecewise, sol.as_piecewise, lam)
        steps.append(
            ReduceStep(i, ind.est, err(sol), d.total_dof, len(marked), ind.sum_over(marked), incr**2)
        )
        log.debug("reduce i=%d est=%.3e dofs=%d marked=%d", i, ind.est, d.total_dof, len(marked))
        d, sol = d_new, sol_new
        ind = estimate(sol, f_D, lam_D, d)
        i += 1
    return ReduceResult(d, sol, steps, M, reason, params)
