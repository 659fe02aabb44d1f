"""Outer hp-AFEM loop: alternate hp near-best coarsening and REDUCE.

Each iteration coarsens the current approximation together with the data to
an hp-partition with error functional below ``omega * eps``, then reduces the
Galerkin error on that partition by the factor
``mu / (1 + (C1 + C3) omega)``; the tolerance shrinks geometrically by
``mu + C1 omega``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from hpafem.error_functional import (
    LocalErrorOracle,
    ProblemData,
    global_oscillation,
    project_data,
)
from hpafem.estimator_reduce import ReduceResult, reduce
from hpafem.fem1d import energy_error
from hpafem.mesh1d import RootPartition
from hpafem.polyspace import Function1D, PiecewisePoly, composite_rule
from hpafem.tree_approx import NearBestResult, nearbest_tree

log = logging.getLogger(__name__)


class ParameterError(ValueError):
    """The admissible parameter set is empty."""


@dataclass(frozen=True)
class AfemParams:
    delta: float
    B: float
    b: float
    C1: float
    mu: float
    omega: float
    eps0: float
    theta: float = 0.5
    C2: float = 1.0
    C3: float = 1.0
    C_f: float = 0.0
    C_bar: float = 0.0
    C_hat: float = 1.0
    safety: float = 0.25

    def __post_init__(self) -> None:
        if not self.B > 1:
            raise ParameterError("B must exceed 1")
        if not 0 < self.mu < 1:
            raise ParameterError("mu must lie in (0, 1)")
        if not self.C1 * self.C2 < self.b * (1 - self.mu):
            raise ParameterError(
                f"C1*C2 = {self.C1 * self.C2:.4g} must be below b(1-mu) = {self.b * (1 - self.mu):.4g}"
            )
        lo, hi = self.C2 / self.b, (1 - self.mu) / self.C1
        if not lo < self.omega < hi:
            raise ParameterError(f"omega = {self.omega:.6g} outside ({lo:.6g}, {hi:.6g})")

    @property
    def ratio(self) -> float:
        """Tolerance reduction per iteration, ``mu + C1 omega``."""
        return self.mu + self.C1 * self.omega

    @property
    def rho(self) -> float:
        """Reduction factor requested from REDUCE."""
        return self.mu / (1 + (self.C1 + self.C3) * self.omega)

    @property
    def omega_interval(self) -> tuple[float, float]:
        return self.C2 / self.b, (1 - self.mu) / self.C1

    def as_dict(self) -> dict[str, float]:
        d = asdict(self)
        d.update(ratio=self.ratio, rho=self.rho)
        return d


def b_from_B(B: float) -> float:
    return math.sqrt(0.5 * (1 - 1 / B))


def _l2_norm(f: Function1D, sing: tuple[float, ...]) -> float:
    x, w = composite_rule(0.0, 1.0, 64, (), sing)
    return float(np.sqrt(np.dot(w, f(x) ** 2)))


def load_bound(data: ProblemData) -> float:
    """``(2^{-1/2} ||f1|| + ||f2||) / alpha_*``, an a priori bound of ``|u|_{H1}``."""
    sing = data.singularities
    return (_l2_norm(data.f1, sing) / math.sqrt(2) + _l2_norm(data.f2, sing)) / data.alpha_star


def derive_params(
    data: ProblemData,
    B: float = 2.0,
    mu: float = 0.5,
    safety: float = 0.25,
    C_hat: float = 1.0,
    theta: float = 0.5,
    delta: float | None = None,
    omega: float | None = None,
) -> AfemParams:
    """Admissible parameters from the data.

    ``delta`` defaults to ``safety (b (1 - mu) / C_bar)^2`` so that
    ``C1 = C_bar sqrt(delta)`` stays below ``b (1 - mu)``; ``omega`` defaults
    to the geometric mean of its admissible interval.
    """
    if not B > 1:
        raise ParameterError("B must exceed 1")
    if not 0 < mu < 1:
        raise ParameterError("mu must lie in (0, 1)")
    b = b_from_B(B)
    C_f = load_bound(data)
    C_bar = (1.5 * C_f + C_hat + 1) / data.alpha_star
    if delta is None:
        if not 0 < safety < 1:
            raise ParameterError("safety must lie in (0, 1)")
        delta = safety * (b * (1 - mu) / C_bar) ** 2
    C1 = C_bar * math.sqrt(delta)
    if not C1 < b * (1 - mu):
        raise ParameterError(f"delta = {delta:.3g} too large: C1 = {C1:.3g} >= b(1-mu)")
    lo, hi = 1.0 / b, (1 - mu) / C1
    if omega is None:
        omega = math.sqrt(lo * hi)
    if not lo < omega < hi:
        raise ParameterError(f"omega = {omega:.6g} outside ({lo:.6g}, {hi:.6g})")
    eps0 = C_f if C_f > 0 else 1.0
    return AfemParams(
        delta=delta, B=B, b=b, C1=C1, mu=mu, omega=omega, eps0=eps0, theta=theta,
        C_f=C_f, C_bar=C_bar, C_hat=C_hat, safety=safety,
    )


@dataclass
class IterationRecord:
    i: int
    eps: float
    dofs_nearbest: int
    dofs_reduce: int
    E_sqrt: float
    osc: float
    est: float
    true_error: float | None
    reduce_iters: int
    eps_prev: float = 0.0
    nearbest: NearBestResult | None = field(default=None, repr=False)
    reduce_result: ReduceResult | None = field(default=None, repr=False)
    solution: PiecewisePoly | None = field(default=None, repr=False)

    CSV_FIELDS = (
        "i", "eps", "dofs_nearbest", "dofs_reduce", "E_sqrt", "osc", "est", "true_error",
        "reduce_iters",
    )

    def row(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}


def h1_error(u_exact: Function1D, v: PiecewisePoly) -> float:
    one, zero = Function1D.constant(1.0), Function1D.constant(0.0)
    return energy_error(u_exact, v, (one, zero))


def hp_afem(
    data: ProblemData,
    params: AfemParams,
    u_exact: Function1D | None = None,
    max_iters: int = 30,
    roots: RootPartition | None = None,
    tol: float = 0.0,
    max_N: int = 2000,
    estimator_exit: bool = True,
    growth: str = "hp",
    modified_rule: str = "recursive",
    callback: Callable[[IterationRecord], None] | None = None,
) -> list[IterationRecord]:
    """Run the outer loop from ``u_0 = 0`` and ``eps_0 = params.eps0``.

    Stops after ``max_iters`` iterations, once ``eps_i <= tol``, or when the
    iterate is exact (vanishing estimator and oscillation). Subroutine
    failures propagate with the records computed so far attached as
    ``exc.records``. ``growth`` and ``modified_rule`` select the near-best
    variant (see ``GhostTree``).
    """
    roots = roots or RootPartition()
    u_bar = PiecewisePoly.zero()
    eps_prev = params.eps0
    records: list[IterationRecord] = []
    for i in range(1, max_iters + 1):
        try:
            oracle = LocalErrorOracle(u_bar, data, params.delta, roots)
            nb = nearbest_tree(
                params.omega * eps_prev, oracle, roots, max_N, modified_rule, growth=growth
            )
            proj = project_data(nb.partition, data)
            red = reduce(
                params.rho,
                nb.partition,
                proj.f,
                proj.lam,
                params.theta,
                data.alpha_star,
                data.alpha_sup,
                data_degrees=proj.data_degrees,
                estimator_exit=estimator_exit,
            )
        except Exception as exc:
            exc.records = records  # type: ignore[attr-defined]
            raise
        nb.data_projections = proj
        u_bar = red.solution.as_piecewise
        eps = params.ratio * eps_prev
        osc = global_oscillation(nb.partition, data)
        rec = IterationRecord(
            i=i,
            eps=eps,
            dofs_nearbest=nb.partition.total_dof,
            dofs_reduce=red.partition.total_dof,
            E_sqrt=math.sqrt(nb.achieved_error),
            osc=osc,
            est=red.est,
            true_error=h1_error(u_exact, u_bar) if u_exact is not None else None,
            reduce_iters=red.iterations,
            eps_prev=eps_prev,
            nearbest=nb,
            reduce_result=red,
            solution=u_bar,
        )
        records.append(rec)
        log.info(
            "i=%d eps=%.3e #D=%d #Dbar=%d E^1/2=%.3e est=%.3e err=%s",
            i, eps, rec.dofs_nearbest, rec.dofs_reduce, rec.E_sqrt, rec.est, rec.true_error,
        )
        if callback is not None:
            callback(rec)
        eps_prev = eps
        if red.exit_reason == "estimator vanished" and osc <= 1e-12 * max(rec.E_sqrt, 1.0):
            break
        if eps <= tol:
            break
    return records


@dataclass(frozen=True)
class DecayFit:
    eta: float
    tau: float
    r2: float
    log_C: float
    ok: bool = True
    note: str = ""


TAU_GRID = (1 / 3, 1 / 2, 1.0)


def decay_fit(dofs, errors, taus=TAU_GRID) -> DecayFit:
    """Fit ``log(err) = log C - eta N^tau`` by least squares for each ``tau``.

    Returns the fit with the largest coefficient of determination, or a
    failure marker (``ok=False``) for fewer than 4 usable points or
    constant errors.
    """
    n = np.asarray(dofs, dtype=float)
    e = np.asarray(errors, dtype=float)
    keep = (e > 0) & np.isfinite(e) & (n > 0)
    n, e = n[keep], e[keep]
    if len(n) < 4:
        return DecayFit(math.nan, math.nan, 0.0, math.nan, False, "fewer than 4 positive errors")
    y = np.log(e)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return DecayFit(0.0, math.nan, 0.0, float(y[0]), False, "errors are constant")
    best = None
    for tau in taus:
        x = n**tau
        if np.ptp(x) == 0:
            continue
        A = np.column_stack([np.ones_like(x), -x])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        ss_res = float(np.sum((y - A @ coef) ** 2))
        r2 = 1 - ss_res / ss_tot
        if best is None or r2 > best.r2:
            best = DecayFit(float(coef[1]), float(tau), r2, float(coef[0]))
    if best is None:
        return DecayFit(math.nan, math.nan, 0.0, math.nan, False, "degrees of freedom are constant")
    return best
