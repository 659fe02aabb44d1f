"""Local and global hp error functionals with penalized data oscillation.

For an element ``K`` with degree ``p`` the local functional is

    e_{K,p}(v) = |v - Pi1_{K,p} v|^2_{H1(K)} + osc^2_{K,p} / delta,

where the oscillation collects the projection errors of the data
``(f1, f2, nu, sigma)`` at degrees ``(p-1, p, p+1, p+1)``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hpafem.mesh1d import ElementId, HPartition, HpPartition, RootPartition
from hpafem.polyspace import (
    ElementSamples,
    Evaluable,
    Function1D,
    InputFunctionError,
    LegendrePoly,
    PiecewisePoly,
    derivative_of,
    piecewise_from_pieces,
    project_h1,
    project_l2,
)

_BOUND_SLACK = 1e-9


class DataBoundsError(ValueError):
    """Coefficients violate 0 < nu_* <= nu <= nu^* or 0 <= sigma <= sigma^*."""


def _with_singularities(f: Function1D, sing: Sequence[float]) -> Function1D:
    extra = tuple(s for s in sing if s not in f.singularities)
    if not extra:
        return f
    return Function1D(f.f, f.df, f.singularities + extra, f.poly_degree, f.name)


@dataclass
class ProblemData:
    """Data of -(nu u')' + sigma u = f1 + f2' on (0, 1), u(0) = u(1) = 0."""

    f1: Function1D
    f2: Function1D
    nu: Function1D
    sigma: Function1D
    nu_star: float
    nu_sup: float
    sigma_sup: float
    singularities: tuple[float, ...] = ()
    name: str = ""
    check_bounds: bool = True

    def __post_init__(self) -> None:
        self.singularities = tuple(float(s) for s in self.singularities)
        for attr in ("f1", "f2", "nu", "sigma"):
            setattr(self, attr, _with_singularities(getattr(self, attr), self.singularities))
        if self.nu.df is None or self.sigma.df is None:
            raise InputFunctionError("nu and sigma need derivatives for the H1 projection")
        if self.nu_star <= 0:
            raise DataBoundsError("nu_* must be positive")
        if self.check_bounds:
            self._check_bounds()

    def _check_bounds(self) -> None:
        x = np.linspace(0.0, 1.0, 4097)[1:-1]
        nu = self.nu(x)
        sig = self.sigma(x)
        if nu.min() < self.nu_star - _BOUND_SLACK or nu.max() > self.nu_sup + _BOUND_SLACK:
            raise DataBoundsError(
                f"nu ranges over [{nu.min():.6g}, {nu.max():.6g}], outside "
                f"[{self.nu_star}, {self.nu_sup}]"
            )
        if sig.min() < -_BOUND_SLACK or sig.max() > self.sigma_sup + _BOUND_SLACK:
            raise DataBoundsError(
                f"sigma ranges over [{sig.min():.6g}, {sig.max():.6g}], outside "
                f"[0, {self.sigma_sup}]"
            )

    # constants of the perturbed coefficient class and the energy norm
    @property
    def nu_bar_star(self) -> float:
        return self.nu_star / 2

    @property
    def nu_bar_sup(self) -> float:
        return self.nu_sup + self.nu_star / 2

    @property
    def sigma_bar_star(self) -> float:
        return self.nu_star / 2

    @property
    def sigma_bar_sup(self) -> float:
        return self.sigma_sup + self.nu_star / 2

    @property
    def alpha_star(self) -> float:
        return self.nu_star / 4

    @property
    def alpha_sup(self) -> float:
        return self.nu_sup + self.sigma_sup / 2 + 0.75 * self.nu_star


@dataclass(frozen=True)
class LocalErrorBreakdown:
    e_v: float
    osc2: float
    delta: float
    total: float

    @classmethod
    def of(cls, e_v: float, osc2: float, delta: float) -> LocalErrorBreakdown:
        return cls(e_v, osc2, delta, e_v + osc2 / delta)


@dataclass(frozen=True)
class DataProjection:
    f1_D: LegendrePoly
    f2_D: LegendrePoly
    nu_D: LegendrePoly
    sigma_D: LegendrePoly


@dataclass(frozen=True)
class ProjectedData:
    """Elementwise data projections on a partition, as piecewise polynomials."""

    f1: PiecewisePoly
    f2: PiecewisePoly
    nu: PiecewisePoly
    sigma: PiecewisePoly
    data_degrees: dict[ElementId, int]

    @property
    def f(self) -> tuple[PiecewisePoly, PiecewisePoly]:
        return self.f1, self.f2

    @property
    def lam(self) -> tuple[PiecewisePoly, PiecewisePoly]:
        return self.nu, self.sigma


@dataclass
class _ElementTable:
    """Squared projection errors for one element, indexed by degree."""

    cap: int
    ev: np.ndarray  # ev[d] for d = 0..cap, ev[0] = |v|^2_H1
    osc: np.ndarray  # osc[d] for d = 0..cap


def _l2_errors(f: Evaluable, a: float, b: float, max_degree: int) -> tuple[np.ndarray, float]:
    s = ElementSamples.build(f, a, b, max_degree)
    return np.maximum(s.projection_errors(), 0.0), s.norm_sq()


class LocalErrorOracle:
    """Memoized ``e_{K,d}`` for a fixed ``v`` (one "generation" of ``v``).

    Errors for every degree up to a capacity are computed from one set of
    samples per element; the capacity doubles when a larger degree is asked
    for. A new ``v`` means a new oracle, which is how the cache is invalidated.

    Args:
        v: The function being approximated (piecewise polynomial or a
            ``Function1D`` with derivative).
        data: Problem data.
        delta: Oscillation penalty.
        roots: Root partition addressing the elements.
        allow_zero: Define ``e_{K,0}`` as the squared error of the zero
            approximation.
    """

    supports_zero = True

    def __init__(
        self,
        v: Evaluable,
        data: ProblemData,
        delta: float,
        roots: RootPartition,
        allow_zero: bool = False,
    ):
        if delta <= 0:
            raise ValueError("delta must be positive")
        self.v = v
        self.dv = derivative_of(v)
        self.data = data
        self.delta = float(delta)
        self.roots = roots
        self.allow_zero = allow_zero
        self._tables: dict[ElementId, _ElementTable] = {}
        self._lock = threading.Lock()
        self.evaluations = 0

    def _build(self, k: ElementId, cap: int) -> _ElementTable:
        a, b = self.roots.interval(k)
        h = b - a
        d = self.data
        ev_err, dv_norm = _l2_errors(self.dv, a, b, cap - 1)
        f1_err, f1_norm = _l2_errors(d.f1, a, b, cap - 1)
        f2_err, f2_norm = _l2_errors(d.f2, a, b, cap)
        nu_err, nu_norm = _l2_errors(d.nu.derivative(), a, b, cap)
        sg_err, sg_norm = _l2_errors(d.sigma.derivative(), a, b, cap)
        degs = np.arange(1, cap + 1)
        ev = np.empty(cap + 1)
        osc = np.empty(cap + 1)
        ev[0] = dv_norm
        ev[1:] = ev_err[:cap]
        osc[0] = h * h * f1_norm + f2_norm + nu_norm + sg_norm
        osc[1:] = (
            (h / degs) ** 2 * f1_err[:cap] + f2_err[1 : cap + 1] + nu_err[1 : cap + 1]
            + sg_err[1 : cap + 1]
        )
        self.evaluations += 1
        return _ElementTable(cap, ev, osc)

    def _table(self, k: ElementId, d: int) -> _ElementTable:
        t = self._tables.get(k)
        if t is None or t.cap < d:
            cap = max(d + 2, 4 if t is None else 2 * t.cap)
            t = self._build(k, cap)
            with self._lock:
                old = self._tables.get(k)
                if old is None or old.cap < t.cap:
                    self._tables[k] = t
        return t

    def breakdown(self, k: ElementId, d: int) -> LocalErrorBreakdown:
        if d < 0 or (d == 0 and not self.allow_zero):
            raise ValueError(f"degree {d} not supported")
        t = self._table(k, max(d, 1))
        return LocalErrorBreakdown.of(float(t.ev[d]), float(t.osc[d]), self.delta)

    def __call__(self, k: ElementId, d: int) -> float:
        return self.breakdown(k, d).total

    def oscillation(self, k: ElementId, d: int) -> float:
        return self.breakdown(k, d).osc2


def oscillation(
    k: ElementId, p: int, data: ProblemData, roots: RootPartition | None = None
) -> float:
    """Squared data oscillation ``osc^2_{K,p}`` on one element."""
    if p < 1:
        raise ValueError("oscillation needs p >= 1")
    roots = roots or RootPartition()
    a, b = roots.interval(k)
    h = b - a
    f1_err, _ = _l2_errors(data.f1, a, b, p - 1)
    f2_err, _ = _l2_errors(data.f2, a, b, p)
    nu_err, _ = _l2_errors(data.nu.derivative(), a, b, p + 1)
    sg_err, _ = _l2_errors(data.sigma.derivative(), a, b, p + 1)
    return float((h / p) ** 2 * f1_err[p - 1] + f2_err[p] + nu_err[p] + sg_err[p])


def local_error(
    k: ElementId,
    p: int,
    v: Evaluable,
    data: ProblemData,
    delta: float,
    roots: RootPartition | None = None,
) -> LocalErrorBreakdown:
    if p < 1:
        raise ValueError("local error needs p >= 1")
    if delta <= 0:
        raise ValueError("delta must be positive")
    roots = roots or RootPartition()
    a, b = roots.interval(k)
    ev, _ = _l2_errors(derivative_of(v), a, b, p - 1)
    return LocalErrorBreakdown.of(float(ev[p - 1]), oscillation(k, p, data, roots), delta)


def global_error(
    d: HpPartition,
    v: Evaluable,
    data: ProblemData,
    delta: float,
    oracle: LocalErrorOracle | None = None,
) -> float:
    """``E_D(v) = sum of local totals``; pass an oracle to reuse its cache."""
    if oracle is None:
        oracle = LocalErrorOracle(v, data, delta, d.roots)
    return float(sum(oracle(e.element, e.degree) for e in d.elements))


def global_oscillation(d: HpPartition, data: ProblemData) -> float:
    """``osc_D`` (not squared)."""
    return float(np.sqrt(sum(oscillation(e.element, e.degree, data, d.roots) for e in d)))


def project_element(k_interval: tuple[float, float], p: int, data: ProblemData) -> DataProjection:
    return DataProjection(
        f1_D=project_l2(data.f1, k_interval, p - 1),
        f2_D=project_l2(data.f2, k_interval, p),
        nu_D=project_h1(data.nu, k_interval, p + 1),
        sigma_D=project_h1(data.sigma, k_interval, p + 1),
    )


def project_data(d: HpPartition, data: ProblemData) -> ProjectedData:
    """Elementwise data projections; records the data degree of each element."""
    projs = [project_element(iv, e.degree, data) for iv, e in zip(d.intervals(), d.elements)]
    return ProjectedData(
        f1=piecewise_from_pieces([q.f1_D for q in projs]),
        f2=piecewise_from_pieces([q.f2_D for q in projs]),
        nu=piecewise_from_pieces([q.nu_D for q in projs]),
        sigma=piecewise_from_pieces([q.sigma_D for q in projs]),
        data_degrees={e.element: e.degree for e in d.elements},
    )


def coefficient_h1_defect(k_interval: tuple[float, float], f: Function1D) -> float:
    """``|f - Pi1_{K,1} f|_{H1(K)}``."""
    a, b = k_interval
    err, _ = _l2_errors(f.derivative(), a, b, 0)
    return float(np.sqrt(err[0]))


def validate_root_fineness(partition: HPartition, data: ProblemData) -> bool:
    """Check that every root resolves nu and sigma well enough.

    When it holds, every projected ``nu_D`` stays above ``nu_*/2`` and every
    ``sigma_D`` above ``-nu_*/2``, so the discrete problems remain coercive.
    """
    tol = data.nu_star / 2
    for iv in partition.intervals():
        if coefficient_h1_defect(iv, data.nu) > tol:
            return False
        if coefficient_h1_defect(iv, data.sigma) > tol:
            return False
    return True


def ensure_root_fineness(
    roots: RootPartition, data: ProblemData, max_levels: int = 10
) -> RootPartition:
    """Bisect all roots until the fineness check passes."""
    for _ in range(max_levels + 1):
        if validate_root_fineness(HPartition.root_partition(roots), data):
            return roots
        roots = roots.bisected()
    raise ValueError(f"root partition still too coarse after {max_levels} bisections")
