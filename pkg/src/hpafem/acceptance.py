"""Acceptance checks shared by ``hpafem verify`` and the test-suite.

Each check returns a ``CriterionResult``; ``run_suite`` prints one
``PASS``/``FAIL`` line per criterion. Randomized corpora are derived from a
single integer seed, so results are reproducible.
"""

from __future__ import annotations

import logging
import math
import random
import time
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable

import numpy as np

from hpafem.driver import IterationRecord, decay_fit, derive_params, hp_afem
from hpafem.error_functional import LocalErrorOracle, ProblemData, project_data
from hpafem.estimator_reduce import ReduceParams, estimate, reduce
from hpafem.fem1d import (
    ConformingSpace,
    best_conforming_approx,
    broken_best_error,
    energy_error,
    solve,
)
from hpafem.mesh1d import ElementId, HpPartition, RootPartition, bisect_element
from hpafem.polyspace import Function1D, PiecewisePoly, project_l2
from hpafem.problems import manufactured, xalpha
from hpafem.random_oracles import RandomTreeOracle
from hpafem.tree_approx import (
    GhostTree,
    brute_force_sigma,
    dp_sigma,
    enumerate_partitions,
    greedy_h_step,
    h_greedy,
)

log = logging.getLogger(__name__)

TREE_INSTANCES = 200
TREE_DEPTH = 4
TREE_N = 8


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(fn: Callable[..., CriterionResult]) -> Callable[..., CriterionResult]:
    def wrapper(*args, **kwargs) -> CriterionResult:
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# tree corpus ------------------------------------------------------------------

def tree_corpus(seed: int = 0, n: int = TREE_INSTANCES) -> list[RandomTreeOracle]:
    rng = random.Random(seed)
    return [RandomTreeOracle(rng.getrandbits(32)) for _ in range(n)]


ROOT = ElementId(0, 0, 0)


@lru_cache(maxsize=None)
def _sigmas(seed: int, n: int, hp: bool) -> tuple[tuple[Fraction, ...], ...]:
    out = []
    for o in tree_corpus(seed, n):
        out.append(tuple(brute_force_sigma(k, o, TREE_DEPTH, hp=hp) for k in range(1, TREE_N + 1)))
    return tuple(out)


def hp_sequence(oracle, growth: str = "hp", n_max: int = TREE_N) -> dict[int, Fraction]:
    """``{N: E_{D_N}}`` along the greedy hp sequence on a depth-capped tree."""
    t = GhostTree(RootPartition(), oracle, max_level=TREE_DEPTH, growth=growth)
    seq = {t.n_leaves: t.error}
    while t.n_leaves < n_max and t.can_grow():
        greedy_h_step(t)
        seq[t.n_leaves] = t.error
    return seq


@_timed
def criterion_1(seed: int = 0, n: int = TREE_INSTANCES) -> CriterionResult:
    """h-greedy: ``E_N <= N/(N-n+1) sigma_n`` exactly."""
    sig = _sigmas(seed, n, False)
    checked = bad = 0
    for o, s in zip(tree_corpus(seed, n), sig):
        for part, E in h_greedy(o, TREE_N, max_level=TREE_DEPTH):
            N = len(part)
            for k in range(1, N + 1):
                checked += 1
                if E > Fraction(N, N - k + 1) * s[k - 1]:
                    bad += 1
                    log.warning("h-greedy bound violated: N=%d n=%d E=%s sigma=%s", N, k, E, s[k - 1])
    return CriterionResult(
        1, "h-tree instance optimality", bad == 0 and checked > 0,
        f"{bad} violations in {checked} (instance, n, N) triples over {n} oracles",
    )


def hp_bound_violations(seed: int, n: int, growth: str) -> tuple[int, list[float]]:
    sig = _sigmas(seed, n, True)
    checked = 0
    ratios: list[float] = []
    for o, s in zip(tree_corpus(seed, n), sig):
        for N, E in hp_sequence(o, growth).items():
            for k in range(1, N + 1):
                checked += 1
                bound = Fraction(2 * N, N - k + 1) * s[k - 1]
                if E > bound:
                    r = math.inf if bound == 0 else float(E / bound)
                    ratios.append(r)
                    log.info("hp bound violated (%s growth): N=%d n=%d ratio=%s", growth, N, k, r)
    return checked, ratios


@_timed
def criterion_2(seed: int = 0, n: int = TREE_INSTANCES, growth: str = "hp") -> CriterionResult:
    """hp near-bestness ``E_N <= 2N/(N-n+1) sigma_n`` on >= 95% of triples, ratios <= 4."""
    checked, ratios = hp_bound_violations(seed, n, growth)
    frac = 1 - len(ratios) / max(checked, 1)
    worst = max(ratios, default=0.0)
    ok = checked > 0 and frac >= 0.95 and worst <= 4
    return CriterionResult(
        2, f"hp-tree near-bestness ({growth} growth)", ok,
        f"{len(ratios)} violations in {checked} triples ({100 * frac:.2f}% hold), worst ratio {worst:.3g}",
        extra={"ratios": ratios},
    )


@_timed
def criterion_3(seed: int = 0, n: int = TREE_INSTANCES) -> CriterionResult:
    """Exhaustive enumeration agrees with the dynamic program."""
    mism = checked = 0
    for hp in (False, True):
        sig = _sigmas(seed, n, hp)
        for o, s in zip(tree_corpus(seed, n), sig):
            for k in range(1, TREE_N + 1):
                checked += 1
                if dp_sigma(k, o, TREE_DEPTH, hp=hp) != s[k - 1]:
                    mism += 1
    return CriterionResult(
        3, "brute force vs dynamic programming", mism == 0,
        f"{mism} mismatches in {checked} (instance, N, h/hp) cases",
    )


# finite element checks ----------------------------------------------------------

def random_partition(rng: random.Random, n_bisect: int, p_max: int, roots=None) -> HpPartition:
    d = HpPartition.uniform(roots or RootPartition(), 0, 1)
    for _ in range(n_bisect):
        d = bisect_element(d, rng.choice(d.elements).element)
    return d.with_degrees({e.element: rng.randint(1, p_max) for e in d})


def _projected(f: Function1D, d: HpPartition, extra: int) -> PiecewisePoly:
    pieces = [project_l2(f, iv, e.degree + extra) for iv, e in zip(d.intervals(), d)]
    return PiecewisePoly(d.breakpoints(), pieces)


def reference_solution(d: HpPartition, f_D, lam_D, extra_degree: int = 25, levels: int = 2):
    """Galerkin solution on ``d`` refined ``levels`` times with raised degrees.

    The reference space contains the spaces of all partitions obtained from
    ``d`` by p-enrichment up to ``extra_degree``, so Galerkin orthogonality
    holds exactly for them.
    """
    fine = d
    for _ in range(levels):
        for e in list(fine):
            fine = bisect_element(fine, e.element)
    fine = fine.with_degrees({e.element: e.degree + extra_degree for e in fine})
    return solve(ConformingSpace(fine), f_D, lam_D).as_piecewise


def _unit_lam() -> tuple[PiecewisePoly, PiecewisePoly]:
    one = PiecewisePoly([0.0, 1.0], [project_l2(Function1D.constant(1.0), (0.0, 1.0), 0)])
    return one, PiecewisePoly.zero()


@_timed
def criterion_4(seed: int = 0, cases: int = 10) -> CriterionResult:
    """Estimator equals the H1 error for nu = 1, sigma = 0."""
    rng = random.Random(seed + 4)
    lam = _unit_lam()
    worst = 0.0
    exact = 0
    ok = True
    poly = manufactured("x*(1 - x)")
    trig = manufactured("sin(pi*x) + x*cos(3*x) - x*cos(3)")
    for c in range(cases):
        d = random_partition(rng, rng.randint(0, 6), 4)
        if c % 2 == 0:
            f1 = _projected(poly.data.f1, d, 0)
            u_ref = poly.u_exact  # f1 = 2 is reproduced exactly
        else:
            f1 = _projected(trig.data.f1, d, rng.randint(0, 3))
            u_ref = None
        f_D = (f1, PiecewisePoly.zero())
        sol = solve(ConformingSpace(d), f_D, lam)
        if u_ref is None:
            u_ref = reference_solution(d, f_D, lam, extra_degree=f1.max_degree + 3, levels=0)
        err = energy_error(u_ref, sol.as_piecewise, lam)
        est = estimate(sol, f_D, lam).est
        floor = 1e-12 * energy_error(u_ref, None, lam)
        if err <= floor:  # Galerkin solution is exact: compare at roundoff level
            exact += 1
            ok = ok and est <= floor
            continue
        worst = max(worst, abs(est - err) / err)
    return CriterionResult(
        4, "estimator exactness", ok and worst <= 1e-10,
        f"max relative |est - err| = {worst:.2e} over {cases - exact} cases; "
        f"{exact} exact cases with est at roundoff: {ok}",
    )


def variable_problem(rng: random.Random) -> tuple:
    """Polynomial data with nu in [1, 2] and sigma in [0, 1]."""
    a = rng.uniform(0.2, 1.0)
    nu = Function1D.polynomial([1.0, 0.0, a])  # 1 + a x^2
    s = rng.uniform(0.0, 4.0)
    sigma = Function1D.polynomial([0.0, s, -s])  # s x (1 - x)
    f1 = Function1D.polynomial([rng.uniform(-3, 3) for _ in range(rng.randint(1, 4))])
    f2 = Function1D.polynomial([rng.uniform(-2, 2) for _ in range(rng.randint(1, 3))])
    data = ProblemData(f1, f2, nu, sigma, 1.0, 1.0 + a, s / 4)
    return data


def _poly_data(data: ProblemData, d: HpPartition):
    proj = project_data(d.with_degrees({e.element: max(e.degree, 4) for e in d}), data)
    return proj


@_timed
def criterion_5(seed: int = 0, cases: int = 10) -> CriterionResult:
    """``est / sqrt(alpha^*) <= |||u - u_D||| <= est / sqrt(alpha_*)``."""
    rng = random.Random(seed + 5)
    worst_lo = worst_hi = math.inf
    fails = 0
    for _ in range(cases):
        data = variable_problem(rng)
        d = random_partition(rng, rng.randint(0, 5), 3)
        proj = _poly_data(data, d)
        sol = solve(ConformingSpace(d), proj.f, proj.lam)
        u_ref = reference_solution(d, proj.f, proj.lam)
        err = energy_error(u_ref, sol.as_piecewise, proj.lam)
        est = estimate(sol, proj.f, proj.lam).est
        lo = est / math.sqrt(data.alpha_sup)
        hi = est / math.sqrt(data.alpha_star)
        slack = 1e-9 * max(err, est)
        if not (lo <= err + slack and err <= hi + slack):
            fails += 1
        worst_lo = min(worst_lo, err / lo if lo else math.inf)
        worst_hi = min(worst_hi, hi / err if err else math.inf)
    return CriterionResult(
        5, "reliability-efficiency sandwich", fails == 0,
        f"{fails} failures in {cases} cases; min err/lower = {worst_lo:.3g}, min upper/err = {worst_hi:.3g}",
    )


def _reduce_runs(seed: int, runs: int, estimator_exit: bool):
    rng = random.Random(seed)
    for _ in range(runs):
        data = variable_problem(rng)
        d = random_partition(rng, rng.randint(1, 4), 2)
        proj = _poly_data(data, d)
        d_in = d.with_degrees({e.element: rng.randint(1, 3) for e in d})
        u_ref = reference_solution(d, proj.f, proj.lam, extra_degree=40, levels=1)
        res = reduce(
            0.05, d_in, proj.f, proj.lam, 0.5, data.alpha_star, data.alpha_sup,
            data_degrees=proj.data_degrees, estimator_exit=estimator_exit, u_exact=u_ref,
        )
        yield data, proj, res, u_ref


@_timed
def criterion_6(seed: int = 0, runs: int = 5) -> CriterionResult:
    """``est^2(M) <= alpha^* |||u_D - u_Dbar|||^2`` after every enrichment."""
    checked = fails = 0
    worst = 0.0
    for data, _, res, _ in _reduce_runs(seed + 6, runs, True):
        for st in res.steps:
            if st.energy_increment_sq is None:
                continue
            checked += 1
            rhs = data.alpha_sup * st.energy_increment_sq
            worst = max(worst, st.est2_marked / rhs if rhs > 0 else math.inf)
            if st.est2_marked > rhs * (1 + 1e-9) + 1e-300:
                fails += 1
    return CriterionResult(
        6, "discrete efficiency", fails == 0 and checked > 0,
        f"{fails} failures in {checked} iterations; max est^2(M)/(alpha^* incr^2) = {worst:.3g}",
    )


@_timed
def criterion_7(seed: int = 0, runs: int = 5) -> CriterionResult:
    """Per-iteration contraction by kappa and final reduction by rho after M steps."""
    fails = []
    worst = 0.0
    for data, _, res, _ in _reduce_runs(seed + 7, runs, True):
        errs = [s.energy_error for s in res.steps]
        kappa = res.params.kappa
        for e0, e1 in zip(errs, errs[1:]):
            if e0 > 1e-13:
                worst = max(worst, e1 / e0)
                if e1 > (kappa + 1e-9) * e0:
                    fails.append(f"ratio {e1 / e0:.4g} > kappa {kappa:.4g}")
        if errs[-1] > res.params.rho * errs[0] * (1 + 1e-9) + 1e-13:
            fails.append(f"final {errs[-1]:.3g} > rho * initial {res.params.rho * errs[0]:.3g}")
    return CriterionResult(
        7, "REDUCE contraction and termination", not fails,
        f"max error ratio {worst:.4g}; " + ("; ".join(fails[:3]) if fails else "all runs reached rho"),
    )


@_timed
def criterion_8(seed: int = 0, cases: int = 10) -> CriterionResult:
    """``|||u - u_D|||^2 = |||u - u_Dbar|||^2 + |||u_Dbar - u_D|||^2`` for nested spaces."""
    rng = random.Random(seed + 8)
    worst = 0.0
    for _ in range(cases):
        data = variable_problem(rng)
        d = random_partition(rng, rng.randint(0, 4), 3)
        proj = _poly_data(data, d)
        u = reference_solution(d, proj.f, proj.lam)
        d_bar = d.with_degrees({e.element: e.degree + rng.randint(0, 5) for e in d})
        if rng.random() < 0.5:
            d = d.with_degrees({e.element: max(1, e.degree - 1) for e in d})
        u_d = solve(ConformingSpace(d), proj.f, proj.lam).as_piecewise
        u_b = solve(ConformingSpace(d_bar), proj.f, proj.lam).as_piecewise
        lhs = energy_error(u, u_d, proj.lam) ** 2
        rhs = energy_error(u, u_b, proj.lam) ** 2 + energy_error(u_b, u_d, proj.lam) ** 2
        worst = max(worst, abs(lhs - rhs) / max(lhs, 1e-300))
    return CriterionResult(
        8, "Pythagoras identity", worst <= 1e-9, f"max relative defect {worst:.2e} over {cases} cases"
    )


@_timed
def criterion_9(seed: int = 0, cases: int = 10) -> CriterionResult:
    """Conforming and broken H1 best-approximation errors coincide."""
    rng = random.Random(seed + 9)
    funcs = [xalpha(0.7).u_exact] + [
        manufactured(e).u_exact
        for e in ("sin(3*x)*x*(1 - x)", "exp(x) - 1 - x*(exp(1) - 1)", "abs(x - 1/3) - 1/3 - x/3")
    ]
    worst = 0.0
    for c in range(cases):
        v = funcs[c % len(funcs)]
        d = random_partition(rng, rng.randint(0, 6), 6)
        _, conf = best_conforming_approx(v, d)
        brok = broken_best_error(v, d)
        worst = max(worst, abs(conf - brok) / max(brok, 1e-300))
    return CriterionResult(
        9, "conforming = broken best approximation", worst <= 1e-12,
        f"max relative difference {worst:.2e} over {cases} pairs",
    )


# benchmark runs --------------------------------------------------------------------

BENCH_MU = 0.1
BENCH_SAFETY = 0.25


@lru_cache(maxsize=4)
def benchmark_run(max_iters: int, growth: str = "hp") -> tuple[list[IterationRecord], object, str]:
    prob = xalpha(0.7)
    params = derive_params(prob.data, B=2.0, mu=BENCH_MU, safety=BENCH_SAFETY)
    try:
        recs = hp_afem(prob.data, params, prob.u_exact, max_iters=max_iters, growth=growth)
        note = ""
    except Exception as exc:  # partial records are still informative
        recs = getattr(exc, "records", [])
        note = f"{type(exc).__name__}: {exc}"
    return recs, params, note


@_timed
def criterion_10(iters: int = 22) -> CriterionResult:
    """True error below eps_i, exact geometric schedule, oscillation bound."""
    recs, params, note = benchmark_run(iters)
    problems = []
    if len(recs) < 8:
        problems.append(f"only {len(recs)} iterations ({note})")
    prev = params.eps0
    for r in recs:
        if not r.true_error <= r.eps:
            problems.append(f"i={r.i}: error {r.true_error:.3g} > eps {r.eps:.3g}")
        if r.eps != params.ratio * prev:
            problems.append(f"i={r.i}: eps not geometric")
        if r.osc > params.omega * prev * math.sqrt(params.delta) * (1 + 1e-9):
            problems.append(f"i={r.i}: osc {r.osc:.3g} above sqrt(delta) omega eps_prev")
        prev = r.eps
    worst = max((r.true_error / r.eps for r in recs), default=math.nan)
    return CriterionResult(
        10, "tolerance chain on x^0.7", not problems,
        f"{len(recs)} iterations, max error/eps = {worst:.3g}" + ("; " + "; ".join(problems[:3]) if problems else ""),
    )


@_timed
def criterion_11(iters: int = 22) -> CriterionResult:
    """Decay fit quality and the 1e-6 accuracy target with at most 500 dofs."""
    recs, _, note = benchmark_run(iters)
    dofs = [r.dofs_nearbest for r in recs]
    errs = [r.true_error for r in recs]
    fit = decay_fit(dofs, errs)
    reached = [(n, e) for n, e in zip(dofs, errs) if e <= 1e-6 and n <= 500]
    ok = fit.ok and fit.r2 >= 0.95 and bool(reached)
    best = min(errs, default=math.nan)
    detail = (
        f"best fit tau={fit.tau:.3g} eta={fit.eta:.3g} r2={fit.r2:.4f}; "
        f"smallest true error {best:.3g} at #D={dofs[errs.index(best)] if errs else 0} "
        f"after {len(recs)} iterations; target 1e-6 with #D<=500 {'met' if reached else 'not met'}"
    )
    if note:
        detail += f" ({note})"
    return CriterionResult(11, "exponential decay diagnostic", ok, detail, extra={"fit": fit})


def toy_problem():
    return manufactured("sin(pi*x)", name="sine")


@_timed
def criterion_12(iters: int = 3) -> CriterionResult:
    """No depth-3 partition with small error functional is much cheaper than D_i."""
    prob = toy_problem()
    params = derive_params(prob.data, B=2.0, mu=BENCH_MU, safety=BENCH_SAFETY)
    recs = hp_afem(prob.data, params, prob.u_exact, max_iters=iters)
    roots = RootPartition()
    oracle = LocalErrorOracle(prob.u_exact, prob.data, params.delta, roots)
    factor = params.b * params.omega - params.C2
    parts = enumerate_partitions([ROOT], 8, 3, hp=True)
    errors = [(sum(oracle(k, d) for k, d in p), sum(d for _, d in p)) for p in parts]
    problems = []
    qualifying = 0
    for r in recs:
        thr = (factor * r.eps_prev) ** 2
        cheap = [n for E, n in errors if E <= thr]
        qualifying += len(cheap)
        if cheap and min(cheap) < r.dofs_nearbest / params.B:
            problems.append(f"i={r.i}: #D={min(cheap)} < #D_i/B={r.dofs_nearbest / params.B:.3g}")
    return CriterionResult(
        12, "instance-optimality probe", not problems and len(recs) == iters,
        f"#D_i = {[r.dofs_nearbest for r in recs]}; {len(parts)} partitions searched, "
        f"{qualifying} below threshold" + ("; " + "; ".join(problems) if problems else ""),
    )


SUITES: dict[str, tuple[Callable[..., CriterionResult], ...]] = {
    "trees": (criterion_1, criterion_2, criterion_3),
    "estimator": (criterion_4, criterion_5),
    "reduce": (criterion_6, criterion_7, criterion_8),
    "fem": (criterion_9,),
    "afem": (criterion_10, criterion_11, criterion_12),
}
SUITES["all"] = tuple(c for name in ("trees", "estimator", "reduce", "fem", "afem") for c in SUITES[name])

_SEEDED = {criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
           criterion_8, criterion_9}


def run_suite(name: str, seed: int = 0, echo: Callable[[str], None] = print) -> list[CriterionResult]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    out = []
    for check in SUITES[name]:
        res = check(seed) if check in _SEEDED else check()
        echo(res.line())
        out.append(res)
    return out
