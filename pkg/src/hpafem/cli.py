"""Command-line front end: ``hpafem run`` and ``hpafem verify``.

``run`` reads a YAML run configuration, executes the adaptive loop (or the
approximation-only benchmark) and writes::

    <out>/header.json         parameters, derived constants, problem summary
    <out>/iterations.csv      one row per outer iteration
    <out>/nearbest_trace.csv  (with --trace-nearbest)
    <out>/reduce_trace.csv    (with --trace-reduce)
    <out>/error.json          only on failure; the exit status is then nonzero

``verify`` runs the acceptance checks and prints one line per criterion.
Verbosity follows the ``HP_AFEM_LOG`` environment variable (e.g. ``INFO``).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import yaml

import hpafem
from hpafem.driver import IterationRecord, ParameterError, derive_params, hp_afem
from hpafem.error_functional import ensure_root_fineness, validate_root_fineness
from hpafem.mesh1d import HPartition, RootPartition
from hpafem.problems import Problem, build_problem
from hpafem.tree_approx import GROWTH_RULES, MODIFIED_RULES, hp_nearbest

log = logging.getLogger("hpafem")

EXIT_CONFIG = 2
EXIT_RUN = 3


class ConfigError(ValueError):
    """The run configuration is malformed."""


@dataclass
class ProblemConfig:
    name: str = "xalpha"
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class RootsConfig:
    breakpoints: list[float] = field(default_factory=lambda: [0.0, 1.0])
    auto_repair: bool = True
    max_repair_levels: int = 10


@dataclass
class ParamsConfig:
    B: float = 2.0
    mu: float = 0.1
    safety: float = 0.25
    theta: float = 0.5
    C_hat: float = 1.0
    delta: float | None = None
    omega: float | None = None


@dataclass
class SolverConfig:
    max_iters: int = 30
    max_N: int = 2000
    tol: float = 0.0
    growth: str = "hp"
    modified_rule: str = "recursive"
    estimator_exit: bool = True
    approx_eps: list[float] = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])


@dataclass
class OutputConfig:
    out_dir: str = "runs/out"
    trace_nearbest: bool = False
    trace_reduce: bool = False


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    roots: RootsConfig = field(default_factory=RootsConfig)
    params: ParamsConfig = field(default_factory=ParamsConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    @classmethod
    def from_dict(cls, raw: dict[str, Any] | None) -> RunConfig:
        raw = dict(raw or {})
        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(raw) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for name, f in sections.items():
            if name not in raw:
                continue
            if name == "seed":
                kwargs["seed"] = int(raw["seed"])
                continue
            sub_cls = f.default_factory().__class__  # type: ignore[misc]
            kwargs[name] = _section(sub_cls, raw[name], name)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def loads(cls, text: str) -> RunConfig:
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        return cls.loads(Path(path).read_text())

    def validate(self) -> None:
        if self.solver.growth not in GROWTH_RULES:
            raise ConfigError(f"solver.growth must be one of {GROWTH_RULES}")
        if self.solver.modified_rule not in MODIFIED_RULES:
            raise ConfigError(f"solver.modified_rule must be one of {MODIFIED_RULES}")
        if self.solver.max_iters < 1 or self.solver.max_N < 1:
            raise ConfigError("solver.max_iters and solver.max_N must be positive")
        if any(not e > 0 for e in self.solver.approx_eps):
            raise ConfigError("solver.approx_eps entries must be positive")
        if self.problem.name == "inline" and not self.problem.params:
            raise ConfigError("inline problems need expressions under problem.params")


def _section(sub_cls: type, raw: Any, name: str):
    if raw is None:
        return sub_cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(sub_cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return sub_cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad section {name!r}: {exc}") from exc


# output helpers ---------------------------------------------------------------------

def fmt(x: Any) -> str:
    """CSV cell: 17 significant digits for floats, '.' decimal, empty for None."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float) or hasattr(x, "__float__") and not isinstance(x, int):
        return format(float(x), ".17g")
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _json_default(o: Any):
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    if hasattr(o, "__float__"):
        return float(o)
    return str(o)


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def configure_logging() -> None:
    level = os.environ.get("HP_AFEM_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# run ----------------------------------------------------------------------------------

def _prepare_roots(cfg: RunConfig, prob: Problem) -> tuple[RootPartition, int]:
    roots = RootPartition(tuple(cfg.roots.breakpoints))
    if validate_root_fineness(HPartition.root_partition(roots), prob.data):
        return roots, 0
    if not cfg.roots.auto_repair:
        raise ConfigError("root partition fails the fineness check and auto_repair is off")
    fixed = ensure_root_fineness(roots, prob.data, cfg.roots.max_repair_levels)
    levels = round(math.log2(fixed.n_roots / roots.n_roots))
    log.info("root partition bisected %d times for fineness", levels)
    return fixed, levels


def _header(cfg: RunConfig, prob: Problem, roots: RootPartition, repaired: int, extra: dict) -> dict:
    d = prob.data
    return {
        "version": hpafem.__version__,
        "config": cfg.to_dict(),
        "problem": {
            "name": prob.name,
            "approximation_only": prob.approximation_only,
            "nu_star": d.nu_star,
            "nu_sup": d.nu_sup,
            "sigma_sup": d.sigma_sup,
            "alpha_star": d.alpha_star,
            "alpha_sup": d.alpha_sup,
            "singularities": list(d.singularities),
            "has_exact_solution": prob.u_exact is not None,
        },
        "roots": {"breakpoints": list(roots.breakpoints), "repair_bisections": repaired},
        **extra,
    }


def _run_afem(cfg: RunConfig, prob: Problem, roots: RootPartition, out: Path, repaired: int) -> None:
    p = cfg.params
    params = derive_params(
        prob.data, B=p.B, mu=p.mu, safety=p.safety, C_hat=p.C_hat, theta=p.theta,
        delta=p.delta, omega=p.omega,
    )
    _write_json(out / "header.json", _header(cfg, prob, roots, repaired, {"params": params.as_dict()}))
    fh = (out / "iterations.csv").open("w", newline="")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(IterationRecord.CSV_FIELDS)
    nb_rows: list[list] = []
    rd_rows: list[list] = []

    def on_record(rec: IterationRecord) -> None:
        w.writerow([fmt(v) for v in rec.row().values()])
        fh.flush()
        if cfg.output.trace_nearbest and rec.nearbest is not None:
            nb_rows.extend([rec.i, t.N, t.E, t.num_trimmed, t.max_d] for t in rec.nearbest.trace)
        if cfg.output.trace_reduce and rec.reduce_result is not None:
            rd_rows.extend(
                [rec.i, s.i, s.est, s.energy_error, s.dofs, s.num_marked, s.est2_marked,
                 s.energy_increment_sq]
                for s in rec.reduce_result.steps
            )

    try:
        hp_afem(
            prob.data, params, prob.u_exact, max_iters=cfg.solver.max_iters, roots=roots,
            tol=cfg.solver.tol, max_N=cfg.solver.max_N, estimator_exit=cfg.solver.estimator_exit,
            growth=cfg.solver.growth, modified_rule=cfg.solver.modified_rule, callback=on_record,
        )
    finally:
        fh.close()
        if cfg.output.trace_nearbest:
            _write_csv(out / "nearbest_trace.csv", ["i", "N", "E", "num_trimmed", "max_d"], nb_rows)
        if cfg.output.trace_reduce:
            _write_csv(
                out / "reduce_trace.csv",
                ["i", "step", "est", "energy_error", "dofs", "num_marked", "est2_marked",
                 "energy_increment_sq"],
                rd_rows,
            )


APPROX_FIELDS = ("eps", "N", "dofs", "E_sqrt", "num_trimmed", "max_d", "elements")


def _run_approximation(cfg: RunConfig, prob: Problem, roots: RootPartition, out: Path, repaired: int) -> None:
    """Near-best hp approximation of a fixed target for a sweep of tolerances."""
    delta = cfg.params.delta or 1.0
    _write_json(out / "header.json", _header(cfg, prob, roots, repaired, {"delta": delta}))
    rows, nb_rows = [], []
    for eps in cfg.solver.approx_eps:
        res = hp_nearbest(
            eps, prob.target, prob.data, delta, cfg.solver.max_N, roots,
            cfg.solver.modified_rule, cfg.solver.growth,
        )
        last = res.trace[-1]
        part = " ".join(f"{e.element.root}:{e.element.level}:{e.element.position}:{e.degree}" for e in res.partition)
        rows.append([eps, last.N, res.partition.total_dof, math.sqrt(res.achieved_error), last.num_trimmed,
                     last.max_d, part])
        nb_rows.extend([eps, t.N, t.E, t.num_trimmed, t.max_d] for t in res.trace)
    _write_csv(out / "approximation.csv", APPROX_FIELDS, rows)
    if cfg.output.trace_nearbest:
        _write_csv(out / "nearbest_trace.csv", ["eps", "N", "E", "num_trimmed", "max_d"], nb_rows)


def run(cfg: RunConfig) -> int:
    out = Path(cfg.output.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    err_path = out / "error.json"
    if err_path.exists():
        err_path.unlink()
    try:
        prob = build_problem(cfg.problem.name, cfg.problem.params)
        roots, repaired = _prepare_roots(cfg, prob)
        if prob.approximation_only:
            _run_approximation(cfg, prob, roots, out, repaired)
        else:
            _run_afem(cfg, prob, roots, out, repaired)
    except (ConfigError, ParameterError, KeyError, TypeError, ValueError) as exc:
        return _fail(err_path, exc, EXIT_CONFIG)
    except Exception as exc:  # runtime failure in a subroutine
        return _fail(err_path, exc, EXIT_RUN)
    return 0


def _fail(path: Path, exc: BaseException, code: int) -> int:
    records = getattr(exc, "records", None)
    payload = {
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_status": code,
        "completed_iterations": len(records) if records is not None else None,
    }
    _write_json(path, payload)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


# entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hpafem", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"hpafem {hpafem.__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a configured problem")
    r.add_argument("--config", required=True, help="YAML run configuration")
    r.add_argument("--out", help="output directory (overrides output.out_dir)")
    r.add_argument("--trace-nearbest", action="store_true", help="write the near-best trace")
    r.add_argument("--trace-reduce", action="store_true", help="write the REDUCE trace")

    v = sub.add_parser("verify", help="run acceptance checks")
    v.add_argument("--suite", default="all", choices=["trees", "estimator", "reduce", "fem", "afem", "all"])
    v.add_argument("--seed", type=int, default=0, help="seed for randomized corpora")

    d = sub.add_parser("config", help="print the default configuration")
    d.add_argument("--problem", default="xalpha")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    if args.command == "config":
        print(RunConfig(problem=ProblemConfig(args.problem)).dumps(), end="")
        return 0
    if args.command == "verify":
        from hpafem.acceptance import run_suite

        results = run_suite(args.suite, seed=args.seed)
        failed = [r.number for r in results if not r.passed]
        print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
              + (f"; failed: {failed}" if failed else ""))
        return 1 if failed else 0
    try:
        cfg = RunConfig.load(args.config)
    except (OSError, ConfigError) as exc:
        out = Path(args.out) if args.out else Path(".")
        out.mkdir(parents=True, exist_ok=True)
        return _fail(out / "error.json", exc, EXIT_CONFIG)
    if args.out:
        cfg.output.out_dir = args.out
    cfg.output.trace_nearbest |= args.trace_nearbest
    cfg.output.trace_reduce |= args.trace_reduce
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
