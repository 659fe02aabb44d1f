import csv
import json
from pathlib import Path

import pytest
import yaml

from hpafem.cli import EXIT_CONFIG, ConfigError, RunConfig, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(config_path, out, *extra):
    return main(["run", "--config", str(config_path), "--out", str(out), *extra])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_cfg(tmp_path, obj, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(obj))
    return p


def test_config_round_trip():
    cfg = RunConfig.load(CONFIGS / "xalpha.yaml")
    again = RunConfig.loads(cfg.dumps())
    assert again == cfg
    assert again.params.mu == 0.1 and again.problem.params == {"alpha": 0.7}


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"solver": {"max_itres": 3}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"bogus": 1})


def test_default_config_subcommand(capsys):
    assert main(["config", "--problem", "poly-exact"]) == 0
    printed = yaml.safe_load(capsys.readouterr().out)
    assert printed["problem"]["name"] == "poly-exact"


def test_poly_exact_run(tmp_path):
    assert run(CONFIGS / "poly_exact.yaml", tmp_path) == 0
    rows = read_csv(tmp_path / "iterations.csv")
    assert len(rows) == 1 and rows[0]["i"] == "1"
    assert float(rows[0]["true_error"]) < 1e-12
    header = json.loads((tmp_path / "header.json").read_text())
    assert header["config"]["problem"]["name"] == "poly-exact"
    assert not (tmp_path / "error.json").exists()


def test_xalpha_run_is_deterministic(tmp_path):
    cfg = RunConfig.load(CONFIGS / "xalpha.yaml")
    cfg.solver.max_iters = 4
    p = tmp_path / "x.yaml"
    p.write_text(cfg.dumps())
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(p, a, "--trace-nearbest", "--trace-reduce") == 0
    assert run(p, b, "--trace-nearbest", "--trace-reduce") == 0
    for name in ("iterations.csv", "nearbest_trace.csv", "reduce_trace.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = read_csv(a / "iterations.csv")
    eps = [float(r["eps"]) for r in rows]
    assert len(rows) == 4 and all(y < x for x, y in zip(eps, eps[1:]))
    for r in rows:
        assert float(r["true_error"]) <= float(r["eps"])


def test_lacunary_approximation_run(tmp_path):
    assert run(CONFIGS / "lacunary.yaml", tmp_path) == 0
    rows = read_csv(tmp_path / "approximation.csv")
    assert [float(r["eps"]) for r in rows] == [0.5, 0.1, 0.01, 0.001]
    for r in rows:
        assert float(r["E_sqrt"]) <= float(r["eps"])
        assert int(r["dofs"]) <= 9


def test_bad_problem_writes_error_json(tmp_path):
    cfg = write_cfg(tmp_path, {"problem": {"name": "no-such-problem"}})
    out = tmp_path / "out"
    assert run(cfg, out) == EXIT_CONFIG
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "KeyError" and err["exit_status"] == EXIT_CONFIG


def test_malformed_yaml_writes_error_json(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("solver: {max_iters: [")
    out = tmp_path / "out"
    assert run(p, out) == EXIT_CONFIG
    assert (out / "error.json").exists()


def test_invalid_parameters_fail_cleanly(tmp_path):
    cfg = write_cfg(tmp_path, {"problem": {"name": "poly-exact"}, "params": {"mu": 1.5}})
    out = tmp_path / "out"
    assert run(cfg, out) != 0
    assert json.loads((out / "error.json").read_text())["exit_status"] != 0


def test_inline_problem_with_variable_coefficients(tmp_path):
    cfg = RunConfig.load(CONFIGS / "inline_variable.yaml")
    cfg.solver.max_iters = 2
    p = tmp_path / "c.yaml"
    p.write_text(cfg.dumps())
    assert run(p, tmp_path / "o") == 0
    rows = read_csv(tmp_path / "o" / "iterations.csv")
    assert len(rows) == 2
