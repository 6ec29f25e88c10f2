import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from cli import EXIT_INPUT, EXIT_OK, RunConfig, _jsonable, build_parser, main
from core.grid import Box, make_uniform_grid, write_grid_function_csv

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
LN3 = math.log(3.0)


def run_cli(argv, capsys):
    status = main(argv)
    return status, json.loads(capsys.readouterr().out)


def interval_csv(path, lo, hi, box=(0.0, 1.0), h=2.0**-4, scale=1.0):
    grid = make_uniform_grid(Box((box[0],), (box[1],)), h)
    u = grid.sample(lambda x: scale * ((x[:, 0] >= lo) & (x[:, 0] < hi)).astype(float))
    write_grid_function_csv(u, path)
    return path


def test_range_reports_interval(tmp_path, capsys):
    status, out = run_cli(["range", "--q", "2", "--s", "4", "--output", str(tmp_path)], capsys)
    assert status == EXIT_OK
    assert out["lower"] == pytest.approx(4 / 3)
    assert out["upper"] == 4.0
    assert out["is_limited"] is True
    assert out["config"]["command"] == "range"
    saved = json.loads((tmp_path / "range.json").read_text())
    assert saved["lower"] == out["lower"]


def test_range_writes_infinity_as_string(tmp_path, capsys):
    status, out = run_cli(["range", "--q", "1", "--s", "inf", "--output", str(tmp_path)], capsys)
    assert status == EXIT_OK
    assert out["upper"] == "inf"
    assert out["config"]["s"] == "inf"


def test_invalid_exponents_exit_with_input_error(tmp_path, capsys):
    status, out = run_cli(["range", "--q", "2", "--s", "2", "--output", str(tmp_path)], capsys)
    assert status == EXIT_INPUT
    assert out["type"] == "ConfigError"
    assert "s > q" in out["error"]


def test_unknown_config_key_is_rejected(tmp_path, capsys):
    config = tmp_path / "bad.yaml"
    config.write_text("kernel: hilbert\nexponent: 3\n")
    status, out = run_cli(["seminorm", "--config", str(config), "--output", str(tmp_path)], capsys)
    assert status == EXIT_INPUT
    assert "exponent" in out["error"]


def test_missing_config_file(tmp_path, capsys):
    status, out = run_cli(["seminorm", "--config", str(tmp_path / "nope.yaml")], capsys)
    assert status == EXIT_INPUT
    assert out["type"] == "ConfigError"


def test_unknown_kernel(tmp_path, capsys):
    status, out = run_cli(["apply", "--kernel", "poisson", "--input", str(interval_csv(tmp_path / "f.csv", 0, 0.5)), "--output", str(tmp_path)], capsys)
    assert status == EXIT_INPUT
    assert out["type"] == "KernelError"


def test_seminorm_from_yaml(tmp_path, capsys):
    argv = ["seminorm", "--config", str(CONFIG_DIR / "hilbert_seminorm_fast.yaml"), "--workers", "1", "--output", str(tmp_path)]
    status, out = run_cli(argv, capsys)
    assert status == EXIT_OK
    assert out["value"] == pytest.approx(LN3, rel=2e-2)
    assert out["kernel"] == "hilbert"
    assert out["oracle"] == pytest.approx(LN3)
    assert out["oracle_rel_error"] < 2e-2
    assert out["description"] == "K(x) = 1/x"
    slices = pd.read_csv(tmp_path / "seminorm_slices.csv")
    assert list(slices.columns) == ["R", "value"]
    assert len(slices) == 3


def test_decompose_writes_parts(tmp_path, capsys):
    f = interval_csv(tmp_path / "f.csv", 0.0, 0.25, scale=4.0)
    argv = ["decompose", "--input", str(f), "--q", "1", "--height", "3", "--output", str(tmp_path)]
    status, out = run_cli(argv, capsys)
    assert status == EXIT_OK
    assert out["method"] == "cz"
    assert len(out["cubes"]) == 1
    assert (tmp_path / "good.csv").exists() and (tmp_path / "bad.csv").exists()


def test_decompose_needs_height(tmp_path, capsys):
    f = interval_csv(tmp_path / "f.csv", 0.0, 0.25)
    status, out = run_cli(["decompose", "--input", str(f), "--output", str(tmp_path)], capsys)
    assert status == EXIT_INPUT
    assert "height" in out["error"]


def test_whitney_bracket(tmp_path, capsys):
    omega = interval_csv(tmp_path / "omega.csv", 0.0, 1.0, box=(-1.0, 3.0), h=2.0**-5)
    status, out = run_cli(["whitney", "--omega", str(omega), "--output", str(tmp_path)], capsys)
    assert status == EXIT_OK
    assert out["bracket"]["pass"] is True
    assert all(2.0 <= cube["ratio"] <= 6.0 for cube in out["cubes"])
    assert out["residue_measure"] <= out["residue_bound"]


def test_apply_and_weaktype(tmp_path, capsys):
    f = interval_csv(tmp_path / "f.csv", 0.0, 0.25, scale=2.0)
    status, out = run_cli(["apply", "--input", str(f), "--workers", "1", "--output", str(tmp_path)], capsys)
    assert status == EXIT_OK
    assert out["excluded_targets"] == 4
    assert (tmp_path / "apply.csv").exists()

    status, out = run_cli(["weaktype", "--input", str(f), "--q", "2", "--output", str(tmp_path)], capsys)
    assert status == EXIT_OK
    assert 0.9 < out["quasi_norm"] <= 1.0
    curve = pd.read_csv(tmp_path / "weaktype.csv")
    assert list(curve.columns) == ["alpha", "distribution", "curve"]


def test_verify_zero_kernel(tmp_path, capsys):
    argv = [
        "verify", "--kernel", "zero", "--B", "1", "--seminorm", "0", "--testset-size", "3",
        "--workers", "1", "--output", str(tmp_path),
    ]
    status, out = run_cli(argv, capsys)
    assert status == EXIT_OK
    assert out["verdict"] == "pass"
    assert out["margin"] == "inf"
    assert out["testset"] == ["indicator_g0", "indicator_g1", "indicator_g2"]
    assert len(pd.read_csv(tmp_path / "verify.csv")) == 3
    summary = (tmp_path / "summary.md").read_text()
    assert "verdict: **pass**" in summary
    assert "| indicator_g1 |" in summary


def test_verify_missing_testset_file(tmp_path, capsys):
    argv = ["verify", "--testset", str(tmp_path / "missing.csv"), "--output", str(tmp_path)]
    status, out = run_cli(argv, capsys)
    assert status == EXIT_INPUT
    assert "does not exist" in out["error"]


def test_trace_default_function(tmp_path, capsys):
    argv = [
        "trace", "--seminorm", str(LN3), "--B", str(math.pi), "--alpha", "1",
        "--workers", "1", "--output", str(tmp_path),
    ]
    status, out = run_cli(argv, capsys)
    assert status == EXIT_OK
    assert out["overall"] is True
    assert out["method"] == "cz"
    steps = pd.read_csv(tmp_path / "trace.csv")
    assert {"name", "lhs", "rhs", "pass"} <= set(steps.columns)
    assert "overall: **pass**" in (tmp_path / "summary.md").read_text()


def test_parser_accepts_family_switches():
    args = build_parser().parse_args(["seminorm", "--watson", "--r", "2"])
    assert args.family == "watson" and args.r == 2.0
    with pytest.raises(SystemExit):
        build_parser().parse_args(["seminorm", "--watson", "--hormander"])


def test_jsonable():
    payload = {"a": math.inf, "b": np.float64(2.0), "c": (1, np.int64(2)), "d": Path("x"), "e": np.bool_(True)}
    assert _jsonable(payload) == {"a": "inf", "b": 2.0, "c": [1, 2], "d": "x", "e": True}


@pytest.mark.parametrize("command", ["verify", "trace"])
def test_proof_commands_need_bound(command, tmp_path, capsys):
    status, out = run_cli([command, "--seminorm", str(LN3), "--output", str(tmp_path)], capsys)
    assert status == EXIT_INPUT
    assert out["type"] == "ConfigError"
    assert "bound B" in out["error"]
    with pytest.raises(ValueError, match="bound B"):
        RunConfig(command=command, kernel="hilbert", q=1, s=2)
    assert RunConfig(command=command, q=1, s=2, B=math.pi).bound == math.pi
    assert RunConfig(command="apply", input=tmp_path).bound is None


@pytest.mark.parametrize("text, message", [("", "cannot read"), ("axis0,value\n0.25,1\n0.75,x\n", "non-numeric")])
def test_malformed_input_csv(text, message, tmp_path, capsys):
    path = tmp_path / "f.csv"
    path.write_text(text)
    status, out = run_cli(["weaktype", "--input", str(path), "--output", str(tmp_path)], capsys)
    assert status == EXIT_INPUT
    assert out["type"] == "GridError"
    assert message in out["error"]


def test_malformed_yaml_config(tmp_path, capsys):
    config = tmp_path / "bad.yaml"
    config.write_text("kernel: [hilbert\n")
    status, out = run_cli(["seminorm", "--config", str(config), "--output", str(tmp_path)], capsys)
    assert status == EXIT_INPUT
    assert out["type"] == "ConfigError"
    assert "malformed YAML" in out["error"]


def test_verify_reports_empirical_bound(tmp_path, capsys):
    argv = [
        "verify", "--B", str(math.pi), "--seminorm", str(LN3), "--testset-size", "3",
        "--workers", "1", "--output", str(tmp_path),
    ]
    status, out = run_cli(argv, capsys)
    assert status == EXIT_OK
    assert 0 < out["empirical_B"] <= math.pi * 1.01
    assert out["notes"] == []
    assert "empirical B (advisory)" in (tmp_path / "summary.md").read_text()
