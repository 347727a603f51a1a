"""Experiment runner: config handling, outputs, exit codes, determinism."""

import csv
import json
import math
import subprocess
import sys

import pytest

from wkbprop.cli import SCHEMA, ConfigError, load_config, main

PURE = {
    "schema": SCHEMA,
    "potential": {"matrix": [[0.5]]},
    "mass": 1.0,
    "T": 0.75,
    "t": 0.5,
    "basis": {"M": "auto"},
    "grid": {"X": 4.0, "N": 40},
    "initial": {"center": 0.0, "momentum": 0.0},
    "hbar": [0.4],
    "seed": 7,
    "scan": {"n_samples": 3, "nx": 2, "ne": 2},
}

PERT = {
    "schema": SCHEMA,
    "potential": {
        "matrix": [[0.5]],
        "perturbation": "cosine",
        "amplitude": 0.1,
        "wavevector": [1.0],
    },
    "mass": 1.0,
    "T": 1.0,
    "t": 0.8,
    "basis": {"M": "auto"},
    "grid": {"X": 4.0, "N": 40},
    "hbar": [0.4],
    "seed": 7,
    "scan": {"n_samples": 3, "nx": 2, "ne": 2},
}


def write_config(tmp_path, base, name="config.json", **overrides):
    cfg = json.loads(json.dumps(base))
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def run(cmd, cfg_path, out_dir, *extra):
    return main([cmd, "--config", str(cfg_path), "--out", str(out_dir), *extra])


# ---------------------------------------------------------------------------
# config loading


def test_load_config_resolves_auto_cutoff(tmp_path):
    cfg = load_config(write_config(tmp_path, PURE))
    assert cfg.cutoff == 1
    assert cfg.tail_cutoff == 4
    assert cfg.times == [0.5]
    resolved = cfg.resolved()["resolved"]
    assert resolved["theta_dim"] == 6
    assert 0.0 < resolved["contraction"] < 1.0
    assert resolved["resonant_times"]["positive_definite"]


def test_load_config_perturbed_keeps_amplitude(tmp_path):
    cfg = load_config(write_config(tmp_path, PERT))
    assert cfg.potential.perturbation == "cosine"
    assert cfg.potential.amplitude == 0.1


def test_load_config_rejects_bad_schema(tmp_path):
    path = write_config(tmp_path, PURE, schema="nope/0")
    with pytest.raises(ConfigError, match="schema"):
        load_config(path)


def test_load_config_rejects_time_outside_window(tmp_path):
    path = write_config(tmp_path, PURE, t=2.0)
    with pytest.raises(ConfigError, match="outside"):
        load_config(path)


def test_load_config_rejects_garbage(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(path)
    with pytest.raises(ConfigError, match="invalid config"):
        load_config(write_config(tmp_path, PURE, potential={"matrix": [[0.5, 1.0]]}))


# ---------------------------------------------------------------------------
# subcommands, exit codes, outputs


def test_flow_check_pure(tmp_path):
    out = tmp_path / "out"
    assert run("flow-check", write_config(tmp_path, PURE), out) == 0
    report = json.loads((out / "flow_check.json").read_text())
    assert report["passed"]
    assert report["max_generating_residual"] <= 1e-8
    assert report["config"]["schema"] == SCHEMA
    with (out / "flow_check.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "y", "eta", "x", "p", "branch_count",
                       "generating_residual"]
    assert len(rows) == 1 + 3
    # 17-significant-digit cells must round-trip exactly
    assert float(rows[1][1]) == json.loads(json.dumps(float(rows[1][1])))


def test_branches_counts_match_oracle(tmp_path):
    out = tmp_path / "out"
    assert run("branches", write_config(tmp_path, PERT), out) == 0
    report = json.loads((out / "branches.json").read_text())
    assert report["count_mismatches"] == 0
    with (out / "branches.csv").open() as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    assert header[:5] == ["t", "x", "eta", "count", "shooting_count"]
    for row in rows[1:]:
        assert row[3] == row[4]


def test_branches_empty_grid_writes_header_only(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, PURE, scan={"nx": 0, "ne": 0})
    assert run("branches", cfg, out) == 0
    with (out / "branches.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1


def test_mehler_check_pure_passes(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, PURE, scan={"nx": 3, "ne": 3})
    assert run("mehler-check", cfg, out) == 0
    report = json.loads((out / "mehler_check.json").read_text())
    assert report["passed"]
    assert report["per_time"]["0.5"]["max_abs_diff"] <= 1e-8


def test_mehler_check_rejects_perturbed(tmp_path, capsys):
    assert run("mehler-check", write_config(tmp_path, PERT), tmp_path / "o") == 2
    assert "pure oscillator" in capsys.readouterr().err


def test_mehler_check_absurd_tolerance_exits_1(tmp_path):
    cfg = write_config(tmp_path, PURE, scan={"nx": 2, "ne": 2},
                       tolerances={"mehler": 1e-30})
    assert run("mehler-check", cfg, tmp_path / "o") == 1


def test_propagate_identity_and_reference(tmp_path):
    out = tmp_path / "out"
    base = {k: v for k, v in PURE.items() if k != "t"}
    cfg = write_config(tmp_path, base, t_list=[0.0, 0.5],
                       scan={"n_samples": 3, "nx": 2, "ne": 2, "n_starts": 8})
    assert run("propagate", cfg, out) == 0
    report = json.loads((out / "propagate.json").read_text())
    ident = report["results"]["0.0"]["per_hbar"][0]
    assert ident["rel_l2_error_vs_reference"] <= 1e-8
    moved = report["results"]["0.5"]["per_hbar"][0]
    assert moved["rel_l2_error_vs_reference"] <= 1e-5  # exact quadratic case
    assert abs(moved["norm"] - 1.0) <= 1e-5
    with (out / "propagate.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "hbar", "x", "abs2", "re", "im"]
    assert len(rows) == 1 + 2 * 40


def test_propagate_nyquist_violation_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, PURE, grid={"X": 4.0, "N": 10}, hbar=[0.1])
    assert run("propagate", cfg, tmp_path / "o") == 2
    assert "aliases" in capsys.readouterr().err


def test_resonant_time_refused(tmp_path, capsys):
    cfg = write_config(tmp_path, PURE, T=2.0, t=math.pi / 2)
    assert run("flow-check", cfg, tmp_path / "o") == 2
    assert "resonant" in capsys.readouterr().err


def test_diagnostics_payload_and_pass(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, PERT, scan={"n_samples": 5})
    assert run("diagnostics", cfg, out) == 0
    report = json.loads((out / "diagnostics.json").read_text())
    assert report["passed"]
    assert report["contraction_factor"] < 1.0
    probes = report["tail_probes"]
    assert probes["max_observed_rate"] <= report["contraction_factor"]
    assert probes["max_iterations"] <= 50
    assert report["per_time"]["0.8"]["resonant"] is False
    assert report["per_time"]["0.8"]["branch_bound"]["sigma_min"] > 0.0
    assert report["critical_free_region"]["radius"] > 0.0


def test_diagnostics_flags_resonant_time(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, PURE, T=2.0, t=math.pi / 2,
                       scan={"n_samples": 3})
    assert run("diagnostics", cfg, out) == 0
    report = json.loads((out / "diagnostics.json").read_text())
    key = str(math.pi / 2)
    assert report["per_time"][key]["resonant"] is True
    assert "resonant" in report["per_time"][key]["message"]


def test_determinism_and_seed_override(tmp_path):
    cfg = write_config(tmp_path, PURE)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run("flow-check", cfg, a) == 0
    assert run("flow-check", cfg, b) == 0
    assert (a / "flow_check.csv").read_bytes() == (b / "flow_check.csv").read_bytes()
    assert (a / "flow_check.json").read_bytes() == (b / "flow_check.json").read_bytes()
    assert run("flow-check", cfg, c, "--seed", "11") == 0
    assert (a / "flow_check.csv").read_bytes() != (c / "flow_check.csv").read_bytes()


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path, PURE)
    out = tmp_path / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "wkbprop.cli", "flow-check",
         "--config", str(cfg), "--out", str(out), "--threads", "1"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "flow_check.json").exists()
