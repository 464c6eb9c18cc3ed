import csv
import json
import math

import pytest

from bubbletree import cli
from bubbletree.errors import StepRejected

SMALL = {"mu": [math.exp(6)], "delta": [0.05], "grid": {"n_r": 256, "n_theta": 64}}


def run(tmp_path, command, cfg, *extra):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return cli.main([command, "--config", str(path), "--out", str(tmp_path / "out"), *extra])


def test_build_model_is_deterministic(tmp_path):
    assert run(tmp_path, "build-model", SMALL) == cli.EXIT_OK
    first = (tmp_path / "out" / "model.json").read_bytes()
    assert run(tmp_path, "build-model", SMALL) == cli.EXIT_OK
    assert (tmp_path / "out" / "model.json").read_bytes() == first
    blob = json.loads(first)
    assert list(blob) == sorted(blob)
    (m,) = blob["models"]
    assert m["energy"]["E_star"] == pytest.approx(8 * math.pi)
    assert m["radii"]["r1"] < m["radii"]["r_hat"] < m["radii"]["r0"]


def test_verify_runs_one_family(tmp_path):
    assert run(tmp_path, "verify", SMALL, "--checks", "Ij_theta") == cli.EXIT_OK
    recs = json.loads((tmp_path / "out" / "verify.json").read_text())["records"]
    assert {r["check"] for r in recs} == {"Ij_theta"} and len(recs) == 9


def test_verify_default_suite_passes(tmp_path):
    assert run(tmp_path, "verify", {**SMALL, "scenario": "opposite_orientation"}) == cli.EXIT_OK
    recs = json.loads((tmp_path / "out" / "verify.json").read_text())["records"]
    assert {r["check"] for r in recs} == set(cli.DEFAULT_CHECKS)
    assert not [r for r in recs if r["pass"] is False]


def test_verify_failure_exit_code(tmp_path):
    # a coarse lattice cannot reproduce the cutoff energy to the grid tolerance
    cfg = {**SMALL, "grid": {"n_r": 64, "n_theta": 32}}
    assert run(tmp_path, "verify", cfg, "--checks", "cutoff_energy") == cli.EXIT_VERIFY


@pytest.mark.parametrize("cfg,checks", [({"mu": [20.0]}, None), ({"mu": []}, None), ({"bogus": 1}, None),
                                        ({"delta": [2.0]}, None), (SMALL, "nonsense")])
def test_configuration_errors(tmp_path, cfg, checks):
    extra = ["--checks", checks] if checks else []
    assert run(tmp_path, "verify", cfg, *extra) == cli.EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert cli.main(["build-model", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG


def test_assembly_error(tmp_path):
    cfg = {**SMALL, "mu": [math.exp(8)], "q0": {"numerator": [[0, 0], [1, 0]], "denominator": [[1, 0], [-100, 0]]}}
    assert run(tmp_path, "build-model", cfg) == cli.EXIT_ASSEMBLY


def test_environment_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("BUBBLETREE_OUT", str(tmp_path / "env"))
    monkeypatch.setenv("BUBBLETREE_WORKERS", "3")
    cfg = cli.resolve_config({})
    assert cfg["output_dir"] == str(tmp_path / "env") and cfg["workers"] == 3
    cfg = cli.resolve_config({}, out="flag", workers=1)
    assert cfg["output_dir"] == "flag" and cfg["workers"] == 1


def test_scan_rows_and_fit(tmp_path):
    cfg = {"mu": [math.exp(6), math.exp(7)], "delta": [0.02, 0.05], "grid": {"n_r": 256, "n_theta": 64}}
    assert run(tmp_path, "scan", cfg, "--workers", "2") == cli.EXIT_OK
    with open(tmp_path / "out" / "scan.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(cli.SCAN_COLUMNS)
    assert [(float(r["mu"]), float(r["delta"])) for r in rows] == [
        (mu, d) for mu in cfg["mu"] for d in cfg["delta"]]
    assert all(r["error"] == "" and r["Q"] == "" for r in rows)
    summary = json.loads((tmp_path / "out" / "scan_summary.json").read_text())
    assert len(summary["delta_fits"]) == 2 and len(summary["mu_fits"]) == 2


def test_flow_zero_horizon_and_resume(tmp_path):
    assert run(tmp_path, "flow", {"flow": {"horizon": 0}}) == cli.EXIT_OK
    assert (tmp_path / "out" / "flow_history.csv").read_text() == "t,E,tension_l2_sq,rate_estimate\n"
    assert run(tmp_path, "flow", {"flow": {"horizon": 0.1}}) == cli.EXIT_OK
    field = tmp_path / "out" / "flow_final.field"
    resumed = tmp_path / "resumed.field"
    resumed.write_bytes(field.read_bytes())
    (tmp_path / "resumed.field.json").write_text((tmp_path / "out" / "flow_final.field.json").read_text())
    assert run(tmp_path, "flow", {"flow": {"horizon": 0.1, "resume": str(resumed)}}) == cli.EXIT_OK
    summary = json.loads((tmp_path / "out" / "flow_summary.json").read_text())
    assert summary["t_start"] == pytest.approx(0.1) and summary["t_end"] == pytest.approx(0.2)


def test_flow_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise StepRejected("energy rose")

    monkeypatch.setattr(cli.fl, "run_flow", boom)
    assert run(tmp_path, "flow", {"flow": {"horizon": 0.1}}) == cli.EXIT_FLOW


def test_harmonic_configuration_has_no_defect(tmp_path):
    assert run(tmp_path, "build-model", {**SMALL, "delta": [0.0]}) == cli.EXIT_OK
    (m,) = json.loads((tmp_path / "out" / "model.json").read_text())["models"]
    assert abs(m["energy"]["defect"]) < 1e-6
    assert m["diagnostics"]["delta"] == 0.0


def test_opposite_orientation_reports_every_diagnostic(tmp_path):
    cfg = {**SMALL, "mu": [math.exp(8)], "scenario": "opposite_orientation"}
    assert run(tmp_path, "build-model", cfg) == cli.EXIT_OK
    (m,) = json.loads((tmp_path / "out" / "model.json").read_text())["models"]
    assert set(m["diagnostics"]) == {"delta", "tension", "nu0", "nu1", "nu_bar"}
    assert all(v is not None for v in m["diagnostics"].values())
