import json
import subprocess
import sys

import numpy as np
import pytest

from otrect.cli import run
from otrect.measures import DiscreteMeasure, SupportSample, write_measure_csv, write_pairs_csv


@pytest.fixture
def clouds(tmp_path, rng):
    src = DiscreteMeasure.uniform(rng.uniform(-1, 1, (6, 2)))
    tgt = DiscreteMeasure.uniform(rng.uniform(-1, 1, (6, 2)))
    write_measure_csv(src, tmp_path / "src.csv")
    write_measure_csv(tgt, tmp_path / "tgt.csv")
    return tmp_path


def load(path):
    doc = json.loads(path.read_text())
    doc.pop("timestamp")
    return doc


def test_solve_then_check(clouds, capsys):
    plan = clouds / "out" / "plan.json"
    code = run(["solve", "--source", str(clouds / "src.csv"), "--target", str(clouds / "tgt.csv"),
                "--cost", "quadratic", "--out", str(plan), "--dual", str(clouds / "dual.json")])
    assert code == 0
    assert "optimal cost" in capsys.readouterr().out
    doc = json.loads(plan.read_text())
    assert doc["source_file"] == "../src.csv"
    dual = json.loads((clouds / "dual.json").read_text())
    assert len(dual["phi"]) == 6
    assert run(["check-monotone", "--plan", str(plan), "--cost", "quadratic", "--cycles", "4", "--out", str(clouds / "mono.json")]) == 0
    assert json.loads((clouds / "mono.json").read_text())["report"]["verdict"] == "pass"
    assert run(["rectify", "--plan", str(plan), "--cost", "quadratic", "--out", str(clouds / "cert.json")]) == 0
    header = (clouds / "cert_uv.csv").read_text().splitlines()[0]
    assert header == "u1,u2,v1,v2,ratio"


def test_solve_rejects_mismatched_sums(tmp_path):
    (tmp_path / "a.csv").write_text("x1,weight\n0.0,0.5\n1.0,0.5\n")
    (tmp_path / "b.csv").write_text("x1,weight\n0.0,0.4\n1.0,0.4\n")
    assert run(["solve", "--source", str(tmp_path / "a.csv"), "--target", str(tmp_path / "b.csv"), "--cost", "quadratic"]) == 2


def test_missing_file_is_input_error(tmp_path):
    assert run(["solve", "--source", str(tmp_path / "nope.csv"), "--target", str(tmp_path / "nope.csv"), "--cost", "quadratic"]) == 2


def test_antimonotone_pairs(tmp_path, capsys):
    write_pairs_csv(SupportSample(np.array([[0.0], [1.0]]), np.array([[1.0], [0.0]])), tmp_path / "anti.csv")
    code = run(["check-monotone", "--pairs", str(tmp_path / "anti.csv"), "--cost", "bilinear", "--out", str(tmp_path / "r.json")])
    assert code == 1
    rep = json.loads((tmp_path / "r.json").read_text())["report"]
    assert rep["violation_count"] == 1
    assert "1 violation" in capsys.readouterr().out
    assert run(["rectify", "--pairs", str(tmp_path / "anti.csv"), "--cost", "bilinear"]) == 1


@pytest.mark.parametrize("argv", [["bogus"], ["solve", "--nope"], [], ["check-monotone", "--cost", "bilinear"]])
def test_usage_errors(argv, capsys):
    assert run(argv) == 2


def test_unknown_cost_is_input_error(tmp_path):
    write_pairs_csv(SupportSample(np.array([[0.0], [1.0]]), np.array([[0.0], [1.0]])), tmp_path / "p.csv")
    assert run(["check-monotone", "--pairs", str(tmp_path / "p.csv"), "--cost", "sinkhorn"]) == 2


def test_reports_are_stable(clouds):
    argv = ["solve", "--source", str(clouds / "src.csv"), "--target", str(clouds / "tgt.csv"), "--cost", "quadratic"]
    assert run(argv + ["--dual", str(clouds / "d1.json")]) == 0
    assert run(argv + ["--dual", str(clouds / "d2.json")]) == 0
    assert load(clouds / "d1.json") == load(clouds / "d2.json")
    for name in ("a", "b"):
        assert run(["analyze-cost", "--cost", "example32", "--grid", "12", "--out", str(clouds / f"{name}.json")]) == 0
    assert load(clouds / "a.json") == load(clouds / "b.json")
    assert (clouds / "a_classification.csv").read_bytes() == (clouds / "b_classification.csv").read_bytes()


def test_config_supplies_and_flags_override(tmp_path):
    write_pairs_csv(SupportSample(np.array([[0.0], [1.0]]), np.array([[0.0], [1.0]])), tmp_path / "p.csv")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pairs": str(tmp_path / "p.csv"), "cost": "bilinear", "cycles": 3}))
    assert run(["check-monotone", "--config", str(cfg), "--out", str(tmp_path / "a.json")]) == 0
    assert json.loads((tmp_path / "a.json").read_text())["report"]["cycle_length"] == 2  # only 2 pairs
    assert run(["check-monotone", "--config", str(cfg), "--tol", "-5", "--out", str(tmp_path / "b.json")]) == 1
    cfg.write_text(json.dumps({"cost": "bilinear", "colour": "red"}))
    assert run(["check-monotone", "--config", str(cfg)]) == 2


def test_analyze_cost_outputs(tmp_path):
    out = tmp_path / "an.json"
    assert run(["analyze-cost", "--cost", "example31", "--grid", "0:1:4,0:12.566370614359172:8",
                "--direction", "x-to-y", "--fixed", "0,0", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["twist"]["x-to-y"]["collision_count"] > 0
    assert run(["analyze-cost", "--cost", "example31", "--grid", "0:1:4,0:12.566370614359172:8",
                "--direction", "x-to-y", "--fixed", "0,0", "--strict"]) == 1
    assert run(["analyze-cost", "--cost", "example31", "--direction", "sideways"]) == 2


def test_jacobian_command(tmp_path):
    pts = (np.arange(40) + 0.5) / 40
    write_measure_csv(DiscreteMeasure.uniform(pts[:, None]), tmp_path / "s.csv")
    write_measure_csv(DiscreteMeasure.uniform(2 * pts[:, None]), tmp_path / "t.csv")
    plan = tmp_path / "plan.json"
    assert run(["solve", "--source", str(tmp_path / "s.csv"), "--target", str(tmp_path / "t.csv"),
                "--cost", "quadratic", "--out", str(plan)]) == 0
    out = tmp_path / "jac.json"
    assert run(["jacobian", "--plan", str(plan), "--f-plus", "uniform:0:1", "--f-minus", "uniform:0:2",
                "--cells", "5", "--tol", "1e-9", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["report"]["max_residual"] <= 1e-12
    assert doc["pushforward_discrepancy"] == 0.0
    assert (tmp_path / "jac_samples.csv").exists()
    assert run(["jacobian", "--plan", str(plan), "--f-plus", "uniform:0:1", "--f-minus", "uniform:0:1", "--tol", "1e-3"]) == 1


def test_reproduce_example31(tmp_path, capsys):
    assert run(["reproduce", "--example", "3.1", "--grid", "16", "--out-dir", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "PASS  equal_marginals" in text and "PASS  equal_costs" in text and "FAIL" not in text
    summary = json.loads((tmp_path / "summary.json").read_text())["summary"]
    assert summary["passed"]
    for name in ("source.csv", "target.csv", "gamma.json", "gamma_bar.json", "certificate_gamma.json"):
        assert (tmp_path / name).exists()
    assert run(["reproduce", "--example", "3.1", "--grid", "15"]) == 2


def test_reproduce_example32(tmp_path):
    assert run(["reproduce", "--example", "3.2", "--grid", "20", "--samples", "16", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "surface.csv").exists()


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "otrect.cli", "reproduce", "--example", "3.2", "--grid", "10", "--samples", "8"],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "PASS" in res.stdout
