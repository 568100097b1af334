import json
import subprocess
import sys

import pytest

from kktgp import cli, io
from kktgp.scenarios import get_scenario


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    assert cli.main(["synth", "--scenario", "annulus", "--n-demos", "3", "--seed", "2",
                     "--out-dir", str(d)]) == 0
    assert cli.main(["mine", "--demos", str(d / "demos.json"), "--out-dir", str(d)]) == 0
    assert cli.main(["train", "--evidence", str(d / "evidence.json"), "--epochs", "5",
                     "--out-dir", str(d)]) == 0
    return d


def test_stage_outputs_exist(pipeline_dir):
    for name in ("demos.json", "evidence.json", "model.json", "loss.csv"):
        assert (pipeline_dir / name).stat().st_size > 0
    ev = json.loads((pipeline_dir / "evidence.json").read_text())
    assert ev["format_version"] == io.FORMAT_VERSION
    rec = ev["evidence"][0]
    assert {"demo", "t", "kappa", "normal", "p2", "p4", "p5", "robust"} <= set(rec)
    loss = (pipeline_dir / "loss.csv").read_text().splitlines()
    assert loss[0] == "epoch,loss" and len(loss) == 1 + 6


def test_eval_writes_metrics(capsys, pipeline_dir):
    code, out, _ = run(capsys, "eval", "--model", str(pipeline_dir / "model.json"),
                       "--taus", "0", "2.33", "--out-dir", str(pipeline_dir))
    assert code == 0
    lines = (pipeline_dir / "metrics.csv").read_text().splitlines()
    assert lines[0] == "tau,fs_pct,fu_pct" and lines[1].startswith("0,") and len(lines) == 3
    assert json.loads(out)["metrics"].endswith("metrics.csv")


def test_plan_writes_report(capsys, pipeline_dir):
    code, out, _ = run(capsys, "plan", "--model", str(pipeline_dir / "model.json"),
                       "--start", "2.6", "0", "--goal", "2.6", "2.0", "--delta", "0.1",
                       "--max-iters", "300", "--out-dir", str(pipeline_dir))
    assert code == 0
    plan = json.loads((pipeline_dir / "plan.json").read_text())
    assert plan["status"] in ("success", "timeout")
    assert plan["states"][0] == [2.6, 0.0]
    if plan["status"] == "success":
        assert plan["joint_safety"] >= 0.9


def test_mine_on_empty_file_exits_with_input_error(capsys, tmp_path):
    empty = tmp_path / "demos.json"
    empty.write_text("")
    code, out, err = run(capsys, "mine", "--demos", str(empty), "--out-dir", str(tmp_path))
    assert code == 2 and out == ""
    msg = json.loads(err)
    assert msg["error"] == "no demonstrations" and msg["stage"] == "mine"


def test_missing_file_exits_with_input_error(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--evidence", str(tmp_path / "nope.json"))
    assert code == 2
    assert json.loads(err)["type"] == "FileNotFoundError"


def test_stage_failure_gives_error_json(capsys, tmp_path):
    bad = tmp_path / "model.json"
    bad.write_text("{}")
    code, _, err = run(capsys, "eval", "--model", str(bad), "--out-dir", str(tmp_path))
    assert code == 1
    assert set(json.loads(err)) == {"error", "type", "stage"}


def test_config_overrides_scenario(capsys, tmp_path):
    sc = get_scenario("discs")
    cfg = tmp_path / "sc.json"
    cfg.write_text(json.dumps(sc.to_dict()))
    code, out, _ = run(capsys, "synth", "--config", str(cfg), "--n-demos", "2",
                       "--out-dir", str(tmp_path))
    assert code == 0
    scb, demos = io.load_demos(tmp_path / "demos.json")
    assert scb.name == "discs" and len(demos) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "kktgp", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "repro-cup" in r.stdout
