import csv
import json
import subprocess
import sys

import pytest

from fedlcbq.cli import main
from fedlcbq.trace import RunTrace


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


@pytest.fixture
def run_dir(tmp_path, capsys):
    cfg = {"mdp": {"generator": "random", "S": 3, "A": 2, "H": 2, "seed": 3}, "M": 2, "K": 80,
           "behaviors": {"kind": "uniform"}, "schedule": {"kind": "periodic", "tau": 20},
           "c_B": 0.01, "seeds": [0, 1]}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert main(["--config", str(path), "--out", str(out), "run", "--trace"]) == 0
    capsys.readouterr()
    return out


def test_gen_mdp_kinds(tmp_path, capsys):
    p = tmp_path / "c.json"
    assert main(["--out", str(p), "gen-mdp", "--kind", "chain", "--S", "2", "--H", "2"]) == 0
    assert _json_out(capsys)["optimal_value"] == 1.0
    assert main(["--out", str(tmp_path / "s.json"), "gen-mdp", "--kind", "split",
                 "--S", "4", "--H", "3"]) == 0
    info = _json_out(capsys)
    assert info["single_agent_concentrability"] == ["inf", "inf"]
    assert info["average_concentrability"] < float("inf")
    a, b = tmp_path / "r1.json", tmp_path / "r2.json"
    for p in (a, b):
        main(["--seed", "7", "--out", str(p), "gen-mdp", "--kind", "random", "--S", "3", "--H", "2"])
    assert a.read_bytes() == b.read_bytes()
    assert main(["gen-mdp", "--kind", "random", "--S", "0", "--H", "2", "--out", str(a)]) == 2


def test_gen_data_and_run_from_files(tmp_path, capsys):
    mdp = tmp_path / "m.json"
    main(["--out", str(mdp), "gen-mdp", "--kind", "split", "--S", "4", "--H", "3"])
    capsys.readouterr()
    data = tmp_path / "data"
    assert main(["--seed", "1", "--out", str(data), "gen-data", "--mdp", str(mdp), "--M", "2",
                 "--K", "50", "--behavior", "masked_uniform", "--mask", "gate", "--mask", "goal"]) == 0
    files = _json_out(capsys)["datasets"]
    assert len(files) == 2
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mdp": {"path": str(mdp)}, "schedule": {"kind": "periodic", "tau": 10}}))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "r"), "run", "--data", *files]) == 0
    rows = list(csv.DictReader(open(tmp_path / "r" / "metrics.csv")))
    assert len(rows) == 5 and rows[0]["M"] == "2"


def test_run_outputs_and_verify(run_dir, capsys):
    rows = list(csv.DictReader(open(run_dir / "metrics.csv")))
    assert len(rows) == 8 and {r["seed"] for r in rows} == {"0", "1"}
    trace = run_dir / "trace_s0.flcqt"
    assert main(["verify", "--trace", str(trace), "--mdp", str(run_dir / "mdp.json")]) == 0
    report = _json_out(capsys)
    assert report["passed"] and len(report["checks"]) == 5


def test_verify_flags_perturbed_q(run_dir, tmp_path, capsys):
    tr = RunTrace.load(run_dir / "trace_s0.flcqt")
    tr.snapshots[1]["Q"][0, 2, 1] += 1e-3
    bad = tmp_path / "bad.flcqt"
    tr.save(bad)
    assert main(["verify", "--trace", str(bad), "--mdp", str(run_dir / "mdp.json")]) == 3
    report = _json_out(capsys)
    dec = next(c for c in report["checks"] if c["name"] == "decomposition")
    assert not dec["passed"] and dec["details"]["worst_index"] == [40, 0, 2, 1]


def test_verify_truncated_file(run_dir, tmp_path, capsys):
    blob = (run_dir / "trace_s0.flcqt").read_bytes()
    bad = tmp_path / "cut.flcqt"
    bad.write_bytes(blob[:len(blob) // 3])
    assert main(["verify", "--trace", str(bad), "--mdp", str(run_dir / "mdp.json")]) == 4
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "parse" and err["offset"] > 0
    assert main(["verify", "--trace", str(tmp_path / "missing"), "--mdp", "x"]) == 4


def test_schedule_command(capsys):
    assert main(["schedule", "--kind", "exponential", "--K", "30", "--H", "5", "--gamma", "0.4"]) == 0
    doc = _json_out(capsys)
    assert doc["schedule"]["sync_points"] == [5, 12, 21, 30]
    assert doc["within_round_bound"] and doc["round_bound"] == pytest.approx(5.73, abs=0.01)
    assert main(["schedule", "--kind", "periodic", "--K", "6", "--tau", "1", "--H", "2"]) == 0
    assert "communication-heavy" in _json_out(capsys)["warning"]
    assert main(["schedule", "--kind", "exponential", "--K", "10000", "--H", "10",
                 "--gamma", "0.2"]) == 0
    doc = _json_out(capsys)
    assert doc["n_rounds"] <= doc["round_bound"] and doc["validation"]["passed"]
    assert main(["schedule", "--kind", "exponential", "--K", "1000", "--H", "3"]) == 0
    assert _json_out(capsys)["schedule"]["sync_points"][:4] == [3, 8, 16, 29]
    assert main(["schedule", "--kind", "periodic", "--K", "10", "--tau", "0"]) == 2


def test_sweep_command(tmp_path, capsys):
    cfg = {"mdp": {"generator": "chain", "S": 2, "H": 2}, "K": 40, "seeds": [0, 1],
           "schedule": {"kind": "periodic", "tau": 10}, "c_B": 0.01, "axes": {"M": [1, 2]}}
    path = tmp_path / "sw.json"
    path.write_text(json.dumps(cfg))
    assert main(["--config", str(path), "--out", str(tmp_path / "sw"), "sweep"]) == 0
    summary = list(csv.DictReader(open(tmp_path / "sw" / "sweep.csv")))
    assert [r["M"] for r in summary] == ["1", "2"]
    path.write_text(json.dumps(dict(cfg, seeds=[])))
    assert main(["--config", str(path), "sweep"]) == 2
    capsys.readouterr()


def test_missing_config_and_module_entry(tmp_path):
    assert main(["run"]) == 2
    res = subprocess.run([sys.executable, "-m", "fedlcbq", "schedule", "--kind", "periodic",
                          "--K", "25", "--tau", "10"], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["schedule"]["sync_points"] == [10, 20, 25]
