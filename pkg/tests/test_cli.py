import csv
import json
import subprocess
import sys

import pytest

from fracpme.cli import default_workers, main
from fracpme.config import RunConfig, bundled_configs

SMALL = {
    "name": "small",
    "domain": {"dimension": 1, "sides": [1.0], "grid": 32},
    "physics": {"m": 2.0, "s": 0.5},
    "datum": {"name": "bump"},
    "time": {"logspace": [-3, -1, 3], "linspace": [0.2, 1.0, 5]},
    "checks": {"names": ["balance_law", "benilan_crandall", "green_pairing",
                         "boundary_upper", "lower_bound"]},
    "green": {"stride": 2},
}


def write_cfg(tmp_path, tree, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(tree))
    return str(p)


def test_bundled_names():
    names = bundled_configs()
    for n in ("giant-1d-m2-s0.5", "hole-1d-m2-s0.5", "1d-s1", "sweep-1d", "linear-1d-s0.5"):
        assert n in names
        RunConfig.load(n)


def test_verify_outputs(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL)
    out = tmp_path / "o"
    assert main(["verify", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert set(rep) == {"run_id", "params", "checks", "constants", "environment"}
    assert len(rep["run_id"]) == 16
    with (out / "checks.csv").open() as fh:
        header = next(csv.reader(fh))
    assert header == ["check", "t", "x0", "lhs", "rhs", "margin"]
    assert "PASS" in capsys.readouterr().out


def test_verify_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    for d in ("a", "b"):
        assert main(["verify", "--config", cfg, "--out", str(tmp_path / d), "--seed", "3"]) == 0
    for f in ("report.json", "checks.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    main(["verify", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "4"])
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    c = json.loads((tmp_path / "c" / "report.json").read_text())
    assert a["run_id"] != c["run_id"]


def test_solve_outputs(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    with (tmp_path / "trajectory.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x_index0", "u"]
    assert len(rows) == 1 + 32 * 9
    js = json.loads((tmp_path / "trajectory.json").read_text())
    assert js["steps"] > 0


def test_tolerance_scale_changes_reported_tolerance(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    main(["verify", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["verify", "--config", cfg, "--out", str(tmp_path / "b"), "--tolerance-scale", "2"])
    ta = {c["name"]: c["tolerance"] for c in
          json.loads((tmp_path / "a" / "report.json").read_text())["checks"]}
    tb = {c["name"]: c["tolerance"] for c in
          json.loads((tmp_path / "b" / "report.json").read_text())["checks"]}
    assert all(tb[k] == pytest.approx(2 * ta[k]) for k in ta)


def test_linear_run_marks_inapplicable(tmp_path):
    tree = dict(SMALL, physics={"m": 1.0, "s": 0.5})
    cfg = write_cfg(tmp_path, tree)
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    bc = [c for c in rep["checks"] if c["name"] == "benilan_crandall"][0]
    assert bc["extra"]["inapplicable"] and bc["passed"]


@pytest.mark.parametrize("tree, msg", [
    (dict(SMALL, physics={"m": 2.0, "s": 0.5, "bogus": 1}), "physics.bogus"),
    (dict(SMALL, checks={"names": ["nonsense"]}), "nonsense"),
    (dict(SMALL, sweep={"m": [], "s": [0.5]}), "sweep"),
    (dict(SMALL, physics={"m": 2.0, "s": 1.5}), "s"),
])
def test_config_errors(tmp_path, capsys, tree, msg):
    cfg = write_cfg(tmp_path, tree)
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert msg in capsys.readouterr().err


def test_missing_config(capsys):
    assert main(["verify"]) == 2
    assert main(["verify", "--config", "/nonexistent.json"]) == 2


def test_workers_env(monkeypatch):
    monkeypatch.setenv("FRACPME_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.delenv("FRACPME_WORKERS")
    assert default_workers() == 1


def test_sweep_parallel_matches_serial(tmp_path, monkeypatch):
    tree = dict(SMALL, sweep={"m": [1.5, 2.0], "s": [0.5, 1.0]},
                checks={"names": ["balance_law", "benilan_crandall"]})
    cfg = write_cfg(tmp_path, tree)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "ser"), "--workers", "1"]) == 0
    monkeypatch.setenv("FRACPME_WORKERS", "2")
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "par")]) == 0
    a = json.loads((tmp_path / "ser" / "sweep.json").read_text())
    b = json.loads((tmp_path / "par" / "sweep.json").read_text())
    assert a["checks"] == b["checks"] and a["params"]["cells"] == 4


def test_report_subcommand(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    main(["verify", "--config", cfg, "--out", str(tmp_path)])
    assert main(["report", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["passed"] and summary["reports"][0]["file"] == "report.json"
    rep = json.loads((tmp_path / "report.json").read_text())
    rep["checks"][0]["passed"] = False
    (tmp_path / "report.json").write_text(json.dumps(rep))
    assert main(["report", "--out", str(tmp_path)]) == 1
    assert main(["report", "--out", str(tmp_path / "empty")]) == 2


def test_elliptic_and_green_small(tmp_path):
    tree = dict(SMALL, domain={"dimension": 1, "sides": [1.0], "grid": 64})
    cfg = write_cfg(tmp_path, tree)
    assert main(["elliptic", "--config", cfg, "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "profile.csv").exists()
    assert main(["green", "--config", cfg, "--out", str(tmp_path / "g")]) == 0
    with (tmp_path / "g" / "green_samples.csv").open() as fh:
        assert next(csv.reader(fh))[:3] == ["x0", "y0", "G"]


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "fracpme.cli", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0
    for sub in ("solve", "verify", "elliptic", "green", "sweep", "report"):
        assert sub in r.stdout
