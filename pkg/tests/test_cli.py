"""Command-line interface: subcommands, exit codes, output files."""
import json
import socket
import subprocess
import sys

import pytest
from click.testing import CliRunner

from cineswarm.cli import main

TINY = {
    "name": "tiny",
    "duration": 2.0,
    "seed": 3,
    "bounds": [[-30.0, -30.0, 0.0], [30.0, 30.0, 20.0]],
    "rates": {"tick": 0.05, "leader_hz": 1.0, "follower_hz": 2.0},
    "target": {"waypoints": [[0.0, 0.0, 0.0], [20.0, 0.0, 0.0]],
               "speed": 1.0, "noise_sigma": 0.0},
    "leader": {"start": [-6.0, 6.0, 5.0]},
    "followers": [{"start": [-8.0, -4.0, 5.0],
                   "lighting": {"chi_deg": 40.0, "varrho_deg": 15.0,
                                "distance": 6.0, "virtual_distance": 5.0}}],
    "shots": [{"type": "lateral", "start_time": 0.0,
               "shooting_angle_deg": 8.0, "lateral_distance": 8.0}],
    "obstacles": [],
}


@pytest.fixture()
def tiny_path(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return str(p)


def _invoke(args):
    return CliRunner().invoke(main, args)


def test_run_writes_outputs(tiny_path, tmp_path):
    out = tmp_path / "out"
    res = _invoke(["run", "--scenario", tiny_path, "--out", str(out)])
    assert res.exit_code == 0, res.output
    for fname in ("frames.csv", "frames.ndjson", "metrics.json"):
        assert (out / fname).exists()
    doc = json.loads((out / "metrics.json").read_text())
    assert set(doc) == {"header", "run", "metrics"}
    assert "generated_at" in doc["header"]
    assert "stage_stats" in doc["header"]["wall_clock"]
    assert doc["run"]["scenario"] == "tiny"
    assert doc["metrics"]["collision_events"] == 0
    # wall-clock values never leak into the deterministic section
    assert "stage_stats" not in doc["metrics"]
    assert "leader_replan_mean" not in doc["metrics"]
    summary = json.loads(res.output)
    assert summary["frames"] == doc["metrics"]["frame_count"]


def test_run_metrics_reproducible_outside_header(tiny_path, tmp_path):
    docs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert _invoke(["run", "--scenario", tiny_path, "--out", str(out)]).exit_code == 0
        docs.append(json.loads((out / "metrics.json").read_text()))
    a, b = docs
    assert json.dumps(a["metrics"], sort_keys=True) == json.dumps(b["metrics"], sort_keys=True)
    assert json.dumps(a["run"]) == json.dumps(b["run"])


def test_run_unknown_scenario_exits_2(tmp_path):
    res = _invoke(["run", "--scenario", "nope", "--out", str(tmp_path / "o")])
    assert res.exit_code == 2
    err = json.loads(res.stderr.strip().splitlines()[-1])
    assert err["error"]["type"] == "scenario_not_found"


def test_run_invalid_scenario_exits_2(tmp_path):
    bad = dict(TINY, duration=-1.0)
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    res = _invoke(["run", "--scenario", str(p), "--out", str(tmp_path / "o")])
    assert res.exit_code == 2
    err = json.loads(res.stderr.strip().splitlines()[-1])
    assert err["error"]["type"] == "invalid_scenario"


def test_run_planner_escalation_exits_3(tiny_path, tmp_path):
    # corridor and QP failures degrade to a braking hover inside the sim;
    # what escalates to the process level is an unservable planning budget,
    # here an occupancy grid far beyond the cell budget
    res = _invoke(["run", "--scenario", tiny_path, "--out", str(tmp_path / "o"),
                   "--config-override", "resolution=0.002"])
    assert res.exit_code == 3
    err = json.loads(res.stderr.strip().splitlines()[-1])
    assert err["error"]["type"] == "planner_escalation"


def test_config_override_and_seed_flags(tiny_path, tmp_path):
    out = tmp_path / "o"
    res = _invoke(["run", "--scenario", tiny_path, "--out", str(out),
                   "--seed", "11", "--duration", "1.0",
                   "--config-override", "target.speed=2.5"])
    assert res.exit_code == 0, res.output
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["run"]["seed"] == 11
    assert doc["run"]["duration"] == 1.0
    assert doc["metrics"]["frame_count"] == 20


def test_compare_prints_deltas(tiny_path, tmp_path):
    for sub, extra in (("a", []), ("b", ["--no-cinematography"])):
        out = tmp_path / sub
        assert _invoke(["run", "--scenario", tiny_path, "--out", str(out),
                        *extra]).exit_code == 0
    res = _invoke(["compare", str(tmp_path / "a" / "metrics.json"),
                   str(tmp_path / "b" / "metrics.json")])
    assert res.exit_code == 0, res.output
    for key in ("rms_jerk_heading", "rms_jerk_pitch", "leader_replan_mean",
                "min_obstacle_clearance", "min_pair_separation", "delta"):
        assert key in res.output


def test_compare_corrupt_metrics_exits_2(tiny_path, tmp_path):
    out = tmp_path / "a"
    assert _invoke(["run", "--scenario", tiny_path, "--out", str(out)]).exit_code == 0
    bad = tmp_path / "bad.json"
    bad.write_text("{\"not\": \"metrics\"}")
    res = _invoke(["compare", str(out / "metrics.json"), str(bad)])
    assert res.exit_code == 2
    err = json.loads(res.stderr.strip().splitlines()[-1])
    assert err["error"]["type"] == "corrupt_metrics"


def test_config_dump_defaults_json():
    res = _invoke(["config", "dump"])
    assert res.exit_code == 0
    doc = json.loads(res.output)
    assert doc["rates"]["tick"] == 0.05
    assert "tower" in doc["builtin_scenarios"]


def test_config_dump_resolves_overrides(tiny_path):
    res = _invoke(["config", "dump", "--scenario", tiny_path,
                   "--config-override", "rates.leader_hz=2.0"])
    assert res.exit_code == 0
    doc = json.loads(res.output)
    assert doc["rates"]["leader_hz"] == 2.0
    assert doc["name"] == "tiny"


def test_serve_bind_failure_exits_4(tiny_path):
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    port = blocker.getsockname()[1]
    try:
        proc = subprocess.run(
            [sys.executable, "-m", "cineswarm.cli", "serve",
             "--scenario", tiny_path, "--addr", f"127.0.0.1:{port}"],
            capture_output=True, text=True, timeout=60)
    finally:
        blocker.close()
    assert proc.returncode == 4, proc.stderr
    err = json.loads(proc.stderr.strip().splitlines()[-1])
    assert err["error"]["type"] == "bind_failure"


def test_serve_bad_addr_exits_2(tiny_path):
    res = _invoke(["serve", "--scenario", tiny_path, "--addr", "nocolon"])
    assert res.exit_code == 2
