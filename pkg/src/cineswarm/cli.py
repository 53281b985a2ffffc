"""Command-line entry point.

Subcommands:

* ``run``     — simulate a scenario and write frames.csv / frames.ndjson /
  metrics.json into an output directory.
* ``compare`` — print side-by-side deltas between two metrics.json files.
* ``serve``   — expose a live simulation over HTTP (see service module).
* ``config dump`` — print the effective default configuration as JSON.

Exit codes: 0 success, 2 validation error (bad flags, bad scenario, corrupt
metrics), 3 runtime planner escalation, 4 address bind failure.  Errors are
reported as one JSON object on stderr.  ``CINESWARM_LOG`` sets the log level.
"""
from __future__ import annotations

import datetime
import json
import logging
import os
import sys

import click

from . import sim as simmod
from .corridor import InfeasibleSegmentError, PathRepairError
from .qpsolve import CorridorInfeasibleError
from .shots import DivergenceError
from .world import GridBudgetError

PLANNER_ESCALATIONS = (PathRepairError, CorridorInfeasibleError,
                       DivergenceError, InfeasibleSegmentError, GridBudgetError)

EXIT_VALIDATION = 2
EXIT_PLANNER = 3
EXIT_BIND = 4


def _setup_logging() -> None:
    level = os.environ.get("CINESWARM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _fail(code: int, err_type: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": {"type": err_type, "message": message}}) + "\n")
    sys.exit(code)


def _parse_overrides(pairs: tuple[str, ...]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            _fail(EXIT_VALIDATION, "bad_override",
                  f"--config-override expects key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _load_scenario(name_or_path: str, overrides: dict) -> "simmod.Scenario":
    path = name_or_path
    if not os.path.exists(path):
        try:
            path = simmod.builtin_scenario_path(name_or_path)
        except FileNotFoundError:
            _fail(EXIT_VALIDATION, "scenario_not_found",
                  f"no scenario file or builtin named {name_or_path!r}")
    try:
        return simmod.Scenario.load(path, overrides)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        _fail(EXIT_VALIDATION, "invalid_scenario", str(exc))


@click.group()
def main() -> None:
    """Trajectory planning and simulation for a camera-and-lighting UAV team."""
    _setup_logging()


@main.command("run")
@click.option("--scenario", required=True,
              help="Scenario JSON path or builtin name (tower, forest).")
@click.option("--out", required=True, type=click.Path(),
              help="Output directory for frames.csv / frames.ndjson / metrics.json.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--duration", type=float, default=None,
              help="Override the scenario duration in seconds.")
@click.option("--no-cinematography", is_flag=True,
              help="Disable the cinematographic objective (baseline run).")
@click.option("--config-override", multiple=True, metavar="KEY=VALUE",
              help="Dotted-key scenario override, repeatable.")
def run_cmd(scenario, out, seed, duration, no_cinematography, config_override):
    """Simulate a scenario and write logs and metrics to --out."""
    overrides = _parse_overrides(config_override)
    if seed is not None:
        overrides["seed"] = seed
    if duration is not None:
        overrides["duration"] = duration
    sc = _load_scenario(scenario, overrides)
    try:
        log, metrics = simmod.run(sc, cinematography=not no_cinematography)
    except PLANNER_ESCALATIONS as exc:
        _fail(EXIT_PLANNER, "planner_escalation",
              f"{type(exc).__name__}: {exc}")
    os.makedirs(out, exist_ok=True)
    log.to_csv(os.path.join(out, "frames.csv"))
    log.to_ndjson(os.path.join(out, "frames.ndjson"))
    write_metrics(os.path.join(out, "metrics.json"), sc, metrics,
                  cinematography=not no_cinematography)
    m = metrics.to_json_obj()
    click.echo(json.dumps({
        "scenario": sc.name,
        "frames": m["frame_count"],
        "rms_jerk_heading": m["rms_jerk_heading"],
        "rms_jerk_pitch": m["rms_jerk_pitch"],
        "min_obstacle_clearance": m["min_obstacle_clearance"],
        "min_pair_separation": m["min_pair_separation"],
        "collision_events": m["collision_events"],
        "out": out,
    }, indent=2))


def write_metrics(path, sc, metrics, cinematography: bool) -> None:
    """Write metrics.json: deterministic body, wall-clock data in the header.

    Two runs of the same scenario produce byte-identical files except for
    the ``header`` object, which carries the timestamp and measured wall
    times and is the only non-reproducible part.
    """
    body = metrics.to_json_obj()
    header = {
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "wall_clock": {
            "stage_stats": body.pop("stage_stats"),
            "leader_replan_mean": body.pop("leader_replan_mean"),
        },
    }
    doc = {
        "header": header,
        "run": {"scenario": sc.name, "seed": sc.seed, "duration": sc.duration,
                "cinematography": cinematography},
        "metrics": body,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _read_metrics(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
        if "metrics" not in doc or "header" not in doc:
            raise ValueError("missing metrics/header sections")
        for key in ("rms_jerk_heading", "rms_jerk_pitch", "min_obstacle_clearance"):
            if key not in doc["metrics"]:
                raise ValueError(f"missing metric {key!r}")
        return doc
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        _fail(EXIT_VALIDATION, "corrupt_metrics", f"{path}: {exc}")


@main.command("compare")
@click.argument("metrics_a", type=click.Path())
@click.argument("metrics_b", type=click.Path())
def compare_cmd(metrics_a, metrics_b):
    """Print side-by-side metric deltas between two metrics.json files."""
    a = _read_metrics(metrics_a)
    b = _read_metrics(metrics_b)
    rows = [
        ("rms_jerk_heading", a["metrics"]["rms_jerk_heading"],
         b["metrics"]["rms_jerk_heading"]),
        ("rms_jerk_pitch", a["metrics"]["rms_jerk_pitch"],
         b["metrics"]["rms_jerk_pitch"]),
        ("leader_replan_mean", a["header"]["wall_clock"]["leader_replan_mean"],
         b["header"]["wall_clock"]["leader_replan_mean"]),
        ("min_obstacle_clearance", a["metrics"]["min_obstacle_clearance"],
         b["metrics"]["min_obstacle_clearance"]),
        ("min_pair_separation", a["metrics"]["min_pair_separation"],
         b["metrics"]["min_pair_separation"]),
    ]
    name_a = a["run"].get("scenario", "A")
    name_b = b["run"].get("scenario", "B")
    click.echo(f"{'metric':<24} {name_a:>14} {name_b:>14} {'delta':>14}")
    for name, va, vb in rows:
        click.echo(f"{name:<24} {va:>14.6f} {vb:>14.6f} {vb - va:>+14.6f}")


@main.command("serve")
@click.option("--scenario", required=True,
              help="Scenario JSON path or builtin name.")
@click.option("--addr", default="127.0.0.1:8000", show_default=True,
              help="host:port to bind.")
@click.option("--tick-rate", type=float, default=20.0, show_default=True,
              help="Max streamed frames per second.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--duration", type=float, default=None,
              help="Override the scenario duration in seconds.")
@click.option("--config-override", multiple=True, metavar="KEY=VALUE",
              help="Dotted-key scenario override, repeatable.")
def serve_cmd(scenario, addr, tick_rate, seed, duration, config_override):
    """Run the live director service."""
    from .service import BindError, serve

    overrides = _parse_overrides(config_override)
    if seed is not None:
        overrides["seed"] = seed
    if duration is not None:
        overrides["duration"] = duration
    sc = _load_scenario(scenario, overrides)
    host, _, port_s = addr.rpartition(":")
    if not host or not port_s.isdigit():
        _fail(EXIT_VALIDATION, "bad_addr", f"--addr must be host:port, got {addr!r}")
    if tick_rate <= 0:
        _fail(EXIT_VALIDATION, "bad_tick_rate", "--tick-rate must be positive")
    try:
        serve(sc, host, int(port_s), tick_rate=tick_rate)
    except BindError as exc:
        _fail(EXIT_BIND, "bind_failure", str(exc))


@main.group("config")
def config_grp():
    """Configuration inspection."""


@config_grp.command("dump")
@click.option("--scenario", default=None,
              help="Dump the resolved values of this scenario instead of the defaults.")
@click.option("--config-override", multiple=True, metavar="KEY=VALUE",
              help="Dotted-key scenario override, repeatable.")
def config_dump(scenario, config_override):
    """Print the effective configuration as JSON."""
    overrides = _parse_overrides(config_override)
    if scenario is None:
        defaults = {
            "rates": {"tick": simmod.DEFAULT_TICK, "leader_hz": 1.0, "follower_hz": 2.0},
            "horizon": {"N": 40, "dt": 0.2},
            "weights": {"alpha1": 10.0, "alpha2": 1.0, "q_z_min": 0.5},
            "resolution": 0.25,
            "inflation": 1.0,
            "vehicle_radius": 0.5,
            "collision_radius": 1.0,
            "fov_h_deg": 45.0,
            "fov_v_deg": 30.0,
            "jps_timeout": simmod.DEFAULT_JPS_TIMEOUT,
            "builtin_scenarios": ["tower", "forest"],
        }
        if overrides:
            _fail(EXIT_VALIDATION, "bad_override",
                  "--config-override requires --scenario")
        click.echo(json.dumps(defaults, indent=2, sort_keys=True))
        return
    sc = _load_scenario(scenario, overrides)
    click.echo(json.dumps({
        "name": sc.name,
        "duration": sc.duration,
        "seed": sc.seed,
        "bounds": [list(sc.bounds[0]), list(sc.bounds[1])],
        "resolution": sc.resolution,
        "inflation": sc.inflation,
        "vehicle_radius": sc.vehicle_radius,
        "collision_radius": sc.collision_radius,
        "rates": {"tick": sc.tick,
                  "leader_hz": 1.0 / sc.leader_period,
                  "follower_hz": 1.0 / sc.follower_period},
        "horizon": {"N": sc.hz.N, "dt": sc.hz.dt},
        "weights": {"alpha1": sc.weights.alpha1, "alpha2": sc.weights.alpha2,
                    "q_z_min": sc.weights.q_z_min},
        "followers": len(sc.followers),
        "shots": [s.shot_type.value for _, s in sc.shots],
    }, indent=2))


if __name__ == "__main__":
    main()
