"""Tests for the simulator: metrics helpers, target model, scenario
loading, orientation interpolation, anchored references and determinism."""
import json
import math

import numpy as np
import pytest

from cineswarm.core import HorizonConfig, OriState, PosState, trajectory_from_inputs
from cineswarm.corridor import GridPath
from cineswarm.sim import (
    Scenario,
    Simulation,
    TargetEstimator,
    TargetTrack,
    _anchored_refs,
    _hover_plan,
    _Vehicle,
    builtin_scenario_path,
    fov_distance,
    rms_jerk,
)
from cineswarm.world import ObstacleCloud, voxelize


# -- rms_jerk ---------------------------------------------------------------

def test_rms_jerk_exact_on_cubic():
    # third derivative of a*t^3 is 6a everywhere; the central third
    # difference is exact for cubics, so the RMS equals |6a| exactly
    a = 0.37
    dt = 0.05
    t = np.arange(64) * dt
    assert rms_jerk(a * t**3, dt) == pytest.approx(6.0 * a, rel=1e-10)


def test_rms_jerk_zero_on_quadratic():
    dt = 0.1
    t = np.arange(32) * dt
    assert rms_jerk(1.7 * t**2 - 0.3 * t + 2.0, dt) == pytest.approx(0.0, abs=1e-9)


def test_rms_jerk_rejects_short_series():
    with pytest.raises(ValueError):
        rms_jerk([0.0, 1.0, 2.0, 3.0], 0.1)


# -- fov_distance -----------------------------------------------------------

def test_fov_distance_negative_inside():
    cam = OriState(0.0, 0.0, [0, 0])
    d = fov_distance([5.0, 0.0, 0.0], [0.0, 0.0, 0.0], cam)
    assert d < 0.0


def test_fov_distance_behind_apex_is_range():
    # straight behind the camera the nearest frustum point is the apex
    cam = OriState(0.0, 0.0, [0, 0])
    d = fov_distance([-3.0, 0.0, 0.0], [0.0, 0.0, 0.0], cam)
    assert d == pytest.approx(3.0, abs=1e-6)


def test_fov_distance_matches_sampling_oracle():
    # dense sampling of the frustum surface bounds the true distance
    rng = np.random.default_rng(3)
    cam = OriState(0.4, -0.2, [0, 0])
    cam_p = np.array([1.0, -2.0, 5.0])
    p = np.array([-4.0, 3.0, 6.0])
    d = fov_distance(p, cam_p, cam)
    ch, sh = math.cos(cam.heading), math.sin(cam.heading)
    cp, sp = math.cos(cam.pitch), math.sin(cam.pitch)
    axis = np.array([ch * cp, sh * cp, sp])
    right = np.array([sh, -ch, 0.0])
    up = np.cross(right, axis)
    best = math.inf
    for _ in range(200_000):
        u = rng.uniform(-math.radians(45.0), math.radians(45.0))
        v = rng.uniform(-math.radians(30.0), math.radians(30.0))
        r = rng.uniform(0.0, 30.0)
        q = cam_p + r * (axis + math.tan(u) * right + math.tan(v) * up)
        best = min(best, float(np.linalg.norm(q - p)))
    assert d <= best + 1e-9
    assert d == pytest.approx(best, abs=0.05)


# -- target model -----------------------------------------------------------

def test_target_track_interpolates_at_speed():
    track = TargetTrack(np.array([[0, 0, 0], [10, 0, 0]]), speed=2.0)
    p, v = track.state(2.5)
    assert np.allclose(p, [5.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(v, [2.0, 0.0, 0.0], atol=1e-12)


def test_target_track_stops_at_end():
    track = TargetTrack(np.array([[0, 0, 0], [4, 0, 0]]), speed=1.0)
    p, v = track.state(100.0)
    assert np.allclose(p, [4.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(v, 0.0, atol=1e-12)


def test_estimator_noise_free_velocity():
    est = TargetEstimator(sigma=0.0, rng=np.random.default_rng(0), period=0.5, alpha=0.5)
    est.observe(np.array([0.0, 0.0, 0.0]))
    est.observe(np.array([1.0, 0.0, 0.0]))
    e = est.estimate(1.0)
    # raw velocity 2 m/s, exponentially smoothed from 0 with alpha=0.5
    assert np.allclose(e.v_t, [1.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(e.p_t, [1.0, 0.0, 0.0], atol=1e-12)


def test_estimator_requires_observation():
    est = TargetEstimator(sigma=0.1, rng=np.random.default_rng(0), period=0.5)
    with pytest.raises(RuntimeError):
        est.estimate(0.0)


# -- scenario loading -------------------------------------------------------

def _tiny_scenario_obj(**over):
    obj = {
        "name": "tiny",
        "duration": 2.0,
        "seed": 1,
        "bounds": [[-20, -20, 0], [20, 20, 10]],
        "resolution": 0.5,
        "rates": {"tick": 0.05, "leader_hz": 1.0, "follower_hz": 2.0},
        "target": {"waypoints": [[0, 0, 0], [5, 0, 0]], "speed": 1.0,
                   "noise_sigma": 0.0},
        "leader": {"start": [-6.0, 0.0, 2.0]},
        "followers": [{"start": [-7.0, 2.0, 2.0],
                       "lighting": {"chi_deg": 45.0, "varrho_deg": 15.0,
                                    "distance": 5.0, "virtual_distance": 3.0}}],
        "shots": [{"type": "lateral", "shooting_angle_deg": 15.0}],
        "obstacles": [],
    }
    obj.update(over)
    return obj


def test_scenario_from_json_defaults():
    sc = Scenario.from_json_obj(_tiny_scenario_obj())
    assert sc.name == "tiny"
    assert sc.hz.N == 40 and sc.hz.dt == 0.2
    assert sc.leader_period == pytest.approx(1.0)
    assert sc.follower_period == pytest.approx(0.5)
    assert sc.followers[0].lighting.chi == pytest.approx(math.radians(45.0))


def test_scenario_override_dotted_keys():
    sc = Scenario.from_json_obj(_tiny_scenario_obj(),
                                overrides={"weights.alpha1": 0.0, "duration": 1.0})
    assert sc.weights.alpha1 == 0.0
    assert sc.duration == 1.0


def test_scenario_rejects_bad_duration():
    with pytest.raises(ValueError):
        Scenario.from_json_obj(_tiny_scenario_obj(duration=-1.0))


def test_scenario_rejects_non_multiple_period():
    obj = _tiny_scenario_obj()
    obj["rates"]["leader_hz"] = 3.0  # 1/3 s is not a 0.05 s multiple
    with pytest.raises(ValueError):
        Scenario.from_json_obj(obj)


def test_scenario_requires_shots():
    with pytest.raises(ValueError):
        Scenario.from_json_obj(_tiny_scenario_obj(shots=[]))


def test_builtin_scenarios_resolve():
    for name in ("tower", "forest"):
        path = builtin_scenario_path(name)
        sc = Scenario.load(path)
        assert sc.name == name
    with pytest.raises(FileNotFoundError):
        builtin_scenario_path("nope")


# -- hover plan -------------------------------------------------------------

def test_hover_plan_brakes_to_rest():
    hz = HorizonConfig(N=40, dt=0.2)
    traj = _hover_plan(np.array([1.0, 2.0, 3.0]), np.array([3.0, -2.0, 0.5]), hz, 0.0)
    v_end = traj.states[-1].v
    assert np.allclose(v_end, 0.0, atol=1e-9)
    # position settles once stopped
    tail = traj.positions()[-5:]
    assert np.allclose(tail - tail[-1], 0.0, atol=1e-9)


# -- orientation interpolation ---------------------------------------------

def test_ori_interpolation_exact_for_double_integrator():
    # knots generated by a constant-acceleration gimbal profile must be
    # reproduced exactly between knots
    dt = 0.2
    acc = np.array([0.3, -0.2])
    states = []
    h, p = 0.1, -0.05
    w = np.array([0.4, 0.1])
    for _ in range(6):
        states.append(OriState(h, p, w.copy()))
        h = h + w[0] * dt + 0.5 * acc[0] * dt * dt
        p = p + w[1] * dt + 0.5 * acc[1] * dt * dt
        w = w + acc * dt
    hz = HorizonConfig(N=5, dt=dt)
    plan = trajectory_from_inputs(PosState([0, 0, 0], [0, 0, 0]),
                                  np.zeros((5, 3)), dt, 0.0)
    veh = _Vehicle("v", plan, 0.0, states)
    for tau in (0.07, 0.31, 0.55, 0.99):
        o = veh._ori_at(tau)
        h_true = 0.1 + 0.4 * tau + 0.5 * acc[0] * tau * tau
        p_true = -0.05 + 0.1 * tau + 0.5 * acc[1] * tau * tau
        assert o.heading == pytest.approx(h_true, abs=1e-9)
        assert o.pitch == pytest.approx(p_true, abs=1e-9)
        assert np.allclose(o.rates, [0.4, 0.1] + acc * tau, atol=1e-9)


def test_ori_interpolation_clamps_outside_plan():
    dt = 0.2
    states = [OriState(0.0, 0.0, [0, 0]), OriState(0.5, 0.1, [0, 0])]
    plan = trajectory_from_inputs(PosState([0, 0, 0], [0, 0, 0]),
                                  np.zeros((1, 3)), dt, 0.0)
    veh = _Vehicle("v", plan, 0.0, states)
    assert veh._ori_at(-1.0).heading == pytest.approx(0.0)
    assert veh._ori_at(10.0).heading == pytest.approx(0.5)


# -- anchored references ----------------------------------------------------

def test_anchored_refs_start_reachable_and_bounded():
    hz = HorizonConfig(N=10, dt=0.2)
    cloud = ObstacleCloud(np.zeros((0, 3)), inflation_radius=1.0)
    grid = voxelize(cloud, ([-20, -20, 0], [20, 20, 10]), 0.5)
    # reference path far from the vehicle
    wps = np.column_stack([np.linspace(5, 9, 9), np.zeros(9), np.full(9, 2.0)])
    path = GridPath([np.asarray(w) for w in wps], cost=4.0)
    ref = trajectory_from_inputs(PosState([5, 0, 2], [0.5, 0, 0]),
                                 np.zeros((10, 3)), hz.dt, 0.0)
    start = np.array([0.0, 0.0, 2.0])
    v0 = np.array([0.0, 0.0, 0.0])
    refs = _anchored_refs(start, v0, path, ref, grid, 0.05, hz, d_s_max=0.9)
    assert refs.shape == (10, 3)
    # per-step spacing never exceeds the cap or the acceleration ramp
    u = float(np.min(hz.u_max))
    prev = start
    for k, r in enumerate(refs):
        cap = min(0.9, (np.linalg.norm(v0) + (k + 1) * u * hz.dt) * hz.dt)
        assert np.linalg.norm(r - prev) <= cap + 1e-9
        prev = r
    # the walk approaches the reference path, never retreats from the start
    d = np.linalg.norm(refs - start, axis=1)
    assert np.all(np.diff(d) >= -1e-9)


# -- end-to-end determinism -------------------------------------------------

def _strip_walltimes(log, metrics):
    obj = metrics.to_json_obj()
    obj.pop("stage_stats")
    obj.pop("leader_replan_mean")
    return json.dumps({"metrics": obj, "ticks": log.ticks}, sort_keys=True)


def test_simulation_bitwise_deterministic():
    runs = []
    for _ in range(2):
        sc = Scenario.from_json_obj(_tiny_scenario_obj(duration=3.0))
        log, m = Simulation(sc).run()
        runs.append(_strip_walltimes(log, m))
    assert runs[0] == runs[1]


def test_simulation_smoke_records_everything():
    sc = Scenario.from_json_obj(_tiny_scenario_obj(duration=2.0))
    log, m = Simulation(sc).run()
    assert m.frame_count == 40
    assert len(log.ticks) == 40
    fr = log.ticks[-1]
    assert {e["name"] for e in fr["entities"]} == {"leader", "follower0"}
    assert "follower0" in fr["d_f"]
    assert m.collision_events == 0
    # serialization round trips
    assert json.loads(json.dumps(m.to_json_obj()))["frame_count"] == 40


def test_simulation_csv_and_ndjson(tmp_path):
    sc = Scenario.from_json_obj(_tiny_scenario_obj(duration=1.0))
    log, _ = Simulation(sc).run()
    csv_p = tmp_path / "frames.csv"
    nd_p = tmp_path / "frames.ndjson"
    log.to_csv(csv_p)
    log.to_ndjson(nd_p)
    lines = csv_p.read_text().strip().splitlines()
    assert lines[0].startswith("tick,time,entity")
    assert len(lines) == 1 + 20 * 2  # header + 20 ticks x 2 entities
    first = json.loads(nd_p.read_text().splitlines()[0])
    assert first["tick"] == 0


def test_no_cinematography_flattens_shooting_term():
    sc = Scenario.from_json_obj(_tiny_scenario_obj())
    sim = Simulation(sc, cinematography=False)
    assert sim.weights.alpha1 == 0.0
    assert sim.weights.q_z_min == sc.weights.q_z_min


# -- director command queue -------------------------------------------------

def test_queue_shot_adopts_on_leader_boundary():
    from cineswarm.shots import ShotCommand, ShotType
    sc = Scenario.from_json_obj(_tiny_scenario_obj(duration=3.0))
    sim = Simulation(sc)
    sim.step()
    cmd = ShotCommand(shot_type=ShotType.CHASE, shooting_angle=math.radians(10.0))
    tick = sim.queue_shot(cmd)
    assert tick == sim.next_leader_boundary()
    while sim.tick_idx < tick:
        sim.step()
        if sim.tick_idx <= tick:
            assert sim.active_shot.shot_type is not ShotType.CHASE or sim.tick_idx == tick
    sim.step()
    assert sim.active_shot is cmd
    assert any(e["kind"] == "shot_adopted" and e["tick"] == tick
               for e in sim.log.events)


def test_queue_lighting_validates_index():
    sc = Scenario.from_json_obj(_tiny_scenario_obj())
    sim = Simulation(sc)
    with pytest.raises(IndexError):
        sim.queue_lighting(5, sc.followers[0].lighting)
