"""Receding-horizon simulation of the full camera/lighting UAV pipeline.

A deterministic single-threaded orchestrator: the leader replans its
cinematographic reference, repairs it against the obstacle map, builds a
safe corridor and refines the plan with the tracking QP; followers do the
same from their lighting references at a higher rate. Vehicles track
their latest plan exactly (ideal low-level tracker stand-in).
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import HorizonConfig, OriState, PosState, Trajectory, trajectory_from_inputs, wrap_angle
from .corridor import (
    DEFAULT_DS_MAX,
    DEFAULT_JPS_TIMEOUT,
    GridPath,
    InfeasibleSegmentError,
    PathRepairError,
    _clamped_cell,
    astar_cells,
    build_corridor,
    nearest_free_cell,
    repair_path,
    resample,
)
from .formation import LightingSpec, follower_reference, virtual_target
from .qpsolve import (
    CorridorInfeasibleError,
    QpProblem,
    desired_orientation,
    plan_in_corridor,
    plan_orientation,
    solve_qp,
    unwrap_headings,
)
from .shots import CineWeights, LeaderPlanner, ShotCommand, ShotType, TargetEstimate, predict_target
from .world import DynamicObstacleSet, ObstacleCloud, voxelize

log = logging.getLogger(__name__)

DEFAULT_TICK = 0.05
DEFAULT_FOV_H = math.radians(45.0)
DEFAULT_FOV_V = math.radians(30.0)


# ---------------------------------------------------------------------------
# metrics helpers
# ---------------------------------------------------------------------------

def rms_jerk(angle_series, dt: float) -> float:
    """RMS of the third derivative of an (unwrapped) angle series.

    Central third difference, exact for cubic polynomials.
    """
    f = np.asarray(angle_series, dtype=float)
    if len(f) < 5:
        raise ValueError("series too short for a third difference")
    jerk = (-f[:-4] + 2.0 * f[1:-3] - 2.0 * f[3:-1] + f[4:]) / (2.0 * dt ** 3)
    return float(np.sqrt(np.mean(jerk * jerk)))


def _frustum_normals(heading: float, pitch: float, fov_h: float, fov_v: float) -> np.ndarray:
    ch, sh = math.cos(heading), math.sin(heading)
    cp, sp = math.cos(pitch), math.sin(pitch)
    axis = np.array([ch * cp, sh * cp, sp])
    right = np.array([sh, -ch, 0.0])
    up = np.cross(right, axis)
    return np.array([
        math.cos(fov_h) * right - math.sin(fov_h) * axis,
        -math.cos(fov_h) * right - math.sin(fov_h) * axis,
        math.cos(fov_v) * up - math.sin(fov_v) * axis,
        -math.cos(fov_v) * up - math.sin(fov_v) * axis,
    ])


def fov_distance(follower_p, camera_p, camera_o: OriState,
                 fov_h: float = DEFAULT_FOV_H, fov_v: float = DEFAULT_FOV_V) -> float:
    """Signed distance from a point to the camera view frustum.

    Positive outside the frustum, negative (penetration depth) inside.
    The frustum is the pyramid from the camera origin with the given
    half-angles and unbounded depth.
    """
    r = np.asarray(follower_p, dtype=float) - np.asarray(camera_p, dtype=float)
    A = _frustum_normals(camera_o.heading, camera_o.pitch, fov_h, fov_v)
    vals = A @ r
    if np.all(vals <= 0.0):
        return float(np.max(vals))  # negative: distance to the nearest face
    # projection onto the cone: min ||x - r||^2 s.t. A x <= 0
    sol = solve_qp(QpProblem(2.0 * np.eye(3), -2.0 * r, A, np.zeros(4)))
    return float(np.linalg.norm(sol.z - r))


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------

def _tree_points(x: float, y: float, height: float, step: float = 0.5) -> np.ndarray:
    zs = np.arange(0.0, height + 1e-9, step)
    return np.column_stack([np.full_like(zs, x), np.full_like(zs, y), zs])


def _tree_grid_points(obj) -> np.ndarray:
    rng = np.random.default_rng(int(obj.get("seed", 0)))
    x0, y0 = obj["origin"]
    w, h = obj["extent"]
    count = int(obj["count"])
    height_range = obj.get("height_range", [6.0, 10.0])
    pts = []
    for _ in range(count):
        x = x0 + rng.uniform(0, w)
        y = y0 + rng.uniform(0, h)
        height = rng.uniform(*height_range)
        pts.append(_tree_points(x, y, height))
    return np.vstack(pts) if pts else np.zeros((0, 3))


def _tower_points(obj) -> np.ndarray:
    """Wireframe pylon: four corner legs tapering with height plus
    horizontal braces every few meters, sampled as points."""
    cx, cy = obj["center"]
    height = float(obj.get("height", 15.0))
    base = float(obj.get("base_half_width", 3.0))
    top = float(obj.get("top_half_width", 1.0))
    step = float(obj.get("sample_step", 0.5))
    brace_every = float(obj.get("brace_every", 3.0))
    pts = []
    corners = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    zs = np.arange(0.0, height + 1e-9, step)
    for sx, sy in corners:
        half = base + (top - base) * zs / height
        pts.append(np.column_stack([cx + sx * half, cy + sy * half, zs]))
    for z in np.arange(0.0, height + 1e-9, brace_every):
        half = base + (top - base) * z / height
        for (ax, ay), (bx, by) in zip(corners, corners[1:] + corners[:1]):
            a = np.array([cx + ax * half, cy + ay * half, z])
            b = np.array([cx + bx * half, cy + by * half, z])
            n = max(2, int(np.ceil(np.linalg.norm(b - a) / step)) + 1)
            t = np.linspace(0.0, 1.0, n)[:, None]
            pts.append(a + t * (b - a))
    return np.vstack(pts)


def _expand_obstacles(objs) -> np.ndarray:
    chunks = [np.zeros((0, 3))]
    for obj in objs:
        kind = obj["type"]
        if kind == "points":
            chunks.append(np.asarray(obj["points"], dtype=float).reshape(-1, 3))
        elif kind == "tree_grid":
            chunks.append(_tree_grid_points(obj))
        elif kind == "tower":
            chunks.append(_tower_points(obj))
        else:
            raise ValueError(f"unknown obstacle type {kind!r}")
    return np.vstack(chunks)


@dataclass
class FollowerSpec:
    start: np.ndarray
    lighting: LightingSpec


@dataclass
class Scenario:
    """Validated simulation setup (see ``docs/scenario-schema.md``)."""

    name: str
    duration: float
    seed: int
    bounds: tuple
    resolution: float
    inflation: float
    vehicle_radius: float
    collision_radius: float
    tick: float
    leader_period: float
    follower_period: float
    hz: HorizonConfig
    weights: CineWeights
    cloud: ObstacleCloud
    target_waypoints: np.ndarray
    target_speed: float
    noise_sigma: float
    leader_start: np.ndarray
    followers: list
    shots: list  # [(start_time, ShotCommand), ...] sorted
    fov_h: float = DEFAULT_FOV_H
    fov_v: float = DEFAULT_FOV_V
    jps_timeout: float = DEFAULT_JPS_TIMEOUT

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        for period in (self.leader_period, self.follower_period):
            ratio = period / self.tick
            if abs(ratio - round(ratio)) > 1e-9:
                raise ValueError("replan periods must be tick multiples")
        if not self.shots:
            raise ValueError("scenario needs at least one shot")

    @staticmethod
    def from_json_obj(obj: dict, overrides: dict | None = None) -> "Scenario":
        obj = dict(obj)
        for key, val in (overrides or {}).items():
            parts = key.split(".")
            node = obj
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = val
        hz_obj = obj.get("horizon", {})
        hz = HorizonConfig(N=int(hz_obj.get("N", 40)), dt=float(hz_obj.get("dt", 0.2)))
        w_obj = obj.get("weights", {})
        weights = CineWeights(alpha1=float(w_obj.get("alpha1", 10.0)),
                              alpha2=float(w_obj.get("alpha2", 1.0)),
                              q_z_min=float(w_obj.get("q_z_min", 0.5)))
        rates = obj.get("rates", {})
        cloud = ObstacleCloud(_expand_obstacles(obj.get("obstacles", [])),
                              inflation_radius=float(obj.get("inflation", 1.0)))
        followers = []
        for f in obj.get("followers", []):
            li = f.get("lighting", {})
            followers.append(FollowerSpec(
                start=np.asarray(f["start"], dtype=float),
                lighting=LightingSpec(
                    chi=math.radians(float(li.get("chi_deg", 45.0))),
                    varrho=math.radians(float(li.get("varrho_deg", 15.0))),
                    distance=float(li.get("distance", 6.0)),
                    virtual_distance=float(li.get("virtual_distance", 5.0)),
                )))
        shots = []
        for s in obj["shots"]:
            shots.append((float(s.get("start_time", 0.0)), ShotCommand(
                shot_type=ShotType(s["type"]),
                shooting_angle=math.radians(float(s.get("shooting_angle_deg", 6.0))),
                lateral_distance=float(s.get("lateral_distance", 8.0)),
                behind_distance=float(s.get("behind_distance", 8.0)),
                overtake_distance=float(s.get("overtake_distance", 8.0)),
                duration=float(s.get("duration", math.inf)),
            )))
        shots.sort(key=lambda t: t[0])
        tgt = obj["target"]
        return Scenario(
            name=obj.get("name", "unnamed"),
            duration=float(obj["duration"]),
            seed=int(obj.get("seed", 0)),
            bounds=(tuple(obj["bounds"][0]), tuple(obj["bounds"][1])),
            resolution=float(obj.get("resolution", 0.25)),
            inflation=float(obj.get("inflation", 1.0)),
            vehicle_radius=float(obj.get("vehicle_radius", 0.5)),
            collision_radius=float(obj.get("collision_radius", 1.0)),
            tick=float(rates.get("tick", DEFAULT_TICK)),
            leader_period=1.0 / float(rates.get("leader_hz", 1.0)),
            follower_period=1.0 / float(rates.get("follower_hz", 2.0)),
            hz=hz,
            weights=weights,
            cloud=cloud,
            target_waypoints=np.asarray(tgt["waypoints"], dtype=float).reshape(-1, 3),
            target_speed=float(tgt.get("speed", 1.0)),
            noise_sigma=float(tgt.get("noise_sigma", 0.1)),
            leader_start=np.asarray(obj["leader"]["start"], dtype=float),
            followers=followers,
            shots=shots,
            fov_h=math.radians(float(obj.get("fov_h_deg", 45.0))),
            fov_v=math.radians(float(obj.get("fov_v_deg", 30.0))),
            jps_timeout=float(obj.get("jps_timeout", DEFAULT_JPS_TIMEOUT)),
        )

    @staticmethod
    def load(path, overrides: dict | None = None) -> "Scenario":
        with open(path) as fh:
            return Scenario.from_json_obj(json.load(fh), overrides)


# ---------------------------------------------------------------------------
# target model
# ---------------------------------------------------------------------------

class TargetTrack:
    """Piecewise-linear waypoint follower at constant speed."""

    def __init__(self, waypoints: np.ndarray, speed: float):
        self.wps = np.asarray(waypoints, dtype=float).reshape(-1, 3)
        self.speed = float(speed)
        seg = np.linalg.norm(np.diff(self.wps, axis=0), axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(seg)])

    def state(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        s = self.speed * max(t, 0.0)
        if s >= self.cum[-1] or len(self.wps) == 1:
            return self.wps[-1].copy(), np.zeros(3)
        idx = int(np.searchsorted(self.cum, s, side="right")) - 1
        seg = self.wps[idx + 1] - self.wps[idx]
        length = float(np.linalg.norm(seg))
        direction = seg / length
        p = self.wps[idx] + (s - self.cum[idx]) * direction
        return p, direction * self.speed


class TargetEstimator:
    """Noisy position observations; velocity by smoothed finite differences."""

    def __init__(self, sigma: float, rng: np.random.Generator, period: float, alpha: float = 0.5):
        self.sigma = sigma
        self.rng = rng
        self.period = period
        self.alpha = alpha
        self._last_obs: np.ndarray | None = None
        self._v: np.ndarray = np.zeros(3)
        self._p: np.ndarray | None = None

    def observe(self, truth_p: np.ndarray) -> None:
        obs = truth_p + self.rng.normal(0.0, self.sigma, size=3)
        if self._last_obs is not None:
            raw_v = (obs - self._last_obs) / self.period
            self._v = self.alpha * raw_v + (1.0 - self.alpha) * self._v
        self._last_obs = obs
        self._p = obs

    def estimate(self, t: float) -> TargetEstimate:
        if self._p is None:
            raise RuntimeError("no observation yet")
        return TargetEstimate(self._p, self._v, t)


# ---------------------------------------------------------------------------
# per-vehicle state
# ---------------------------------------------------------------------------

@dataclass
class _Vehicle:
    name: str
    pos_plan: Trajectory
    ori_plan_t0: float
    ori_states: list
    corridor: object = None
    braking: bool = False
    slacked: bool = False
    warm_qp: np.ndarray | None = None
    lighting: LightingSpec | None = None

    def pose(self, t: float) -> tuple[np.ndarray, np.ndarray, OriState]:
        p = self.pos_plan.position_at(t)
        s = self.pos_plan.state_at(t)
        o = self._ori_at(t)
        return p, s.v, o

    def _ori_at(self, t: float) -> OriState:
        """Constant-acceleration interpolation between plan knots.

        Exact for the double-integrator gimbal model, and C1-smooth, so
        jerk metrics measure planned motion rather than sampling kinks.
        """
        states = self.ori_states
        dt = self.pos_plan.dt
        tau = (t - self.ori_plan_t0) / dt
        if tau <= 0.0:
            return states[0]
        k = int(tau)
        if k >= len(states) - 1:
            return states[-1]
        s = (tau - k) * dt
        s0, s1 = states[k], states[k + 1]
        acc = (np.asarray(s1.rates) - np.asarray(s0.rates)) / dt
        h0 = s0.heading
        dh = _ang_diff(s1.heading, h0)
        # base angles evolve as angle + rate*s + 0.5*acc*s^2
        heading = h0 + s0.rates[0] * s + 0.5 * acc[0] * s * s
        # guard against wrap inconsistencies between knot and rate data
        if abs((h0 + dh) - (h0 + s0.rates[0] * dt + 0.5 * acc[0] * dt * dt)) > 1e-6:
            heading = h0 + dh * (s / dt)
        pitch = s0.pitch + s0.rates[1] * s + 0.5 * acc[1] * s * s
        rates = np.asarray(s0.rates) + acc * s
        return OriState(wrap_angle(heading), pitch, rates)

    def active_poly(self, t: float):
        """Polyhedron assigned to the plan segment containing time t."""
        if self.corridor is None:
            return None
        tau = (t - self.pos_plan.t0) / self.pos_plan.dt
        k = int(tau)
        if tau < 0 or k >= len(self.corridor):
            return None
        return self.corridor.polys[k]


def _ang_diff(a: float, b: float) -> float:
    return math.remainder(a - b, 2.0 * math.pi)


class _PolylineRef:
    """Duck-typed reference exposing just the positions() a repair needs."""

    def __init__(self, pos: np.ndarray):
        self._pos = np.asarray(pos, dtype=float)

    def positions(self) -> np.ndarray:
        return self._pos


def _anchored_refs(start: np.ndarray, v0: np.ndarray, path: GridPath, ref: Trajectory,
                   grid, timeout: float, hz: HorizonConfig,
                   d_s_max: float = DEFAULT_DS_MAX) -> np.ndarray:
    """Reference waypoints that begin at the vehicle and walk toward a
    repaired reference path at a bounded, reachable per-step spacing.

    Follower references describe where the lighting slot is, which can be
    far from the vehicle; feeding those to the corridor QP directly would
    demand an instantaneous jump. Instead we bridge from the vehicle to
    the path (straight, or via grid search if the chord is blocked) and
    place waypoints along the combined polyline: the approach advances at
    most d_s_max per step — and no faster than the vehicle can accelerate
    from its current speed — after which the reference's own arc-length
    profile takes over.
    """
    speed0 = float(np.linalg.norm(v0))
    u_lim = float(np.min(hz.u_max))
    caps = np.minimum(d_s_max,
                      (speed0 + np.arange(1, hz.N + 1) * u_lim * hz.dt) * hz.dt)
    ramp = np.concatenate([[0.0], np.cumsum(caps)])
    wps = path.waypoints
    gap = float(np.linalg.norm(wps[0] - start))
    if gap <= 1e-9:
        poly = wps
        bridge_len = 0.0
    else:
        if grid.segment_free(start, wps[0]):
            bridge = np.array([start, wps[0]])
        else:
            # A*, not jump-point search: the vehicle may sit in a
            # cluttered pocket where jump pruning degenerates, and the
            # bridge is short enough that plain A* is faster there.
            # either endpoint can sit inside a conservatively inflated
            # cell; search from/to the nearest free cell in that case
            sc_cell = nearest_free_cell(grid, _clamped_cell(grid, start))
            gc_cell = nearest_free_cell(grid, _clamped_cell(grid, wps[0]))
            if sc_cell is None or gc_cell is None:
                raise PathRepairError("cannot reach reference path: no free cell nearby")
            res = astar_cells(grid, sc_cell, gc_cell, timeout=4.0 * timeout)
            if res.status != "success":
                raise PathRepairError(f"cannot reach reference path: {res.status}")
            centers = [grid.cell_center(c) for c in res.path_to(gc_cell)]
            bridge = np.vstack([[start], centers, [wps[0]]])
        poly = np.vstack([bridge[:-1], wps])
        seg = np.linalg.norm(np.diff(bridge, axis=0), axis=1)
        bridge_len = float(np.sum(seg))

    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])

    pos = ref.positions()
    cum_d = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pos, axis=0), axis=1))])
    N = len(pos) - 1
    follow_len = max(total - bridge_len, 0.0)
    scale = follow_len / cum_d[-1] if cum_d[-1] > 1e-12 else 0.0

    refs = np.empty((N, 3))
    s_prev = 0.0
    for k in range(1, N + 1):
        want = min(ramp[k], bridge_len) + cum_d[k] * scale
        s = min(max(want, s_prev), s_prev + caps[k - 1], total)
        idx = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        if seg[idx] > 1e-12:
            frac = (s - cum[idx]) / seg[idx]
        else:
            frac = 0.0
        refs[k - 1] = poly[idx] + frac * (poly[idx + 1] - poly[idx])
        s_prev = s
    return refs


def _hover_plan(p: np.ndarray, v: np.ndarray, hz: HorizonConfig, t0: float) -> Trajectory:
    """Braking-to-hover: decelerate each axis at the input limit, then hold."""
    U = np.zeros((hz.N, 3))
    vel = np.asarray(v, dtype=float).copy()
    for k in range(hz.N):
        U[k] = np.clip(-vel / hz.dt, hz.u_min, hz.u_max)
        vel = vel + U[k] * hz.dt
    return trajectory_from_inputs(PosState(p, v), U, hz.dt, t0)


# ---------------------------------------------------------------------------
# logs and metrics
# ---------------------------------------------------------------------------

@dataclass
class FrameLog:
    """Per-tick samples for every entity plus per-replan stage timings."""

    ticks: list = field(default_factory=list)          # per-tick dicts
    timings: list = field(default_factory=list)        # per-replan stage dicts
    events: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        cols = ["tick", "time", "entity", "px", "py", "pz", "vx", "vy", "vz",
                "heading", "pitch"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for fr in self.ticks:
                for ent in fr["entities"]:
                    row = [fr["tick"], f"{fr['time']:.6f}", ent["name"],
                           *(f"{v:.9f}" for v in ent["p"]),
                           *(f"{v:.9f}" for v in ent["v"]),
                           f"{ent['heading']:.9f}", f"{ent['pitch']:.9f}"]
                    fh.write(",".join(str(c) for c in row) + "\n")

    def to_ndjson(self, path) -> None:
        with open(path, "w") as fh:
            for fr in self.ticks:
                fh.write(json.dumps(fr) + "\n")


@dataclass
class Metrics:
    rms_jerk_heading: float
    rms_jerk_pitch: float
    d_f: dict                 # follower name -> per-tick list
    dev_heading: dict         # follower name -> per-tick list (rad)
    dev_pitch: dict
    min_obstacle_clearance: float
    min_pair_separation: float
    max_poly_violation: float
    slack_ticks: int
    collision_events: int
    stage_stats: dict         # stage -> {mean, share, count}
    leader_replan_mean: float
    frame_count: int

    def to_json_obj(self) -> dict:
        return {
            "rms_jerk_heading": self.rms_jerk_heading,
            "rms_jerk_pitch": self.rms_jerk_pitch,
            "d_f": self.d_f,
            "dev_heading": self.dev_heading,
            "dev_pitch": self.dev_pitch,
            "min_obstacle_clearance": self.min_obstacle_clearance,
            "min_pair_separation": self.min_pair_separation,
            "max_poly_violation": self.max_poly_violation,
            "slack_ticks": self.slack_ticks,
            "collision_events": self.collision_events,
            "stage_stats": self.stage_stats,
            "leader_replan_mean": self.leader_replan_mean,
            "frame_count": self.frame_count,
        }


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

class Simulation:
    """Deterministic tick-driven orchestrator for one scenario."""

    def __init__(self, scenario: Scenario, cinematography: bool = True):
        sc = scenario
        self.sc = sc
        weights = sc.weights if cinematography else CineWeights(
            alpha1=0.0, alpha2=sc.weights.alpha2, q_z_min=sc.weights.q_z_min)
        self.weights = weights
        self.rng = np.random.default_rng(sc.seed)
        self.grid = voxelize(sc.cloud, sc.bounds, sc.resolution)
        self.static_tree = cKDTree(sc.cloud.points) if len(sc.cloud.points) else None
        self.track = TargetTrack(sc.target_waypoints, sc.target_speed)
        est_period = sc.follower_period
        self.estimator = TargetEstimator(sc.noise_sigma, self.rng, est_period)
        self.est_every = max(1, int(round(est_period / sc.tick)))
        self.leader_every = int(round(sc.leader_period / sc.tick))
        self.follower_every = int(round(sc.follower_period / sc.tick))
        self.planner = LeaderPlanner(sc.hz, weights)
        self.tick_idx = 0
        self.log = FrameLog()
        self.orbit_phase = 0.0
        self._shot_queue = list(sc.shots)
        self.active_shot: ShotCommand = self._shot_queue[0][1]
        self._pending_commands: list = []

        t0 = 0.0
        tp, _ = self.track.state(0.0)
        self.estimator.observe(tp)
        hold = _hover_plan(sc.leader_start, np.zeros(3), sc.hz, t0)
        h0, x0, _ = desired_orientation(sc.leader_start, tp)
        ori0 = [OriState(h0, float(np.clip(x0, sc.hz.xi_min, sc.hz.xi_max)), [0, 0])
                for _ in range(sc.hz.N + 1)]
        self.leader = _Vehicle("leader", hold, t0, ori0)
        self.followers = []
        for i, f in enumerate(sc.followers):
            hold = _hover_plan(f.start, np.zeros(3), sc.hz, t0)
            hf, xf, _ = desired_orientation(f.start, tp)
            orif = [OriState(hf, float(np.clip(xf, sc.hz.xi_min, sc.hz.xi_max)), [0, 0])
                    for _ in range(sc.hz.N + 1)]
            self.followers.append(_Vehicle(f"follower{i}", hold, t0, orif,
                                           lighting=f.lighting))

    # -- director interface ------------------------------------------------
    @property
    def time(self) -> float:
        return self.tick_idx * self.sc.tick

    def next_leader_boundary(self) -> int:
        k = self.tick_idx
        return ((k // self.leader_every) + 1) * self.leader_every

    def next_follower_boundary(self) -> int:
        k = self.tick_idx
        return ((k // self.follower_every) + 1) * self.follower_every

    def queue_shot(self, shot: ShotCommand, at_tick: int | None = None) -> int:
        tick = self.next_leader_boundary() if at_tick is None else at_tick
        self._pending_commands.append((tick, "shot", None, shot))
        return tick

    def queue_lighting(self, follower_idx: int, spec: LightingSpec,
                       at_tick: int | None = None) -> int:
        if not (0 <= follower_idx < len(self.followers)):
            raise IndexError(f"unknown follower {follower_idx}")
        tick = self.next_follower_boundary() if at_tick is None else at_tick
        self._pending_commands.append((tick, "lighting", follower_idx, spec))
        return tick

    def _drain_commands(self) -> None:
        rest = []
        for tick, kind, idx, payload in self._pending_commands:
            if tick > self.tick_idx:
                rest.append((tick, kind, idx, payload))
                continue
            if kind == "shot":
                self.active_shot = payload
                self.log.events.append({"tick": self.tick_idx, "kind": "shot_adopted",
                                        "detail": payload.shot_type.value})
            else:
                self.followers[idx].lighting = payload
                self.log.events.append({"tick": self.tick_idx, "kind": "lighting_adopted",
                                        "detail": f"follower{idx}"})
        self._pending_commands = rest

    def _scripted_shot(self, t: float) -> None:
        while len(self._shot_queue) > 1 and self._shot_queue[1][0] <= t + 1e-9:
            self._shot_queue.pop(0)
            self.active_shot = self._shot_queue[0][1]
            self.log.events.append({"tick": self.tick_idx, "kind": "shot_scripted",
                                    "detail": self.active_shot.shot_type.value})

    # -- replans -----------------------------------------------------------
    def _dynamic_cloud_and_grid(self, rank: int, target_pred):
        """Per-replan map snapshot with target spheres plus the plans of
        all higher-priority teammates (leader first, then followers in
        order). The grid inflates sphere radii by the vehicle radius so
        the repaired path already satisfies the corridor clearance."""
        sc = self.sc
        spheres = []
        # Only the near-term prefix of a teammate plan is committed; the
        # tail is recomputed several times before it would be flown, and
        # treating it as a present obstacle can permanently block a
        # trailing teammate whose slot it sweeps through.
        prefix = int(math.ceil(2.0 / sc.hz.dt)) + 1
        # collision_radius is a centre-to-centre minimum; the corridor
        # already keeps the vehicle_radius clear of every obstacle surface,
        # so the injected sphere only needs the remainder (plus a buffer).
        # Injecting the full radius would over-inflate teammates and lock a
        # follower's own cell whenever the camera passes nearby.
        r_team = max(sc.collision_radius - sc.vehicle_radius + 0.25, 0.1)
        for veh in [self.leader, *self.followers][:rank]:
            for p in veh.pos_plan.positions()[:prefix]:
                spheres.append([p[0], p[1], p[2], r_team])
        for p in target_pred:
            spheres.append([p[0], p[1], p[2], r_team])
        arr = np.asarray(spheres, dtype=float).reshape(-1, 4)
        cloud = sc.cloud.with_spheres(DynamicObstacleSet(arr))
        inflated = arr.copy()
        inflated[:, 3] += sc.vehicle_radius
        grid = self.grid.with_spheres(inflated)
        return cloud, grid

    def _clip_to_bounds(self, corridor) -> None:
        """Intersect every corridor polyhedron with the world box, shrunk by
        the vehicle radius, so executed positions stay inside the arena
        (in particular above the ground plane)."""
        sc = self.sc
        lo = np.asarray(sc.bounds[0], dtype=float) + sc.vehicle_radius
        hi = np.asarray(sc.bounds[1], dtype=float) - sc.vehicle_radius
        box_n = np.vstack([np.eye(3), -np.eye(3)])
        box_b = np.concatenate([hi, -lo])
        seen = set()
        for poly in corridor.polys:
            if id(poly) in seen:  # consecutive segments may share a polyhedron
                continue
            seen.add(id(poly))
            poly.normals = np.vstack([poly.normals, box_n])
            poly.offsets = np.concatenate([poly.offsets, box_b])

    def _refine(self, veh: _Vehicle, ref: Trajectory, cloud, grid, t: float,
                aim_points: np.ndarray, anchored: bool = False) -> dict:
        """Repair / corridor / QP / orientation shared by leader and followers."""
        sc = self.sc
        timings = {}
        p_now, v_now, o_now = veh.pose(t)
        x0 = PosState(p_now, np.clip(v_now, sc.hz.v_min, sc.hz.v_max))

        t1 = time.perf_counter()
        try:
            if anchored:
                # A slot reference can start inside an inflated obstacle
                # (the slot sweeps past structure the vehicle must skirt);
                # drop the leading occupied portion and rejoin where the
                # slot becomes reachable again.
                pos = ref.positions()
                k0 = next((i for i, p in enumerate(pos) if grid.is_free(p)), None)
                if k0 is None:
                    raise PathRepairError("slot reference entirely occupied")
                path = repair_path(_PolylineRef(pos[k0:]), grid, timeout=sc.jps_timeout)
                # slots sweep fast when the camera orbits; let follower refs
                # run up to 90% of the speed limit instead of the default cap
                ds = 0.9 * float(np.min(sc.hz.v_max)) * sc.hz.dt
                refs = _anchored_refs(x0.p, x0.v, path, ref, grid,
                                      sc.jps_timeout, sc.hz, d_s_max=ds)
            else:
                path = repair_path(ref, grid, timeout=sc.jps_timeout)
                refs = resample(path, ref)
            corridor = build_corridor(x0.p, refs, cloud,
                                      vehicle_radius=sc.vehicle_radius)
            self._clip_to_bounds(corridor)
        except (PathRepairError, InfeasibleSegmentError) as exc:
            timings["scg"] = time.perf_counter() - t1
            self._brake(veh, t, f"corridor: {exc}")
            return timings
        timings["scg"] = time.perf_counter() - t1

        t2 = time.perf_counter()
        try:
            traj, sol, slack = plan_in_corridor(x0, refs, corridor, sc.hz,
                                                warm_start=veh.warm_qp, t0=t)
        except CorridorInfeasibleError as exc:
            timings["fto"] = time.perf_counter() - t2
            self._brake(veh, t, f"qp: {exc}")
            return timings
        if slack > 0.0:
            self.log.events.append({"tick": self.tick_idx, "kind": "slack",
                                    "detail": f"{veh.name}:{slack:.3f}"})
        veh.pos_plan = traj
        veh.corridor = corridor
        veh.braking = False
        veh.slacked = slack > 1e-9
        veh.warm_qp = np.array([u.a for u in traj.inputs]).reshape(-1)

        # orientation MPC toward the aim points
        o0 = veh._ori_at(t)
        pos = traj.positions()
        des = []
        prev_h = o0.heading
        for k in range(1, sc.hz.N + 1):
            h, x, _ = desired_orientation(pos[k], aim_points[k], prev_h)
            prev_h = h
            des.append([h, x])
        des = np.array(des)
        des[:, 0] = unwrap_headings(des[:, 0], o0.heading)
        states, _, _ = plan_orientation(o0, des, sc.hz)
        veh.ori_states = states
        veh.ori_plan_t0 = t
        timings["fto"] = time.perf_counter() - t2
        return timings

    def _brake(self, veh: _Vehicle, t: float, reason: str) -> None:
        p, v, _ = veh.pose(t)
        veh.pos_plan = _hover_plan(p, v, self.sc.hz, t)
        veh.corridor = None
        veh.braking = True
        self.log.events.append({"tick": self.tick_idx, "kind": "braking",
                                "detail": f"{veh.name}: {reason}"})

    def _replan_leader(self) -> None:
        sc = self.sc
        t = self.time
        est = self.estimator.estimate(t)
        target_pred = predict_target(est, sc.hz.N, sc.hz.dt)
        if self.active_shot.shot_type is ShotType.ORBIT:
            self.orbit_phase += 0.35

        stage = {"entity": "leader", "tick": self.tick_idx}
        t0 = time.perf_counter()
        p_now, v_now, _ = self.leader.pose(t)
        x0 = PosState(p_now, np.clip(v_now, sc.hz.v_min, sc.hz.v_max))
        self.planner.shift_warm_start(int(round(sc.leader_period / sc.hz.dt)))
        ref, info = self.planner.plan(x0, self.active_shot, target_pred, t0=t,
                                      orbit_phase=self.orbit_phase)
        stage["itg"] = time.perf_counter() - t0
        if not info.converged:
            log.debug("leader NLP cap: stat=%.2e", info.stationarity)

        cloud, grid = self._dynamic_cloud_and_grid(0, target_pred)
        stage.update(self._refine(self.leader, ref, cloud, grid, t, target_pred))
        self.log.timings.append(stage)

    def _replan_follower(self, idx: int) -> None:
        sc = self.sc
        t = self.time
        veh = self.followers[idx]
        est = self.estimator.estimate(t)
        target_pred = predict_target(est, sc.hz.N, sc.hz.dt)

        stage = {"entity": veh.name, "tick": self.tick_idx}
        t0 = time.perf_counter()
        lead = self.leader
        ori_states = lead.ori_states
        ref = follower_reference(lead.pos_plan, ori_states, veh.lighting, sc.hz, t0=t)
        stage["itg"] = time.perf_counter() - t0

        # aim the light at the virtual target along the leader plan
        aims = np.zeros((sc.hz.N + 1, 3))
        for k in range(sc.hz.N + 1):
            tk = t + k * sc.hz.dt
            o = lead._ori_at(tk)
            aims[k] = virtual_target(lead.pos_plan.position_at(tk), o.heading,
                                     o.pitch, veh.lighting.virtual_distance)

        cloud, grid = self._dynamic_cloud_and_grid(idx + 1, target_pred)
        stage.update(self._refine(veh, ref, cloud, grid, t, aims, anchored=True))
        self.log.timings.append(stage)

    # -- main loop ---------------------------------------------------------
    def step(self) -> dict:
        """Advance one tick; returns the recorded frame."""
        sc = self.sc
        t = self.time
        if self.tick_idx % self.est_every == 0 and self.tick_idx > 0:
            tp, _ = self.track.state(t)
            self.estimator.observe(tp)
        self._scripted_shot(t)
        self._drain_commands()
        if self.tick_idx % self.leader_every == 0:
            self._replan_leader()
        if self.tick_idx % self.follower_every == 0:
            for i in range(len(self.followers)):
                self._replan_follower(i)

        frame = self._record(t)
        self.tick_idx += 1
        return frame

    def _record(self, t: float) -> dict:
        truth_p, truth_v = self.track.state(t)
        est = self.estimator.estimate(t)
        entities = []
        for veh in [self.leader, *self.followers]:
            p, v, o = veh.pose(t)
            poly = veh.active_poly(t)
            viol = poly.max_violation(p) if poly is not None else None
            entities.append({
                "name": veh.name,
                "p": [float(x) for x in p],
                "v": [float(x) for x in v],
                "heading": float(o.heading),
                "pitch": float(o.pitch),
                "braking": veh.braking,
                "slacked": veh.slacked,
                "poly_violation": viol if viol is None else float(viol),
            })
        lp, lv, lo = self.leader.pose(t)
        d_f = {}
        dev_h = {}
        dev_p = {}
        for veh in self.followers:
            fp, _, _ = veh.pose(t)
            d_f[veh.name] = fov_distance(fp, lp, lo, self.sc.fov_h, self.sc.fov_v)
            anchor = virtual_target(lp, lo.heading, lo.pitch, veh.lighting.virtual_distance)
            r = anchor - fp
            dist = float(np.linalg.norm(r))
            if dist > 1e-9:
                ach_h = math.atan2(r[1], r[0])
                ach_p = math.asin(max(-1.0, min(1.0, -r[2] / dist)))
            else:
                ach_h, ach_p = lo.heading, lo.pitch
            want_h = lo.heading + veh.lighting.chi
            want_p = lo.pitch + veh.lighting.varrho
            dev_h[veh.name] = _ang_diff(ach_h, want_h)
            dev_p[veh.name] = float(ach_p - want_p)
        frame = {
            "tick": self.tick_idx,
            "time": t,
            "entities": entities,
            "target": {"p": [float(x) for x in truth_p],
                       "v": [float(x) for x in truth_v],
                       "est_p": [float(x) for x in est.p_t],
                       "est_v": [float(x) for x in est.v_t]},
            "shot": self.active_shot.shot_type.value,
            "d_f": {k: float(v) for k, v in d_f.items()},
            "dev_heading": {k: float(v) for k, v in dev_h.items()},
            "dev_pitch": {k: float(v) for k, v in dev_p.items()},
        }
        self.log.ticks.append(frame)
        return frame

    def run(self) -> tuple[FrameLog, Metrics]:
        n_ticks = int(round(self.sc.duration / self.sc.tick))
        while self.tick_idx < n_ticks:
            self.step()
        return self.log, self.metrics()

    # -- metrics -----------------------------------------------------------
    def metrics(self) -> Metrics:
        sc = self.sc
        frames = self.log.ticks
        headings = np.unwrap([fr["entities"][0]["heading"] for fr in frames])
        pitches = np.array([fr["entities"][0]["pitch"] for fr in frames])
        jerk_h = rms_jerk(headings, sc.tick)
        jerk_p = rms_jerk(pitches, sc.tick)

        d_f = {v.name: [fr["d_f"][v.name] for fr in frames] for v in self.followers}
        dev_h = {v.name: [fr["dev_heading"][v.name] for fr in frames] for v in self.followers}
        dev_p = {v.name: [fr["dev_pitch"][v.name] for fr in frames] for v in self.followers}

        min_clear = math.inf
        min_sep = math.inf
        max_viol = 0.0
        slack_ticks = 0
        collisions = 0
        for fr in frames:
            ps = np.array([e["p"] for e in fr["entities"]])
            if self.static_tree is not None:
                d, _ = self.static_tree.query(ps)
                min_clear = min(min_clear, float(np.min(d)))
                if np.min(d) < sc.vehicle_radius:
                    collisions += 1
            for i in range(len(ps)):
                for j in range(i + 1, len(ps)):
                    sep = float(np.linalg.norm(ps[i] - ps[j]))
                    min_sep = min(min_sep, sep)
                    if sep < sc.collision_radius:
                        collisions += 1
            if any(e["slacked"] or e["braking"] for e in fr["entities"]):
                slack_ticks += 1
            for e in fr["entities"]:
                good = not (e["braking"] or e["slacked"])
                if e["poly_violation"] is not None and good:
                    max_viol = max(max_viol, e["poly_violation"])

        stage_tot = {"itg": 0.0, "scg": 0.0, "fto": 0.0}
        count = 0
        leader_total = []
        for st in self.log.timings:
            if st["entity"] != "leader":
                continue
            count += 1
            tot = 0.0
            for key in stage_tot:
                val = st.get(key, 0.0)
                stage_tot[key] += val
                tot += val
            leader_total.append(tot)
        total_all = sum(stage_tot.values()) or 1.0
        stage_stats = {
            key: {"mean": (stage_tot[key] / count if count else 0.0),
                  "share": stage_tot[key] / total_all,
                  "count": count}
            for key in stage_tot
        }
        return Metrics(
            rms_jerk_heading=jerk_h,
            rms_jerk_pitch=jerk_p,
            d_f=d_f,
            dev_heading=dev_h,
            dev_pitch=dev_p,
            min_obstacle_clearance=(min_clear if math.isfinite(min_clear) else float("nan")),
            min_pair_separation=(min_sep if math.isfinite(min_sep) else float("nan")),
            max_poly_violation=max_viol,
            slack_ticks=slack_ticks,
            collision_events=collisions,
            stage_stats=stage_stats,
            leader_replan_mean=(float(np.mean(leader_total)) if leader_total else 0.0),
            frame_count=len(frames),
        )


def run(scenario: Scenario, cinematography: bool = True) -> tuple[FrameLog, Metrics]:
    """Run a scenario start to finish."""
    return Simulation(scenario, cinematography=cinematography).run()


def builtin_scenario_path(name: str) -> Path:
    p = Path(__file__).parent / "data" / f"{name}.json"
    if not p.exists():
        raise FileNotFoundError(f"no builtin scenario {name!r}")
    return p
