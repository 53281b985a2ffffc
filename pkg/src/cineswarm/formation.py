"""Follower (lighting UAV) reference generation from the leader plan.

Followers hold commanded lighting angles relative to the camera optical
axis, aimed at a virtual target placed a fixed distance in front of the
camera. Using the virtual target instead of the tracked target keeps the
follower references continuous when the director retargets the camera.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import HorizonConfig, OriState, PosInput, PosState, Trajectory

log = logging.getLogger(__name__)

DEFAULT_VIRTUAL_DISTANCE = 5.0


@dataclass(frozen=True)
class LightingSpec:
    """Per-light formation parameters.

    chi / varrho are the desired lighting heading/pitch offsets from the
    camera optical axis; distance is light-to-target.
    """

    chi: float = math.radians(45.0)
    varrho: float = math.radians(15.0)
    distance: float = 6.0
    virtual_distance: float = DEFAULT_VIRTUAL_DISTANCE

    def __post_init__(self):
        if self.distance <= 0.0 or self.virtual_distance <= 0.0:
            raise ValueError("distances must be positive")


def optical_axis(heading: float, pitch: float) -> np.ndarray:
    return np.array([
        math.cos(heading) * math.cos(pitch),
        math.sin(heading) * math.cos(pitch),
        math.sin(pitch),
    ])


def virtual_target(p_leader, heading: float, pitch: float, d_v: float) -> np.ndarray:
    """Point d_v ahead of the camera along its optical axis."""
    return np.asarray(p_leader, dtype=float) + d_v * optical_axis(heading, pitch)


def follower_slot(anchor, leader_heading: float, leader_pitch: float,
                  spec: LightingSpec) -> np.ndarray:
    """Desired light position around ``anchor`` for one lighting spec."""
    h = leader_heading + spec.chi
    p = leader_pitch + spec.varrho
    offset = np.array([
        -math.cos(h) * math.cos(p),
        -math.sin(h) * math.cos(p),
        math.sin(p),
    ])
    return np.asarray(anchor, dtype=float) + spec.distance * offset


def follower_reference(leader_plan: Trajectory, leader_ori_plan, spec: LightingSpec,
                       hz: HorizonConfig, t0: float | None = None,
                       use_virtual_target: bool = True,
                       target_positions=None) -> Trajectory:
    """Follower reference trajectory over the follower's own horizon.

    The leader plan is sampled at the follower's step times (linear
    interpolation when the horizons are misaligned; the leader plan is
    extended by holding its last pose). Velocities and accelerations come
    from central finite differences of the positions, clamped to bounds.

    ``use_virtual_target=False`` aims the formation at ``target_positions``
    (ablation mode; requires N+1 rows).
    """
    if t0 is None:
        t0 = leader_plan.t0
    n = hz.N
    times = t0 + np.arange(n + 1) * hz.dt
    if abs((t0 - leader_plan.t0) / hz.dt - round((t0 - leader_plan.t0) / hz.dt)) > 1e-9:
        log.debug("follower horizon misaligned with leader plan; interpolating")

    ori = list(leader_ori_plan)
    headings = np.unwrap([o.heading for o in ori])
    pitches = np.array([o.pitch for o in ori])
    positions = np.zeros((n + 1, 3))
    for i, t in enumerate(times):
        p_l = leader_plan.position_at(t)
        h, x = _sample_ori(leader_plan.t0, leader_plan.dt, headings, pitches, t)
        if use_virtual_target:
            anchor = virtual_target(p_l, h, x, spec.virtual_distance)
        else:
            anchor = np.asarray(target_positions, dtype=float).reshape(n + 1, 3)[i]
        positions[i] = follower_slot(anchor, h, x, spec)

    vel = _central_diff(positions, hz.dt)
    vel = np.clip(vel, hz.v_min, hz.v_max)
    acc = _central_diff(vel, hz.dt)[:-1]
    acc = np.clip(acc, hz.u_min, hz.u_max)
    states = tuple(PosState(positions[k], vel[k]) for k in range(n + 1))
    inputs = tuple(PosInput(acc[k]) for k in range(n))
    return Trajectory(t0=t0, dt=hz.dt, states=states, inputs=inputs)


def _sample_ori(t0: float, dt: float, headings: np.ndarray, pitches: np.ndarray,
                t: float) -> tuple[float, float]:
    tau = (t - t0) / dt
    if tau <= 0.0:
        return float(headings[0]), float(pitches[0])
    k = int(tau)
    if k >= len(headings) - 1:
        return float(headings[-1]), float(pitches[-1])
    frac = tau - k
    h = (1 - frac) * headings[k] + frac * headings[k + 1]
    x = (1 - frac) * pitches[k] + frac * pitches[k + 1]
    return float(h), float(x)


def _central_diff(series: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(series)
    out[1:-1] = (series[2:] - series[:-2]) / (2.0 * dt)
    out[0] = (series[1] - series[0]) / dt
    out[-1] = (series[-1] - series[-2]) / dt
    return out
