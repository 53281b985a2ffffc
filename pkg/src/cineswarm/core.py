"""Shared vehicle state types and double-integrator kinematics.

Positions are meters in a global ENU-like frame, headings are radians
measured CCW from +x. All planners in this package share the discrete
update implemented here, so trajectories produced anywhere in the
pipeline can be re-verified against ``step_pos`` exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PosState",
    "PosInput",
    "OriState",
    "OriInput",
    "Trajectory",
    "HorizonConfig",
    "wrap_angle",
    "step_pos",
    "step_ori",
    "rollout",
    "prediction_matrices",
]


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return -((math.pi - a) % (2.0 * math.pi) - math.pi)


def _vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite 3-vector: {v}")
    return v


@dataclass(frozen=True)
class PosState:
    """Positional state: position p [m] and velocity v [m/s]."""

    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _vec3(self.p))
        object.__setattr__(self, "v", _vec3(self.v))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.v])


@dataclass(frozen=True)
class PosInput:
    """Positional control input: linear acceleration a [m/s^2]."""

    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", _vec3(self.a))


@dataclass(frozen=True)
class OriState:
    """Gimbal/vehicle orientation state: heading, pitch and their rates.

    Heading is stored wrapped to (-pi, pi]; planners unwrap internally.
    """

    heading: float
    pitch: float
    rates: np.ndarray  # (2,) [heading_rate, pitch_rate] rad/s

    def __post_init__(self):
        if not (np.isfinite(self.heading) and np.isfinite(self.pitch)):
            raise ValueError("non-finite orientation angles")
        r = np.asarray(self.rates, dtype=float).reshape(2)
        if not np.all(np.isfinite(r)):
            raise ValueError("non-finite angular rates")
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))
        object.__setattr__(self, "pitch", float(self.pitch))
        object.__setattr__(self, "rates", r)


@dataclass(frozen=True)
class OriInput:
    """Orientation control input: angular accelerations [rad/s^2]."""

    theta: np.ndarray  # (2,)

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=float).reshape(2)
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite angular acceleration")
        object.__setattr__(self, "theta", t)


def step_pos(x: PosState, u: PosInput, dt: float) -> PosState:
    """Exact discrete update of the double integrator over one step.

    The input is held constant over the step, for which the closed-form
    update (equal to the Runge-Kutta solution of this linear system) is
        p' = p + v dt + a dt^2 / 2,   v' = v + a dt.
    """
    if not (dt > 0.0):
        raise ValueError("dt must be positive")
    p = x.p + x.v * dt + 0.5 * u.a * dt * dt
    v = x.v + u.a * dt
    return PosState(p, v)


def step_ori(x: OriState, u: OriInput, dt: float) -> OriState:
    """Double-integrator update applied per angle; heading re-wrapped."""
    if not (dt > 0.0):
        raise ValueError("dt must be positive")
    ang = np.array([x.heading, x.pitch])
    ang2 = ang + x.rates * dt + 0.5 * u.theta * dt * dt
    rates2 = x.rates + u.theta * dt
    return OriState(wrap_angle(ang2[0]), ang2[1], rates2)


@dataclass(frozen=True)
class Trajectory:
    """Timed sequence of N+1 positional states plus the N inputs between them.

    ``states[k + 1] == step_pos(states[k], inputs[k], dt)`` for every
    planner-produced trajectory (checked by :meth:`dynamics_error`).
    """

    t0: float
    dt: float
    states: tuple[PosState, ...]
    inputs: tuple[PosInput, ...]

    def __post_init__(self):
        if not (self.dt > 0.0):
            raise ValueError("dt must be positive")
        if len(self.states) != len(self.inputs) + 1:
            raise ValueError("need exactly one more state than inputs")

    @property
    def n_steps(self) -> int:
        return len(self.inputs)

    def positions(self) -> np.ndarray:
        """(N+1, 3) array of waypoint positions."""
        return np.array([s.p for s in self.states])

    def velocities(self) -> np.ndarray:
        return np.array([s.v for s in self.states])

    def accelerations(self) -> np.ndarray:
        return np.array([u.a for u in self.inputs])

    def time_of(self, k: int) -> float:
        return self.t0 + k * self.dt

    def dynamics_error(self) -> float:
        """Max transition defect against the exact discrete update."""
        worst = 0.0
        for k, u in enumerate(self.inputs):
            pred = step_pos(self.states[k], u, self.dt)
            d = max(
                float(np.max(np.abs(pred.p - self.states[k + 1].p))),
                float(np.max(np.abs(pred.v - self.states[k + 1].v))),
            )
            worst = max(worst, d)
        return worst

    def state_at(self, t: float) -> PosState:
        """State at absolute time t, constant-input interpolation, clamped."""
        if t <= self.t0:
            return self.states[0]
        tau = t - self.t0
        k = int(tau // self.dt)
        if k >= self.n_steps:
            end = self.states[-1]
            return PosState(end.p, end.v)
        frac = tau - k * self.dt
        x = self.states[k]
        a = self.inputs[k].a
        return PosState(x.p + x.v * frac + 0.5 * a * frac * frac, x.v + a * frac)

    def position_at(self, t: float) -> np.ndarray:
        """Position at time t, linear interpolation between waypoints.

        This is the ideal-tracker sampling: chords between waypoints stay
        inside any convex region that contains both endpoints.
        """
        if t <= self.t0:
            return self.states[0].p
        tau = (t - self.t0) / self.dt
        k = int(tau)
        if k >= self.n_steps:
            return self.states[-1].p
        frac = tau - k
        return (1.0 - frac) * self.states[k].p + frac * self.states[k + 1].p


def rollout(x0: PosState, inputs, dt: float, t0: float = 0.0) -> Trajectory:
    """Integrate a sequence of inputs from x0 into a Trajectory."""
    inputs = tuple(u if isinstance(u, PosInput) else PosInput(u) for u in inputs)
    if not inputs:
        raise ValueError("inputs must be non-empty")
    states = [x0]
    for u in inputs:
        states.append(step_pos(states[-1], u, dt))
    return Trajectory(t0=t0, dt=dt, states=tuple(states), inputs=inputs)


def trajectory_from_inputs(x0: PosState, U: np.ndarray, dt: float, t0: float = 0.0) -> Trajectory:
    """Build a Trajectory from an (N, 3) stacked input array."""
    return rollout(x0, [PosInput(u) for u in np.asarray(U, dtype=float)], dt, t0)


def prediction_matrices(N: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Condensing matrices of the double integrator per axis.

    Returns (Cp, Cv), each (N, N) lower-triangular, such that for one axis
        p_k = p_0 + k dt v_0 + (Cp @ u)_k,
        v_k = v_0 + (Cv @ u)_k,          k = 1..N.
    """
    k = np.arange(1, N + 1)[:, None]
    j = np.arange(N)[None, :]
    mask = j < k
    Cp = np.where(mask, dt * dt * (k - j - 0.5), 0.0)
    Cv = np.where(mask, dt, 0.0)
    return Cp, Cv


@dataclass(frozen=True)
class HorizonConfig:
    """Planning horizon and actuation limits shared by all planners."""

    N: int = 40
    dt: float = 0.2
    v_min: np.ndarray = field(default_factory=lambda: np.array([-5.0, -5.0, -5.0]))
    v_max: np.ndarray = field(default_factory=lambda: np.array([5.0, 5.0, 5.0]))
    u_min: np.ndarray = field(default_factory=lambda: np.array([-2.0, -2.0, -2.0]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([2.0, 2.0, 2.0]))
    omega_min: np.ndarray = field(default_factory=lambda: np.array([-1.5, -1.5]))
    omega_max: np.ndarray = field(default_factory=lambda: np.array([1.5, 1.5]))
    xi_min: float = -1.2
    xi_max: float = 1.2
    ou_min: np.ndarray = field(default_factory=lambda: np.array([-3.0, -3.0]))
    ou_max: np.ndarray = field(default_factory=lambda: np.array([3.0, 3.0]))

    def __post_init__(self):
        object.__setattr__(self, "v_min", np.asarray(self.v_min, dtype=float).reshape(3))
        object.__setattr__(self, "v_max", np.asarray(self.v_max, dtype=float).reshape(3))
        object.__setattr__(self, "u_min", np.asarray(self.u_min, dtype=float).reshape(3))
        object.__setattr__(self, "u_max", np.asarray(self.u_max, dtype=float).reshape(3))
        object.__setattr__(self, "omega_min", np.asarray(self.omega_min, dtype=float).reshape(2))
        object.__setattr__(self, "omega_max", np.asarray(self.omega_max, dtype=float).reshape(2))
        object.__setattr__(self, "ou_min", np.asarray(self.ou_min, dtype=float).reshape(2))
        object.__setattr__(self, "ou_max", np.asarray(self.ou_max, dtype=float).reshape(2))
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not (self.dt > 0.0):
            raise ValueError("dt must be positive")
        for lo, hi in (
            (self.v_min, self.v_max),
            (self.u_min, self.u_max),
            (self.omega_min, self.omega_max),
            (np.array([self.xi_min]), np.array([self.xi_max])),
            (self.ou_min, self.ou_max),
        ):
            if not np.all(lo < hi):
                raise ValueError("min bounds must be strictly below max bounds")

    @property
    def horizon_seconds(self) -> float:
        return self.N * self.dt
