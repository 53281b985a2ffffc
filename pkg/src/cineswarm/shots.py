"""Shot semantics, target prediction and the leader reference optimizer.

The leader's reference trajectory minimizes input effort, deviation of the
camera elevation angle from the commanded shooting angle, and distance of
the terminal planar state from a shot-type goal, under velocity/input
bounds and a minimum height above the target. The dynamics are linear, so
the problem is condensed to the stacked inputs and solved by projected
gradient with a backtracking line search and warm starts.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import HorizonConfig, PosState, Trajectory, prediction_matrices, trajectory_from_inputs

log = logging.getLogger(__name__)

PLANAR_EPS = 1e-3       # clamp on planar distance inside the angle cost
QZ_PENALTY_WEIGHT = 4.0e4
SLOW_TARGET_SPEED = 0.1  # below this, offset directions use the leader bearing
MAX_ITERS = 1000
STATIONARITY_TOL = 1e-5


class ShotType(str, enum.Enum):
    LATERAL = "lateral"
    FLY_OVER = "fly_over"
    CHASE = "chase"
    ORBIT = "orbit"
    STATIC_FRAME = "static_frame"


@dataclass(frozen=True)
class ShotCommand:
    """Director shot request: type, shooting angle and type-specific distances."""

    shot_type: ShotType
    shooting_angle: float = math.radians(6.0)  # desired camera elevation
    lateral_distance: float = 5.0
    behind_distance: float = 6.0
    overtake_distance: float = 6.0
    duration: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "shot_type", ShotType(self.shot_type))
        if not (0.0 < self.shooting_angle < math.pi / 2):
            raise ValueError("shooting angle must be in (0, pi/2)")
        for d in (self.lateral_distance, self.behind_distance, self.overtake_distance):
            if d <= 0.0:
                raise ValueError("shot distances must be positive")


@dataclass(frozen=True)
class TargetEstimate:
    p_t: np.ndarray
    v_t: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.p_t, dtype=float).reshape(3)
        v = np.asarray(self.v_t, dtype=float).reshape(3)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
            raise ValueError("target estimate must be finite")
        object.__setattr__(self, "p_t", p)
        object.__setattr__(self, "v_t", v)


@dataclass(frozen=True)
class CineWeights:
    """Cost weights of the leader reference problem."""

    alpha1: float = 10.0   # shooting-angle term
    alpha2: float = 1.0    # terminal planar goal term
    q_z_min: float = 0.5   # minimum height above the target

    def __post_init__(self):
        if self.alpha1 < 0.0 or self.alpha2 < 0.0 or self.q_z_min < 0.0:
            raise ValueError("weights must be non-negative")


def predict_target(est: TargetEstimate, N: int, dt: float) -> np.ndarray:
    """Constant-velocity prediction: (N+1, 3) positions from the estimate."""
    k = np.arange(N + 1)[:, None]
    return est.p_t[None, :] + k * dt * est.v_t[None, :]


def terminal_goal(shot: ShotCommand, target_pred: np.ndarray, leader_now: PosState,
                  dt: float = 0.2, orbit_phase: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Desired terminal planar (position, velocity) for the shot type.

    Height is never part of the goal; the optimizer picks altitude from
    the shooting-angle cost. For a near-stationary target the offset
    directions fall back to the current leader-to-target bearing.
    """
    pred = np.asarray(target_pred, dtype=float).reshape(-1, 3)
    t_end = pred[-1]
    if len(pred) > 1:
        v_t = (pred[-1] - pred[-2]) / dt
    else:
        v_t = np.zeros(3)
    v_xy = v_t[:2]
    speed = float(np.linalg.norm(v_xy))
    if speed >= SLOW_TARGET_SPEED:
        fwd = v_xy / speed
    else:
        bearing = t_end[:2] - leader_now.p[:2]
        nb = float(np.linalg.norm(bearing))
        fwd = bearing / nb if nb > 1e-9 else np.array([1.0, 0.0])
    left = np.array([-fwd[1], fwd[0]])

    st = shot.shot_type
    if st is ShotType.LATERAL:
        if speed >= SLOW_TARGET_SPEED:
            pos = t_end[:2] + shot.lateral_distance * left
        else:
            # a static target has no well-defined "side"; hold the current
            # bearing instead of chasing a perpetually rotating offset
            pos = t_end[:2] - shot.lateral_distance * fwd
        vel = v_xy
    elif st is ShotType.CHASE:
        pos = t_end[:2] - shot.behind_distance * fwd
        vel = v_xy
    elif st is ShotType.FLY_OVER:
        pos = t_end[:2] + shot.overtake_distance * fwd
        vel = v_xy
    elif st is ShotType.ORBIT:
        c, s = math.cos(orbit_phase), math.sin(orbit_phase)
        off = c * left + s * (-fwd)
        pos = t_end[:2] + shot.lateral_distance * off
        vel = v_xy
    elif st is ShotType.STATIC_FRAME:
        pos = leader_now.p[:2].copy()
        vel = np.zeros(2)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown shot type {st}")
    return pos, vel


def j_psi(q, psi_d: float) -> float:
    """Squared deviation of the camera elevation ratio from tan(psi_d).

    The planar distance is clamped below PLANAR_EPS to keep the cost
    finite and smooth near the vertical.
    """
    q = np.asarray(q, dtype=float).reshape(3)
    rho = max(math.hypot(q[0], q[1]), PLANAR_EPS)
    return (math.tan(psi_d) - q[2] / rho) ** 2


class DivergenceError(RuntimeError):
    """Optimizer produced a non-finite cost; carries the last finite iterate."""

    def __init__(self, msg, last_iterate):
        super().__init__(msg)
        self.last_iterate = last_iterate


@dataclass
class LeaderPlanInfo:
    """Optimizer telemetry for one reference solve."""

    objective: float
    iterations: int
    stationarity: float
    converged: bool
    qz_violation: float


class LeaderPlanner:
    """Reference-trajectory optimizer with a warm-start buffer.

    One instance per leader UAV; not thread-safe across planners, but all
    inputs are immutable snapshots.
    """

    def __init__(self, hz: HorizonConfig, weights: CineWeights | None = None):
        self.hz = hz
        self.weights = weights or CineWeights()
        self._warm: np.ndarray | None = None
        self._Cp1, self._Cv1 = prediction_matrices(hz.N, hz.dt)

    def reset_warm_start(self):
        self._warm = None

    def shift_warm_start(self, steps: int):
        """Advance the stored solution by the replan offset."""
        if self._warm is None or steps <= 0:
            return
        w = np.zeros_like(self._warm)
        if steps < len(w):
            w[:-steps] = self._warm[steps:]
        self._warm = w

    # -- objective --------------------------------------------------------
    def _objective_terms(self, U: np.ndarray, x0: PosState, target_pred: np.ndarray,
                         psi_d: float, goal_p: np.ndarray, goal_v: np.ndarray):
        hz, w = self.hz, self.weights
        N = hz.N
        P = x0.p[None, :] + np.arange(1, N + 1)[:, None] * hz.dt * x0.v[None, :] + self._Cp1 @ U
        Vn = x0.v + hz.dt * np.sum(U, axis=0)
        q = P - target_pred[1:]
        rho = np.maximum(np.hypot(q[:, 0], q[:, 1]), PLANAR_EPS)
        tan_d = math.tan(psi_d)
        err = tan_d - q[:, 2] / rho
        cost_u = float(np.sum(U * U))
        cost_psi = float(np.sum(err * err))
        e_p = goal_p - P[-1, :2]
        e_v = goal_v - Vn[:2]
        cost_n = float(e_p @ e_p + e_v @ e_v)
        viol = np.maximum(0.0, w.q_z_min - q[:, 2])
        cost_qz = float(np.sum(viol * viol))
        total = cost_u + w.alpha1 * cost_psi + w.alpha2 * cost_n + QZ_PENALTY_WEIGHT * cost_qz
        return total, (P, Vn, q, rho, err, viol, e_p, e_v)

    def objective(self, U, x0, target_pred, psi_d, goal_p, goal_v) -> float:
        return self._objective_terms(np.asarray(U, dtype=float), x0, target_pred,
                                     psi_d, goal_p, goal_v)[0]

    def gradient(self, U, x0, target_pred, psi_d, goal_p, goal_v) -> np.ndarray:
        """Analytic gradient of the total objective w.r.t. the stacked inputs."""
        U = np.asarray(U, dtype=float)
        hz, w = self.hz, self.weights
        _, (P, Vn, q, rho, err, viol, e_p, e_v) = self._objective_terms(
            U, x0, target_pred, psi_d, goal_p, goal_v)
        dJdP = np.zeros_like(P)
        # shooting-angle term: d err / d q
        clamped = np.hypot(q[:, 0], q[:, 1]) <= PLANAR_EPS
        inv_rho = 1.0 / rho
        dq = np.zeros_like(q)
        dq[:, 0] = np.where(clamped, 0.0, q[:, 2] * q[:, 0] * inv_rho ** 3)
        dq[:, 1] = np.where(clamped, 0.0, q[:, 2] * q[:, 1] * inv_rho ** 3)
        dq[:, 2] = -inv_rho
        dJdP += w.alpha1 * 2.0 * err[:, None] * dq
        # minimum-height penalty
        dJdP[:, 2] += QZ_PENALTY_WEIGHT * 2.0 * viol * (-1.0)
        # terminal planar state
        dJdP[-1, :2] += w.alpha2 * (-2.0) * e_p
        grad = self._Cp1.T @ dJdP
        grad += 2.0 * U
        grad[:, :2] += hz.dt * w.alpha2 * (-2.0) * e_v[None, :]
        return grad

    # -- feasibility ------------------------------------------------------
    def _feasible(self, U: np.ndarray, v0: np.ndarray) -> np.ndarray:
        """Clip inputs to their box, then sweep forward clamping each input
        so the velocity sequence stays inside its bounds (axes decouple)."""
        hz = self.hz
        U = np.clip(U, hz.u_min, hz.u_max)
        v = v0.copy()
        out = np.empty_like(U)
        for k in range(hz.N):
            lo = (hz.v_min - v) / hz.dt
            hi = (hz.v_max - v) / hz.dt
            out[k] = np.clip(U[k], np.maximum(lo, hz.u_min), np.minimum(hi, hz.u_max))
            v = v + out[k] * hz.dt
        return out

    # -- main entry -------------------------------------------------------
    def plan(self, x0: PosState, shot: ShotCommand, target_pred: np.ndarray,
             t0: float = 0.0, orbit_phase: float = 0.0) -> tuple[Trajectory, LeaderPlanInfo]:
        hz, w = self.hz, self.weights
        v0 = np.clip(x0.v, hz.v_min, hz.v_max)
        if np.any(v0 != x0.v):
            log.warning("initial velocity clamped into bounds")
            x0 = PosState(x0.p, v0)
        target_pred = np.asarray(target_pred, dtype=float).reshape(hz.N + 1, 3)
        goal_p, goal_v = terminal_goal(shot, target_pred, x0, hz.dt, orbit_phase)
        psi_d = shot.shooting_angle

        def f(U):
            return self.objective(U, x0, target_pred, psi_d, goal_p, goal_v)

        U0 = np.zeros((hz.N, 3))
        f0 = f(U0)
        U = U0
        fU = f0
        if self._warm is not None:
            Uw = self._feasible(self._warm.copy(), x0.v)
            fw = f(Uw)
            if fw < f0:
                U, fU = Uw, fw

        step = 1.0 / (2.0 + 4.0 * w.alpha1 + 4.0 * w.alpha2)  # crude Lipschitz guess
        stat = math.inf
        it = 0
        prev_U = prev_g = None
        for it in range(1, MAX_ITERS + 1):
            gU = self.gradient(U, x0, target_pred, psi_d, goal_p, goal_v)
            if not np.all(np.isfinite(gU)) or not math.isfinite(fU):
                raise DivergenceError("non-finite objective", U)
            probe = self._feasible(U - gU, x0.v)
            stat = float(np.max(np.abs(U - probe)))
            if stat <= STATIONARITY_TOL:
                break
            # spectral (Barzilai-Borwein) step estimate, Armijo-safeguarded
            if prev_U is not None:
                s = U - prev_U
                y = gU - prev_g
                sy = float(np.sum(s * y))
                if sy > 1e-12:
                    step = min(max(float(np.sum(s * s)) / sy, 1e-8), 1e3)
            prev_U, prev_g = U.copy(), gU
            accepted = False
            t = step
            for _ in range(40):
                cand = self._feasible(U - t * gU, x0.v)
                fc = f(cand)
                dU = cand - U
                if fc <= fU - 1e-4 * float(np.sum(dU * dU)) / max(t, 1e-12):
                    U, fU = cand, fc
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                break
        else:
            log.info("leader reference hit the iteration cap (%d)", MAX_ITERS)

        self._warm = U.copy()
        traj = trajectory_from_inputs(x0, U, hz.dt, t0)
        q_z = traj.positions()[1:, 2] - target_pred[1:, 2]
        qz_viol = float(np.max(np.maximum(0.0, w.q_z_min - q_z)))
        info = LeaderPlanInfo(objective=fU, iterations=it, stationarity=stat,
                              converged=stat <= STATIONARITY_TOL, qz_violation=qz_viol)
        return traj, info


def plan_leader_reference(x0: PosState, shot: ShotCommand, target_pred,
                          weights: CineWeights | None = None,
                          hz: HorizonConfig | None = None,
                          t0: float = 0.0) -> tuple[Trajectory, LeaderPlanInfo]:
    """One-shot convenience wrapper around LeaderPlanner (no warm start)."""
    hz = hz or HorizonConfig()
    planner = LeaderPlanner(hz, weights)
    return planner.plan(x0, shot, np.asarray(target_pred, dtype=float), t0)
