"""Convex QP engine and the two planners built on it.

One operator-splitting (ADMM) solver with an active-set polish step backs
both the corridor-constrained positional tracking QP and the decoupled
heading/pitch MPC. States are eliminated through the exact discrete
dynamics ("condensing"), so decision variables are only the stacked
control inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import (
    HorizonConfig,
    OriInput,
    OriState,
    PosState,
    Trajectory,
    prediction_matrices,
    trajectory_from_inputs,
    wrap_angle,
)
from .corridor import SafeCorridor

DEFAULT_BETA = 0.05
DEFAULT_GAMMA = 2.0
SLACK_WEIGHT = 1e4
SLACK_LIMIT = 0.5


class CorridorInfeasibleError(RuntimeError):
    """The corridor QP stayed infeasible even with slack variables."""

    def __init__(self, msg, max_slack=math.inf):
        super().__init__(msg)
        self.max_slack = max_slack


@dataclass(frozen=True)
class OriConfigRef:
    """Input-effort weights of the tracking QPs."""

    gamma: float = DEFAULT_GAMMA  # orientation input weight
    beta: float = DEFAULT_BETA    # positional input weight

    def __post_init__(self):
        if self.gamma <= 0.0 or self.beta <= 0.0:
            raise ValueError("weights must be positive")


@dataclass
class QpProblem:
    """min 0.5 z'Hz + g'z  s.t.  A z <= b,  lo <= z <= hi."""

    H: np.ndarray
    g: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        n = len(self.g)
        if self.H.shape != (n, n):
            raise ValueError("H/g dimension mismatch")
        if not np.allclose(self.H, self.H.T, atol=1e-10):
            raise ValueError("H must be symmetric")
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        else:
            self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
            self.b = np.asarray(self.b, dtype=float).reshape(-1)
            if len(self.A) != len(self.b):
                raise ValueError("A/b dimension mismatch")
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float).reshape(n)
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).reshape(n)


@dataclass
class QpSolution:
    z: np.ndarray
    status: str  # "optimal" | "max_iter" | "infeasible"
    primal_residual: float = math.inf
    dual_residual: float = math.inf
    kkt_gap: float = math.inf
    iterations: int = 0
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))  # multipliers on [A; I]

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def solve_qp(p: QpProblem, warm_start: np.ndarray | None = None,
             tol: float = 1e-6, max_iter: int = 4000) -> QpSolution:
    """Operator-splitting (ADMM) solve with an active-set polish.

    Deterministic for identical inputs. Stacks general rows and the box
    into one constraint set C z in [l, u] and terminates on infinity-norm
    primal/dual residuals below ``tol``. The splitting iteration supplies
    an active-set guess; a periodic polish refines it to full accuracy,
    so termination usually happens well before the residuals themselves
    reach the tolerance.
    """
    n = len(p.g)
    m_ineq = len(p.b)
    H = p.H
    g = p.g
    C = np.vstack([p.A, np.eye(n)])
    l = np.concatenate([np.full(m_ineq, -np.inf), p.lo])
    u = np.concatenate([p.b, p.hi])
    m = len(u)

    sigma = 1e-6
    rho = 0.03
    alpha = 1.6
    K = H + sigma * np.eye(n) + rho * (C.T @ C)
    try:
        chol = scipy.linalg.cho_factor(K, check_finite=False)
    except np.linalg.LinAlgError:
        return QpSolution(np.zeros(n), "infeasible")

    x = np.zeros(n) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    z = np.clip(C @ x, l, u)
    y = np.zeros(m)

    def residuals(x, z, y):
        rp = float(np.max(np.abs(C @ x - z))) if m else 0.0
        rd = float(np.max(np.abs(H @ x + g + C.T @ y)))
        return rp, rd

    def true_residuals(xc, yc):
        rp = max(0.0, float(np.max(np.maximum(C @ xc - u, l - C @ xc)))) if m else 0.0
        rd = float(np.max(np.abs(H @ xc + g + C.T @ yc)))
        return rp, rd

    it = 0
    next_polish = 50
    polish_gap = 50
    for it in range(1, max_iter + 1):
        rhs = sigma * x - g + C.T @ (rho * z - y)
        x_t = scipy.linalg.cho_solve(chol, rhs, check_finite=False)
        Cx_t = C @ x_t
        x_new = alpha * x_t + (1 - alpha) * x
        z_hat = alpha * Cx_t + (1 - alpha) * z
        z_new = np.minimum(np.maximum(z_hat + y / rho, l), u)
        y_new = y + rho * (z_hat - z_new)
        dy = y_new - y
        x, z, y = x_new, z_new, y_new
        if it % 25 == 0:
            rp, rd = residuals(x, z, y)
            if rp <= tol and rd <= tol:
                break
            # primal infeasibility certificate (OSQP-style)
            ndy = float(np.linalg.norm(dy, np.inf))
            if ndy > 1e-10:
                v = dy / ndy
                if float(np.linalg.norm(C.T @ v, np.inf)) <= 1e-8:
                    support = float(u[np.isfinite(u)] @ np.maximum(v[np.isfinite(u)], 0.0)
                                    + l[np.isfinite(l)] @ np.minimum(v[np.isfinite(l)], 0.0))
                    if support < -1e-10:
                        return QpSolution(x, "infeasible", iterations=it)
            # attempt an early finish once the active-set guess is usable;
            # back off exponentially after failures so a (near-)infeasible
            # problem does not drown in futile polish attempts
            if it >= next_polish:
                x_p, y_p = _polish(p, C, l, u, x, y, passes=4)
                rp_p, rd_p = true_residuals(x_p, y_p)
                if rp_p <= tol and rd_p <= tol:
                    return QpSolution(x_p, "optimal", rp_p, rd_p,
                                      max(rp_p, rd_p), it, y_p)
                polish_gap *= 2
                next_polish = it + polish_gap
            # balance the residuals by rescaling the penalty parameter
            sp = max(float(np.max(np.abs(C @ x))) if m else 0.0,
                     float(np.max(np.abs(z))) if m else 0.0, 1e-12)
            sd = max(float(np.max(np.abs(H @ x))), float(np.max(np.abs(g))),
                     float(np.max(np.abs(C.T @ y))) if m else 0.0, 1e-12)
            ratio = math.sqrt((rp / sp) / max(rd / sd, 1e-16))
            if ratio > 5.0 or ratio < 0.2:
                rho = min(max(rho * ratio, 1e-6), 1e6)
                K = H + sigma * np.eye(n) + rho * (C.T @ C)
                try:
                    chol = scipy.linalg.cho_factor(K, check_finite=False)
                except np.linalg.LinAlgError:
                    return QpSolution(x, "infeasible", iterations=it)

    x_p, y_p = _polish(p, C, l, u, x, y)
    rp_p, rd_p = true_residuals(x_p, y_p)
    rp_r, rd_r = true_residuals(x, y)
    if max(rp_p, rd_p) <= max(rp_r, rd_r):
        x, y, rp, rd = x_p, y_p, rp_p, rd_p
    else:
        rp, rd = rp_r, rd_r
    status = "optimal" if (rp <= tol and rd <= tol) else "max_iter"
    return QpSolution(x, status, rp, rd, max(rp, rd), it, y)


def _polish(p: QpProblem, C, l, u, x, y, passes: int = 8):
    """Refine a solution on the detected active set.

    Solves the equality-constrained KKT system for the working set, then
    repairs it: rows whose multiplier has the wrong sign are dropped and
    rows the candidate violates are added, for a few passes.
    """
    n = len(p.g)
    m = len(u)
    Cx = C @ x
    act_u = ((y > 1e-9) | (Cx > u - 1e-7)) & np.isfinite(u)
    act_l = ((y < -1e-9) | (Cx < l + 1e-7)) & np.isfinite(l) & ~act_u
    best = (x, y)
    best_res = math.inf
    for _ in range(passes):
        act = act_u | act_l
        k = int(np.sum(act))
        if k == 0:
            try:
                x_p = np.linalg.solve(p.H + 1e-12 * np.eye(n), -p.g)
            except np.linalg.LinAlgError:
                break
            nu = np.zeros(0)
        else:
            A_act = C[act]
            KKT = np.block([[p.H, A_act.T], [A_act, np.zeros((k, k))]])
            rhs = np.concatenate([-p.g, np.where(act_u, u, l)[act]])
            try:
                # regularized symmetric solve with one refinement step is
                # much cheaper than lstsq and accurate enough here; fall
                # back to lstsq when the working set is rank deficient
                reg = KKT + 1e-10 * np.diag(np.concatenate([np.ones(n), -np.ones(k)]))
                sol = scipy.linalg.solve(reg, rhs, assume_a="sym", check_finite=False)
                sol += scipy.linalg.solve(reg, rhs - KKT @ sol, assume_a="sym",
                                          check_finite=False)
                if not np.all(np.isfinite(sol)) or \
                        float(np.max(np.abs(KKT @ sol - rhs))) > 1e-9 * max(
                            1.0, float(np.max(np.abs(rhs)))):
                    sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
                try:
                    sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
                except np.linalg.LinAlgError:
                    break
            x_p = sol[:n]
            nu = sol[n:]
        y_p = np.zeros(m)
        if k:
            y_p[act] = nu
        Cxp = C @ x_p
        res_p = max(0.0, float(np.max(np.maximum(Cxp - u, l - Cxp)))) if m else 0.0
        res_d = float(np.max(np.abs(p.H @ x_p + p.g + C.T @ y_p)))
        wrong_u = act_u & (y_p < -1e-9)
        wrong_l = act_l & (y_p > 1e-9)
        res_sign = float(max(np.max(np.abs(y_p[wrong_u]), initial=0.0),
                             np.max(np.abs(y_p[wrong_l]), initial=0.0)))
        total = max(res_p, res_d, res_sign)
        if total < best_res:
            clean = y_p.copy()
            clean[wrong_u] = 0.0
            clean[wrong_l] = 0.0
            best, best_res = (x_p, clean), total
        viol_u = ~(act_u | act_l) & np.isfinite(u) & (Cxp > u + 1e-9)
        viol_l = ~(act_u | act_l) & np.isfinite(l) & (Cxp < l - 1e-9)
        if not (np.any(wrong_u) or np.any(wrong_l) or np.any(viol_u) or np.any(viol_l)):
            break
        act_u = (act_u & ~wrong_u) | viol_u
        act_l = (act_l & ~wrong_l) | viol_l
    return best


def check_kkt(p: QpProblem, sol: QpSolution, tol: float = 1e-5) -> dict:
    """Independent first-order optimality check (used by tests and telemetry).

    Verifies stationarity, primal feasibility, dual feasibility and
    complementary slackness of a solution against its problem data.
    """
    n = len(p.g)
    m_ineq = len(p.b)
    C = np.vstack([p.A, np.eye(n)])
    l = np.concatenate([np.full(m_ineq, -np.inf), p.lo])
    u = np.concatenate([p.b, p.hi])
    z = C @ sol.z
    y = sol.y if len(sol.y) == len(u) else np.zeros(len(u))
    stat = float(np.max(np.abs(p.H @ sol.z + p.g + C.T @ y)))
    prim = max(0.0, float(np.max(np.concatenate([z - u, l - z])))) if len(u) else 0.0
    dual = 0.0
    comp = 0.0
    for i in range(len(u)):
        yi = y[i]
        if yi > 0:
            comp = max(comp, abs(yi * (z[i] - u[i])) if np.isfinite(u[i]) else abs(yi))
        elif yi < 0:
            comp = max(comp, abs(yi * (z[i] - l[i])) if np.isfinite(l[i]) else abs(yi))
    worst = max(stat, prim, dual, comp)
    return {
        "stationarity": stat,
        "primal": prim,
        "complementarity": comp,
        "worst": worst,
        "ok": worst <= tol,
    }


# ---------------------------------------------------------------------------
# corridor-constrained positional QP
# ---------------------------------------------------------------------------

def _condense(hz: HorizonConfig):
    """Block prediction matrices over all three axes (inputs stacked as
    [u_0x u_0y u_0z u_1x ...])."""
    Cp1, Cv1 = prediction_matrices(hz.N, hz.dt)
    Cp = np.kron(Cp1, np.eye(3))
    Cv = np.kron(Cv1, np.eye(3))
    return Cp, Cv


def _free_response(x0: PosState, hz: HorizonConfig):
    k = np.arange(1, hz.N + 1)
    P0 = x0.p[None, :] + k[:, None] * hz.dt * x0.v[None, :]
    V0 = np.tile(x0.v, (hz.N, 1))
    return P0.reshape(-1), V0.reshape(-1)


def plan_in_corridor(x0: PosState, p_d, S: SafeCorridor, hz: HorizonConfig,
                     beta: float = DEFAULT_BETA,
                     warm_start: np.ndarray | None = None,
                     t0: float = 0.0) -> tuple[Trajectory, QpSolution, float]:
    """Track desired positions inside the safe corridor (convex QP).

    Each planned position is constrained to its segment polyhedron and,
    where one exists, to the next segment's polyhedron as well, so the
    chord between consecutive waypoints stays inside a single convex set.
    Returns (trajectory, qp solution, max slack used). On infeasibility a
    single slack-relaxed retry runs; slack beyond SLACK_LIMIT escalates.
    """
    N = hz.N
    p_d = np.asarray(p_d, dtype=float).reshape(N, 3)
    if len(S) != N:
        raise ValueError("corridor length must equal horizon")
    Cp, Cv = _condense(hz)
    P0, V0 = _free_response(x0, hz)

    H = 2.0 * (Cp.T @ Cp + beta * np.eye(3 * N))
    g = 2.0 * Cp.T @ (P0 - p_d.reshape(-1))

    rows_A, rows_b, row_step = [], [], []
    for k in range(1, N + 1):
        polys = [S.polys[k - 1]]
        if k < N and S.polys[k] is not S.polys[k - 1]:
            polys.append(S.polys[k])
        sel = Cp[3 * (k - 1):3 * k, :]
        base = P0[3 * (k - 1):3 * k]
        for poly in polys:
            rows_A.append(poly.normals @ sel)
            rows_b.append(poly.offsets - poly.normals @ base)
            row_step.extend([k] * len(poly.offsets))
    A_poly = np.vstack(rows_A)
    b_poly = np.concatenate(rows_b)
    row_step = np.asarray(row_step)

    A_vel = np.vstack([Cv, -Cv])
    b_vel = np.concatenate([np.tile(hz.v_max, N) - V0, V0 - np.tile(hz.v_min, N)])

    lo = np.tile(hz.u_min, N)
    hi = np.tile(hz.u_max, N)

    prob = QpProblem(H, g, np.vstack([A_poly, A_vel]), np.concatenate([b_poly, b_vel]), lo, hi)
    # a strict solve that has not converged by this point is nearly always
    # infeasible; hand over to the slack retry instead of grinding on
    sol = solve_qp(prob, warm_start=warm_start, max_iter=800)
    if sol.ok:
        traj = trajectory_from_inputs(x0, sol.z.reshape(N, 3), hz.dt, t0)
        return traj, sol, 0.0

    # slack retry: one non-negative slack per step relaxes that step's faces
    n_s = N
    n_u = 3 * N
    H2 = np.zeros((n_u + n_s, n_u + n_s))
    H2[:n_u, :n_u] = H
    H2[n_u:, n_u:] = 2.0 * SLACK_WEIGHT * np.eye(n_s)
    g2 = np.concatenate([g, np.zeros(n_s)])
    A_poly2 = np.hstack([A_poly, np.zeros((len(b_poly), n_s))])
    for r, k in enumerate(row_step):
        A_poly2[r, n_u + (k - 1)] = -1.0
    A_vel2 = np.hstack([A_vel, np.zeros((len(b_vel), n_s))])
    lo2 = np.concatenate([lo, np.zeros(n_s)])
    hi2 = np.concatenate([hi, np.full(n_s, np.inf)])
    prob2 = QpProblem(H2, g2, np.vstack([A_poly2, A_vel2]),
                      np.concatenate([b_poly, b_vel]), lo2, hi2)
    # the failed strict attempt still ends near the relaxed optimum, so it
    # makes a far better warm start for the retry than the previous plan
    ws2 = np.concatenate([sol.z, np.zeros(n_s)])
    sol2 = solve_qp(prob2, warm_start=ws2)
    slack = float(np.max(sol2.z[n_u:])) if sol2.status != "infeasible" else math.inf
    if sol2.status == "infeasible" or slack > SLACK_LIMIT:
        raise CorridorInfeasibleError(f"max slack {slack:.3f} m", slack)
    traj = trajectory_from_inputs(x0, sol2.z[:n_u].reshape(N, 3), hz.dt, t0)
    sol2 = QpSolution(sol2.z[:n_u], sol2.status, sol2.primal_residual,
                      sol2.dual_residual, sol2.kkt_gap, sol2.iterations)
    return traj, sol2, slack


# ---------------------------------------------------------------------------
# orientation
# ---------------------------------------------------------------------------

def desired_orientation(p_self, p_t, prev_heading: float = 0.0) -> tuple[float, float, bool]:
    """Heading/pitch that points the optical axis from p_self at p_t.

    Returns (heading, pitch, is_degenerate); a degenerate pointing vector
    (too short, or vertical for heading) holds ``prev_heading``.
    """
    r = np.asarray(p_t, dtype=float) - np.asarray(p_self, dtype=float)
    norm = float(np.linalg.norm(r))
    if norm < 1e-6:
        return prev_heading, 0.0, True
    planar = math.hypot(r[0], r[1])
    pitch = math.asin(max(-1.0, min(1.0, r[2] / norm)))
    if planar < 1e-9:
        return prev_heading, pitch, True
    return math.atan2(r[1], r[0]), pitch, False


def unwrap_headings(series, start: float) -> np.ndarray:
    """Shortest-path unwrap of a wrapped heading sequence relative to start."""
    out = np.empty(len(series))
    prev = start
    for i, h in enumerate(series):
        prev = prev + wrap_angle(h - prev)
        out[i] = prev
    return out


def plan_orientation(x0: OriState, o_d, hz: HorizonConfig,
                     gamma: float = DEFAULT_GAMMA,
                     warm_start: np.ndarray | None = None):
    """Decoupled heading/pitch MPC (two independent 1-axis QPs).

    ``o_d`` is an (N, 2) array of desired (heading, pitch); headings must
    already be unwrapped relative to x0.heading. Returns (states, inputs,
    solutions) with states of length N+1 (wrapped at the type boundary).
    """
    N = hz.N
    o_d = np.asarray(o_d, dtype=float).reshape(N, 2)
    Cp1, Cv1 = prediction_matrices(N, hz.dt)
    results = []
    xi0 = float(np.clip(x0.pitch, hz.xi_min, hz.xi_max))
    start = [x0.heading, xi0]
    for axis in range(2):
        a0 = start[axis]
        w0 = x0.rates[axis]
        k = np.arange(1, N + 1)
        ang0 = a0 + k * hz.dt * w0
        rate0 = np.full(N, w0)
        H = 2.0 * (Cp1.T @ Cp1 + gamma * np.eye(N))
        g = 2.0 * Cp1.T @ (ang0 - o_d[:, axis])
        A_rows = [Cv1, -Cv1]
        b_rows = [np.full(N, hz.omega_max[axis]) - rate0, rate0 - np.full(N, hz.omega_min[axis])]
        if axis == 1:  # gimbal pitch limits are position constraints
            A_rows += [Cp1, -Cp1]
            b_rows += [np.full(N, hz.xi_max) - ang0, ang0 - np.full(N, hz.xi_min)]
        ws = None
        if warm_start is not None:
            ws = np.asarray(warm_start, dtype=float).reshape(N, 2)[:, axis]
        prob = QpProblem(H, g, np.vstack(A_rows), np.concatenate(b_rows),
                         np.full(N, hz.ou_min[axis]), np.full(N, hz.ou_max[axis]))
        sol = solve_qp(prob, warm_start=ws)
        results.append(sol)

    u = np.column_stack([results[0].z, results[1].z])
    ang = np.array(start, dtype=float)
    rate = x0.rates.copy()
    out_states = [OriState(wrap_angle(ang[0]), ang[1], rate.copy())]
    for kk in range(N):
        ang = ang + rate * hz.dt + 0.5 * u[kk] * hz.dt ** 2
        rate = rate + u[kk] * hz.dt
        out_states.append(OriState(wrap_angle(ang[0]), ang[1], rate.copy()))
    inputs = [OriInput(u[kk]) for kk in range(N)]
    return out_states, inputs, results
