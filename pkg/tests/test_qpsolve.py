"""Tests for the QP engine, corridor tracking QP and orientation MPC."""
import math

import numpy as np
import pytest

from cineswarm.core import HorizonConfig, OriState, PosState
from cineswarm.corridor import Polyhedron, SafeCorridor
from cineswarm.qpsolve import (
    CorridorInfeasibleError,
    QpProblem,
    check_kkt,
    desired_orientation,
    plan_in_corridor,
    plan_orientation,
    solve_qp,
    unwrap_headings,
)


def _box_poly(center, half):
    normals = np.vstack([np.eye(3), -np.eye(3)])
    c = np.asarray(center, float)
    h = np.asarray(half, float)
    offsets = np.concatenate([c + h, -(c - h)])
    return Polyhedron(normals, offsets)


# -- engine -----------------------------------------------------------------

def test_qp_scalar_unconstrained_interior():
    # min (z-1)^2 within [-10, 10]
    sol = solve_qp(QpProblem(np.array([[2.0]]), np.array([-2.0]), lo=[-10], hi=[10]))
    assert sol.ok
    assert sol.z[0] == pytest.approx(1.0, abs=1e-8)


def test_qp_active_constraint_multiplier():
    # min z^2 s.t. z >= 2  ->  z = 2, multiplier 4 on the active row
    sol = solve_qp(QpProblem(np.array([[2.0]]), np.array([0.0]),
                             A=np.array([[-1.0]]), b=np.array([-2.0])))
    assert sol.ok
    assert sol.z[0] == pytest.approx(2.0, abs=1e-8)
    assert sol.y[0] == pytest.approx(4.0, abs=1e-6)
    assert check_kkt(QpProblem(np.array([[2.0]]), np.array([0.0]),
                               A=np.array([[-1.0]]), b=np.array([-2.0])), sol)["ok"]


def _pg_oracle(H, g, lo, hi, iters=200000):
    """Long-running projected gradient on a box-constrained QP."""
    L = float(np.linalg.eigvalsh(H).max())
    z = np.clip(np.zeros(len(g)), lo, hi)
    for _ in range(iters):
        z_new = np.clip(z - (H @ z + g) / L, lo, hi)
        if np.max(np.abs(z_new - z)) < 1e-12:
            z = z_new
            break
        z = z_new
    return z


def test_qp_matches_projected_gradient_oracle():
    rng = np.random.default_rng(10)
    for _ in range(5):
        n = 30
        M = rng.normal(size=(n, n))
        H = M @ M.T / n + 0.1 * np.eye(n)
        g = rng.normal(size=n)
        lo = rng.uniform(-2, -0.5, size=n)
        hi = rng.uniform(0.5, 2, size=n)
        sol = solve_qp(QpProblem(H, g, lo=lo, hi=hi))
        assert sol.ok
        z_ref = _pg_oracle(H, g, lo, hi)
        f = 0.5 * sol.z @ H @ sol.z + g @ sol.z
        f_ref = 0.5 * z_ref @ H @ z_ref + g @ z_ref
        assert f <= f_ref + 1e-5
        assert abs(f - f_ref) <= 1e-5


def test_qp_random_problems_pass_kkt():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 12))
        M = rng.normal(size=(n, n))
        H = M @ M.T / n + 0.05 * np.eye(n)
        g = rng.normal(size=n)
        m = int(rng.integers(1, 8))
        A = rng.normal(size=(m, n))
        z_feas = rng.normal(size=n) * 0.3
        b = A @ z_feas + rng.uniform(0.1, 1.0, size=m)  # strictly feasible
        lo = z_feas - rng.uniform(0.5, 2.0, size=n)
        hi = z_feas + rng.uniform(0.5, 2.0, size=n)
        p = QpProblem(H, g, A, b, lo, hi)
        sol = solve_qp(p)
        assert sol.ok
        rep = check_kkt(p, sol, tol=1e-5)
        assert rep["ok"], rep


def test_qp_detects_infeasibility():
    # z <= -1 and z >= +1 cannot hold
    p = QpProblem(np.array([[2.0]]), np.array([0.0]),
                  A=np.array([[1.0], [-1.0]]), b=np.array([-1.0, -1.0]))
    sol = solve_qp(p)
    assert sol.status == "infeasible"


def test_qp_deterministic():
    rng = np.random.default_rng(12)
    M = rng.normal(size=(8, 8))
    H = M @ M.T + 0.1 * np.eye(8)
    g = rng.normal(size=8)
    p1 = QpProblem(H, g, lo=np.full(8, -1.0), hi=np.full(8, 1.0))
    p2 = QpProblem(H.copy(), g.copy(), lo=np.full(8, -1.0), hi=np.full(8, 1.0))
    a = solve_qp(p1)
    b = solve_qp(p2)
    assert np.array_equal(a.z, b.z)


# -- corridor QP ------------------------------------------------------------

def test_corridor_qp_stationary_optimum():
    hz = HorizonConfig(N=10)
    x0 = PosState([1.0, 2.0, 3.0], [0, 0, 0])
    S = SafeCorridor([_box_poly(x0.p, [5, 5, 5]) for _ in range(hz.N)])
    p_d = np.tile(x0.p, (hz.N, 1))
    traj, sol, slack = plan_in_corridor(x0, p_d, S, hz)
    assert sol.ok and slack == 0.0
    assert np.max(np.abs(traj.accelerations())) <= 1e-6
    assert np.max(np.abs(traj.positions() - x0.p)) <= 1e-6


def test_corridor_qp_single_step_analytic():
    # 1 step: p1 = 0.5 * u * dt^2 = 0.02 u; tracking p_d = 0.02 with tiny
    # input weight gives u ~= 1
    hz = HorizonConfig(N=1, dt=0.2)
    x0 = PosState([0, 0, 0], [0, 0, 0])
    S = SafeCorridor([_box_poly([0, 0, 0], [10, 10, 10])])
    traj, sol, _ = plan_in_corridor(x0, [[0.02, 0.0, 0.0]], S, hz, beta=1e-9)
    assert sol.ok
    assert traj.inputs[0].a[0] == pytest.approx(1.0, abs=1e-4)


def test_corridor_qp_rides_wall_with_valid_kkt():
    hz = HorizonConfig(N=8)
    x0 = PosState([0, 0, 0], [0, 0, 0])
    # wall at y <= 0.5, target at y = 1
    S = SafeCorridor([
        Polyhedron(np.vstack([np.eye(3), -np.eye(3)]),
                   np.array([10.0, 0.5, 10.0, 10.0, 10.0, 10.0]))
        for _ in range(hz.N)
    ])
    p_d = np.tile([0.0, 1.0, 0.0], (hz.N, 1))
    traj, sol, slack = plan_in_corridor(x0, p_d, S, hz)
    assert sol.ok and slack == 0.0
    ys = traj.positions()[1:, 1]
    assert np.max(ys) <= 0.5 + 1e-6
    assert ys[-1] == pytest.approx(0.5, abs=1e-4)  # presses against the wall
    assert traj.dynamics_error() <= 1e-9


def test_corridor_qp_compliance_random():
    rng = np.random.default_rng(13)
    hz = HorizonConfig(N=12)
    x0 = PosState([0, 0, 0], rng.uniform(-1, 1, 3))
    centers = np.cumsum(rng.uniform(-0.3, 0.3, size=(hz.N, 3)), axis=0)
    S = SafeCorridor([_box_poly(centers[k], [3, 3, 3]) for k in range(hz.N)])
    p_d = centers + rng.uniform(-0.2, 0.2, size=(hz.N, 3))
    traj, sol, slack = plan_in_corridor(x0, p_d, S, hz)
    assert sol.ok
    pos = traj.positions()
    for k in range(1, hz.N + 1):
        assert S.polys[k - 1].max_violation(pos[k]) <= 1e-6
        if k < hz.N:
            assert S.polys[k].max_violation(pos[k]) <= 1e-6
    vel = traj.velocities()
    assert np.all(vel <= hz.v_max + 1e-6) and np.all(vel >= hz.v_min - 1e-6)
    acc = traj.accelerations()
    assert np.all(acc <= hz.u_max + 1e-9) and np.all(acc >= hz.u_min - 1e-9)


def test_corridor_qp_escalates_on_unreachable_corridor():
    hz = HorizonConfig(N=2, dt=0.2)
    x0 = PosState([0, 0, 0], [0, 0, 0])
    far = _box_poly([10.0, 0, 0], [0.5, 0.5, 0.5])  # unreachable in 2 steps
    S = SafeCorridor([far, far])
    with pytest.raises(CorridorInfeasibleError) as ei:
        plan_in_corridor(x0, np.tile([10.0, 0, 0], (2, 1)), S, hz)
    assert ei.value.max_slack > 0.5


# -- orientation ------------------------------------------------------------

def test_desired_orientation_examples():
    h, p, deg = desired_orientation([0, 0, 0], [1, 1, 0])
    assert h == pytest.approx(math.pi / 4, abs=1e-9)
    assert p == pytest.approx(0.0, abs=1e-12)
    assert not deg

    h, p, deg = desired_orientation([0, 0, 0], [0, 0, 5], prev_heading=0.7)
    assert deg and h == pytest.approx(0.7)
    assert p == pytest.approx(math.pi / 2, abs=1e-9)

    h, p, deg = desired_orientation([0, 0, 0], [3, 0, 4])
    assert h == pytest.approx(0.0, abs=1e-12)
    assert p == pytest.approx(0.927295, abs=1e-6)


def test_desired_orientation_degenerate_hold():
    h, p, deg = desired_orientation([1, 1, 1], [1, 1, 1], prev_heading=-0.3)
    assert deg and h == pytest.approx(-0.3) and p == 0.0


def test_unwrap_headings_shortest_path():
    series = [3.0, -3.0, 3.0]  # crosses the seam twice
    out = unwrap_headings(series, 2.9)
    assert out[0] == pytest.approx(3.0)
    assert out[1] == pytest.approx(2 * math.pi - 3.0, abs=1e-9)
    assert np.all(np.abs(np.diff(out)) < math.pi)


def test_plan_orientation_zero_case():
    hz = HorizonConfig(N=10)
    x0 = OriState(0.3, -0.1, [0, 0])
    o_d = np.tile([0.3, -0.1], (hz.N, 1))
    states, inputs, sols = plan_orientation(x0, o_d, hz)
    assert all(s.ok for s in sols)
    assert max(np.max(np.abs(u.theta)) for u in inputs) <= 1e-6
    assert states[-1].heading == pytest.approx(0.3, abs=1e-6)


def test_plan_orientation_monotone_approach():
    hz = HorizonConfig(N=20)
    x0 = OriState(0.0, 0.0, [0, 0])
    o_d = np.tile([0.2, 0.0], (hz.N, 1))
    states, _, sols = plan_orientation(x0, o_d, hz, gamma=50.0)
    assert all(s.ok for s in sols)
    hs = [s.heading for s in states]
    assert all(b >= a - 1e-9 for a, b in zip(hs, hs[1:]))
    assert hs[-1] <= 0.2 + 1e-6


def test_plan_orientation_pitch_limit_active():
    hz = HorizonConfig(N=20)
    x0 = OriState(0.0, 0.0, [0, 0])
    o_d = np.tile([0.0, 2.0], (hz.N, 1))  # beyond the 1.2 rad gimbal limit
    states, _, sols = plan_orientation(x0, o_d, hz, gamma=0.01)
    assert all(s.ok for s in sols)
    pitches = np.array([s.pitch for s in states])
    assert np.max(pitches) <= hz.xi_max + 1e-5
    assert pitches[-1] == pytest.approx(hz.xi_max, abs=1e-3)


def test_plan_orientation_matches_joint_block_problem():
    # concatenated per-axis solves equal one joint block-diagonal QP
    from cineswarm.core import prediction_matrices
    hz = HorizonConfig(N=6)
    x0 = OriState(0.1, -0.2, [0.2, -0.1])
    rng = np.random.default_rng(14)
    o_d = rng.uniform(-0.5, 0.5, size=(hz.N, 2))
    states, inputs, sols = plan_orientation(x0, o_d, hz, gamma=1.0)
    N = hz.N
    Cp1, Cv1 = prediction_matrices(N, hz.dt)
    k = np.arange(1, N + 1)
    blocks_H, blocks_A, gs, bs, los, his = [], [], [], [], [], []
    start = [x0.heading, float(np.clip(x0.pitch, hz.xi_min, hz.xi_max))]
    for axis in range(2):
        ang0 = start[axis] + k * hz.dt * x0.rates[axis]
        rate0 = np.full(N, x0.rates[axis])
        blocks_H.append(2.0 * (Cp1.T @ Cp1 + 1.0 * np.eye(N)))
        gs.append(2.0 * Cp1.T @ (ang0 - o_d[:, axis]))
        A = [Cv1, -Cv1]
        b = [np.full(N, hz.omega_max[axis]) - rate0, rate0 - np.full(N, hz.omega_min[axis])]
        if axis == 1:
            A += [Cp1, -Cp1]
            b += [np.full(N, hz.xi_max) - ang0, ang0 - np.full(N, hz.xi_min)]
        blocks_A.append(np.vstack(A))
        bs.append(np.concatenate(b))
        los.append(np.full(N, hz.ou_min[axis]))
        his.append(np.full(N, hz.ou_max[axis]))
    nH = sum(h.shape[0] for h in blocks_H)
    H = np.zeros((nH, nH))
    H[:N, :N] = blocks_H[0]
    H[N:, N:] = blocks_H[1]
    A = np.zeros((blocks_A[0].shape[0] + blocks_A[1].shape[0], nH))
    A[:blocks_A[0].shape[0], :N] = blocks_A[0]
    A[blocks_A[0].shape[0]:, N:] = blocks_A[1]
    joint = solve_qp(QpProblem(H, np.concatenate(gs), A, np.concatenate(bs),
                               np.concatenate(los), np.concatenate(his)))
    assert joint.ok
    u_sep = np.concatenate([sols[0].z, sols[1].z])
    assert np.max(np.abs(joint.z - u_sep)) <= 1e-8
