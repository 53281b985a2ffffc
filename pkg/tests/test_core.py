"""Tests for shared state types and double-integrator kinematics."""
import math

import numpy as np
import pytest

from cineswarm.core import (
    HorizonConfig,
    OriInput,
    OriState,
    PosInput,
    PosState,
    Trajectory,
    prediction_matrices,
    rollout,
    step_ori,
    step_pos,
    trajectory_from_inputs,
    wrap_angle,
)


def test_step_pos_basic():
    x = PosState([0, 0, 0], [1, 0, 0])
    y = step_pos(x, PosInput([0, 2, 0]), 0.2)
    assert np.allclose(y.p, [0.2, 0.04, 0.0], atol=1e-12)
    assert np.allclose(y.v, [1.0, 0.4, 0.0], atol=1e-12)


def test_step_pos_zero_input():
    x = PosState([3, -1, 2], [0.5, 1.0, -0.2])
    y = step_pos(x, PosInput([0, 0, 0]), 0.2)
    assert np.allclose(y.v, x.v, atol=1e-15)
    assert np.allclose(y.p, x.p + x.v * 0.2, atol=1e-15)


def test_step_pos_hand_evaluated():
    # p=(1,1,1), v=(0,0,-1), a=(0,0,2), dt=0.5:
    # p_z' = 1 - 0.5 + 0.5*2*0.25 = 0.75, v_z' = -1 + 1 = 0
    y = step_pos(PosState([1, 1, 1], [0, 0, -1]), PosInput([0, 0, 2]), 0.5)
    assert np.allclose(y.p, [1, 1, 0.75], atol=1e-12)
    assert np.allclose(y.v, [0, 0, 0], atol=1e-12)


def test_step_pos_rejects_bad_input():
    with pytest.raises(ValueError):
        PosState([0, 0, np.nan], [0, 0, 0])
    with pytest.raises(ValueError):
        step_pos(PosState([0, 0, 0], [0, 0, 0]), PosInput([0, 0, 0]), 0.0)


def test_step_ori_basic():
    x = OriState(0.0, 0.0, [1.0, 0.0])
    y = step_ori(x, OriInput([0, 0]), 0.2)
    assert y.heading == pytest.approx(0.2, abs=1e-12)
    assert y.pitch == pytest.approx(0.0, abs=1e-12)


def test_step_ori_wraps_heading():
    # 3.1 + 1*0.2 = 3.3 wraps to 3.3 - 2*pi
    x = OriState(3.1, 0.0, [1.0, 0.0])
    y = step_ori(x, OriInput([0, 0]), 0.2)
    assert y.heading == pytest.approx(3.3 - 2 * math.pi, abs=1e-9)


def test_step_ori_identity():
    x = OriState(0.0, 0.0, [0.0, 0.0])
    y = step_ori(x, OriInput([0, 0]), 0.2)
    assert y.heading == 0.0 and y.pitch == 0.0
    assert np.all(y.rates == 0.0)


def test_wrap_angle_range_and_idempotence():
    for a in np.linspace(-20, 20, 401):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert wrap_angle(w) == pytest.approx(w, abs=1e-12)
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)


def test_rollout_constant_when_at_rest():
    x0 = PosState([1, 2, 3], [0, 0, 0])
    tr = rollout(x0, [PosInput([0, 0, 0])] * 5, 0.2)
    assert all(np.allclose(s.p, x0.p) for s in tr.states)
    assert tr.dynamics_error() == 0.0


def test_rollout_single_step_matches_step_pos():
    x0 = PosState([0, 0, 0], [1, -1, 0])
    u = PosInput([0.3, 0.1, -0.2])
    tr = rollout(x0, [u], 0.2)
    ref = step_pos(x0, u, 0.2)
    assert np.allclose(tr.states[1].p, ref.p)
    assert np.allclose(tr.states[1].v, ref.v)


def test_rollout_random_inputs_dynamics_property():
    rng = np.random.default_rng(1)
    x0 = PosState(rng.normal(size=3), rng.normal(size=3))
    U = rng.uniform(-2, 2, size=(40, 3))
    tr = trajectory_from_inputs(x0, U, 0.2)
    assert tr.n_steps == 40
    assert tr.dynamics_error() <= 1e-9


def test_rollout_linearity_superposition():
    # response to u+w equals response to u plus zero-state response to w
    rng = np.random.default_rng(2)
    x0 = PosState(rng.normal(size=3), rng.normal(size=3))
    U = rng.normal(size=(10, 3))
    W = rng.normal(size=(10, 3))
    a = trajectory_from_inputs(x0, U + W, 0.1)
    b = trajectory_from_inputs(x0, U, 0.1)
    c = trajectory_from_inputs(PosState([0, 0, 0], [0, 0, 0]), W, 0.1)
    for k in range(11):
        assert np.allclose(a.states[k].p, b.states[k].p + c.states[k].p, atol=1e-9)
        assert np.allclose(a.states[k].v, b.states[k].v + c.states[k].v, atol=1e-9)


def test_prediction_matrices_match_rollout():
    N, dt = 12, 0.2
    Cp, Cv = prediction_matrices(N, dt)
    rng = np.random.default_rng(3)
    x0 = PosState(rng.normal(size=3), rng.normal(size=3))
    U = rng.normal(size=(N, 3))
    tr = trajectory_from_inputs(x0, U, dt)
    for ax in range(3):
        p_pred = x0.p[ax] + np.arange(1, N + 1) * dt * x0.v[ax] + Cp @ U[:, ax]
        v_pred = x0.v[ax] + Cv @ U[:, ax]
        assert np.allclose(p_pred, tr.positions()[1:, ax], atol=1e-12)
        assert np.allclose(v_pred, tr.velocities()[1:, ax], atol=1e-12)


def test_trajectory_interpolation():
    tr = trajectory_from_inputs(PosState([0, 0, 0], [1, 0, 0]), np.zeros((4, 3)), 0.5, t0=10.0)
    # linear sampling between knots
    assert np.allclose(tr.position_at(10.25), [0.25, 0, 0])
    assert np.allclose(tr.position_at(9.0), [0, 0, 0])  # clamp before start
    assert np.allclose(tr.position_at(100.0), [2.0, 0, 0])  # clamp after end
    s = tr.state_at(10.25)
    assert np.allclose(s.p, [0.25, 0, 0]) and np.allclose(s.v, [1, 0, 0])


def test_trajectory_shape_validation():
    x = PosState([0, 0, 0], [0, 0, 0])
    with pytest.raises(ValueError):
        Trajectory(0.0, 0.2, (x, x), ())
    with pytest.raises(ValueError):
        Trajectory(0.0, -0.1, (x,), ())


def test_horizon_config_defaults_and_validation():
    hz = HorizonConfig()
    assert hz.N == 40 and hz.dt == 0.2
    assert hz.horizon_seconds == pytest.approx(8.0)
    assert np.all(hz.v_max == 5.0) and np.all(hz.u_max == 2.0)
    with pytest.raises(ValueError):
        HorizonConfig(N=0)
    with pytest.raises(ValueError):
        HorizonConfig(v_min=[1, 1, 1], v_max=[1, 1, 1])
