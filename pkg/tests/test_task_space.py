import numpy as np
import pytest
import yaml
from hypothesis import assume, given
from hypothesis import strategies as st

from passivecbf import dynamics as dy
from passivecbf.manipulability import manipulability
from passivecbf.robot_model import RobotState, forward_kinematics, load_model, matrix_to_rpy
from passivecbf.task_space import (ControllerGains, ReferenceState, RepresentationSingularity, TaskError,
                                   TaskMapConfig, TaskState, damped_quantities, operational_quantities,
                                   pbc_controller, pbc_damped_controller, storage_eval, task_force,
                                   task_jacobian, task_jacobian_batch, task_map, task_position, vdot_direct)


def setup(model, task, q, qd, xr, xrd, gains=None):
    s = RobotState(q, qd)
    jac = dy.task_jacobians(model, s, task)
    d = dy.dynamics_terms(model, s.q, s.qd)
    ts = operational_quantities(d, jac)
    x = task_position(model, s.q, task)
    err = TaskError.between(TaskState(x, jac.J @ s.qd), ReferenceState(xr, xrd))
    g = (gains or ControllerGains()).for_dim(task.m)
    return s, jac, d, ts, err, g


def nonsingular_q(model, task, rng, floor=0.015):
    while True:
        q = rng.uniform(-2, 2, model.n)
        if manipulability(task_jacobian(model, q, task)) >= floor:
            return q


def storage_value(model, task, q, qd, xr, xrd, Kp):
    """V recomputed from scratch, independent of storage_eval."""
    J = task_jacobian(model, q, task)
    M = dy.mass_matrix(model, q)
    Lam = np.linalg.inv(J @ np.linalg.solve(M, J.T))
    xt = task_position(model, q, task) - xr
    xtd = J @ qd - xrd
    return 0.5 * xtd @ Lam @ xtd + 0.5 * xt @ Kp @ xt


def test_task_map_planar(planar, planar_task):
    ts = task_map(planar, RobotState([0.0, 0.0], [0.0, 0.0]), planar_task)
    assert np.allclose(ts.x, [2.0, 0.0], atol=1e-12)
    assert np.array_equal(ts.xd, [0.0, 0.0])


def test_pose6_matches_fk(arm7, rng):
    for _ in range(20):
        q = rng.uniform(-2, 2, 7)
        kin = forward_kinematics(arm7, q)
        x = task_position(arm7, q, TaskMapConfig("pose6"))
        assert np.allclose(x[:3], kin.ee_position, atol=1e-12)
        assert np.allclose(x[3:], matrix_to_rpy(kin.ee_rotation), atol=1e-12)


def test_representation_singularity():
    m = load_model(yaml.safe_dump({
        "gravity": [0, 0, -9.81], "ee_offset": {"translation": [1, 0, 0], "rpy": [0, float(np.pi / 2), 0]},
        "joints": [{"axis": [0, 0, 1], "origin_translation": [0, 0, 0],
                    "link": {"mass": 1.0, "com": [1, 0, 0], "inertia": [0] * 6}}]}))
    with pytest.raises(RepresentationSingularity):
        task_jacobian(m, [0.0], TaskMapConfig("pose6"))
    J = task_jacobian_batch(m, np.zeros((2, 1)), TaskMapConfig("pose6"), on_singular="nan")
    assert np.all(np.isnan(J))
    # position rows are unaffected
    assert np.all(np.isfinite(task_jacobian(m, [0.0], TaskMapConfig("position3"))))


def test_square_jacobian_lambda(planar, rng):
    for _ in range(20):
        q = np.array([rng.uniform(-3, 3), rng.uniform(0.3, 2.8)])
        s, jac, d, ts, _, _ = setup(planar, TaskMapConfig("planar2"), q, rng.uniform(-1, 1, 2), np.zeros(2), np.zeros(2))
        Ji = np.linalg.inv(jac.J)
        assert np.allclose(ts.Lambda, Ji.T @ d.M @ Ji, atol=1e-8)


@pytest.mark.parametrize("mode", ["position3", "pose6"])
def test_lambda_spd_and_jbar_right_inverse(arm7, rng, mode):
    task = TaskMapConfig(mode)
    for _ in range(20):
        q = nonsingular_q(arm7, task, rng)
        s, jac, d, ts, _, _ = setup(arm7, task, q, rng.uniform(-1, 1, 7), np.zeros(task.m), np.zeros(task.m))
        L = ts.Lambda
        assert np.abs(L - L.T).max() <= 1e-8 * np.linalg.norm(L)
        assert np.linalg.eigvalsh(L).min() > 0
        assert np.allclose(jac.J @ ts.Jbar, np.eye(task.m), atol=1e-8)


def test_q_vanishes_at_rest(arm7, rng):
    task = TaskMapConfig("position3")
    _, _, _, ts, _, _ = setup(arm7, task, rng.uniform(-2, 2, 7), np.zeros(7), np.zeros(3), np.zeros(3))
    assert np.allclose(ts.Q, 0.0)


def test_zero_error_storage(arm7, rng):
    task = TaskMapConfig("position3")
    q = rng.uniform(-2, 2, 7)
    x = task_position(arm7, q, task)
    _, jac, d, ts, err, g = setup(arm7, task, q, np.zeros(7), x, np.zeros(3))
    st_ = storage_eval(ts, err, jac, d, g, np.zeros(7))
    assert st_.V == 0.0
    assert st_.Vdot_const == 0.0
    assert not np.any(st_.Vdot_qdd) and not np.any(st_.Vdot_ur)


@pytest.mark.parametrize("mode", ["position3", "pose6"])
def test_closed_form_vdot(arm7, rng, mode):
    task = TaskMapConfig(mode)
    for _ in range(20):
        q, qd = nonsingular_q(arm7, task, rng), rng.uniform(-1, 1, 7)
        xr = task_position(arm7, q, task) + rng.uniform(-0.2, 0.2, task.m)
        xrd, ur = rng.uniform(-0.5, 0.5, task.m), rng.uniform(-2, 2, task.m)
        s, jac, d, ts, err, g = setup(arm7, task, q, qd, xr, xrd)
        f, tau = pbc_controller(ts, err, d, jac, g, qd, ur)
        assert np.allclose(ts.Jbar.T @ tau, f, atol=1e-8 * (1 + np.abs(f).max()))
        qdd = dy.forward_dynamics(arm7, s, tau)
        vdot = storage_eval(ts, err, jac, d, g, qd).vdot(qdd, ur)
        target = -err.xtd @ g.Kd @ err.xtd
        assert abs(vdot - target) <= 1e-6 * (1 + abs(vdot))
        assert vdot_direct(ts, err, jac, g, qd, qdd, ur) == pytest.approx(vdot, rel=1e-9, abs=1e-9)


def test_affine_vdot_matches_numerical_derivative(arm7, rng):
    task = TaskMapConfig("position3")
    h = 1e-5
    for _ in range(20):
        q, qd = nonsingular_q(arm7, task, rng), rng.uniform(-1, 1, 7)
        xr = task_position(arm7, q, task) + rng.uniform(-0.2, 0.2, 3)
        xrd = rng.uniform(-0.5, 0.5, 3)
        qdd, ur = rng.uniform(-3, 3, 7), rng.uniform(-3, 3, 3)
        _, jac, d, ts, err, g = setup(arm7, task, q, qd, xr, xrd)
        vdot = storage_eval(ts, err, jac, d, g, qd).vdot(qdd, ur)
        V = lambda t: storage_value(arm7, task, q + t * qd + 0.5 * t * t * qdd, qd + t * qdd,
                                    xr + t * xrd + 0.5 * t * t * ur, xrd + t * ur, g.Kp)
        fd = (V(h) - V(-h)) / (2 * h)
        assert abs(vdot - fd) <= 1e-3 * (1 + abs(fd))


def test_rest_force_is_gravity_compensation(arm7, rng):
    task = TaskMapConfig("position3")
    q = rng.uniform(-2, 2, 7)
    s, jac, d, ts, err, g = setup(arm7, task, q, np.zeros(7), task_position(arm7, q, task), np.zeros(3))
    f, tau = pbc_controller(ts, err, d, jac, g, np.zeros(7), np.zeros(3))
    assert np.allclose(f, ts.Jbar.T @ d.tau_g, atol=1e-10)
    assert np.allclose(tau, d.tau_g, atol=1e-8)


def test_damped_limit_square(planar, rng):
    task = TaskMapConfig("planar2")
    q, qd = np.array([0.4, 1.3]), np.array([0.3, -0.2])
    xr, xrd = task_position(planar, q, task) + 0.1, np.array([0.1, 0.0])
    _, jac, d, ts, err, g = setup(planar, task, q, qd, xr, xrd)
    ur = np.array([0.5, -0.5])
    f0, tau0 = pbc_controller(ts, err, d, jac, g, qd, ur)
    f1, tau1 = pbc_damped_controller(d, jac, err, g, qd, ur, delta=1e-10)
    assert np.allclose(tau1, tau0, atol=1e-6)
    assert np.allclose(f1, f0, atol=1e-6)


def test_damped_finite_at_singularity(planar):
    task = TaskMapConfig("planar2")
    q, qd = np.array([0.3, 0.0]), np.array([0.1, 0.2])
    s = RobotState(q, qd)
    jac = dy.task_jacobians(planar, s, task)
    d = dy.dynamics_terms(planar, q, qd)
    err = TaskError(np.array([0.1, -0.1]), np.array([0.0, 0.2]))
    f, tau = pbc_damped_controller(d, jac, err, ControllerGains().for_dim(2), qd, np.zeros(2), delta=1e-3)
    assert np.all(np.isfinite(f)) and np.all(np.isfinite(tau))
    tsd = damped_quantities(d, jac, 1e-3)
    assert np.all(np.isfinite(tsd.Lambda))


def test_gain_validation():
    with pytest.raises(ValueError):
        ControllerGains(Kp=-1.0).for_dim(3)
    with pytest.raises(ValueError):
        ControllerGains(Kp=[1.0, 2.0]).for_dim(3)
    with pytest.raises(ValueError):
        ControllerGains(w1=0.0).for_dim(2)
    with pytest.raises(ValueError):
        ControllerGains(w_null=-1.0).for_dim(2)
    g = ControllerGains(Kp=[1.0, 2.0, 3.0]).for_dim(3)
    assert np.array_equal(g.Kp, np.diag([1.0, 2.0, 3.0]))


@given(st.lists(st.floats(-2.5, 2.5), min_size=7, max_size=7), st.lists(st.floats(-1, 1), min_size=7, max_size=7))
def test_lambda_dot_skew(arm7, q, qd):
    task = TaskMapConfig("position3")
    q, qd = np.array(q), np.array(qd)
    assume(manipulability(task_jacobian(arm7, q, task)) >= 0.015)
    _, jac, d, ts, _, _ = setup(arm7, task, q, qd, np.zeros(3), np.zeros(3))
    lam = lambda qq: np.linalg.inv(task_jacobian(arm7, qq, task) @ np.linalg.solve(dy.mass_matrix(arm7, qq), task_jacobian(arm7, qq, task).T))
    h = 1e-6
    Ld = (lam(q + h * qd) - lam(q - h * qd)) / (2 * h)
    S = Ld - 2 * ts.Lambda @ ts.Q @ ts.Jbar
    assert np.linalg.norm(S + S.T) <= 1e-5 * (1 + np.linalg.norm(Ld))
