import numpy as np
import pytest

from passivecbf import dynamics as dy
from passivecbf.checks import proposed_qp_at, random_state
from passivecbf.manipulability import BarrierConfig, ecbf_row
from passivecbf.qp import kkt_residual, solve_qp
from passivecbf.qp_control import TorqueCommand, build_proposed_qp, build_standard_qp
from passivecbf.robot_model import RobotState
from passivecbf.sim import reference_pd
from passivecbf.task_space import (ControllerGains, ReferenceState, TaskError, TaskMapConfig, TaskState,
                                   operational_quantities, pbc_controller, storage_eval, task_force,
                                   task_position)

P2 = TaskMapConfig("planar2")
P3 = TaskMapConfig("position3")


def context(model, task, q, qd, xr, xrd, ur):
    s = RobotState(q, qd)
    g = ControllerGains().for_dim(task.m)
    jac = dy.task_jacobians(model, s, task)
    d = dy.dynamics_terms(model, s.q, s.qd)
    ts = operational_quantities(d, jac)
    x = task_position(model, s.q, task)
    err = TaskError.between(TaskState(x, jac.J @ s.qd), ReferenceState(np.asarray(xr), np.asarray(xrd)))
    ev = ecbf_row(model, s, task, BarrierConfig(), J=jac.J)
    f_des = task_force(ts, err, d, g, s.qd, np.asarray(ur))
    return s, g, jac, d, ts, err, ev, f_des


def test_standard_qp_reproduces_closed_form_when_slack(arm7, rng):
    for _ in range(10):
        s0 = random_state(rng, arm7, P3, mu_floor=0.06, qd_scale=0.1)
        x = task_position(arm7, s0.q, P3)
        s, g, jac, d, ts, err, ev, f_des = context(arm7, P3, s0.q, s0.qd, x + 0.05, np.zeros(3), np.zeros(3))
        assert ev.a @ np.linalg.solve(d.M, pbc_controller(ts, err, d, jac, g, s.qd, np.zeros(3))[1]
                                      - d.C @ s.qd - d.tau_g) >= ev.b
        sol = solve_qp(build_standard_qp(d, ts, jac, ev.constraint_row, f_des, s.qd, g))
        assert sol.ok
        assert np.linalg.norm(ts.Jbar.T @ sol.tau - f_des) <= 1e-6


def test_standard_qp_barrier_active(planar, rng):
    # near the stretched-out boundary; keep the states where the closed form breaks the barrier row
    found = 0
    for _ in range(200):
        q = np.array([rng.uniform(-1, 1), np.arcsin(0.03) + rng.uniform(0.0, 0.05)])
        qd = rng.uniform(-2, 2, 2)
        xr = task_position(planar, q, P2) + rng.uniform(-0.5, 0.5, 2)
        s, g, jac, d, ts, err, ev, f_des = context(planar, P2, q, qd, xr, [0.0, 0.0], [0.0, 0.0])
        tau = pbc_controller(ts, err, d, jac, g, s.qd, np.zeros(2))[1]
        if ev.a @ np.linalg.solve(d.M, tau - d.C @ qd - d.tau_g) >= ev.b:
            continue
        found += 1
        p = build_standard_qp(d, ts, jac, ev.constraint_row, f_des, s.qd, g)
        sol = solve_qp(p)
        assert sol.ok and kkt_residual(p, sol.z) <= 1e-5
        assert np.linalg.norm(ts.Jbar.T @ sol.tau - f_des) > 1e-6
        assert abs(ev.a @ sol.qdd - ev.b) <= 1e-6 * (1 + abs(ev.b))
    assert found >= 10


def test_proposed_at_rest_is_nominal(arm7, rng):
    q = random_state(rng, arm7, P3, mu_floor=0.06).q
    x = task_position(arm7, q, P3)
    xr_des = x + np.array([0.05, -0.02, 0.03])
    g = ControllerGains().for_dim(3)
    ur_nom = reference_pd(x, np.zeros(3), xr_des, g)
    s, g, jac, d, ts, err, ev, f_des = context(arm7, P3, q, np.zeros(7), x, np.zeros(3), ur_nom)
    st = storage_eval(ts, err, jac, d, g, s.qd)
    sol = solve_qp(build_proposed_qp(d, ts, jac, st, ev.constraint_row, f_des, ur_nom, g, s.qd))
    assert sol.ok
    assert np.allclose(sol.ur, ur_nom, atol=1e-6)
    _, tau = pbc_controller(ts, err, d, jac, g, s.qd, ur_nom)
    assert np.allclose(sol.tau, tau, atol=1e-6)


@pytest.mark.parametrize("mode", ["planar2", "position3", "pose6"])
def test_proposed_solution_passive_and_consistent(planar, arm7, rng, mode):
    model = planar if mode == "planar2" else arm7
    task = TaskMapConfig(mode)
    for _ in range(40):
        s = random_state(rng, model, task, mu_floor=0.03)
        x = task_position(model, s.q, task)
        xr, xrd = x + rng.uniform(-0.2, 0.2, task.m), rng.uniform(-0.5, 0.5, task.m)
        ur_nom = rng.uniform(-5, 5, task.m)
        p = proposed_qp_at(model, task, s, xr, xrd, ur_nom)
        sol = solve_qp(p)
        assert sol.ok and sol.kkt_residual <= 1e-5
        # V-dot at the solution, recomputed from the plant
        _, g, jac, d, ts, err, ev, _ = context(model, task, s.q, s.qd, xr, xrd, ur_nom)
        qdd = dy.forward_dynamics(model, s, sol.tau)
        assert np.allclose(qdd, sol.qdd, atol=1e-6 * (1 + np.abs(qdd).max()))
        assert storage_eval(ts, err, jac, d, g, s.qd).vdot(qdd, sol.ur) <= 1e-6
        assert ev.a @ qdd >= ev.b - 1e-6 * (1 + abs(ev.b))


def test_torque_command_rejects_nonfinite():
    TorqueCommand(np.zeros(2), np.zeros(2))
    with pytest.raises(FloatingPointError):
        TorqueCommand(np.array([np.nan, 0.0]), np.zeros(2))


def test_null_space_preference_vanishes_for_square(planar):
    q, qd = np.array([0.3, 1.0]), np.array([0.2, -0.1])
    s, g, jac, d, ts, err, ev, f_des = context(planar, P2, q, qd, [1.0, 1.0], [0.0, 0.0], [0.0, 0.0])
    P = np.eye(2) - jac.J.T @ ts.Jbar.T
    assert np.abs(P).max() <= 1e-10
    a = build_standard_qp(d, ts, jac, None, f_des, s.qd, g)
    b = build_standard_qp(d, ts, jac, None, f_des, s.qd, ControllerGains(w_null=0.0).for_dim(2))
    assert np.allclose(a.H, b.H, atol=1e-9) and np.allclose(a.g, b.g, atol=1e-9)
