import numpy as np
import pytest

from passivecbf.robot_model import load_model_file
from passivecbf.sim import (SCENARIO_DIR, Controller, Disturbance, Scenario, ScenarioError, SimulationAbort,
                            load_scenario, reference_pd, run_scenario, scenario_from_dict)
from passivecbf.task_space import ControllerGains


def planar_scenario(**kw):
    base = dict(model_path="planar2", task="planar2", controller="unconstrained", q0=[0.3, 1.2],
                xr_des=[1.2, 1.0], duration=1.0)
    base.update(kw)
    return Scenario(**base)


def test_reference_pd_at_target():
    g = ControllerGains().for_dim(3)
    assert np.array_equal(reference_pd(np.ones(3), np.zeros(3), np.ones(3), g), np.zeros(3))


def test_reference_pd_gain():
    g = ControllerGains().for_dim(3)
    e = np.array([0.1, -0.2, 0.3])
    assert np.allclose(reference_pd(e, np.zeros(3), np.zeros(3), g), -2 * e)


def test_reference_double_integrator_step():
    # poles of s^2 + 2 s + 2: damping 1/sqrt(2), overshoot exp(-pi) ~ 4.3 %
    g = ControllerGains().for_dim(1)
    xr, xrd, dt = np.zeros(1), np.zeros(1), 1e-3
    peak = 0.0
    for _ in range(12000):
        ur = reference_pd(xr, xrd, np.ones(1), g)
        xrd = xrd + dt * ur
        xr = xr + dt * xrd
        peak = max(peak, xr[0])
    assert abs(xr[0] - 1.0) < 1e-4
    assert peak - 1.0 == pytest.approx(np.exp(-np.pi), abs=2e-3)


def test_bundled_scenarios_load():
    names = sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))
    assert {"planar2_unreachable", "proposed_unreachable", "arm7_reachable", "arm7_disturbed"} <= set(names)
    for n in names:
        sc = load_scenario(n)
        model = sc.load_robot()
        assert sc.q0.shape == (model.n,) and sc.xr_des.shape == (sc.task.m,)


@pytest.mark.parametrize("doc", [
    {"q0": [0, 1], "xr_des": [1, 1]},
    {"model": "planar2", "xr_des": [1, 1]},
    {"model": "planar2", "q0": [0, 1], "xr_des": [1, 1], "controller": "bogus"},
    {"model": "planar2", "q0": [0, 1], "xr_des": [1, 1], "dt_ctrl": 1e-4},
    {"model": "planar2", "q0": [0, 1], "xr_des": [1, 1], "duration": -1},
    {"model": "planar2", "q0": [0, 1], "xr_des": [1, 1], "gains": {"Kq": 3}},
    {"model": "planar2", "q0": [0, 1], "xr_des": [1, 1], "barrier": {"epsilon": -1}},
    {"model": "planar2", "q0": [0, 1], "xr_des": [1, 1], "disturbance": [{"start": 0}]},
    {"model": "planar2", "q0": ["a", 1], "xr_des": [1, 1]},
    "not a mapping",
])
def test_bad_scenarios(doc):
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)


def test_control_period_rounds_to_plant_steps():
    sc = planar_scenario()
    assert sc.substeps == 3 and sc.dt_ctrl == pytest.approx(3e-3)
    assert planar_scenario(dt_ctrl=0.0051).substeps == 5


def test_dimension_errors_at_run():
    with pytest.raises(ScenarioError):
        run_scenario(planar_scenario(q0=[0.1, 0.2, 0.3]))
    with pytest.raises(ScenarioError):
        run_scenario(planar_scenario(gains=ControllerGains(Kp=[1.0, 2.0, 3.0])))


def test_missing_scenario_file():
    with pytest.raises(FileNotFoundError):
        load_scenario("/nonexistent/scenario.yaml")


def test_trace_timing_and_passivity():
    sc = planar_scenario()
    rows, summary = run_scenario(sc)
    t = np.array([r.t for r in rows])
    assert len(rows) == round(sc.duration / sc.dt_ctrl)
    assert np.allclose(np.diff(t), sc.dt_ctrl)
    vd = np.array([r.Vdot for r in rows])
    assert vd.max() <= 1e-6
    assert summary.max_Vdot == vd.max() and summary.steps == len(rows)
    assert all(r.status == "ok" for r in rows)


def test_deterministic_runs():
    sc = planar_scenario(controller="proposed_qp", duration=0.3)
    a, _ = run_scenario(sc)
    b, _ = run_scenario(sc)
    for r, s in zip(a, b):
        assert r.q.tobytes() == s.q.tobytes() and r.tau.tobytes() == s.tau.tobytes() and r.Vdot == s.Vdot
        assert r.solve_time == 0.0


@pytest.mark.parametrize("controller", ["unconstrained", "proposed_qp"])
def test_disturbed_supply_rate(controller):
    dist = (Disturbance(0.1, 0.3, np.array([3.0, -2.0])), Disturbance(0.5, 0.6, np.array([-1.0, 4.0])))
    rows, _ = run_scenario(planar_scenario(controller=controller, disturbance=dist, duration=0.8))
    excess = [r.Vdot - r.supply for r in rows]
    assert max(excess) <= 1e-6
    assert max(abs(r.supply) for r in rows) > 1e-3


def test_controller_override():
    sc = planar_scenario(duration=0.03)
    _, s = run_scenario(sc, "damped")
    assert s.controller == "damped"
    with pytest.raises(ValueError):
        run_scenario(sc, "nope")


def test_singular_start_hold_and_abort():
    sc = planar_scenario(q0=[0.3, 0.0], duration=0.03)
    rows, summary = run_scenario(sc)
    assert rows[0].status.startswith("error")
    assert summary.controller_errors >= 1
    with pytest.raises(SimulationAbort) as exc:
        run_scenario(planar_scenario(q0=[0.3, 0.0], duration=0.03, on_controller_error="abort"))
    assert exc.value.row == 0 and exc.value.rows == []


def test_zero_torque_free_motion_conserves_energy():
    from passivecbf.dynamics import kinetic_energy
    model = load_model_file("arm7").with_gravity([0, 0, 0])
    sc = Scenario(model_path="arm7", task="position3", controller=Controller.zero, q0=np.full(7, 0.3),
                  qd0=np.linspace(-0.3, 0.3, 7), xr_des=np.zeros(3), duration=1.0, dt_ctrl=1e-3, model=model)
    rows, _ = run_scenario(sc)
    ke = [kinetic_energy(model, r.q, r.qd) for r in rows]
    assert max(abs(k - ke[0]) for k in ke) <= 1e-4
