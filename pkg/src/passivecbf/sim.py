"""Closed-loop simulation of the manipulator, its reference system and a controller.

The plant is integrated with semi-implicit Euler at ``dt_sim``; the controller
runs every ``dt_ctrl`` and its torque and reference input are held in between.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

from . import dynamics as dyn_mod
from .manipulability import BarrierConfig, ecbf_row, manipulability
from .qp import QpStatus, solve_qp
from .qp_control import build_proposed_qp, build_standard_qp
from .robot_model import RobotState, load_model_file
from .task_space import (ControllerGains, NearSingularityError, ReferenceState, RepresentationSingularity,
                         TaskError, TaskMapConfig, TaskState, damped_quantities, operational_quantities,
                         pbc_controller, realize_torque, storage_eval, task_force, task_position)

VDOT_TOL = 1e-6
MU_FRACTION = 0.9  # summary counts mu below this fraction of epsilon
SCENARIO_DIR = Path(__file__).parent / "data" / "scenarios"


class Controller(str, Enum):
    unconstrained = "unconstrained"
    damped = "damped"
    standard_qp = "standard_qp"
    proposed_qp = "proposed_qp"
    zero = "zero"  # applies no torque; used for free-motion checks


COMPARED = (Controller.unconstrained, Controller.damped, Controller.standard_qp, Controller.proposed_qp)


class ScenarioError(ValueError):
    pass


class SimulationAbort(RuntimeError):
    """Raised on a non-finite or runaway state. ``rows`` holds the trace so far."""

    def __init__(self, message, row, rows=None):
        super().__init__(message)
        self.row = row
        self.rows = rows or []


@dataclass(frozen=True)
class Disturbance:
    start: float
    end: float
    tau: np.ndarray


@dataclass
class Scenario:
    model_path: str
    task: TaskMapConfig
    controller: Controller
    q0: np.ndarray
    xr_des: np.ndarray
    qd0: np.ndarray = None
    xr0: np.ndarray = None
    xrd0: np.ndarray = None
    gains: ControllerGains = field(default_factory=ControllerGains)
    barrier: BarrierConfig = field(default_factory=BarrierConfig)
    duration: float = 5.0
    dt_sim: float = 1e-3
    dt_ctrl: float = 1.0 / 300.0  # rounded to a whole number of plant steps
    disturbance: tuple = ()
    torque_cap: float = 1e4
    on_controller_error: str = "hold"
    record_timing: bool = False
    name: str = "scenario"
    base_dir: str = None
    model: object = None  # preloaded RobotModel; overrides model_path

    def __post_init__(self):
        self.controller = Controller(self.controller)
        if isinstance(self.task, dict):
            self.task = TaskMapConfig(**self.task)
        elif not isinstance(self.task, TaskMapConfig):
            self.task = TaskMapConfig(self.task)
        self.q0 = np.asarray(self.q0, dtype=float)
        self.xr_des = np.asarray(self.xr_des, dtype=float)
        if not self.duration > 0:
            raise ScenarioError("duration must be positive")
        if not (self.dt_sim > 0 and self.dt_ctrl >= self.dt_sim):
            raise ScenarioError("need dt_ctrl >= dt_sim > 0")
        self.dt_ctrl = max(1, round(self.dt_ctrl / self.dt_sim)) * self.dt_sim
        if self.on_controller_error not in ("hold", "abort"):
            raise ScenarioError("on_controller_error must be 'hold' or 'abort'")

    @property
    def substeps(self):
        """Plant steps per control step."""
        return int(round(self.dt_ctrl / self.dt_sim))

    def load_robot(self):
        return self.model if self.model is not None else load_model_file(self.model_path, self.base_dir)

    def with_controller(self, controller):
        return replace(self, controller=Controller(controller))

    def tau_ext(self, t, n):
        out = np.zeros(n)
        for d in self.disturbance:
            if d.start <= t < d.end:
                out += d.tau
        return out


@dataclass
class TraceRow:
    t: float
    q: np.ndarray
    qd: np.ndarray
    x: np.ndarray
    xr: np.ndarray
    V: float
    Vdot: float
    mu: float
    tau: np.ndarray
    ur: np.ndarray
    status: str
    solve_time: float
    # not exported to CSV
    dissipation: float = float("nan")
    supply: float = 0.0


@dataclass
class Summary:
    controller: str
    steps: int
    min_mu: float
    max_Vdot: float
    final_error: float
    final_target_error: float
    max_abs_tau: float
    mu_violations: int
    vdot_violations: int
    controller_errors: int
    epsilon: float

    def as_dict(self):
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# scenario files

def _floats(v, where):
    try:
        return np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where} must be numeric") from None


def scenario_from_dict(doc, base_dir=None, name="scenario"):
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    for key in ("model", "q0", "xr_des"):
        if key not in doc:
            raise ScenarioError(f"scenario is missing {key!r}")
    try:
        g = doc.get("gains", {}) or {}
        gains = ControllerGains(**{k: (v if np.isscalar(v) else _floats(v, f"gains.{k}")) for k, v in g.items()})
        b = doc.get("barrier", {}) or {}
        barrier = BarrierConfig(epsilon=float(b.get("epsilon", 0.03)), k_alpha=tuple(b.get("k_alpha", (100.0, 20.0))))
        dist = tuple(Disturbance(float(d["start"]), float(d["end"]), _floats(d["tau"], "disturbance.tau"))
                     for d in doc.get("disturbance", []) or [])
    except (TypeError, ValueError, KeyError, AttributeError) as exc:
        raise ScenarioError(f"bad gains, barrier or disturbance entry: {exc}") from exc
    opt = lambda k: None if doc.get(k) is None else _floats(doc[k], k)
    try:
        return Scenario(
            model_path=str(doc["model"]),
            task=TaskMapConfig(doc.get("task", "pose6")),
            controller=doc.get("controller", "proposed_qp"),
            q0=_floats(doc["q0"], "q0"),
            xr_des=_floats(doc["xr_des"], "xr_des"),
            qd0=opt("qd0"), xr0=opt("xr0"), xrd0=opt("xrd0"),
            gains=gains, barrier=barrier,
            duration=float(doc.get("duration", 5.0)),
            dt_sim=float(doc.get("dt_sim", 1e-3)),
            dt_ctrl=float(doc.get("dt_ctrl", 1.0 / 300.0)),
            disturbance=dist,
            torque_cap=float(doc.get("torque_cap", 1e4)),
            on_controller_error=str(doc.get("on_controller_error", "hold")),
            record_timing=bool(doc.get("record_timing", False)),
            name=str(doc.get("name", name)),
            base_dir=None if base_dir is None else str(base_dir),
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc


def load_scenario(path):
    """Load a scenario file; bare names resolve against the bundled scenarios."""
    p = Path(path)
    if not p.is_file():
        alt = SCENARIO_DIR / (p.name if p.suffix else f"{p.name}.yaml")
        if not alt.is_file():
            raise FileNotFoundError(f"scenario file not found: {path}")
        p = alt
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{p}: {exc}") from exc
    return scenario_from_dict(doc, base_dir=p.parent, name=p.stem)


# ---------------------------------------------------------------------------
# controllers

def reference_pd(xr, xrd, xr_des, gains):
    """Nominal reference input  -Kp_ref (xr - xr_des) - Kd_ref xrd."""
    return -gains.Kp_ref @ (xr - xr_des) - gains.Kd_ref @ xrd


@dataclass
class StepResult:
    tau: np.ndarray
    ur: np.ndarray
    status: str
    qdd: np.ndarray = None
    solve_time: float = 0.0


class _Stepper:
    """Evaluates one controller at one control instant."""

    def __init__(self, sc: Scenario, model):
        self.sc = sc
        self.model = model
        self.task = sc.task
        try:
            self.gains = sc.gains.for_dim(sc.task.m)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc
        self.barrier = sc.barrier

    def quantities(self, state, ref):
        jac = dyn_mod.task_jacobians(self.model, state, self.task)
        d = dyn_mod.dynamics_terms(self.model, state.q, state.qd)
        x = task_position(self.model, state.q, self.task)
        ts_state = TaskState(x, jac.J @ state.qd)
        err = TaskError.between(ts_state, ref)
        return jac, d, ts_state, err

    def control(self, kind, state, ref, ur_nom, jac, d, err):
        qd = state.qd
        g = self.gains
        if kind is Controller.zero:
            return StepResult(np.zeros(self.model.n), ur_nom, "ok")
        if kind is Controller.unconstrained:
            ts = operational_quantities(d, jac)
            _, tau = pbc_controller(ts, err, d, jac, g, qd, ur_nom)
            status = "ok"
            if np.abs(tau).max() > self.sc.torque_cap:
                tau = np.clip(tau, -self.sc.torque_cap, self.sc.torque_cap)
                status = "clamped"
            return StepResult(tau, ur_nom, status)
        if kind is Controller.damped:
            tsd = damped_quantities(d, jac, g.delta)
            f = task_force(tsd, err, d, g, qd, ur_nom)
            return StepResult(realize_torque(jac.J, tsd.Jbar, f, d.tau_g), ur_nom, "ok")

        ts = operational_quantities(d, jac)
        row = ecbf_row(self.model, state, self.task, self.barrier, J=jac.J).constraint_row
        f_des = task_force(ts, err, d, g, qd, ur_nom)
        if kind is Controller.standard_qp:
            prob = build_standard_qp(d, ts, jac, row, f_des, qd, g)
        else:
            st = storage_eval(ts, err, jac, d, g, qd)
            prob = build_proposed_qp(d, ts, jac, st, row, f_des, ur_nom, g, qd)
        sol = solve_qp(prob)
        if sol.status is not QpStatus.optimal:
            raise _QpFailure(sol.status.value)
        ur = sol.ur if kind is Controller.proposed_qp else ur_nom
        return StepResult(sol.tau, ur, "optimal", sol.qdd, sol.solve_time)


class _QpFailure(RuntimeError):
    pass


def _log_storage(stepper, d, jac, err, state, tau, tau_ext, ur):
    """V, Vdot (at the realized qdd), dissipation -xtd' Kd xtd and supply xtd' Jbar' tau_ext."""
    g = stepper.gains
    try:
        ts = operational_quantities(d, jac)
    except NearSingularityError:
        return math.nan, math.nan, math.nan, math.nan
    st = storage_eval(ts, err, jac, d, g, state.qd)
    qdd = np.linalg.solve(d.M, tau + tau_ext - d.C @ state.qd - d.tau_g)
    xtd = err.xtd
    return st.V, st.vdot(qdd, ur), float(-xtd @ g.Kd @ xtd), float(xtd @ ts.Jbar.T @ tau_ext)


def run_scenario(sc: Scenario, controller=None):
    """Simulate ``sc``; returns ``(rows, summary)``."""
    kind = Controller(controller) if controller is not None else sc.controller
    model = sc.load_robot()
    n, m = model.n, sc.task.m
    if sc.q0.shape != (n,):
        raise ScenarioError(f"q0 must have {n} entries")
    if sc.xr_des.shape != (m,):
        raise ScenarioError(f"xr_des must have {m} entries")
    q = sc.q0.copy()
    qd = np.zeros(n) if sc.qd0 is None else np.asarray(sc.qd0, float).copy()
    xr = task_position(model, q, sc.task) if sc.xr0 is None else np.asarray(sc.xr0, float).copy()
    xrd = np.zeros(m) if sc.xrd0 is None else np.asarray(sc.xrd0, float).copy()

    stepper = _Stepper(sc, model)
    gains = stepper.gains
    k_sub = sc.substeps
    dt = sc.dt_sim
    dt_ctrl = k_sub * dt
    n_steps = int(round(sc.duration / dt_ctrl))
    rows = []
    tau = np.zeros(n)
    ur = np.zeros(m)
    for k in range(n_steps):
        t = k * dt_ctrl
        state = RobotState(q, qd)
        ref = ReferenceState(xr, xrd)
        tau_ext = sc.tau_ext(t, n)
        ur_nom = reference_pd(xr, xrd, sc.xr_des, gains)
        t0 = time.perf_counter()
        jac = d = err = None
        try:
            jac, d, ts_state, err = stepper.quantities(state, ref)
            res = stepper.control(kind, state, ref, ur_nom, jac, d, err)
            tau, ur, status = res.tau, res.ur, res.status
        except (NearSingularityError, RepresentationSingularity, _QpFailure, np.linalg.LinAlgError) as exc:
            if sc.on_controller_error == "abort":
                raise SimulationAbort(f"controller failed at row {k}: {exc}", k, rows) from exc
            status = f"error:{type(exc).__name__}" if not isinstance(exc, _QpFailure) else f"qp_{exc}"
            ur = ur_nom
        elapsed = time.perf_counter() - t0 if sc.record_timing else 0.0

        if jac is not None:
            V, Vdot, diss, supply = _log_storage(stepper, d, jac, err, state, tau, tau_ext, ur)
            mu = manipulability(jac.J)
            x = ts_state.x
        else:
            V = Vdot = diss = math.nan
            supply = 0.0
            x = task_position(model, q, sc.task)
            mu = math.nan
        rows.append(TraceRow(t, q.copy(), qd.copy(), x.copy(), xr.copy(), V, Vdot, mu, tau.copy(),
                             np.asarray(ur, float).copy(), status, elapsed, diss, supply))

        for j in range(k_sub):
            ts_ = t + j * dt
            te = sc.tau_ext(ts_, n)
            qdd = dyn_mod.forward_dynamics(model, RobotState(q, qd), tau, te)
            qd = qd + dt * qdd
            q = q + dt * qd
            xrd = xrd + dt * ur
            xr = xr + dt * xrd
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd)) and np.abs(qd).max() < 1e8):
            raise SimulationAbort(f"state diverged after row {k}", k, rows)
    return rows, summarize(rows, sc, kind)


def summarize(rows, sc, kind=None):
    mu = np.array([r.mu for r in rows])
    vd = np.array([r.Vdot for r in rows])
    last = rows[-1]
    return Summary(
        controller=(kind or sc.controller).value,
        steps=len(rows),
        min_mu=float(np.nanmin(mu)) if np.any(np.isfinite(mu)) else math.nan,
        max_Vdot=float(np.nanmax(vd)) if np.any(np.isfinite(vd)) else math.nan,
        final_error=float(np.linalg.norm(last.x - last.xr)),
        final_target_error=float(np.linalg.norm(last.x - sc.xr_des)),
        max_abs_tau=float(max(np.abs(r.tau).max() for r in rows)),
        mu_violations=int(np.sum(mu < MU_FRACTION * sc.barrier.epsilon)),
        vdot_violations=int(np.sum(vd > VDOT_TOL)),
        controller_errors=int(sum(r.status.startswith(("error", "qp_")) for r in rows)),
        epsilon=sc.barrier.epsilon,
    )


def simulate_free(model, q0, qd0, duration, dt=1e-3, tau=None):
    """Integrate the plant alone under a constant torque (default zero)."""
    q, qd = np.asarray(q0, float).copy(), np.asarray(qd0, float).copy()
    tau = np.zeros(model.n) if tau is None else tau
    qs, qds = [q.copy()], [qd.copy()]
    for _ in range(int(round(duration / dt))):
        qdd = dyn_mod.forward_dynamics(model, RobotState(q, qd), tau)
        qd = qd + dt * qdd
        q = q + dt * qd
        qs.append(q.copy())
        qds.append(qd.copy())
    return np.array(qs), np.array(qds)
