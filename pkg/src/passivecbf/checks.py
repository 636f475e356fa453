"""Randomized invariant suite with independent oracles.

Every check draws its samples from a seeded generator and returns a
:class:`CheckResult`; ``run_all`` is what ``passivecbf check`` executes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import dynamics as dyn_mod
from .manipulability import BarrierConfig, ecbf_row, manipulability, manipulability_gradient
from .qp import QpProblem, QpStatus, kkt_residual, solve_qp
from .qp_control import build_proposed_qp
from .robot_model import RobotState, forward_kinematics_batch, load_model_file
from .sim import reference_pd
from .task_space import (ControllerGains, NearSingularityError, ReferenceState, RepresentationSingularity,
                         TaskError, TaskMapConfig, TaskState, operational_quantities, storage_eval,
                         task_force, task_jacobian, task_position)

FD_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    limit: float
    samples: int
    detail: str = ""

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: worst {self.worst:.3e} (limit {self.limit:.1e}, {self.samples} samples) {self.detail}".rstrip()


def _setups():
    """(model, task) pairs the suites sample from."""
    planar = load_model_file("planar2")
    arm = load_model_file("arm7")
    return [(planar, TaskMapConfig("planar2")), (arm, TaskMapConfig("position3")), (arm, TaskMapConfig("pose6"))]


def random_state(rng, model, task=None, mu_floor=0.0, qd_scale=1.0, tries=1000):
    """Uniform q in [-pi, pi]^n, qd in [-qd_scale, qd_scale]^n, optionally with mu >= mu_floor."""
    for _ in range(tries):
        q = rng.uniform(-np.pi, np.pi, model.n)
        qd = rng.uniform(-qd_scale, qd_scale, model.n)
        if task is None:
            return RobotState(q, qd)
        try:
            J = task_jacobian(model, q, task)
        except RepresentationSingularity:
            continue
        if manipulability(J) >= mu_floor:
            return RobotState(q, qd)
    raise RuntimeError("could not sample a state above the manipulability floor")


def _frob(A):
    return float(np.linalg.norm(A))


# ---------------------------------------------------------------------------
# individual suites

def check_rotations(rng, samples=1000):
    model = load_model_file("arm7")
    Q = rng.uniform(-np.pi, np.pi, (samples, model.n))
    kin = forward_kinematics_batch(model, Q)
    R = np.concatenate([kin.rotations.reshape(-1, 3, 3), kin.ee_rotation])
    orth = np.abs(R @ np.transpose(R, (0, 2, 1)) - np.eye(3)).max()
    det = np.abs(np.linalg.det(R) - 1.0).max()
    worst = float(max(orth, det))
    return CheckResult("rotation orthonormality", worst <= 1e-9, worst, 1e-9, samples)


def check_mass_matrix(rng, samples=200):
    """M symmetric positive definite and each column equal to an inverse-dynamics solve."""
    model = load_model_file("arm7")
    worst, min_eig = 0.0, np.inf
    for _ in range(samples):
        q = rng.uniform(-np.pi, np.pi, model.n)
        M = dyn_mod.mass_matrix(model, q)
        sym = np.abs(M - M.T).max() / (1.0 + np.abs(M).max())
        min_eig = min(min_eig, np.linalg.eigvalsh(M).min())
        g = dyn_mod.inverse_dynamics(model, q, np.zeros(model.n), np.zeros(model.n))
        cols = np.array([dyn_mod.inverse_dynamics(model, q, np.zeros(model.n), e) - g for e in np.eye(model.n)]).T
        worst = max(worst, sym, np.abs(cols - M).max() / (1.0 + np.abs(M).max()))
    ok = worst <= 1e-9 and min_eig > 0
    return CheckResult("mass matrix SPD and CRBA = RNEA", ok, worst, 1e-9, samples, f"min eig {min_eig:.3e}")


def check_joint_skew(rng, samples=500):
    """(Mdot - 2C) + (Mdot - 2C)^T = 0 with Mdot from central differences along qd."""
    worst = 0.0
    setups = _setups()
    for k in range(samples):
        model = setups[k % 2][0]
        s = random_state(rng, model)
        h = FD_STEP
        Mdot = (dyn_mod.mass_matrix(model, s.q + h * s.qd) - dyn_mod.mass_matrix(model, s.q - h * s.qd)) / (2 * h)
        S = Mdot - 2.0 * dyn_mod.coriolis_matrix(model, s.q, s.qd)
        worst = max(worst, _frob(S + S.T) / (1.0 + _frob(Mdot)))
    return CheckResult("Mdot - 2C skew-symmetric", worst <= 1e-6, worst, 1e-6, samples)


def _lambda(model, q, task):
    J = task_jacobian(model, q, task)
    M = dyn_mod.mass_matrix(model, q)
    return np.linalg.inv(J @ np.linalg.solve(M, J.T))


def check_task_skew(rng, samples=500, epsilon=0.03):
    """(Lambda_dot - 2 Lambda Q Jbar) skew-symmetric, Lambda_dot from central differences."""
    worst = 0.0
    setups = _setups()
    done = 0
    while done < samples:
        model, task = setups[done % 3]
        s = random_state(rng, model, task, mu_floor=epsilon / 2)
        try:
            jac = dyn_mod.task_jacobians(model, s, task)
            d = dyn_mod.dynamics_terms(model, s.q, s.qd)
            ts = operational_quantities(d, jac)
            h = FD_STEP
            Ld = (_lambda(model, s.q + h * s.qd, task) - _lambda(model, s.q - h * s.qd, task)) / (2 * h)
        except (RepresentationSingularity, NearSingularityError):
            continue
        S = Ld - 2.0 * ts.Lambda @ ts.Q @ ts.Jbar
        worst = max(worst, _frob(S + S.T) / (1.0 + _frob(Ld)))
        done += 1
    return CheckResult("Lambda_dot - 2 Lambda Q Jbar skew-symmetric", worst <= 1e-5, worst, 1e-5, samples)


def check_gradient(rng, samples=500, epsilon=0.03):
    """J_mu against central differences of mu(q); exact 2-link formula as a second route."""
    worst = 0.0
    setups = _setups()
    done = 0
    while done < samples:
        model, task = setups[done % 3]
        s = random_state(rng, model, task, mu_floor=epsilon)
        h = FD_STEP
        try:
            g = manipulability_gradient(model, s.q, task)
            fd = np.array([(manipulability(task_jacobian(model, s.q + h * e, task))
                            - manipulability(task_jacobian(model, s.q - h * e, task))) / (2 * h)
                           for e in np.eye(model.n)])
        except RepresentationSingularity:
            continue
        worst = max(worst, float(np.abs(g - fd).max()))
        done += 1
    # l1 = l2 = 1: mu = |sin q2|, d mu / d q2 = cos q2 sign(sin q2)
    planar = setups[0][0]
    exact = 0.0
    for _ in range(100):
        q = np.array([rng.uniform(-np.pi, np.pi), rng.uniform(0.05, np.pi - 0.05) * rng.choice([-1, 1])])
        g = manipulability_gradient(planar, q, setups[0][1])
        exact = max(exact, abs(g[1] - np.cos(q[1]) * np.sign(np.sin(q[1]))), abs(g[0]))
    ok = worst <= 1e-5 and exact <= 1e-6
    return CheckResult("manipulability gradient", ok, worst, 1e-5, samples, f"2-link exact error {exact:.3e}")


# ---------------------------------------------------------------------------
# QP oracle

def random_qp(rng, d=None, n_eq=None, n_in=None):
    """Random feasible, bounded convex QP with a PSD (possibly singular) Hessian."""
    d = int(rng.integers(1, 21)) if d is None else d
    n_eq = int(rng.integers(0, min(3, d))) if n_eq is None else n_eq
    n_in = int(rng.integers(0, 4)) if n_in is None else n_in
    r = d if rng.random() < 0.5 else int(rng.integers(1, d + 1))
    L = rng.normal(size=(d, r))
    H = L @ L.T
    # keep the objective bounded below: linear term in the range of H
    g = H @ rng.normal(size=d)
    z_feas = rng.normal(size=d)
    Aeq = rng.normal(size=(n_eq, d))
    A = rng.normal(size=(n_in, d))
    b = A @ z_feas - rng.uniform(0.0, 1.0, n_in) * (rng.random(n_in) < 0.7)
    return QpProblem(H, g, Aeq, Aeq @ z_feas, A, b)


def enumerate_qp(p: QpProblem, tol=1e-7):
    """Exact optimum by trying every subset of inequalities as equalities."""
    best = np.inf
    d = p.d
    for k in range(len(p.Aineq) + 1):
        for S in itertools.combinations(range(len(p.Aineq)), k):
            G = np.vstack([p.Aeq, p.Aineq[list(S)]])
            rhs = np.concatenate([p.beq, p.bineq[list(S)]])
            K = np.block([[p.H, G.T], [G, np.zeros((len(G), len(G)))]])
            sol = np.linalg.lstsq(K, np.concatenate([-p.g, rhs]), rcond=None)[0]
            z = sol[:d]
            scale = 1.0 + np.abs(z).max()
            if len(p.Aeq) and np.abs(p.Aeq @ z - p.beq).max() > tol * scale:
                continue
            if len(p.Aineq) and (p.Aineq @ z - p.bineq).min() < -tol * scale:
                continue
            best = min(best, p.objective(z))
    return best


def check_qp_oracle(rng, samples=200):
    worst = 0.0
    fails = 0
    for _ in range(samples):
        p = random_qp(rng)
        sol = solve_qp(p)
        ref = enumerate_qp(p)
        if sol.status is not QpStatus.optimal:
            fails += 1
            continue
        worst = max(worst, abs(p.objective(sol.z) - ref) / (1.0 + abs(ref)))
    ok = worst <= 1e-5 and fails == 0
    return CheckResult("QP solver vs active-set enumeration", ok, worst, 1e-5, samples, f"non-optimal {fails}")


# ---------------------------------------------------------------------------
# feasibility of the passivity-constrained QP

def proposed_qp_at(model, task, state, xr, xrd, ur_nom, gains=None, barrier=None):
    gains = (gains or ControllerGains()).for_dim(task.m)
    barrier = barrier or BarrierConfig()
    jac = dyn_mod.task_jacobians(model, state, task)
    d = dyn_mod.dynamics_terms(model, state.q, state.qd)
    x = task_position(model, state.q, task)
    err = TaskError.between(TaskState(x, jac.J @ state.qd), ReferenceState(xr, xrd))
    ts = operational_quantities(d, jac)
    row = ecbf_row(model, state, task, barrier, J=jac.J).constraint_row
    f_des = task_force(ts, err, d, gains, state.qd, ur_nom)
    st = storage_eval(ts, err, jac, d, gains, state.qd)
    return build_proposed_qp(d, ts, jac, st, row, f_des, ur_nom, gains, state.qd)


def check_feasibility(rng, samples=1000, epsilon=0.03):
    """Random states with h >= 0 and u_r,nom in [-5, 5]^m: the proposed QP must solve."""
    setups = _setups()
    worst, fails, done = 0.0, 0, 0
    while done < samples:
        model, task = setups[done % 3]
        s = random_state(rng, model, task, mu_floor=epsilon)
        try:
            x = task_position(model, s.q, task)
        except RepresentationSingularity:
            continue
        xr = x + rng.uniform(-0.2, 0.2, task.m)
        xrd = rng.uniform(-0.5, 0.5, task.m)
        ur_nom = rng.uniform(-5.0, 5.0, task.m)
        try:
            p = proposed_qp_at(model, task, s, xr, xrd, ur_nom)
        except (RepresentationSingularity, NearSingularityError):
            continue
        sol = solve_qp(p)
        res = kkt_residual(p, sol.z)
        if sol.status is not QpStatus.optimal or res > 1e-5:
            fails += 1
        worst = max(worst, res)
        done += 1
    return CheckResult("proposed QP feasibility", fails == 0, worst, 1e-5, samples, f"failures {fails}")


def check_energy(rng, states=10, speed=0.3, duration=1.0, dt=1e-3):
    """Gravity-free, torque-free arm: kinetic energy drift over ``duration``.

    Semi-implicit Euler in (q, qd) is not symplectic for a configuration
    dependent mass matrix, so the drift grows with joint speed; states are
    drawn with |qd_i| <= ``speed``.
    """
    from .sim import simulate_free
    model = load_model_file("arm7").with_gravity([0.0, 0.0, 0.0])
    worst, ke_max = 0.0, 0.0
    for _ in range(states):
        q0 = rng.uniform(-np.pi, np.pi, model.n)
        qd0 = rng.uniform(-speed, speed, model.n)
        qs, qds = simulate_free(model, q0, qd0, duration, dt)
        ke = np.array([dyn_mod.kinetic_energy(model, q, qd) for q, qd in zip(qs, qds)])
        worst = max(worst, float(np.abs(ke - ke[0]).max()))
        ke_max = max(ke_max, ke[0])
    return CheckResult("kinetic energy drift", worst <= 1e-4, worst, 1e-4, states,
                       f"|qd_i| <= {speed} rad/s, max KE0 {ke_max:.4f} J")


SUITES = {
    "rotations": check_rotations,
    "mass_matrix": check_mass_matrix,
    "joint_skew": check_joint_skew,
    "task_skew": check_task_skew,
    "gradient": check_gradient,
    "qp_oracle": check_qp_oracle,
    "feasibility": check_feasibility,
    "energy": check_energy,
}


def run_all(seed=0, names=None):
    out = []
    for name in names or SUITES:
        rng = np.random.default_rng([seed, list(SUITES).index(name)])
        out.append(SUITES[name](rng))
    return out
