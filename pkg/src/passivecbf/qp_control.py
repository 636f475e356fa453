"""Optimization-based passivity controllers.

Decision vector layout: ``z = [qdd (n), tau (n), ur (m)]`` (``ur`` only for the
passivity-constrained controller).

The task-force objective only sees ``Jbar^T tau``; the n - m joint torque
directions that produce no task acceleration are otherwise free. A secondary
cost ``w_null |P (tau - tau_null)|^2`` with ``P = I - J^T Jbar^T`` pulls them
toward gravity compensation plus joint damping, so that the barrier row is not
met by pumping unbounded self-motion. For n = m the projector vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qp import QpProblem, VariableLayout
from .task_space import ControllerGains, realize_torque

REG = 1e-9


@dataclass
class TorqueCommand:
    tau: np.ndarray
    ur_applied: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.tau)) and np.all(np.isfinite(self.ur_applied))):
            raise FloatingPointError("non-finite torque command")


def _nominal(dyn, ts, jac, f_des, qd):
    tau = realize_torque(jac.J, ts.Jbar, f_des, dyn.tau_g)
    qdd = np.linalg.solve(dyn.M, tau - dyn.C @ qd - dyn.tau_g)
    return qdd, tau


def _base(dyn, ts, jac, f_des, qd, layout, gains):
    """Regularization, null-space preference and the dynamics equality."""
    n = layout.n
    d = layout.size
    H = np.zeros((d, d))
    g = np.zeros(d)
    # tie-break the free directions toward the closed-form realization
    qdd_nom, tau_nom = _nominal(dyn, ts, jac, f_des, qd)
    z_nom = np.zeros(d)
    z_nom[layout.qdd], z_nom[layout.tau] = qdd_nom, tau_nom
    H += REG * np.eye(d)
    g -= REG * z_nom
    if gains.w_null > 0:
        P = np.eye(n) - jac.J.T @ ts.Jbar.T
        PtP = P.T @ P
        H[layout.tau, layout.tau] += 2.0 * gains.w_null * PtP
        g[layout.tau] -= 2.0 * gains.w_null * PtP @ (tau_nom - gains.d_null * qd)
    Aeq = np.zeros((n, d))
    Aeq[:, layout.qdd] = dyn.M
    Aeq[:, layout.tau] = -np.eye(n)
    beq = -(dyn.C @ qd + dyn.tau_g)
    return H, g, Aeq, beq


def _rows(rows):
    keep = [(a, b) for a, b in rows if np.any(a) or b > 0]
    if not keep:
        return None, None
    return np.array([a for a, _ in keep]), np.array([b for _, b in keep])


def _with_barrier(rows, barrier_row, layout):
    if barrier_row is not None:
        a, b = barrier_row
        row = np.zeros(layout.size)
        row[layout.qdd] = a
        rows.append((row, b))
    return rows


def _problem(H, g, Aeq, beq, rows, layout):
    A, b = _rows(rows)
    return QpProblem(0.5 * (H + H.T), g, Aeq, beq, A, b, layout)


def build_standard_qp(dyn, ts, jac, barrier_row, f_des, qd, gains=None) -> QpProblem:
    """min |Jbar^T tau - f_des|^2  s.t. dynamics, optional barrier row on qdd."""
    gains = gains or ControllerGains()
    layout = VariableLayout(len(qd))
    H, g, Aeq, beq = _base(dyn, ts, jac, f_des, qd, layout, gains)
    Jb = ts.Jbar
    H[layout.tau, layout.tau] += 2.0 * (Jb @ Jb.T)
    g[layout.tau] -= 2.0 * (Jb @ f_des)
    return _problem(H, g, Aeq, beq, _with_barrier([], barrier_row, layout), layout)


def build_proposed_qp(dyn, ts, jac, storage, barrier_row, f_des, ur_nom, gains, qd,
                      track_reference_force=True) -> QpProblem:
    """min w1 |ur - ur_nom|^2 + w2 |Jbar^T tau - f_des|^2
    s.t. dynamics, Vdot(qdd, ur) <= 0, barrier row on qdd.

    ``f_des`` is the closed-form task force evaluated at ``ur_nom``. With
    ``track_reference_force`` the force target follows the decision variable,
    f_des(ur) = f_des + Lambda (ur - ur_nom), which keeps the objective quadratic.
    """
    n, m = len(qd), len(ur_nom)
    layout = VariableLayout(n, m, has_ur=True)
    H, g, Aeq, beq = _base(dyn, ts, jac, f_des, qd, layout, gains)
    Lam = ts.Lambda if track_reference_force else np.zeros((m, m))
    f0 = f_des - Lam @ ur_nom
    B = np.hstack([ts.Jbar.T, -Lam])            # residual = B [tau; ur] - f0
    sl = slice(layout.tau.start, layout.ur.stop)
    H[sl, sl] += 2.0 * gains.w2 * (B.T @ B)
    g[sl] -= 2.0 * gains.w2 * (B.T @ f0)
    H[layout.ur, layout.ur] += 2.0 * gains.w1 * np.eye(m)
    g[layout.ur] -= 2.0 * gains.w1 * ur_nom + REG * ur_nom
    vrow = np.zeros(layout.size)
    vrow[layout.qdd] = -storage.Vdot_qdd
    vrow[layout.ur] = -storage.Vdot_ur
    rows = _with_barrier([(vrow, storage.Vdot_const)], barrier_row, layout)
    return _problem(H, g, Aeq, beq, rows, layout)
