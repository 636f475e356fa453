"""Task map, operational-space quantities, the storage function and closed-form PBC."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .robot_model import forward_kinematics, forward_kinematics_batch, matrix_to_rpy

PITCH_GUARD = 1e-6
COND_LIMIT = 1e12


class RepresentationSingularity(ValueError):
    """Euler-angle pitch too close to +-pi/2 for the rpy map to be differentiable."""


class NearSingularityError(ValueError):
    """J M^-1 J^T is too ill-conditioned to invert."""


class TaskMode(str, Enum):
    planar2 = "planar2"
    position3 = "position3"
    pose6 = "pose6"


_DIM = {TaskMode.planar2: 2, TaskMode.position3: 3, TaskMode.pose6: 6}


@dataclass(frozen=True)
class TaskMapConfig:
    mode: TaskMode = TaskMode.pose6
    frame: str = "end_effector"

    def __post_init__(self):
        object.__setattr__(self, "mode", TaskMode(self.mode))

    @property
    def m(self):
        return _DIM[self.mode]


@dataclass
class TaskState:
    x: np.ndarray
    xd: np.ndarray


@dataclass
class ReferenceState:
    xr: np.ndarray
    xrd: np.ndarray


@dataclass
class TaskError:
    xt: np.ndarray
    xtd: np.ndarray

    @classmethod
    def between(cls, task: TaskState, ref: ReferenceState):
        return cls(task.x - ref.xr, task.xd - ref.xrd)


@dataclass
class TaskSpaceQuantities:
    Lambda: np.ndarray
    Jbar: np.ndarray
    Q: np.ndarray


def _diag(v, m):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(m)
    if a.ndim == 1:
        return np.diag(a)
    return a


@dataclass
class ControllerGains:
    """PBC, damping, QP-weight and reference-controller gains.

    Matrix gains accept a scalar or a diagonal and are expanded by :meth:`for_dim`.
    """

    Kp: np.ndarray = 100.0
    Kd: np.ndarray = 20.0
    delta: float = 1e-3
    w1: float = 1.0
    w2: float = 10.0
    Kp_ref: np.ndarray = 2.0
    Kd_ref: np.ndarray = 2.0
    # QP preference for joint-space null-space torques: weight and damping
    w_null: float = 1.0
    d_null: float = 2.0

    def for_dim(self, m):
        g = ControllerGains(_diag(self.Kp, m), _diag(self.Kd, m), float(self.delta), float(self.w1),
                            float(self.w2), _diag(self.Kp_ref, m), _diag(self.Kd_ref, m),
                            float(self.w_null), float(self.d_null))
        g.validate(m)
        return g

    def validate(self, m):
        for name in ("Kp", "Kd", "Kp_ref", "Kd_ref"):
            K = getattr(self, name)
            if K.shape != (m, m):
                raise ValueError(f"gain {name} must be {m}x{m}")
            if np.abs(K - K.T).max() > 1e-12 or np.linalg.eigvalsh(K).min() <= 0:
                raise ValueError(f"gain {name} must be symmetric positive definite")
        for name in ("delta", "w1", "w2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("w_null", "d_null"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class StorageEval:
    """V and the affine form Vdot = const + qdd_coef @ qdd + ur_coef @ ur."""

    V: float
    Vdot_const: float
    Vdot_qdd: np.ndarray
    Vdot_ur: np.ndarray

    def vdot(self, qdd, ur):
        return float(self.Vdot_const + self.Vdot_qdd @ qdd + self.Vdot_ur @ ur)


# ---------------------------------------------------------------------------
# task map and Jacobian

def task_position(model, q, cfg: TaskMapConfig):
    """x(q) without the Jacobian."""
    kin = forward_kinematics(model, q)
    p = kin.ee_position
    if cfg.mode is TaskMode.planar2:
        return p[:2].copy()
    if cfg.mode is TaskMode.position3:
        return p.copy()
    return np.concatenate([p, matrix_to_rpy(kin.ee_rotation)])


def _rpy_batch(R):
    pitch = np.arctan2(-R[:, 2, 0], np.hypot(R[:, 0, 0], R[:, 1, 0]))
    roll = np.arctan2(R[:, 2, 1], R[:, 2, 2])
    yaw = np.arctan2(R[:, 1, 0], R[:, 0, 0])
    return np.stack([roll, pitch, yaw], axis=1)


def _euler_rate_batch(rpy):
    cp, sp = np.cos(rpy[:, 1]), np.sin(rpy[:, 1])
    cy, sy = np.cos(rpy[:, 2]), np.sin(rpy[:, 2])
    E = np.zeros((len(rpy), 3, 3))
    E[:, 0, 0], E[:, 0, 1] = cy * cp, -sy
    E[:, 1, 0], E[:, 1, 1] = sy * cp, cy
    E[:, 2, 0], E[:, 2, 2] = -sp, 1.0
    return E


def task_jacobian_batch(model, Q, cfg: TaskMapConfig, with_x=False, on_singular="raise"):
    """Task Jacobians for a stack of configurations, shape (B, m, n).

    With ``on_singular="nan"`` rows at the Euler-angle singularity are NaN
    instead of raising :class:`RepresentationSingularity`.
    """
    kin = forward_kinematics_batch(model, Q)
    p = kin.ee_position
    Jv = np.swapaxes(np.cross(kin.axes, p[:, None, :] - kin.positions), 1, 2)   # B x 3 x n
    if cfg.mode is TaskMode.planar2:
        J, x = Jv[:, :2], p[:, :2].copy()
    elif cfg.mode is TaskMode.position3:
        J, x = Jv, p.copy()
    else:
        rpy = _rpy_batch(kin.ee_rotation)
        bad = np.abs(np.cos(rpy[:, 1])) < PITCH_GUARD
        if np.any(bad) and on_singular == "raise":
            raise RepresentationSingularity("Euler pitch is at the +-pi/2 singularity")
        E = _euler_rate_batch(rpy)
        E[bad] = np.eye(3)
        Jw = np.swapaxes(kin.axes, 1, 2)
        J = np.concatenate([Jv, np.linalg.solve(E, Jw)], axis=1)
        J[bad] = np.nan
        x = np.concatenate([p, rpy], axis=1)
    return (J, x) if with_x else J


def task_jacobian(model, q, cfg: TaskMapConfig, with_x=False):
    """Analytic J = dx/dq (Euler-angle rates for the pose6 orientation rows)."""
    J, x = task_jacobian_batch(model, np.asarray(q, dtype=float)[None, :], cfg, with_x=True)
    return (J[0], x[0]) if with_x else J[0]


def task_map(model, state, cfg: TaskMapConfig) -> TaskState:
    J, x = task_jacobian(model, state.q, cfg, with_x=True)
    return TaskState(x, J @ state.qd)


# ---------------------------------------------------------------------------
# operational-space quantities

def operational_quantities(dyn, jac) -> TaskSpaceQuantities:
    """Lambda = (J M^-1 J^T)^-1, Jbar = M^-1 J^T Lambda, Q = J M^-1 C - Jdot."""
    J = jac.J
    MinvJt = np.linalg.solve(dyn.M, J.T)
    A = J @ MinvJt
    A = 0.5 * (A + A.T)
    if np.linalg.cond(A) > COND_LIMIT:
        raise NearSingularityError("task-space inertia is singular to working precision")
    Lam = np.linalg.inv(A)
    Lam = 0.5 * (Lam + Lam.T)
    Jbar = MinvJt @ Lam
    Q = J @ np.linalg.solve(dyn.M, dyn.C) - jac.Jdot
    return TaskSpaceQuantities(Lam, Jbar, Q)


def damped_quantities(dyn, jac, delta) -> TaskSpaceQuantities:
    """Regularized counterpart used by the damped controller.

    Jbar is replaced by the damped least-squares inverse J^T (J J^T + delta I)^-1
    and Lambda by (J M^-1 J^T + delta I)^-1, so both stay finite at singularities.
    """
    J = jac.J
    m = J.shape[0]
    Jdls = J.T @ np.linalg.inv(J @ J.T + delta * np.eye(m))
    A = J @ np.linalg.solve(dyn.M, J.T)
    Lam = np.linalg.inv(0.5 * (A + A.T) + delta * np.eye(m))
    Q = J @ np.linalg.solve(dyn.M, dyn.C) - jac.Jdot
    return TaskSpaceQuantities(0.5 * (Lam + Lam.T), Jdls, Q)


def storage_eval(ts, err, jac, dyn, gains, qd) -> StorageEval:
    xt, xtd = err.xt, err.xtd
    Lam = ts.Lambda
    V = 0.5 * xtd @ Lam @ xtd + 0.5 * xt @ gains.Kp @ xt
    const = xtd @ (Lam @ (ts.Q @ (ts.Jbar @ xtd)) + Lam @ (jac.Jdot @ qd) + gains.Kp @ xt)
    return StorageEval(float(max(V, 0.0)), float(const), (Lam @ jac.J).T @ xtd, -Lam.T @ xtd)


def vdot_direct(ts, err, jac, gains, qd, qdd, xrdd):
    """Storage derivative evaluated term by term (no affine split)."""
    xtd = err.xtd
    inner = (ts.Lambda @ ts.Q @ ts.Jbar @ xtd - ts.Lambda @ xrdd
             + ts.Lambda @ (jac.J @ qdd + jac.Jdot @ qd) + gains.Kp @ err.xt)
    return float(xtd @ inner)


def task_force(ts, err, dyn, gains, qd, ur):
    """Desired task force of the closed-form passivity-based law."""
    return (ts.Lambda @ ur + ts.Jbar.T @ dyn.tau_g + ts.Lambda @ ts.Q @ (qd - ts.Jbar @ err.xtd)
            - gains.Kp @ err.xt - gains.Kd @ err.xtd)


def realize_torque(J, Jbar, f, tau_g):
    """tau = J^T f + (I - J^T Jbar^T) tau_g, i.e. gravity compensation in the null space."""
    n = J.shape[1]
    return J.T @ f + (np.eye(n) - J.T @ Jbar.T) @ tau_g


def pbc_controller(ts, err, dyn, jac, gains, qd, ur):
    f = task_force(ts, err, dyn, gains, qd, ur)
    return f, realize_torque(jac.J, ts.Jbar, f, dyn.tau_g)


def pbc_damped_controller(dyn, jac, err, gains, qd, ur, delta=None):
    delta = gains.delta if delta is None else delta
    ts = damped_quantities(dyn, jac, delta)
    f = task_force(ts, err, dyn, gains, qd, ur)
    return f, realize_torque(jac.J, ts.Jbar, f, dyn.tau_g)
