"""Joint-space rigid-body dynamics  M(q) qdd + C(q, qd) qd + tau_g(q) = tau.

All spatial quantities are expressed in world coordinates at the world origin,
as 6-vectors ``[angular; linear]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .robot_model import forward_kinematics, forward_kinematics_batch
from .task_space import task_jacobian, task_jacobian_batch

FD_STEP = 1e-6


@dataclass
class DynamicsTerms:
    M: np.ndarray
    C: np.ndarray
    tau_g: np.ndarray


@dataclass
class TaskJacobians:
    J: np.ndarray
    Jdot: np.ndarray


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _motion_axes(kin):
    # S_i = [z_i; p_i x z_i]
    return np.hstack([kin.axes, np.cross(kin.positions, kin.axes)])


def _body_inertias(model, kin):
    """Spatial inertia of each link about the world origin."""
    out = np.empty((model.n, 6, 6))
    for i, link in enumerate(model.links):
        R = kin.rotations[i]
        c = kin.positions[i] + R @ link.com
        cx = _skew(c)
        Ic = R @ link.inertia @ R.T
        m = link.mass
        out[i, :3, :3] = Ic + m * cx @ cx.T
        out[i, :3, 3:] = m * cx
        out[i, 3:, :3] = m * cx.T
        out[i, 3:, 3:] = m * np.eye(3)
    return out


def _skew_batch(v):
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def mass_matrix_batch(model, Q):
    """Composite-rigid-body algorithm for a stack of configurations, (B, n, n)."""
    kin = forward_kinematics_batch(model, Q)
    B, n = kin.axes.shape[:2]
    S = np.concatenate([kin.axes, np.cross(kin.positions, kin.axes)], axis=-1)      # B x n x 6
    com = np.array([l.com for l in model.links])
    Iloc = np.array([l.inertia for l in model.links])
    mass = np.array([l.mass for l in model.links])
    R = kin.rotations
    c = kin.positions + np.einsum("bnij,nj->bni", R, com)
    cx = _skew_batch(c)
    I = np.empty((B, n, 6, 6))
    I[..., :3, :3] = R @ Iloc @ np.swapaxes(R, -1, -2) + mass[:, None, None] * (cx @ np.swapaxes(cx, -1, -2))
    I[..., :3, 3:] = mass[:, None, None] * cx
    I[..., 3:, :3] = mass[:, None, None] * np.swapaxes(cx, -1, -2)
    I[..., 3:, 3:] = mass[:, None, None] * np.eye(3)
    M = np.empty((B, n, n))
    Ic = np.zeros((B, 6, 6))
    for i in range(n - 1, -1, -1):
        Ic = Ic + I[:, i]
        F = np.einsum("bij,bj->bi", Ic, S[:, i])
        # composite inertia of the subtree rooted at i couples i with every j <= i
        row = np.einsum("bjk,bk->bj", S[:, : i + 1], F)
        M[:, i, : i + 1] = row
        M[:, : i + 1, i] = row
    M[:, np.arange(n), np.arange(n)] += model.armature
    return M


def mass_matrix(model, q):
    """Composite-rigid-body algorithm."""
    return mass_matrix_batch(model, np.asarray(q, dtype=float)[None, :])[0]


def _crm(v):
    """Spatial motion cross-product operator v x."""
    w, u = _skew(v[:3]), _skew(v[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = w
    out[3:, :3] = u
    out[3:, 3:] = w
    return out


def inverse_dynamics(model, q, qd, qdd, gravity=None):
    """Recursive Newton-Euler: tau = M qdd + C qd + tau_g."""
    kin = forward_kinematics(model, q)
    S = _motion_axes(kin)
    I = _body_inertias(model, kin)
    g = model.gravity if gravity is None else gravity
    n = model.n
    v = np.zeros(6)
    a = np.concatenate([np.zeros(3), -np.asarray(g, dtype=float)])
    f = np.empty((n, 6))
    for i in range(n):
        vJ = S[i] * qd[i]
        v_new = v + vJ
        a = a + S[i] * qdd[i] + _crm(v_new) @ vJ
        v = v_new
        h = I[i] @ v
        f[i] = I[i] @ a - _crm(v).T @ h
    tau = np.empty(n)
    acc = np.zeros(6)
    for i in range(n - 1, -1, -1):
        acc = acc + f[i]
        tau[i] = S[i] @ acc
    return tau + model.armature * qdd


def gravity_torques(model, q):
    z = np.zeros(model.n)
    return inverse_dynamics(model, q, z, z)


def bias_torques(model, q, qd):
    """C(q, qd) qd + tau_g(q)."""
    return inverse_dynamics(model, q, qd, np.zeros(model.n))


def mass_matrix_derivatives(model, q, h=FD_STEP):
    """dM/dq_k stacked as (n, n, n), central differences."""
    q = np.asarray(q, dtype=float)
    steps = h * np.eye(model.n)
    Mp = mass_matrix_batch(model, q + steps)
    Mm = mass_matrix_batch(model, q - steps)
    return (Mp - Mm) / (2 * h)


def coriolis_matrix(model, q, qd, dM=None):
    """C from Christoffel symbols of the first kind, so Mdot - 2C is skew."""
    if dM is None:
        dM = mass_matrix_derivatives(model, q)
    qd = np.asarray(qd, dtype=float)
    # dM[k, i, j] = dM_ij / dq_k
    t1 = np.einsum("kij,k->ij", dM, qd)
    t2 = np.einsum("jik,k->ij", dM, qd)
    t3 = np.einsum("ijk,k->ij", dM, qd)
    return 0.5 * (t1 + t2 - t3)


def dynamics_terms(model, q, qd) -> DynamicsTerms:
    return DynamicsTerms(mass_matrix(model, q), coriolis_matrix(model, q, qd), gravity_torques(model, q))


def task_jacobians(model, state, task, h=FD_STEP) -> TaskJacobians:
    """J at q and Jdot by central differencing J along qd."""
    q, qd = state.q, state.qd
    J = task_jacobian(model, q, task)
    if not np.any(qd):
        return TaskJacobians(J, np.zeros_like(J))
    Jp, Jm = task_jacobian_batch(model, np.stack([q + h * qd, q - h * qd]), task)
    return TaskJacobians(J, (Jp - Jm) / (2 * h))


def forward_dynamics(model, state, tau, tau_ext=None):
    """qdd = M^-1 (tau + tau_ext - C qd - tau_g)."""
    rhs = np.asarray(tau, dtype=float) - bias_torques(model, state.q, state.qd)
    if tau_ext is not None:
        rhs = rhs + tau_ext
    return np.linalg.solve(mass_matrix(model, state.q), rhs)


def kinetic_energy(model, q, qd):
    return 0.5 * qd @ mass_matrix(model, q) @ qd
