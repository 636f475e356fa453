"""Manipulability index and the exponential barrier that keeps it above a floor."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .task_space import task_jacobian, task_jacobian_batch

FD_STEP = 1e-6
# step for the second directional difference of mu; a nested 1e-6 difference
# of the gradient loses about four digits to round-off
CURVATURE_STEP = 1.5e-4
MU_MIN = 1e-10


class SingularInputError(ValueError):
    pass


class OutsideSafeSetError(ValueError):
    """Barrier is negative. ``row`` carries the (still usable) constraint."""

    def __init__(self, message, row):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class BarrierConfig:
    epsilon: float = 0.03
    k_alpha: tuple = (100.0, 20.0)

    def __post_init__(self):
        a1, a2 = self.k_alpha
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not (a1 > 0 and a2 > 0):
            raise ValueError("k_alpha entries must be positive")
        # s^2 + a2 s + a1 needs real negative roots
        if a2 * a2 < 4 * a1 - 1e-12:
            raise ValueError(f"k_alpha={self.k_alpha} gives complex barrier poles")


@dataclass
class BarrierEval:
    mu: float
    Jmu: np.ndarray
    Jmu_dot_qd: float
    h: float
    hdot: float
    a: np.ndarray
    b: float
    singular_values: np.ndarray = field(default=None)

    @property
    def constraint_row(self):
        return self.a, self.b


def manipulability(J):
    """sqrt(det(J J^T)), evaluated as the product of the singular values of J.

    The product form stays accurate at singular configurations, where the
    determinant of J J^T is dominated by cancellation error.
    """
    return float(np.prod(np.linalg.svd(J, compute_uv=False)))


def manipulability_batch(J):
    """Manipulability of a stack of Jacobians (B, m, n); NaN rows stay NaN."""
    J = np.asarray(J, dtype=float)
    bad = ~np.all(np.isfinite(J), axis=(1, 2))
    out = np.prod(np.linalg.svd(np.where(bad[:, None, None], 0.0, J), compute_uv=False), axis=1)
    out[bad] = np.nan
    return out


def _gradients(model, Qb, task, h):
    """d mu / dq at each row of ``Qb`` via mu * trace(dJ/dq_i J^+)."""
    B, n = Qb.shape
    steps = h * np.eye(n)
    probes = np.concatenate([Qb[:, None, :] + steps, Qb[:, None, :] - steps], axis=1).reshape(-1, n)
    Jall = task_jacobian_batch(model, np.concatenate([Qb, probes]), task)
    J, Jpm = Jall[:B], Jall[B:].reshape(B, 2, n, *Jall.shape[1:])
    dJ = (Jpm[:, 0] - Jpm[:, 1]) / (2 * h)                        # B x n x m x n
    out = np.empty((B, n))
    for b in range(B):
        mu = manipulability(J[b])
        if mu < MU_MIN:
            raise SingularInputError(f"manipulability {mu:.3e} too small for a gradient")
        Jpinv = J[b].T @ np.linalg.inv(J[b] @ J[b].T)
        # trace(dJ_i Jpinv) for every i at once
        out[b] = mu * np.einsum("imn,nm->i", dJ[b], Jpinv)
    return out


def manipulability_gradient(model, q, task, h=FD_STEP):
    """d mu / dq via mu * trace(dJ/dq_i J^+)."""
    return _gradients(model, np.asarray(q, dtype=float)[None, :], task, h)[0]


def ecbf_row(model, state, task, cfg: BarrierConfig, J=None, h=FD_STEP, strict=False) -> BarrierEval:
    """Linear constraint a @ qdd >= b enforcing the second-order barrier condition.

    With ``strict`` an :class:`OutsideSafeSetError` is raised for h < 0; by
    default the row is returned regardless so the barrier dynamics can recover.
    """
    q, qd = state.q, state.qd
    if J is None:
        J = task_jacobian(model, q, task)
    mu = manipulability(J)
    Jmu = _gradients(model, q[None, :], task, h)[0]
    speed = float(np.linalg.norm(qd))
    if speed > 0:
        # Jmu_dot qd = qd^T (d^2 mu / dq^2) qd, a second difference along qd
        s = CURVATURE_STEP * qd / speed
        Jp, Jm = task_jacobian_batch(model, np.stack([q + s, q - s]), task)
        curv = (manipulability(Jp) - 2.0 * mu + manipulability(Jm)) / CURVATURE_STEP ** 2
        Jmu_dot_qd = float(curv * speed * speed)
    else:
        Jmu_dot_qd = 0.0
    a1, a2 = cfg.k_alpha
    bar = mu - cfg.epsilon
    hdot = float(Jmu @ qd)
    b = -Jmu_dot_qd - a1 * bar - a2 * hdot
    out = BarrierEval(mu, Jmu, Jmu_dot_qd, bar, hdot, Jmu.copy(), float(b),
                      np.linalg.svd(J, compute_uv=False))
    if strict and bar < 0:
        raise OutsideSafeSetError(f"state outside safe set: mu={mu:.4g} < epsilon={cfg.epsilon}", out)
    return out
