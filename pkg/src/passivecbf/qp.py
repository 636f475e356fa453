"""Dense primal active-set solver for small convex QPs.

    minimize    1/2 z^T H z + g^T z
    subject to  Aeq z = beq
                Aineq z >= bineq

Each iteration works in the null space of the working constraints (QR) and
factors the reduced Hessian with a Cholesky decomposition. A feasible start
is found by a phase-1 problem that minimizes the largest normalized violation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class QpStatus(str, Enum):
    optimal = "optimal"
    max_iter = "max_iter"
    infeasible = "infeasible"


@dataclass
class VariableLayout:
    n: int
    m: int = 0
    has_ur: bool = False

    @property
    def qdd(self):
        return slice(0, self.n)

    @property
    def tau(self):
        return slice(self.n, 2 * self.n)

    @property
    def ur(self):
        return slice(2 * self.n, 2 * self.n + self.m) if self.has_ur else slice(0, 0)

    @property
    def size(self):
        return 2 * self.n + (self.m if self.has_ur else 0)


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    Aeq: np.ndarray = None
    beq: np.ndarray = None
    Aineq: np.ndarray = None
    bineq: np.ndarray = None
    layout: VariableLayout = None

    def __post_init__(self):
        d = len(self.g)
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        if self.Aeq is None:
            self.Aeq, self.beq = np.zeros((0, d)), np.zeros(0)
        if self.Aineq is None:
            self.Aineq, self.bineq = np.zeros((0, d)), np.zeros(0)
        self.Aeq = np.atleast_2d(np.asarray(self.Aeq, dtype=float)).reshape(-1, d)
        self.Aineq = np.atleast_2d(np.asarray(self.Aineq, dtype=float)).reshape(-1, d)
        self.beq = np.asarray(self.beq, dtype=float).reshape(-1)
        self.bineq = np.asarray(self.bineq, dtype=float).reshape(-1)
        if self.H.shape != (d, d):
            raise ValueError(f"H must be {d}x{d}")
        if len(self.beq) != len(self.Aeq) or len(self.bineq) != len(self.Aineq):
            raise ValueError("constraint row counts do not match their right-hand sides")
        if np.abs(self.H - self.H.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(self.H).max()):
            raise ValueError("H must be symmetric")

    @property
    def d(self):
        return len(self.g)

    def objective(self, z):
        return float(0.5 * z @ self.H @ z + self.g @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    status: QpStatus
    kkt_residual: float
    iterations: int = 0
    active: tuple = ()
    multipliers: np.ndarray = field(default=None)
    qdd: np.ndarray = None
    tau: np.ndarray = None
    ur: np.ndarray = None
    solve_time: float = 0.0

    @property
    def ok(self):
        return self.status is QpStatus.optimal


def kkt_residual(p: QpProblem, z, act_tol=1e-7):
    """Scaled KKT violation computed from (problem, z) alone.

    Multipliers are re-estimated by least squares on the constraints that are
    active at ``z`` (inequality multipliers restricted to be nonnegative, so
    degenerate vertices are not mistaken for dual infeasibility); the result is
    the max of scaled stationarity, primal infeasibility and dual infeasibility.
    """
    grad = p.H @ z + p.g
    gscale = 1.0 + np.abs(p.H @ z).max(initial=0.0) + np.abs(p.g).max(initial=0.0)
    eq_res = p.Aeq @ z - p.beq
    eq_scale = 1.0 + np.abs(p.Aeq).max(initial=0.0) * np.abs(z).max(initial=0.0) + np.abs(p.beq).max(initial=0.0)
    slack = p.Aineq @ z - p.bineq
    row_norm = np.linalg.norm(p.Aineq, axis=1) if len(p.Aineq) else np.zeros(0)
    in_scale = 1.0 + row_norm * np.abs(z).max(initial=0.0) + np.abs(p.bineq)
    active = np.flatnonzero(slack <= act_tol * in_scale)
    G = np.vstack([p.Aeq, p.Aineq[active]])
    if len(G):
        lam = np.linalg.lstsq(G.T, grad, rcond=None)[0]
        if lam[len(p.Aeq):].min(initial=0.0) < 0.0:
            lam = _signed_lsq(G.T, grad, len(p.Aeq))
        stat = grad - G.T @ lam
        dual = max(0.0, -lam[len(p.Aeq):].min(initial=0.0)) / gscale
    else:
        stat, dual = grad, 0.0
    primal_eq = np.abs(eq_res).max(initial=0.0) / eq_scale
    primal_in = np.max(np.maximum(0.0, -slack) / in_scale, initial=0.0)
    return float(max(np.abs(stat).max(initial=0.0) / gscale, primal_eq, primal_in, dual))


def _signed_lsq(A, b, n_free, max_iter=100):
    """min |A x - b| with x[n_free:] >= 0 (Lawson-Hanson with free leading entries)."""
    k = A.shape[1]
    x = np.zeros(k)
    passive = np.zeros(k, bool)
    passive[:n_free] = True
    tol = 1e-12 * (1.0 + np.abs(A).max()) * (1.0 + np.abs(b).max())

    def ls(mask):
        out = np.zeros(k)
        if mask.any():
            out[mask] = np.linalg.lstsq(A[:, mask], b, rcond=None)[0]
        return out

    if n_free:
        x = ls(passive)
    for _ in range(max_iter):
        w = A.T @ (b - A @ x)
        w[passive] = -np.inf
        j = int(np.argmax(w))
        if w[j] <= tol:
            break
        passive[j] = True
        for _ in range(max_iter):
            s = ls(passive)
            bad = passive.copy()
            bad[:n_free] = False
            bad &= s <= 0.0
            if not bad.any():
                x = s
                break
            alpha = np.min(x[bad] / (x[bad] - s[bad]))
            x = x + alpha * (s - x)
            drop = passive.copy()
            drop[:n_free] = False
            passive &= ~(drop & (x <= tol))
            x[~passive] = 0.0
    return x


def _nullspace(G, d):
    """Orthonormal (range, null) bases for the rows of G and the triangular factor."""
    r = len(G)
    if r == 0:
        return np.zeros((d, 0)), np.eye(d), np.zeros((0, 0))
    Qf, R = np.linalg.qr(G.T, mode="complete")
    return Qf[:, :r], Qf[:, r:], R[:r, :r]


def _reduced_step(H, grad, Z):
    if Z.shape[1] == 0:
        return np.zeros(len(grad))
    Hr = Z.T @ H @ Z
    rhs = -(Z.T @ grad)
    Hr = 0.5 * (Hr + Hr.T)
    try:
        L = np.linalg.cholesky(Hr)
        piv = np.diag(L) ** 2
        if piv.min() > 1e-15 * max(piv.max(), 1.0):
            return Z @ np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    except np.linalg.LinAlgError:
        pass
    # singular curvature on this face: pseudo-inverse step
    w, U = np.linalg.eigh(Hr)
    keep = w > 1e-15 * max(w.max(initial=0.0), 1.0)
    y = U[:, keep] @ ((U[:, keep].T @ rhs) / w[keep])
    return Z @ y


def _active_set(H, g, E, e, A, b, z, working, tol, max_iter):
    """Primal active-set iterations from a feasible z. Returns (z, working, lam, iters, converged)."""
    d = len(z)
    working = list(working)
    neq = len(E)
    zscale = lambda: 1.0 + np.abs(z).max(initial=0.0)
    lam = np.zeros(len(A))
    for it in range(1, max_iter + 1):
        G = np.vstack([E, A[working]]) if working else E
        Y, Z, R = _nullspace(G, d)
        grad = H @ z + g
        p = _reduced_step(H, grad, Z)
        rgrad = np.abs(Z.T @ grad).max(initial=0.0)
        if (np.abs(p).max(initial=0.0) <= tol * zscale()
                or rgrad <= tol * (1.0 + np.abs(grad).max(initial=0.0))):
            lam = np.zeros(len(A))
            if working:
                mult = np.linalg.solve(R, Y.T @ grad) if len(G) else np.zeros(0)
                lw = mult[neq:]
                lam[working] = lw
                k = int(np.argmin(lw))
                if lw[k] < -tol * (1.0 + np.abs(grad).max()):
                    working.pop(k)
                    continue
            return z, working, lam, it, True
        # ratio test over non-working rows that p moves toward violating
        alpha, block = 1.0, None
        Ap = A @ p
        slack = A @ z - b
        for i in range(len(A)):
            if i in working or Ap[i] >= -1e-14 * (1.0 + np.abs(p).max()):
                continue
            t = max(slack[i], 0.0) / -Ap[i]
            if t < alpha:
                alpha, block = t, i
        z = z + alpha * p
        if block is not None:
            working.append(block)
    return z, working, lam, max_iter, False


def _independent_rows(E, A, candidates, tol=1e-10):
    chosen = []
    base = E
    for i in candidates:
        trial = np.vstack([base, A[i:i + 1]])
        if np.linalg.matrix_rank(trial, tol=tol * (1.0 + np.abs(trial).max())) == len(trial):
            chosen.append(i)
            base = trial
    return chosen


def solve_qp(p: QpProblem, tol=1e-8, max_iter=200) -> QpSolution:
    """Solve ``p``; status is ``infeasible`` if phase 1 cannot reach zero violation."""
    t0 = time.perf_counter()
    H, g, E, e, A, b = p.H, p.g, p.Aeq, p.beq, p.Aineq, p.bineq
    d, k = p.d, len(A)

    # equality-constrained minimizer as the initial guess
    _, Z, _ = _nullspace(E, d)
    z0 = np.linalg.lstsq(E, e, rcond=None)[0] if len(E) else np.zeros(d)
    if len(E) and np.abs(E @ z0 - e).max() > 1e-8 * (1.0 + np.abs(e).max()):
        return _finish(p, z0, QpStatus.infeasible, 0, [], None, t0)
    z0 = z0 + _reduced_step(H, H @ z0 + g, Z)

    iters = 0
    norms = np.linalg.norm(A, axis=1) if k else np.zeros(0)
    viol = (b - A @ z0) / np.where(norms > 0, norms, 1.0) if k else np.zeros(0)
    if k and viol.max() > 0:
        # phase 1 over (z, t): min eta/2 |z - z0|^2 + eta/2 t^2 + t, An z + t >= bn, t >= 0
        eta = 1e-6
        An = A / np.where(norms > 0, norms, 1.0)[:, None]
        bn = b / np.where(norms > 0, norms, 1.0)
        H1 = eta * np.eye(d + 1)
        g1 = np.concatenate([-eta * z0, [1.0]])
        E1 = np.hstack([E, np.zeros((len(E), 1))])
        A1 = np.vstack([np.hstack([An, np.ones((k, 1))]), np.eye(1, d + 1, d)])
        b1 = np.concatenate([bn, [0.0]])
        w0 = np.concatenate([z0, [viol.max()]])
        s0 = A1 @ w0 - b1
        start = _independent_rows(E1, A1, [i for i in range(k + 1) if abs(s0[i]) <= 1e-12])
        w, _, _, it1, _ = _active_set(H1, g1, E1, e, A1, b1, w0, start, tol, max_iter)
        iters += it1
        if w[-1] > 1e-9:
            return _finish(p, w[:d], QpStatus.infeasible, iters, [], None, t0)
        z0 = w[:d]

    slack = A @ z0 - b
    scale = 1.0 + norms * (1.0 + np.abs(z0).max(initial=0.0))
    start = _independent_rows(E, A, [i for i in range(k) if slack[i] <= 1e-9 * scale[i]])
    z, working, lam, it2, conv = _active_set(H, g, E, e, A, b, z0, start, tol, max_iter)
    iters += it2
    status = QpStatus.optimal if conv else QpStatus.max_iter
    return _finish(p, z, status, iters, working, lam, t0)


def _finish(p, z, status, iters, working, lam, t0):
    sol = QpSolution(z=z, status=status, kkt_residual=kkt_residual(p, z), iterations=iters,
                     active=tuple(sorted(working)), multipliers=lam)
    if p.layout is not None:
        L = p.layout
        sol.qdd, sol.tau = z[L.qdd], z[L.tau]
        sol.ur = z[L.ur] if L.has_ur else None
    sol.solve_time = time.perf_counter() - t0
    return sol
