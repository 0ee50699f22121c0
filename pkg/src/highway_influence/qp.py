"""Minimum-effort control selection under linear constraints.

Per step the robots solve

    minimize ||u||^2   subject to  A u >= b,  lo <= u <= hi.

Problems are tiny (a handful of controls and rows), so the solver is a dense
dual active-set method: start from the unconstrained minimizer u = 0 and add
violated constraints one at a time, dropping any whose multiplier would turn
negative. The objective is strictly convex, so the method terminates at the
unique optimum, with no tuning parameters and fully deterministic pivoting.

When the polytope is empty the problem is re-solved with a per-row slack and
a stiff quadratic penalty; this keeps the closed loop defined under noise,
and the returned status flags the relaxation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

OPTIMAL = "optimal"
RELAXED = "relaxed"
FAILED = "failed"

SLACK_WEIGHT = 1e4


@dataclass
class QpProblem:
    A: np.ndarray  # (m, n)
    b: np.ndarray  # (m,)
    lo: np.ndarray  # (n,)
    hi: np.ndarray  # (n,)
    hard: Optional[np.ndarray] = None  # rows that never receive slack

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.lo = np.asarray(self.lo, dtype=float).ravel()
        self.hi = np.asarray(self.hi, dtype=float).ravel()
        if self.A.size == 0:
            self.A = self.A.reshape(0, self.n)
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError("A and b row counts differ")
        if self.A.shape[1] != self.n:
            raise ValueError("A column count does not match the bounds")
        if np.any(self.lo > self.hi):
            raise ValueError("lo > hi")
        if not np.all(np.isfinite(self.A)):
            raise ValueError("A must be finite")
        if self.hard is None:
            self.hard = np.zeros(self.A.shape[0], dtype=bool)
        else:
            self.hard = np.asarray(self.hard, dtype=bool).ravel()
            if self.hard.shape[0] != self.A.shape[0]:
                raise ValueError("hard mask length does not match A")

    @property
    def n(self) -> int:
        return self.lo.shape[0]


@dataclass
class QpSolution:
    u: np.ndarray
    status: str
    slack: np.ndarray
    kkt_residual: float


class _Infeasible(Exception):
    pass


class _Stalled(Exception):
    pass


def _min_norm_under(G: np.ndarray, h: np.ndarray,
                    max_iter: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """min 0.5 ||x||^2 s.t. G x >= h. Returns (x, multipliers).

    Raises _Infeasible when the constraints are inconsistent.
    """
    m, n = G.shape
    x = np.zeros(n)
    active: list[int] = []
    lam: list[float] = []
    feas_tol = 1e-10 * (1.0 + float(np.abs(h).max()) if m else 1.0)

    for _ in range(max_iter):
        slack = G @ x - h if m else np.zeros(0)
        if m == 0 or slack.min() >= -feas_tol:
            mult = np.zeros(m)
            for idx, l in zip(active, lam):
                mult[idx] = max(l, 0.0)
            return x, mult
        p = int(np.argmin(slack))
        gp = G[p]
        lam_p = 0.0
        for _ in range(max_iter):
            if active:
                N = G[active].T  # (n, q)
                r, *_ = np.linalg.lstsq(N, gp, rcond=None)
                z = gp - N @ r
            else:
                r = np.zeros(0)
                z = gp
            denom = float(gp @ z)
            gp_norm2 = float(gp @ gp)
            if denom > 1e-14 * max(gp_norm2, 1.0):
                t_full = (h[p] - float(gp @ x)) / denom
            else:
                t_full = np.inf
            t_drop = np.inf
            drop_at = -1
            for idx, (l, ri) in enumerate(zip(lam, r)):
                if ri > 1e-12:
                    tt = l / ri
                    if tt < t_drop:
                        t_drop = tt
                        drop_at = idx
            t = min(t_full, t_drop)
            if not np.isfinite(t):
                raise _Infeasible
            if np.isfinite(t_full):
                x = x + t * z
            lam = [l - t * ri for l, ri in zip(lam, r)]
            lam_p += t
            if t_full <= t_drop:
                active.append(p)
                lam.append(lam_p)
                break
            del active[drop_at]
            del lam[drop_at]
        else:
            raise _Stalled
    raise _Stalled


def _stack(p: QpProblem) -> tuple[np.ndarray, np.ndarray]:
    """All constraints of the problem as rows of G x >= h."""
    n = p.n
    eye = np.eye(n)
    G = np.vstack([p.A, eye, -eye])
    h = np.concatenate([p.b, p.lo, -p.hi])
    return G, h


def solve_qp(p: QpProblem) -> QpSolution:
    """Unique minimum-norm control satisfying the constraint polytope.

    Falls back to the slack-relaxed problem when the polytope is empty, and
    reports FAILED only if even that solve breaks down numerically (the
    relaxation is feasible by construction).
    """
    n = p.n
    m = p.A.shape[0]
    G, h = _stack(p)
    try:
        u, _ = _min_norm_under(G, h)
        return QpSolution(u=u, status=OPTIMAL, slack=np.zeros(m),
                          kkt_residual=kkt_residual(p, u))
    except _Infeasible:
        pass
    except _Stalled:
        return QpSolution(u=np.zeros(n), status=FAILED, slack=np.zeros(m),
                          kkt_residual=np.inf)

    # Relaxation: minimize ||u||^2 + SLACK_WEIGHT * ||s||^2 with slack added
    # to the soft rows only (A u + s >= b, s >= 0); hard rows stay exact. If
    # even the hard rows conflict, a second pass softens everything.
    for soft in (~p.hard, np.ones(m, dtype=bool)):
        result = _solve_relaxed(p, soft)
        if result is not None:
            return result
    return QpSolution(u=np.zeros(n), status=FAILED, slack=np.zeros(m),
                      kkt_residual=np.inf)


def _solve_relaxed(p: QpProblem, soft: np.ndarray) -> Optional[QpSolution]:
    n = p.n
    m = p.A.shape[0]
    soft_idx = np.where(soft)[0]
    k = soft_idx.shape[0]
    root = np.sqrt(SLACK_WEIGHT)
    # Variables y = (u, w) with w = sqrt(rho) * s, so the Hessian stays I.
    G_rel = np.zeros((m + k + 2 * n, n + k))
    h_rel = np.zeros(m + k + 2 * n)
    G_rel[:m, :n] = p.A
    for col, row in enumerate(soft_idx):
        G_rel[row, n + col] = 1.0 / root
    h_rel[:m] = p.b
    G_rel[m:m + k, n:] = np.eye(k)
    G_rel[m + k:m + k + n, :n] = np.eye(n)
    h_rel[m + k:m + k + n] = p.lo
    G_rel[m + k + n:, :n] = -np.eye(n)
    h_rel[m + k + n:] = -p.hi
    try:
        y, _ = _min_norm_under(G_rel, h_rel)
    except (_Infeasible, _Stalled):
        return None
    u = y[:n]
    slack = np.zeros(m)
    slack[soft_idx] = np.maximum(y[n:] / root, 0.0)
    return QpSolution(u=u, status=RELAXED, slack=slack,
                      kkt_residual=kkt_residual(p, u))


def kkt_residual(p: QpProblem, u: np.ndarray) -> float:
    """Worst first-order optimality residual of a candidate solution.

    Multipliers for the active rows are recovered by least squares against
    the objective gradient; the result is the max of the stationarity, primal
    feasibility, dual feasibility and complementary slackness residuals.
    """
    u = np.asarray(u, dtype=float).ravel()
    if u.shape[0] != p.n:
        raise ValueError("u has the wrong dimension")
    G, h = _stack(p)
    resid = G @ u - h
    primal = max(0.0, float(-resid.min())) if resid.size else 0.0
    scale = 1.0 + float(np.abs(h).max()) if h.size else 1.0
    act = np.where(np.abs(resid) <= 1e-7 * scale)[0]
    grad = 2.0 * u
    if act.size:
        lam_a, *_ = np.linalg.lstsq(G[act].T, grad, rcond=None)
        stationarity = float(np.linalg.norm(grad - G[act].T @ lam_a))
        dual = max(0.0, float(-lam_a.min()))
        compl = float(np.max(np.abs(lam_a * resid[act])))
    else:
        stationarity = float(np.linalg.norm(grad))
        dual = 0.0
        compl = 0.0
    return max(stationarity, primal, dual, compl)
