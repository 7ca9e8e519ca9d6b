"""Dense convex QP solver based on ADMM operator splitting.

Solves

    minimize    1/2 z.H z + c.z
    subject to  A z >= b,   lb <= z <= ub

The general and box constraints are stacked as ``l <= C z <= u`` with
``C = [A; I]``.  Each iteration solves one regularised linear system
(factorised once per step size), projects onto the box ``[l, u]`` and
updates the scaled dual.  Once the splitting residuals are small the
active set is read off the duals and the equality-constrained KKT system is
solved directly ("polishing"), which gives solutions accurate to rounding.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import nnls

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible"


# step-size adaptation: exponent applied to the residual-balance ratio and
# the number of changes allowed before the step is frozen (a fixed step
# guarantees convergence of the splitting)
RHO_DAMPING = 0.5
RHO_MAX_UPDATES = 20


class QpProblemError(ValueError):
    pass


@dataclass
class QpProblem:
    H: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = self.H.shape[0]
        self.c = np.asarray(self.c, dtype=float).reshape(n)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(self.A.shape[0])
        self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()
        if self.H.shape != (n, n):
            raise QpProblemError("H must be square")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(self.H))):
            raise QpProblemError("H must be symmetric")
        if np.any(self.lb > self.ub):
            raise QpProblemError("lb must not exceed ub")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return 0.5 * float(z @ self.H @ z) + float(self.c @ z)

    def to_dict(self) -> dict:
        def enc(a):
            return np.where(np.isfinite(a), a, np.sign(a) * 1e300).tolist()

        return {k: enc(getattr(self, k)) for k in ("H", "c", "A", "b", "lb", "ub")}

    @classmethod
    def from_dict(cls, data: dict) -> "QpProblem":
        def dec(a):
            a = np.asarray(a, dtype=float)
            return np.where(np.abs(a) >= 1e300, np.sign(a) * np.inf, a)

        return cls(**{k: dec(data[k]) for k in ("H", "c", "A", "b", "lb", "ub")})

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "QpProblem":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    status: str
    primal_residual: float
    dual_residual: float
    stationarity_residual: float
    complementarity_residual: float = 0.0
    iterations: int = 0
    polished: bool = False
    certificate: np.ndarray | None = None
    history: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# KKT residuals


def kkt_residual(problem: QpProblem, z, active_tol: float = 1e-7):
    """``(stationarity, primal, complementarity)`` residuals at ``z``.

    Multipliers of the (nearly) active constraints are recovered by
    non-negative least squares on ``H z + c = A_act' lam + mu_lb - mu_ub``.
    """
    z = np.asarray(z, dtype=float)
    p = problem
    slack_a = p.A @ z - p.b
    slack_lb = z - p.lb
    slack_ub = p.ub - z
    primal = max(
        0.0,
        float(np.max(-slack_a, initial=0.0)),
        float(np.max(-slack_lb, initial=0.0)),
        float(np.max(-slack_ub, initial=0.0)),
    )
    g = p.H @ z + p.c
    cols, slacks = [], []
    act_a = np.flatnonzero(slack_a <= active_tol)
    act_lb = np.flatnonzero(slack_lb <= active_tol)
    act_ub = np.flatnonzero(slack_ub <= active_tol)
    for i in act_a:
        cols.append(p.A[i])
        slacks.append(slack_a[i])
    eye = np.eye(p.n)
    for i in act_lb:
        cols.append(eye[i])
        slacks.append(slack_lb[i])
    for i in act_ub:
        cols.append(-eye[i])
        slacks.append(slack_ub[i])
    if not cols:
        return float(np.max(np.abs(g), initial=0.0)), primal, 0.0
    G = np.column_stack(cols)
    nu, _ = nnls(G, g, maxiter=50 * G.shape[1])
    stationarity = float(np.max(np.abs(g - G @ nu)))
    complementarity = float(np.max(np.abs(nu * np.asarray(slacks))))
    return stationarity, primal, complementarity


# ---------------------------------------------------------------------------
# solver


def _check_convexity(H: np.ndarray) -> None:
    if H.size == 0:
        return
    lam_min = float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])
    scale = max(1.0, float(np.max(np.abs(H))))
    if lam_min < -1e-9 * scale:
        raise QpProblemError(f"H has negative curvature (min eigenvalue {lam_min:.3e})")


def _support(dy, l, u, thresh):
    """``sup { dy . v : l <= v <= u }``; ``inf`` if unbounded."""
    pos = dy > thresh
    neg = dy < -thresh
    if np.any(pos & ~np.isfinite(u)) or np.any(neg & ~np.isfinite(l)):
        return math.inf
    return float(np.sum(u[pos] * dy[pos]) + np.sum(l[neg] * dy[neg]))


def _polish(problem: QpProblem, C, l, u, x, v, y):
    """Solve the KKT system on the active set guessed from the splitting iterate."""
    n = problem.n
    lower = (v - l) < -y
    upper = (u - v) < y
    lower &= np.isfinite(l)
    upper &= np.isfinite(u) & ~lower
    act = np.flatnonzero(lower | upper)
    rhs_b = np.where(lower[act], l[act], u[act])
    Ca = C[act]
    k = len(act)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = problem.H
    K[:n, n:] = Ca.T
    K[n:, :n] = Ca
    rhs = np.concatenate([-problem.c, rhs_b])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    # one step of iterative refinement
    sol += np.linalg.lstsq(K, rhs - K @ sol, rcond=None)[0]
    z = sol[:n]
    y_act = sol[n:]
    y_full = np.zeros(C.shape[0])
    y_full[act] = y_act
    return z, y_full


def solve_qp(
    problem: QpProblem,
    tol: float = 1e-8,
    max_iter: int = 20000,
    rho: float = 1.0,
    adaptive_rho: bool = True,
    polish: bool = True,
    record_history: bool = False,
    infeasible_window: int = 100,
) -> QpSolution:
    """ADMM with adaptive step size and active-set polishing.

    The returned status is ``optimal`` only when the KKT residuals computed
    by :func:`kkt_residual` are all below ``tol``.
    """
    p = problem
    _check_convexity(p.H)
    n = p.n
    m_a = p.A.shape[0]
    C = np.vstack([p.A, np.eye(n)])
    l = np.concatenate([p.b, p.lb])
    u = np.concatenate([np.full(m_a, np.inf), p.ub])
    CtC = C.T @ C
    sigma = 1e-9 * max(1.0, float(np.max(np.abs(p.H), initial=0.0)))

    x = np.clip(np.zeros(n), p.lb, p.ub)
    v = np.clip(C @ x, l, u)
    w = np.zeros(C.shape[0])  # scaled dual, y = rho * w
    history = {"objective": [], "fixed_point": [], "rho": []} if record_history else {}

    def factor(r):
        return cho_factor(p.H + sigma * np.eye(n) + r * CtC)

    fac = factor(rho)
    coarse = 1e-4
    certificate_count = 0
    rho_updates = 0
    last_polish = -10**9
    polished_sol = None
    y = rho * w
    it = 0
    for it in range(1, max_iter + 1):
        x_prev = x
        x = cho_solve(fac, sigma * x - p.c + rho * (C.T @ (v - w)))
        Cx = C @ x
        v_prev, w_prev = v, w
        v = np.clip(Cx + w, l, u)
        w = w + Cx - v
        y_prev = rho * w_prev
        y = rho * w
        if record_history:
            history["objective"].append(p.objective(x))
            history["fixed_point"].append(
                float(sigma / rho * np.sum((x - x_prev) ** 2) + np.sum((v - v_prev) ** 2) + np.sum((w - w_prev) ** 2))
            )
            history["rho"].append(rho)

        r_prim = float(np.max(np.abs(Cx - v)))
        Hx = p.H @ x
        Cty = C.T @ y
        r_dual = float(np.max(np.abs(Hx + p.c + Cty)))
        prim_scale = max(1.0, float(np.max(np.abs(Cx))), float(np.max(np.abs(np.where(np.isfinite(v), v, 0.0)))))
        dual_scale = max(1.0, float(np.max(np.abs(Hx))), float(np.max(np.abs(Cty))), float(np.max(np.abs(p.c))))

        # infeasibility certificate on the dual increment
        dy = y - y_prev
        ndy = float(np.max(np.abs(dy)))
        if ndy > 1e-12 and r_prim > tol * prim_scale:
            support = _support(dy, l, u, 1e-9 * ndy)
            if float(np.max(np.abs(C.T @ dy))) <= 1e-6 * ndy and support < -1e-6 * ndy:
                certificate_count += 1
            else:
                certificate_count = 0
            if certificate_count >= infeasible_window:
                z = x
                st, pr, co = kkt_residual(p, z)
                return QpSolution(
                    z, p.objective(z), INFEASIBLE, pr, r_dual, st, co, it, False, dy / ndy, history
                )
        else:
            certificate_count = 0

        converged_coarse = r_prim <= coarse * prim_scale and r_dual <= coarse * dual_scale
        if polish and converged_coarse and it - last_polish >= 25:
            last_polish = it
            z_pol, y_pol = _polish(p, C, l, u, x, v, y)
            st, pr, co = kkt_residual(p, z_pol)
            if max(st, pr, co) <= tol:
                polished_sol = QpSolution(
                    z_pol,
                    p.objective(z_pol),
                    OPTIMAL,
                    pr,
                    float(np.max(np.abs(p.H @ z_pol + p.c + C.T @ y_pol))),
                    st,
                    co,
                    it,
                    True,
                    history=history,
                )
                break
            coarse = max(coarse * 0.1, tol)

        if r_prim <= tol and r_dual <= tol:
            st, pr, co = kkt_residual(p, x)
            if max(st, pr, co) <= tol:
                return QpSolution(x, p.objective(x), OPTIMAL, pr, r_dual, st, co, it, False, history=history)

        balanced = min(r_prim, r_dual) > tol
        if adaptive_rho and it % 25 == 0 and rho_updates < RHO_MAX_UPDATES and balanced:
            ratio = math.sqrt((r_prim / prim_scale) / (r_dual / dual_scale))
            step = min(max(ratio**RHO_DAMPING, 0.1), 10.0)
            new_rho = float(np.clip(rho * step, 1e-6, 1e6))
            if new_rho > 5.0 * rho or new_rho < rho / 5.0:
                rho_updates += 1
                w = w * (rho / new_rho)
                rho = new_rho
                fac = factor(rho)

    if polished_sol is not None:
        return polished_sol
    st, pr, co = kkt_residual(p, x)
    status = OPTIMAL if max(st, pr, co) <= tol else MAX_ITER
    return QpSolution(x, p.objective(x), status, pr, r_dual, st, co, it, False, history=history)
