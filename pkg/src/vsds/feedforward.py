"""Feed-forward force fields that make the spring field track the DS velocity.

Two designs:

* velocity feedback, ``f_f(x) = D(x) f_g(x)``;
* a blend of constant forces ``f_f(x) = sum_i w~_i(x) Gamma_i`` whose
  ``Gamma_i`` are fitted by a QP to the spring force of a critically damped
  second-order system tracking the open-loop DS trajectory.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ds_core import MotionField, eval_field, integrate_open_loop
from .energy_tank import PassifierParams, activation, potential_force
from .qp_solver import QpProblem, QpSolution, solve_qp
from .vsds_core import StiffnessProfile, VsdsModel, eval_vsds_org, weights_flagged

logger = logging.getLogger(__name__)

MAX_DATASET_ROWS = 2000


class DegenerateProblemError(ValueError):
    pass


class UnsolvedFieldError(RuntimeError):
    pass


class ReferenceDivergenceError(RuntimeError):
    pass


@dataclass
class ReferenceDataset:
    times: np.ndarray
    positions: np.ndarray
    spring_forces: np.ndarray
    reference: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.spring_forces = np.atleast_2d(np.asarray(self.spring_forces, dtype=float))
        n = len(self.times)
        if n == 0:
            raise ValueError("empty dataset")
        if self.positions.shape[0] != n or self.spring_forces.shape[0] != n:
            raise ValueError("dataset columns have different lengths")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("dataset times must be strictly increasing")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.spring_forces))):
            raise ValueError("dataset contains non-finite values")

    def __len__(self) -> int:
        return len(self.times)

    def subsample(self, max_rows: int = MAX_DATASET_ROWS) -> "ReferenceDataset":
        k = max(1, int(np.ceil(len(self) / max_rows)))
        ref = None if self.reference is None else self.reference[::k]
        return ReferenceDataset(self.times[::k], self.positions[::k], self.spring_forces[::k], ref)

    def to_csv(self, path) -> None:
        m = self.positions.shape[1]
        header = ["t"] + [f"x{j + 1}" for j in range(m)] + [f"Fs{j + 1}" for j in range(m)]
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t, x, f in zip(self.times, self.positions, self.spring_forces):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(v)) for v in f])

    @classmethod
    def from_csv(cls, path) -> "ReferenceDataset":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.asarray([[float(v) for v in row] for row in reader if row], dtype=float)
        m = (len(header) - 1) // 2
        if header[0] != "t" or len(header) != 1 + 2 * m:
            raise ValueError(f"{path}: unexpected header {header}")
        return cls(rows[:, 0], rows[:, 1 : 1 + m], rows[:, 1 + m :])


@dataclass
class FeedForwardField:
    """``kind`` is ``none``, ``velocity-feedback`` or ``qp``."""

    kind: str = "none"
    gammas: np.ndarray | None = None
    lower: float = -40.0
    upper: float = 40.0
    f_min: float = 10.0
    solution: QpSolution | None = None

    def __post_init__(self):
        if self.kind not in ("none", "velocity-feedback", "qp"):
            raise ValueError(f"unknown feed-forward kind {self.kind!r}")
        if self.gammas is not None:
            self.gammas = np.asarray(self.gammas, dtype=float)
            if np.any(self.gammas < self.lower - 1e-9) or np.any(self.gammas > self.upper + 1e-9):
                raise ValueError("Gamma outside its bounds")

    def evaluate(self, model: VsdsModel, x, w, D, fg=None) -> np.ndarray:
        """Feed-forward force given precomputed weights, damping and (optionally) ``f_g(x)``."""
        if self.kind == "none":
            return np.zeros(model.dim)
        if self.kind == "velocity-feedback":
            return D @ (eval_field(model.field, x) if fg is None else fg)
        if self.gammas is None:
            raise UnsolvedFieldError("QP feed-forward field has not been solved")
        return w @ self.gammas

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "lower": self.lower, "upper": self.upper, "f_min": self.f_min}
        if self.gammas is not None:
            out["gammas"] = self.gammas.tolist()
        return out


# ---------------------------------------------------------------------------
# velocity feedback


def ff_velocity_feedback(model: VsdsModel, field: MotionField, x) -> np.ndarray:
    """``D(x) f_g(x)``."""
    x = np.asarray(x, dtype=float)
    w, _ = weights_flagged(model, x)
    return np.tensordot(w, model.D, axes=1) @ eval_field(field, x)


# ---------------------------------------------------------------------------
# QP design


def simulate_reference(
    field: MotionField,
    stiffness: StiffnessProfile,
    mass,
    x0,
    dt: float = 1e-3,
    t_final: float = 20.0,
    max_rows: int | None = MAX_DATASET_ROWS,
    open_loop: np.ndarray | None = None,
) -> ReferenceDataset:
    """Critically damped spring ``M x'' = K(x)(x_d(t) - x) - D_d(x) x'`` tracking the open-loop DS.

    ``D_d = 2 sqrt(M) sqrt(K(x))`` per axis.  Once the open-loop reference has
    converged it is held at its last sample.  Semi-implicit Euler at ``dt``.
    ``open_loop`` may pass in a rollout of ``field`` from ``x0`` at the same ``dt``.
    """
    mass = np.atleast_2d(np.asarray(mass, dtype=float))
    m_diag = np.diag(mass)
    if np.any(m_diag <= 0.0) or np.any(np.abs(mass - np.diag(m_diag)) > 0.0):
        raise ValueError("mass must be positive diagonal")
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    x0 = np.asarray(x0, dtype=float)
    if open_loop is None:
        _, xd = integrate_open_loop(field, x0, dt=dt, t_final=t_final)
    else:
        xd = np.asarray(open_loop, dtype=float)
    n_steps = int(np.floor(t_final / dt + 1e-9)) + 1
    if len(xd) < n_steps:
        logger.info("open-loop reference converged after %d of %d samples; holding the final value", len(xd), n_steps)
        xd = np.vstack([xd, np.repeat(xd[-1:], n_steps - len(xd), axis=0)])
    sqrt_m = np.sqrt(m_diag)
    x = x0.copy()
    v = np.zeros_like(x0)
    xs = np.empty((n_steps, x0.size))
    fs = np.empty((n_steps, x0.size))
    for k in range(n_steps):
        kd = stiffness.diag(x)
        spring = kd * (xd[k] - x)
        xs[k] = x
        fs[k] = spring
        acc = (spring - 2.0 * sqrt_m * np.sqrt(kd) * v) / m_diag
        v = v + dt * acc
        x = x + dt * v
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 10.0:
            raise ReferenceDivergenceError(f"reference dynamics diverged at step {k}")
    data = ReferenceDataset(dt * np.arange(n_steps), xs, fs, reference=xd)
    if max_rows is not None and len(data) > max_rows:
        data = data.subsample(max_rows)
    return data


def spring_field(model: VsdsModel, p: PassifierParams, x) -> np.ndarray:
    """``kappa(|x|) f_vs,o(x) + Phi(x)``: the part of ``f_vs`` not depending on Gamma."""
    return activation(p, x) * eval_vsds_org(model, x) + potential_force(p, x)


def activation_matrix(model: VsdsModel, p: PassifierParams, positions) -> np.ndarray:
    """Rows ``kappa(|x_t|) w~(x_t)``, shape ``(T, N)``."""
    positions = np.atleast_2d(positions)
    out = np.empty((len(positions), model.n_springs))
    for t, x in enumerate(positions):
        out[t] = activation(p, x) * weights_flagged(model, x)[0]
    return out


def assemble_qp(
    dataset: ReferenceDataset,
    model: VsdsModel,
    passifier: PassifierParams,
    bounds=(-40.0, 40.0),
    f_min=10.0,
    anchor: bool = True,
) -> QpProblem:
    """Least-squares fit of ``f_vs(x_t)`` to ``F_s,t`` as a QP in ``z = [Gamma^1; ...; Gamma^m]``.

    Component ``j`` of ``z`` occupies ``z[j*N:(j+1)*N]``.  The initial-force
    requirement ``|f_vs^j(x_0)| >= f_min`` is linearised by fixing the sign
    ``sigma_j`` of ``f_s^j(x_0)``.

    With ``anchor`` the blended field is additionally required to vanish at
    the attractor, ``f_vs,o(0) + sum_i w~_i(0) Gamma_i = 0``, written as a
    pair of opposite inequalities.  Without it a constant force bias
    survives at the origin; once the tank is empty the gated law then has
    sliding equilibria wherever ``kappa * bias`` outweighs ``Phi``.
    """
    if len(dataset) == 0:
        raise DegenerateProblemError("empty dataset")
    m = model.dim
    N = model.n_springs
    f_min = np.broadcast_to(np.asarray(f_min, dtype=float), (m,))
    if np.any(f_min <= 0.0):
        raise ValueError("f_min must be positive")
    W = activation_matrix(model, passifier, dataset.positions)
    if not np.any(W):
        raise DegenerateProblemError("all samples sit at the attractor; activation is zero everywhere")
    Wa = np.kron(np.eye(m), W)
    f_s = np.array([spring_field(model, passifier, x) for x in dataset.positions])
    F_sh = (dataset.spring_forces - f_s).T.reshape(-1)  # axis-major stacking
    f_s0 = f_s[0]
    sigma = np.where(f_s0 >= 0.0, 1.0, -1.0)
    Wa0 = np.kron(np.diag(sigma), W[:1])
    b = f_min - sigma * f_s0
    if anchor:
        origin = np.zeros(m)
        E = np.kron(np.eye(m), weights_flagged(model, origin)[0][None, :])
        bias = eval_vsds_org(model, origin)
        Wa0 = np.vstack([Wa0, E, -E])
        b = np.concatenate([b, -bias, bias])
    lo, hi = bounds
    H = Wa.T @ Wa
    H = 0.5 * (H + H.T)
    c = -Wa.T @ F_sh
    return QpProblem(H=H, c=c, A=Wa0, b=b, lb=np.full(m * N, lo), ub=np.full(m * N, hi))


def gammas_from_z(z, model: VsdsModel) -> np.ndarray:
    """Unstack ``z`` into an ``(N, m)`` array of constant forces."""
    return np.asarray(z, dtype=float).reshape(model.dim, model.n_springs).T


def optimize_feedforward(
    dataset: ReferenceDataset,
    model: VsdsModel,
    passifier: PassifierParams,
    bounds=(-40.0, 40.0),
    f_min: float = 10.0,
    tol: float = 1e-8,
    max_iter: int = 20000,
    anchor: bool = True,
) -> FeedForwardField:
    problem = assemble_qp(dataset, model, passifier, bounds, f_min, anchor=anchor)
    sol = solve_qp(problem, tol=tol, max_iter=max_iter)
    if sol.status != "optimal":
        logger.warning("feed-forward QP finished with status %s", sol.status)
    gammas = np.clip(gammas_from_z(sol.z, model), bounds[0], bounds[1])
    return FeedForwardField("qp", gammas, bounds[0], bounds[1], float(np.min(f_min)), solution=sol)


def eval_ff_qp(ff: FeedForwardField, model: VsdsModel, x) -> np.ndarray:
    """``sum_i w~_i(x) Gamma_i``."""
    if ff.kind != "qp" or ff.gammas is None:
        raise UnsolvedFieldError("QP feed-forward field has not been solved")
    w, _ = weights_flagged(model, np.asarray(x, dtype=float))
    return w @ ff.gammas
