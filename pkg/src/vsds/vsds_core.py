"""Variable-stiffness spring field compiled from a motion field.

Local linear springs ``A_i (x - x_l_i)`` are placed on the integral curve of
the motion field and blended by normalised Gaussian kernels.  The stiffness
of each spring is the desired diagonal stiffness rotated so that its first
eigenvector follows the local direction of motion.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ds_core import MotionField, _check_finite, eval_field, field_from_dict, sample_local_attractors


class DegenerateDirectionError(ValueError):
    pass


class ConstructionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# stiffness profiles


@dataclass(frozen=True)
class StiffnessProfile:
    """Diagonal desired stiffness ``K_d(x)`` in N/m.

    kind ``constant``: ``values`` holds the diagonal.
    kind ``sinusoidal``: ``values`` is an ``(m, 4)`` array of
    ``(offset, amplitude, frequency, phase)`` rows; entry ``j`` is
    ``offset + amplitude * sin(frequency * x[0] + phase)``.
    kind ``tabulated``: ``values`` is ``(n, 1 + m)``; the first column holds
    distances to the attractor (increasing), the rest the diagonal entries,
    linearly interpolated in ``|x|``.
    """

    kind: str
    values: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if self.kind == "constant":
            if vals.ndim != 1 or np.any(vals <= 0.0):
                raise ValueError("constant stiffness must be a positive diagonal")
        elif self.kind == "sinusoidal":
            if vals.ndim != 2 or vals.shape[1] != 4:
                raise ValueError("sinusoidal stiffness needs (offset, amplitude, frequency, phase) rows")
            if np.any(vals[:, 0] - np.abs(vals[:, 1]) <= 0.0):
                raise ValueError("sinusoidal stiffness must stay positive (offset > |amplitude|)")
        elif self.kind == "tabulated":
            if vals.ndim != 2 or vals.shape[0] < 2 or np.any(np.diff(vals[:, 0]) <= 0.0):
                raise ValueError("tabulated stiffness needs increasing sample distances")
            if np.any(vals[:, 1:] <= 0.0):
                raise ValueError("tabulated stiffness must be positive")
        else:
            raise ValueError(f"unknown stiffness kind {self.kind!r}")
        object.__setattr__(self, "values", tuple(map(tuple, vals)) if vals.ndim == 2 else tuple(vals))

    @classmethod
    def constant(cls, diag) -> "StiffnessProfile":
        return cls("constant", tuple(float(v) for v in diag))

    @classmethod
    def sinusoidal(cls, rows) -> "StiffnessProfile":
        return cls("sinusoidal", tuple(tuple(float(v) for v in r) for r in rows))

    @classmethod
    def tabulated(cls, rows) -> "StiffnessProfile":
        return cls("tabulated", tuple(tuple(float(v) for v in r) for r in rows))

    @property
    def dim(self) -> int:
        vals = np.asarray(self.values)
        if self.kind == "constant":
            return vals.shape[0]
        if self.kind == "sinusoidal":
            return vals.shape[0]
        return vals.shape[1] - 1

    def diag(self, x) -> np.ndarray:
        """Diagonal of ``K_d(x)``."""
        x = np.asarray(x, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if self.kind == "constant":
            return vals.copy()
        if self.kind == "sinusoidal":
            return vals[:, 0] + vals[:, 1] * np.sin(vals[:, 2] * x[0] + vals[:, 3])
        r = float(np.linalg.norm(x))
        return np.array([np.interp(r, vals[:, 0], vals[:, j]) for j in range(1, vals.shape[1])])

    def matrix(self, x) -> np.ndarray:
        return np.diag(self.diag(x))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "values": np.asarray(self.values).tolist()}


# Varying profile used for the motion-execution comparison.
SINUSOIDAL_PAPER = StiffnessProfile.sinusoidal([(950.0, 150.0, 15.0, 0.8), (1200.0, 200.0, 15.0, 0.8)])
CONSTANT_PAPER = StiffnessProfile.constant((1200.0, 1500.0))


# ---------------------------------------------------------------------------
# springs


def build_rotation(direction) -> np.ndarray:
    """Orthonormal basis whose first column is ``direction / |direction|``.

    For ``m = 2`` the second column is the first rotated by +90 degrees.  For
    larger ``m`` the remaining columns come from Gram-Schmidt on the
    canonical basis; the last column is flipped if needed so ``det Q = +1``.
    """
    d = np.asarray(direction, dtype=float)
    norm = float(np.linalg.norm(d))
    if not norm > 1e-12:
        raise DegenerateDirectionError(f"direction {d} is too close to zero")
    e1 = d / norm
    m = d.shape[0]
    if m == 1:
        return np.array([[1.0]]) if e1[0] > 0 else np.array([[-1.0]])
    if m == 2:
        return np.array([[e1[0], -e1[1]], [e1[1], e1[0]]])
    cols = [e1]
    for e in np.eye(m):
        v = e.copy()
        # two projection passes keep the basis orthogonal to rounding even
        # when e is almost parallel to an accepted column
        for _ in range(2):
            v = v - sum((c @ v) * c for c in cols)
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            cols.append(v / nv)
        if len(cols) == m:
            break
    q = np.column_stack(cols)
    if np.linalg.det(q) < 0.0:
        q[:, -1] *= -1.0
    return q


@dataclass(frozen=True)
class LocalSpring:
    x_l: np.ndarray
    x_cen: np.ndarray
    eps: float
    A: np.ndarray
    D: np.ndarray


class VsdsModel:
    """Compiled spring field: stacked spring data for vectorised evaluation."""

    def __init__(self, x_l, centers, eps, A, D, field: MotionField | None = None, stiffness=None):
        self.x_l = np.asarray(x_l, dtype=float)
        self.centers = np.asarray(centers, dtype=float)
        self.eps = np.asarray(eps, dtype=float)
        self.A = np.asarray(A, dtype=float)
        self.D = np.asarray(D, dtype=float)
        self.field = field
        self.stiffness = stiffness
        n = self.x_l.shape[0]
        if n < 2:
            raise ConstructionError("a VSDS model needs at least two springs")
        if np.linalg.norm(self.x_l[-1]) > 1e-12:
            raise ConstructionError("the last local attractor must be the origin")
        if np.any(self.eps <= 0.0):
            raise ConstructionError("kernel widths must be positive")
        self._inv2eps2 = 1.0 / (2.0 * self.eps**2)
        # A_i x_l_i, so that f_vs,o(x) = (sum w_i A_i) x - sum w_i A_i x_l_i
        self._Axl = np.einsum("nij,nj->ni", self.A, self.x_l)
        n, m = self.x_l.shape
        self._A_flat = self.A.reshape(n, m * m)
        self._D_flat = self.D.reshape(n, m * m)
        self.underflow_events = 0

    @property
    def n_springs(self) -> int:
        return self.x_l.shape[0]

    @property
    def dim(self) -> int:
        return self.x_l.shape[1]

    @property
    def springs(self) -> list[LocalSpring]:
        return [
            LocalSpring(self.x_l[i], self.centers[i], float(self.eps[i]), self.A[i], self.D[i])
            for i in range(self.n_springs)
        ]

    def with_damping(self, D) -> "VsdsModel":
        return VsdsModel(self.x_l, self.centers, self.eps, self.A, D, self.field, self.stiffness)

    def to_dict(self) -> dict:
        out = {
            "n_springs": self.n_springs,
            "dim": self.dim,
            "x_l": self.x_l.tolist(),
            "centers": self.centers.tolist(),
            "eps": self.eps.tolist(),
            "A": self.A.tolist(),
            "D": self.D.tolist(),
        }
        if self.field is not None:
            out["field"] = self.field.to_dict()
        if self.stiffness is not None:
            out["stiffness"] = self.stiffness.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "VsdsModel":
        field = field_from_dict(data["field"]) if "field" in data else None
        stiffness = StiffnessProfile(**data["stiffness"]) if "stiffness" in data else None
        return cls(data["x_l"], data["centers"], data["eps"], data["A"], data["D"], field, stiffness)


def critical_damping_eigs(stiffness_diag, mass_diag) -> np.ndarray:
    return 2.0 * np.sqrt(np.asarray(mass_diag, dtype=float) * np.asarray(stiffness_diag, dtype=float))


def build_vsds(
    field: MotionField,
    stiffness: StiffnessProfile,
    damping_eigs,
    x0,
    n: int = 20,
    eps_scale: float = 0.5,
    dt: float = 1e-3,
    rollout: np.ndarray | None = None,
) -> VsdsModel:
    """Sample ``n`` local attractors along the flow from ``x0`` and build the springs.

    ``damping_eigs`` is either a per-axis list (rotated like the stiffness)
    or the string ``"critical"`` for ``2 sqrt(K_d(x_l))`` per axis at unit mass.
    The first spring sits at ``x0`` with its kernel centred there; spring
    ``i > 0`` has its kernel centred midway between attractors ``i - 1`` and
    ``i`` with width ``eps_scale`` times their distance.
    """
    if n < 2:
        raise ValueError("need at least two springs")
    x0 = _check_finite(x0, "x0")
    x_l = sample_local_attractors(field, x0, n, dt=dt, rollout=rollout)
    m = x_l.shape[1]
    gaps = np.linalg.norm(np.diff(x_l, axis=0), axis=1)
    if np.any(gaps <= 1e-12):
        raise ConstructionError("coincident local attractors")
    centers = np.vstack([x_l[:1], 0.5 * (x_l[1:] + x_l[:-1])])
    eps = eps_scale * np.concatenate([gaps[:1], gaps])

    A = np.empty((n, m, m))
    D = np.empty((n, m, m))
    for i in range(n):
        v = eval_field(field, x_l[i])
        if np.linalg.norm(v) <= 1e-12:
            if i < n - 1:
                raise ConstructionError(f"motion field vanishes at local attractor {i} ({x_l[i]})")
            # the origin itself: keep the direction of the final approach
            v = x_l[i] - x_l[i - 1]
        q = build_rotation(v)
        k = stiffness.diag(x_l[i])
        A[i] = -(q * k) @ q.T
        if isinstance(damping_eigs, str):
            if damping_eigs != "critical":
                raise ValueError(f"unknown damping mode {damping_eigs!r}")
            d = critical_damping_eigs(k, np.ones(m))
        else:
            d = np.broadcast_to(np.asarray(damping_eigs, dtype=float), (m,))
            if np.any(d <= 0.0):
                raise ValueError("damping eigenvalues must be positive")
        D[i] = (q * d) @ q.T
    return VsdsModel(x_l, centers, eps, A, D, field=field, stiffness=stiffness)


# ---------------------------------------------------------------------------
# evaluation


def weights_flagged(model: VsdsModel, x) -> tuple[np.ndarray, bool]:
    """Normalised kernel weights and whether the underflow fallback fired."""
    diff = model.centers - x
    d2 = (diff * diff).sum(axis=1)
    w = np.exp(-d2 * model._inv2eps2)
    total = w.sum()
    if total > 0.0 and math.isfinite(total):
        return w / total, False
    model.underflow_events += 1
    w = np.zeros(model.n_springs)
    w[int(np.argmin(d2))] = 1.0
    return w, True


def weights(model: VsdsModel, x) -> np.ndarray:
    """``w~_i(x)``; one-hot on the nearest centre when every kernel underflows."""
    x = _check_finite(x)
    return weights_flagged(model, x)[0]


def eval_vsds_org(model: VsdsModel, x, w=None) -> np.ndarray:
    """Blended spring force ``sum_i w~_i(x) A_i (x - x_l_i)``."""
    x = _check_finite(x)
    if w is None:
        w = weights_flagged(model, x)[0]
    m = model.dim
    return (w @ model._A_flat).reshape(m, m) @ x - w @ model._Axl


def eval_damping(model: VsdsModel, x, w=None) -> np.ndarray:
    """``D(x) = sum_i w~_i(x) D_i``."""
    x = _check_finite(x)
    if w is None:
        w = weights_flagged(model, x)[0]
    m = model.dim
    return (w @ model._D_flat).reshape(m, m)


def save_model_json(model: VsdsModel, path, extra: dict | None = None) -> None:
    data = model.to_dict()
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2))


def load_model_json(path) -> tuple[VsdsModel, dict]:
    data = json.loads(Path(path).read_text())
    return VsdsModel.from_dict(data), data
