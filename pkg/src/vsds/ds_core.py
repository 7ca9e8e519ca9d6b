"""First-order motion fields with a global attractor at the origin.

A field maps a position to a desired velocity, ``x_dot = f_g(x)``.  Two
families are provided:

* :class:`LinearField` -- ``f_g(x) = -K x``.
* :class:`PathField` -- follows a piecewise-linear path that ends at the
  origin.  Straight min-jerk lines, analytic curves and user waypoint lists
  are all compiled down to this representation.

Fields are immutable and every evaluation is a pure function of its input.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

CONVERGENCE_RADIUS = 1e-4
WORKSPACE_BOUND = 1.0


class DomainError(ValueError):
    """Raised for non-finite or otherwise invalid state inputs."""


class IntegrationError(RuntimeError):
    """Raised when an open-loop rollout leaves the workspace."""


class SamplingError(RuntimeError):
    """Raised when an integral curve is too short to sample."""


def _check_finite(x: np.ndarray, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not math.isfinite(float(x.sum())):
        raise DomainError(f"{name} contains non-finite entries: {x}")
    return x


def smoothstep(u):
    """Cubic smoothstep clipped to [0, 1]."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


class MotionField:
    """Base class; subclasses implement :meth:`_eval`."""

    kind = "abstract"
    dim = 2

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return eval_field(self, x)

    def _eval(self, x: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def to_dict(self) -> dict:  # pragma: no cover
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class LinearField(MotionField):
    gain: np.ndarray
    kind = "linear"

    def __post_init__(self):
        gain = np.atleast_2d(np.asarray(self.gain, dtype=float))
        if gain.shape[0] != gain.shape[1]:
            raise ValueError("gain must be square")
        # -gain must be Hurwitz for the origin to be a global attractor
        if np.max(np.linalg.eigvals(-gain).real) >= 0.0:
            raise ValueError("linear field gain must have eigenvalues with positive real part")
        object.__setattr__(self, "gain", gain)

    @property
    def dim(self) -> int:
        return self.gain.shape[0]

    def _eval(self, x):
        return -self.gain @ x

    def to_dict(self):
        return {"kind": self.kind, "gain": self.gain.tolist()}


@dataclass(frozen=True, eq=False)
class PathField(MotionField):
    """Velocity field that flows along a polyline ending at the origin.

    For every segment ``k`` the field proposes
    ``v(sigma_k) * t_k + k_corr * (p_k - x)`` where ``p_k`` is the projection
    of ``x`` on the segment, ``t_k`` its unit tangent and ``sigma_k`` the arc
    length still to travel from ``p_k``.  Proposals are blended with
    normalised Gaussian weights on the segment distances (a soft nearest
    segment, which keeps the field continuous across corners).  Inside
    ``blend_radius`` the result is mixed with the linear field
    ``-approach_rate * x`` through a smoothstep.

    The tangential speed is ``min(speed(sigma), approach_rate * sigma)`` so that
    the flow along the path decays exponentially into the attractor and
    vanishes for projections clamped at the end point.
    """

    points: np.ndarray
    speeds: np.ndarray
    k_corr: float = 1.0
    blend_radius: float = 0.05
    softmin_width: float = 0.01
    approach_rate: float = 4.0
    speed_profile: Callable[[np.ndarray], np.ndarray] | None = None
    kind: str = "polyline"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2:
            raise ValueError("a path needs at least two points")
        if np.linalg.norm(pts[-1]) > 1e-12:
            raise ValueError("the last path point must be the origin")
        seg = np.diff(pts, axis=0)
        lengths = np.linalg.norm(seg, axis=1)
        if np.any(lengths <= 1e-12):
            raise ValueError("repeated consecutive path points")
        speeds = np.broadcast_to(np.asarray(self.speeds, dtype=float), (pts.shape[0],)).copy()
        if np.any(speeds <= 0.0):
            raise ValueError("nominal speeds must be positive")
        for name in ("k_corr", "blend_radius", "softmin_width", "approach_rate"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        # remaining arc length measured from each vertex to the origin
        remaining = np.concatenate([np.cumsum(lengths[::-1])[::-1], [0.0]])
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "_starts", pts[:-1])
        object.__setattr__(self, "_seg", seg)
        object.__setattr__(self, "_len", lengths)
        object.__setattr__(self, "_inv_len2", 1.0 / lengths**2)
        # cached products for the expanded distance formula in _eval
        object.__setattr__(self, "_seg_t", np.ascontiguousarray(seg.T))
        object.__setattr__(self, "_starts_t", np.ascontiguousarray(pts[:-1].T))
        object.__setattr__(self, "_ss", np.einsum("ij,ij->i", pts[:-1], pts[:-1]))
        object.__setattr__(self, "_s_seg", np.einsum("ij,ij->i", pts[:-1], seg))
        object.__setattr__(self, "_len2", lengths**2)
        object.__setattr__(self, "_sigma_grid", remaining[::-1].copy())
        object.__setattr__(self, "_speed_grid", speeds[::-1].copy())
        object.__setattr__(self, "_tan", seg / lengths[:, None])
        object.__setattr__(self, "_remaining", remaining)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def length(self) -> float:
        return float(self._remaining[0])

    def nominal_speed(self, sigma):
        """Speed profile as a function of remaining arc length."""
        if self.speed_profile is not None:
            return self.speed_profile(np.asarray(sigma, dtype=float))
        # _remaining is decreasing; np.interp needs increasing abscissae
        return np.interp(sigma, self._sigma_grid, self._speed_grid)

    def _eval(self, x):
        # squared distances to the clamped projections, expanded so that
        # every segment is handled by a few length-K vector operations
        rel_seg = x @ self._seg_t - self._s_seg
        lam = rel_seg * self._inv_len2
        np.minimum(np.maximum(lam, 0.0, out=lam), 1.0, out=lam)
        xx = float(x @ x)
        d2 = (xx - 2.0 * (x @ self._starts_t) + self._ss) + lam * (lam * self._len2 - 2.0 * rel_seg)
        w = np.exp((d2.min() - d2) * (0.5 / self.softmin_width**2))
        w /= w.sum()
        sigma = self._remaining[1:] + (1.0 - lam) * self._len
        speed = np.minimum(self.nominal_speed(sigma), self.approach_rate * sigma)
        # sum_k w_k (p_k - x) with p_k = start_k + lam_k seg_k
        pull = (w * lam) @ self._seg + w @ self._starts - x
        f_path = (w * speed) @ self._tan + self.k_corr * pull
        r = math.sqrt(xx)
        if r >= self.blend_radius:
            return f_path
        u = r / self.blend_radius
        b = u * u * (3.0 - 2.0 * u)
        return b * f_path - (1.0 - b) * self.approach_rate * x

    def to_dict(self):
        out = {
            "kind": self.kind,
            "points": self.points.tolist(),
            "speeds": self.speeds.tolist(),
            "k_corr": self.k_corr,
            "blend_radius": self.blend_radius,
            "softmin_width": self.softmin_width,
            "approach_rate": self.approach_rate,
        }
        out.update(self.meta)
        return out


def eval_field(field: MotionField, x) -> np.ndarray:
    """Desired velocity at ``x``; exactly zero at the origin."""
    x = _check_finite(x)
    if not np.any(x):
        return np.zeros_like(x)
    return field._eval(x)


# ---------------------------------------------------------------------------
# presets


def polyline_field(waypoints, speeds=0.2, **kwargs) -> PathField:
    """Path field through ``waypoints``; the last one is moved to the origin.

    Waypoints are shifted so that the final waypoint sits at the origin.
    """
    pts = np.asarray(waypoints, dtype=float)
    pts = pts - pts[-1]
    return PathField(points=pts, speeds=speeds, kind="polyline", **kwargs)


def load_polyline_csv(path, default_speed: float = 0.2, **kwargs) -> PathField:
    """Read waypoints from a CSV with header ``x1,x2[,speed]``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header[:2] != ["x1", "x2"] or len(header) > 3 or (len(header) == 3 and header[2] != "speed"):
            raise ValueError(f"{path}: expected header 'x1,x2[,speed]', got {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=float)
    speeds = data[:, 2] if data.shape[1] == 3 else default_speed
    return polyline_field(data[:, :2], speeds, **kwargs)


def min_jerk_position(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)


def min_jerk_velocity(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return 30.0 * tau**2 * (1.0 - tau) ** 2


_PHASE_GRID = np.linspace(0.0, 1.0, 20001)
_POSITION_GRID = min_jerk_position(_PHASE_GRID)


def _min_jerk_phase(p):
    """Invert the min-jerk position polynomial on [0, 1] by table lookup."""
    return np.interp(p, _POSITION_GRID, _PHASE_GRID)


def min_jerk_line(x0, duration: float = 2.5, floor_fraction: float = 0.1, **kwargs) -> PathField:
    """Straight line from ``x0`` to the origin with a min-jerk speed profile.

    The speed at a point is the min-jerk speed at the phase where the
    min-jerk position reaches that point, floored at ``floor_fraction`` of
    the peak speed so that ``x0`` is not an equilibrium.
    """
    x0 = np.asarray(x0, dtype=float)
    length = float(np.linalg.norm(x0))
    if length <= 1e-9:
        raise ValueError("min-jerk line needs a non-zero start point")
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    scale = length / duration
    floor = floor_fraction * 1.875 * scale

    def profile(sigma):
        tau = _min_jerk_phase(1.0 - np.asarray(sigma) / length)
        return np.maximum(scale * min_jerk_velocity(tau), floor)

    pts = np.vstack([x0, np.zeros_like(x0)])
    meta = {"x0": x0.tolist(), "duration": duration, "floor_fraction": floor_fraction}
    return PathField(points=pts, speeds=floor, speed_profile=profile, kind="min-jerk-line", meta=meta, **kwargs)


def curve_preset(
    x0,
    shape: str = "arc",
    amplitude: float = 0.15,
    speed: float = 0.2,
    n_segments: int = 60,
    **kwargs,
) -> PathField:
    """Analytic curve from ``x0`` to the origin, sampled into a dense path.

    ``arc`` is the circular arc through both end points whose sagitta is
    ``amplitude`` (signed, left of the travel direction when positive);
    ``sine`` adds a full sine period of lateral offset to the straight line.
    """
    x0 = np.asarray(x0, dtype=float)
    chord = -x0
    length = float(np.linalg.norm(chord))
    if length <= 1e-9:
        raise ValueError("curve preset needs a non-zero start point")
    t = chord / length
    n = np.array([-t[1], t[0]])
    u = np.linspace(0.0, 1.0, n_segments + 1)
    if shape == "arc":
        h = float(amplitude)
        if abs(h) < 1e-12:
            lateral = np.zeros_like(u)
        else:
            radius = (length**2 / 4.0 + h**2) / (2.0 * abs(h))
            along = (u - 0.5) * length
            lateral = np.sign(h) * (np.sqrt(np.maximum(radius**2 - along**2, 0.0)) - (radius - abs(h)))
    elif shape == "sine":
        lateral = amplitude * np.sin(2.0 * np.pi * u)
    else:
        raise ValueError(f"unknown curve shape {shape!r}")
    pts = x0 + u[:, None] * chord + lateral[:, None] * n
    pts[-1] = 0.0
    meta = {"x0": x0.tolist(), "shape": shape, "amplitude": amplitude, "n_segments": n_segments}
    return PathField(points=pts, speeds=speed, kind="curve-preset", meta=meta, **kwargs)


# ---------------------------------------------------------------------------
# integration and sampling


def _rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_open_loop(
    field: MotionField,
    x0,
    dt: float = 1e-3,
    t_final: float = 20.0,
    convergence_radius: float = CONVERGENCE_RADIUS,
    workspace_bound: float = WORKSPACE_BOUND,
):
    """Fixed-step RK4 rollout of ``x_dot = f_g(x)``.

    Returns ``(times, positions)``.  Stops early once ``|x| < convergence_radius``.
    Leaving the box ``|x_j| <= 2 * workspace_bound`` raises :class:`IntegrationError`.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    if not t_final >= dt:
        raise ValueError("t_final must be at least dt")
    x = _check_finite(x0, "x0").copy()
    f = field.__call__
    n_steps = int(math.floor(t_final / dt + 1e-9))
    xs = [x]
    for k in range(n_steps):
        if math.sqrt(float(x @ x)) < convergence_radius:
            break
        x = _rk4_step(f, x, dt)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 2.0 * workspace_bound:
            raise IntegrationError(f"open-loop rollout diverged at step {k + 1}: x={x}")
        xs.append(x)
    xs = np.asarray(xs)
    return dt * np.arange(len(xs)), xs


def arc_length(xs: np.ndarray) -> np.ndarray:
    """Cumulative arc length of a polyline, starting at 0."""
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xs, axis=0), axis=1))])


def resample_by_arc_length(xs: np.ndarray, n: int) -> np.ndarray:
    s = arc_length(xs)
    targets = np.linspace(0.0, s[-1], n)
    out = np.column_stack([np.interp(targets, s, xs[:, j]) for j in range(xs.shape[1])])
    out[0] = xs[0]
    out[-1] = xs[-1]
    return out


def sample_local_attractors(
    field: MotionField,
    x0,
    n: int,
    dt: float = 1e-3,
    t_final: float = 60.0,
    min_length: float = 1e-6,
    rollout: np.ndarray | None = None,
) -> np.ndarray:
    """``n`` points along the integral curve from ``x0``, equally spaced by arc length.

    The first point is ``x0`` and the last is exactly the origin.  A
    converged open-loop ``rollout`` from ``x0`` may be supplied to skip the
    integration.
    """
    if n < 2:
        raise ValueError("need at least two local attractors")
    x0 = _check_finite(x0, "x0")
    if rollout is not None and np.linalg.norm(rollout[-1]) <= CONVERGENCE_RADIUS and np.allclose(rollout[0], x0):
        xs = np.asarray(rollout, dtype=float)
    else:
        _, xs = integrate_open_loop(field, x0, dt=dt, t_final=t_final)
    xs = np.vstack([xs, np.zeros_like(x0)])
    if arc_length(xs)[-1] < min_length:
        raise SamplingError(f"integral curve from {x0} is shorter than {min_length} m")
    pts = resample_by_arc_length(xs, n)
    pts[-1] = 0.0
    return pts


def field_from_dict(spec: dict) -> MotionField:
    """Rebuild a field from :meth:`MotionField.to_dict` output."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "linear":
        return LinearField(np.asarray(spec["gain"]))
    common = {k: spec[k] for k in ("k_corr", "blend_radius", "softmin_width", "approach_rate") if k in spec}
    if kind == "min-jerk-line":
        return min_jerk_line(spec["x0"], spec["duration"], spec["floor_fraction"], **common)
    if kind == "curve-preset":
        return curve_preset(
            spec["x0"], spec["shape"], spec["amplitude"], spec["speeds"][0], spec["n_segments"], **common
        )
    if kind == "polyline":
        return PathField(points=np.asarray(spec["points"]), speeds=np.asarray(spec["speeds"]), **common)
    raise ValueError(f"unknown field kind {kind!r}")


def in_workspace(x: Sequence[float], bound: float = WORKSPACE_BOUND) -> bool:
    return bool(np.all(np.abs(np.asarray(x)) <= bound))


# Desk-scale analogues of the handwriting motions used in the experiments.
PRESET_STARTS = {
    "line": (-0.35, -0.30),
    "curve": (-0.45, 0.10),
    "angle": (-0.40, 0.05),
    "w": (-0.50, 0.15),
}


def make_preset(name: str, x0=None, **kwargs) -> MotionField:
    """Named motion presets: ``line``, ``curve``, ``angle``, ``w`` and ``linear``."""
    if name == "linear":
        return LinearField(np.asarray(kwargs.get("gain", np.eye(2)), dtype=float))
    if x0 is None:
        x0 = PRESET_STARTS[name]
    x0 = np.asarray(x0, dtype=float)
    if name == "line":
        return min_jerk_line(x0, **kwargs)
    if name == "curve":
        return curve_preset(x0, **kwargs)
    if name == "angle":
        # apex placed left of the chord at 60% of its length
        t = -x0 / np.linalg.norm(x0)
        n = np.array([-t[1], t[0]])
        apex = x0 + 0.6 * (-x0) + 0.3 * np.linalg.norm(x0) * n
        return polyline_field([x0, apex, np.zeros(2)], **kwargs)
    if name == "w":
        t = -x0 / np.linalg.norm(x0)
        n = np.array([-t[1], t[0]])
        amp = 0.12
        u = np.linspace(0.0, 1.0, 5)
        offsets = np.array([0.0, -amp, amp * 0.5, -amp, 0.0])
        pts = x0 + u[:, None] * (-x0) + offsets[:, None] * n
        return polyline_field(pts, **kwargs)
    raise ValueError(f"unknown preset {name!r}")
