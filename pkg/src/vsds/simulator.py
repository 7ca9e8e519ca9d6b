"""Closed-loop simulation of a point mass driven by the spring-field controllers."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .config import ScenarioConfig, build_field, build_passifier, build_stiffness, start_point
from .ds_core import MotionField, arc_length, eval_field, integrate_open_loop, resample_by_arc_length
from .energy_tank import (
    PassifierParams,
    TankState,
    activation,
    gates,
    potential_force,
    potential_value,
    tank_rate,
)
from .feedforward import FeedForwardField, optimize_feedforward, simulate_reference
from .vsds_core import VsdsModel, build_rotation, build_vsds, eval_damping, eval_vsds_org, weights_flagged

logger = logging.getLogger(__name__)

CONTROLLERS = ("org", "vf", "qp", "original", "baseline")
TANK_CONTROLLERS = ("org", "vf", "qp")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MassModel:
    M: np.ndarray

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        if M.ndim == 2 and M.shape[0] == 1 and M.shape[1] > 1:
            M = np.diag(M[0])
        d = np.diag(M)
        if np.any(d <= 0.0) or np.any(np.abs(M - np.diag(d)) > 0.0):
            raise ValueError("mass must be a positive diagonal matrix")
        object.__setattr__(self, "M", M)

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.M)


@dataclass(frozen=True)
class Perturbation:
    t_start: float
    t_end: float
    force: np.ndarray | None = None
    magnitude: float | None = None
    perpendicular: bool = False


@dataclass
class PerturbationSchedule:
    entries: list[Perturbation] = field(default_factory=list)

    def __post_init__(self):
        spans = sorted((e.t_start, e.t_end) for e in self.entries)
        for t0, t1 in spans:
            if not t0 < t1:
                raise ValueError("perturbation needs t_start < t_end")
        for (_, a1), (b0, _) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ValueError("perturbation intervals overlap")
        self._held: dict[int, np.ndarray] = {}

    def force(self, t: float, x, v, field: MotionField) -> np.ndarray:
        out = np.zeros(len(x))
        for idx, e in enumerate(self.entries):
            if not e.t_start <= t < e.t_end:
                continue
            if not e.perpendicular:
                out += e.force
                continue
            if idx not in self._held:
                # direction frozen at the activation instant
                ref = v if np.linalg.norm(v) > 1e-9 else eval_field(field, x)
                if np.linalg.norm(ref) <= 1e-12:
                    ref = np.eye(len(x))[0]
                self._held[idx] = e.magnitude * build_rotation(ref)[:, 1]
            out += self._held[idx]
        return out


@dataclass(frozen=True)
class ContactWall:
    """Penalty wall occupying ``side * (x[axis] - position) > 0``."""

    axis: int
    position: float
    stiffness: float = 5000.0
    damping: float = 50.0
    side: int = 1

    def __post_init__(self):
        if not self.stiffness > 0.0:
            raise ValueError("wall stiffness must be positive")
        if self.side not in (-1, 1):
            raise ValueError("wall side must be +1 or -1")

    def penetration(self, x) -> float:
        return max(0.0, self.side * (float(x[self.axis]) - self.position))


def wall_force(wall: ContactWall, x, v) -> np.ndarray:
    """Penalty force; damping acts only while penetrating and approaching."""
    out = np.zeros(len(x))
    depth = wall.penetration(x)
    if depth <= 0.0:
        return out
    approach = wall.side * float(v[wall.axis])
    push = wall.stiffness * depth + (wall.damping * approach if approach > 0.0 else 0.0)
    out[wall.axis] = -wall.side * push
    return out


def step_dynamics(mass: MassModel, x, v, F, F_ext, dt: float, step: int | None = None):
    """Semi-implicit Euler: ``v' = v + M^-1 (F + F_ext) dt``, ``x' = x + v' dt``."""
    total = np.asarray(F, dtype=float) + np.asarray(F_ext, dtype=float)
    if not np.all(np.isfinite(total)):
        where = f" at step {step}" if step is not None else ""
        raise SimulationError(f"non-finite force{where}: F={F}, F_ext={F_ext}")
    v_new = v + dt * total / mass.diag
    return x + dt * v_new, v_new


def baseline_passive_control(field: MotionField, D_PI_eigs, x, v, fg=None) -> np.ndarray:
    """Flow-tracking law ``D_PI(x) (f_g(x) - v)`` with damping aligned to the flow."""
    if fg is None:
        fg = eval_field(field, x)
    eigs = np.asarray(D_PI_eigs, dtype=float)
    if np.linalg.norm(fg) > 1e-9:
        q = build_rotation(fg)
        D = (q * eigs) @ q.T
    else:
        D = float(np.mean(eigs)) * np.eye(len(x))
    return D @ (fg - v)


# ---------------------------------------------------------------------------
# logs and metrics

LOG_SCALARS = ("s", "z", "kappa", "W", "wall_pen")


@dataclass
class SimLog:
    dt: float
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    xd: np.ndarray
    fg: np.ndarray
    F: np.ndarray
    F_ext: np.ndarray
    s: np.ndarray
    z: np.ndarray
    kappa: np.ndarray
    W: np.ndarray
    wall_pen: np.ndarray
    reference_path: np.ndarray | None = None
    method: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def header(self) -> list[str]:
        m = self.dim
        cols = ["t"]
        for name in ("x", "v", "xd", "fg", "F", "Fext"):
            cols += [f"{name}{j + 1}" for j in range(m)]
        return cols + list(LOG_SCALARS)

    def table(self) -> np.ndarray:
        return np.column_stack(
            [self.t, self.x, self.v, self.xd, self.fg, self.F, self.F_ext, self.s, self.z, self.kappa, self.W, self.wall_pen]
        )

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            writer.writerows(self.table().tolist())

    @classmethod
    def from_csv(cls, path, dt: float | None = None) -> "SimLog":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = np.asarray([[float(v) for v in row] for row in reader], dtype=float)
        m = (len(header) - 1 - len(LOG_SCALARS)) // 6
        cols = [data[:, 1 + k * m : 1 + (k + 1) * m] for k in range(6)]
        sc = data[:, 1 + 6 * m :]
        if dt is None:
            dt = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 0.0
        return cls(dt, data[:, 0], *cols, *(sc[:, k] for k in range(len(LOG_SCALARS))))


@dataclass
class MetricReport:
    rms_velocity_error: float
    max_path_deviation: float
    convergence_time: float | None
    final_position_norm: float
    max_ext_force: float
    steady_ext_force: float
    tank_final: float
    tank_min: float
    tank_max: float
    max_passivity_violation: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def project_on_polyline(points: np.ndarray, path: np.ndarray, resolution: float = 5e-5):
    """Distance from every row of ``points`` to the polyline ``path`` and the
    arc-length position of the closest path point.

    The polyline is resampled every ``resolution`` metres and queried with a
    k-d tree, so distances overestimate the exact value by at most
    ``resolution / 2``.
    """
    points = np.atleast_2d(points)
    path = np.atleast_2d(path)
    total = arc_length(path)[-1]
    if total <= 0.0:
        return np.linalg.norm(points - path[0], axis=1), np.zeros(len(points))
    n = max(2, int(math.ceil(total / resolution)) + 1)
    dense = resample_by_arc_length(path, n)
    dist, idx = cKDTree(dense).query(points)
    return dist, idx * (total / (n - 1))


def distance_to_polyline(points: np.ndarray, path: np.ndarray, resolution: float = 5e-5) -> np.ndarray:
    return project_on_polyline(points, path, resolution)[0]


def rejoin_point(log: SimLog, tol: float = 2e-3, after: float = 0.0):
    """First time after ``after`` at which the mass is within ``tol`` of the
    reference path, with the arc length travelled along the path to that
    point.  Returns ``(None, None)`` if it never rejoins."""
    ref = log.reference_path if log.reference_path is not None else log.xd
    dist, arc = project_on_polyline(log.x, ref)
    hits = np.flatnonzero((dist <= tol) & (log.t >= after))
    if len(hits) == 0:
        return None, None
    k = int(hits[0])
    return float(log.t[k]), float(arc[k])


def passivity_violations(log: SimLog) -> np.ndarray:
    """Per-step ``W_{k+1} - W_k - v_mid . F_ext dt`` with the midpoint velocity."""
    v_mid = 0.5 * (log.v[1:] + log.v[:-1])
    port = np.einsum("ij,ij->i", v_mid, log.F_ext[:-1]) * log.dt
    return np.diff(log.W) - port


def metrics(log: SimLog, steady_window: float = 2.0, convergence_radius: float = 1e-3) -> MetricReport:
    err = log.fg - log.v
    rms = math.sqrt(float(np.mean(np.einsum("ij,ij->i", err, err))))
    if log.reference_path is not None:
        ref = log.reference_path
    else:
        ref = log.xd
    deviation = float(np.max(distance_to_polyline(log.x, ref)))
    r = np.linalg.norm(log.x, axis=1)
    outside = np.flatnonzero(r >= convergence_radius)
    if len(outside) == 0:
        conv = float(log.t[0])
    elif outside[-1] == len(r) - 1:
        conv = None
    else:
        conv = float(log.t[outside[-1] + 1])
    fext = np.linalg.norm(log.F_ext, axis=1)
    steady_mask = log.t >= log.t[-1] - steady_window
    viol = passivity_violations(log) if len(log.t) > 1 else np.zeros(1)
    return MetricReport(
        rms_velocity_error=rms,
        max_path_deviation=deviation,
        convergence_time=conv,
        final_position_norm=float(r[-1]),
        max_ext_force=float(np.max(fext)),
        steady_ext_force=float(np.mean(fext[steady_mask])),
        tank_final=float(log.s[-1]),
        tank_min=float(np.min(log.s)),
        tank_max=float(np.max(log.s)),
        max_passivity_violation=float(np.max(viol, initial=0.0)),
    )


# ---------------------------------------------------------------------------
# scenario runner


@dataclass
class Controller:
    """Everything a run needs to evaluate its control law."""

    method: str
    field: MotionField
    model: VsdsModel | None
    ff: FeedForwardField | None
    passifier: PassifierParams
    baseline_damping: np.ndarray | None = None
    # open-loop rollout of the DS from the start point, at the run's dt
    open_loop: np.ndarray | None = None


def build_controller(cfg: ScenarioConfig, tank_decay: bool = True) -> Controller:
    field = build_field(cfg.ds)
    x0 = start_point(cfg.ds, field)
    passifier = build_passifier(cfg.passifier, tank_decay=tank_decay)
    _, open_loop = integrate_open_loop(field, x0, dt=cfg.sim.dt, t_final=cfg.sim.t_final)
    method = cfg.ff.method
    if method == "baseline":
        damping = np.asarray(cfg.ff.baseline_damping, dtype=float)
        return Controller(method, field, None, None, passifier, damping, open_loop)
    stiffness = build_stiffness(cfg.stiffness)
    damping = cfg.vsds.damping_eigs if method == "vf" else cfg.vsds.spring_damping
    model = build_vsds(
        field, stiffness, damping, x0, n=cfg.vsds.n_springs, eps_scale=cfg.vsds.eps_scale, dt=cfg.sim.dt, rollout=open_loop
    )
    if method == "vf":
        ff = FeedForwardField("velocity-feedback")
    elif method == "qp":
        data = simulate_reference(
            field, stiffness, np.diag(cfg.sim.mass), x0, dt=cfg.sim.dt, t_final=cfg.sim.t_final, open_loop=open_loop
        )
        ff = optimize_feedforward(data, model, passifier, (cfg.ff.lower, cfg.ff.upper), cfg.ff.f_min)
    else:
        ff = FeedForwardField("none")
    return Controller(method, field, model, ff, passifier, open_loop=open_loop)


def schedule_from_config(cfg: ScenarioConfig) -> PerturbationSchedule:
    entries = []
    for p in cfg.perturbations:
        force = None if p.force is None else np.asarray(p.force, dtype=float)
        entries.append(Perturbation(p.t_start, p.t_end, force, p.magnitude, p.mode == "perpendicular"))
    return PerturbationSchedule(entries)


def simulate(
    ctrl: Controller,
    mass: MassModel,
    x0,
    dt: float,
    t_final: float,
    schedule: PerturbationSchedule | None = None,
    wall: ContactWall | None = None,
) -> SimLog:
    """Closed loop: controller, then tank update, then plant step, every ``dt``."""
    schedule = schedule or PerturbationSchedule()
    p = ctrl.passifier
    model = ctrl.model
    field = ctrl.field
    ff = ctrl.ff
    m = len(x0)
    n_rows = int(math.floor(t_final / dt + 1e-9)) + 1
    uses_tank = ctrl.method in TANK_CONTROLLERS

    if ctrl.open_loop is not None:
        xd_open = ctrl.open_loop
    else:
        _, xd_open = integrate_open_loop(field, x0, dt=dt, t_final=t_final)
    xd = np.vstack([xd_open, np.repeat(xd_open[-1:], max(0, n_rows - len(xd_open)), axis=0)])[:n_rows]

    X = np.empty((n_rows, m))
    V = np.empty((n_rows, m))
    FG = np.empty((n_rows, m))
    FF = np.empty((n_rows, m))
    FE = np.empty((n_rows, m))
    S = np.empty(n_rows)
    Z = np.zeros(n_rows)
    KAP = np.empty(n_rows)
    PEN = np.zeros(n_rows)

    x = np.asarray(x0, dtype=float).copy()
    v = np.zeros(m)
    s = p.s0 if uses_tank else 0.0
    inv_mass = 1.0 / mass.diag
    no_push = np.zeros(m)
    method = ctrl.method
    for k in range(n_rows):
        t = k * dt
        f_ext = schedule.force(t, x, v, field) if schedule.entries else no_push
        if wall is not None:
            f_ext = f_ext + wall_force(wall, x, v)
            PEN[k] = wall.penetration(x)
        fg = eval_field(field, x)
        kappa = activation(p, x)
        z = 0.0
        if method == "baseline":
            F = baseline_passive_control(field, ctrl.baseline_damping, x, v, fg=fg)
        else:
            w, _ = weights_flagged(model, x)
            D = eval_damping(model, x, w)
            f_org = eval_vsds_org(model, x, w)
            if method == "original":
                F = f_org - D @ v
            else:
                nominal = f_org + ff.evaluate(model, x, w, D, fg=fg)
                z = kappa * float(v @ nominal)
                gamma = gates(p, s, z)[2]
                F = potential_force(p, x) + gamma * kappa * nominal - D @ v

        X[k], V[k], FG[k], FF[k], FE[k] = x, v, fg, F, f_ext
        S[k], Z[k], KAP[k] = s, z, kappa
        if k == n_rows - 1:
            break
        # semi-implicit Euler, inlined from step_dynamics
        total = F + f_ext
        if not math.isfinite(float(total.sum())):
            raise SimulationError(f"non-finite force at step {k}: F={F}, F_ext={f_ext}")
        v_new = v + dt * total * inv_mass
        if uses_tank:
            # the tank is charged with the power at the step's mean velocity,
            # which is the velocity that appears in the exact kinetic-energy
            # increment of the semi-implicit step
            v_mid = 0.5 * (v + v_new)
            z_mid = kappa * float(v_mid @ nominal)
            s_new = s + dt * tank_rate(p, s, x, v_mid, D, z_mid)
            s = min(max(s_new, 0.0), p.s_max)
        v = v_new
        x = x + dt * v
        if float(np.abs(x).max()) > 10.0:
            raise SimulationError(f"state left the workspace at step {k}: x={x}")

    # storage W = 1/2 v.M v + phi(x) + s, evaluated row-wise
    r2 = np.einsum("ij,ij->i", X, X)
    WW = 0.5 * (V * V) @ mass.diag + p.k_o * -np.expm1(-r2 / (2.0 * p.zeta)) + p.tau_min * r2 + S

    return SimLog(
        dt=dt,
        t=dt * np.arange(n_rows),
        x=X,
        v=V,
        xd=xd,
        fg=FG,
        F=FF,
        F_ext=FE,
        s=S,
        z=Z,
        kappa=KAP,
        W=WW,
        wall_pen=PEN,
        reference_path=xd_open,
        method=ctrl.method,
    )


def run_scenario(cfg: ScenarioConfig, tank_decay: bool = True, controller: Controller | None = None) -> SimLog:
    """Build the controller described by ``cfg`` and simulate it."""
    ctrl = controller or build_controller(cfg, tank_decay=tank_decay)
    x0 = start_point(cfg.ds, ctrl.field)
    mass = MassModel(np.diag(cfg.sim.mass))
    wall = None
    if cfg.wall is not None:
        w = cfg.wall
        wall = ContactWall(w.axis, w.position, w.stiffness, w.damping, w.side)
    start = x0 if cfg.sim.start_offset is None else x0 + np.asarray(cfg.sim.start_offset, dtype=float)
    log = simulate(ctrl, mass, start, cfg.sim.dt, cfg.sim.t_final, schedule_from_config(cfg), wall)
    log.meta["controller"] = ctrl
    return log
