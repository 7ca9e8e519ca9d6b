"""Energy-tank passification of the spring-field controller.

The controller force is

    F = Phi(x) + gamma(z, s) * kappa(|x|) * (f_vs,o(x) + f_f(x)) - D(x) v

where ``Phi = -grad(phi)`` is a conservative field, ``kappa`` vanishes at
the attractor and ``z = kappa * v . (f_vs,o + f_f)`` is the power of the
possibly non-passive part.  The tank energy ``s`` obeys

    s_dot = alpha(s) v.D v - beta(z, s) z - (eta - kappa) s

so that the total storage ``W = 1/2 v.M v + phi(x) + s`` never grows faster
than the power injected at the interaction port.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .vsds_core import VsdsModel, eval_damping, eval_vsds_org, weights_flagged

BAND_FRACTION = 0.02


@dataclass(frozen=True)
class PassifierParams:
    k_o: float = 0.4
    zeta: float = 0.006
    tau_min: float = 1.0
    kappa_rate: float = 10.0
    s0: float = 30.0
    s_max: float = 50.0
    eta: float = 1.05
    alpha_fill: float = 0.9
    # debug switch: drop the -(eta - kappa) s term
    tank_decay: bool = True

    def __post_init__(self):
        for name in ("k_o", "zeta", "tau_min", "kappa_rate", "s_max", "eta"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.s0 < 0.0 or self.s0 > self.s_max:
            raise ValueError("s0 must lie in [0, s_max]")
        if not self.eta > 1.0:
            raise ValueError("eta must exceed 1")
        if not 0.0 <= self.alpha_fill < 1.0:
            raise ValueError("alpha_fill must lie in [0, 1)")

    @property
    def band(self) -> float:
        return BAND_FRACTION * self.s_max

    def replace(self, **changes) -> "PassifierParams":
        return replace(self, **changes)


@dataclass
class TankState:
    s: float
    clamp_events: int = 0


def _smooth(u: float) -> float:
    # scalar cubic smoothstep on [0, 1]
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    return u * u * (3.0 - 2.0 * u)


def potential_value(p: PassifierParams, x) -> float:
    """``phi(x) = k_o (1 - exp(-x.x / 2 zeta)) + tau_min x.x``."""
    x = np.asarray(x, dtype=float)
    r2 = float(x @ x)
    return p.k_o * -math.expm1(-r2 / (2.0 * p.zeta)) + p.tau_min * r2


def potential_force(p: PassifierParams, x) -> np.ndarray:
    """``Phi(x) = -grad phi(x)``."""
    x = np.asarray(x, dtype=float)
    r2 = float(x @ x)
    return -(p.k_o / p.zeta * math.exp(-r2 / (2.0 * p.zeta)) + 2.0 * p.tau_min) * x


def activation(p: PassifierParams, x) -> float:
    """``kappa(|x|) = 1 - exp(-kappa_rate |x|)``."""
    x = np.asarray(x, dtype=float)
    return -math.expm1(-p.kappa_rate * math.sqrt(float(x @ x)))


def gates(p: PassifierParams, s: float, z: float) -> tuple[float, float, float]:
    """Tank gates ``(alpha, beta, gamma)``.

    alpha fades to 0 over the band below ``s_max``.  For ``z >= 0`` (energy
    drawn from the tank) beta fades to 0 over the band above empty; for
    ``z < 0`` it fades to 0 over the band below full.  gamma equals beta
    when ``z >= 0`` and 1 otherwise.
    """
    if s < 0.0:
        raise ValueError("tank energy must be non-negative")
    band = p.band
    full_side = _smooth((p.s_max - s) / band)
    alpha = p.alpha_fill * full_side
    if z >= 0.0:
        beta = _smooth(s / band)
        gamma = beta
    else:
        beta = full_side
        gamma = 1.0
    return alpha, beta, gamma


def tank_rate(p: PassifierParams, s: float, x, v, D, z: float) -> float:
    alpha, beta, _ = gates(p, s, z)
    rate = alpha * float(v @ (D @ v)) - beta * z
    if p.tank_decay:
        rate -= (p.eta - activation(p, x)) * s
    return rate


def tank_step(p: PassifierParams, state: TankState, x, v, D, z: float, dt: float) -> TankState:
    """Explicit Euler step of the tank followed by clamping to ``[0, s_max]``."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    s_new = state.s + dt * tank_rate(p, state.s, x, v, D, z)
    clamps = state.clamp_events
    if s_new < 0.0:
        s_new, clamps = 0.0, clamps + 1
    elif s_new > p.s_max:
        s_new, clamps = p.s_max, clamps + 1
    return TankState(s_new, clamps)


def storage(p: PassifierParams, mass: np.ndarray, x, v, s: float) -> float:
    """Total storage ``1/2 v.M v + phi(x) + s``."""
    v = np.asarray(v, dtype=float)
    return 0.5 * float(v @ mass @ v) + potential_value(p, x) + s


@dataclass
class ControlTerms:
    """Intermediate quantities of one controller evaluation."""

    F: np.ndarray
    z: float
    kappa: float
    D: np.ndarray
    nominal: np.ndarray  # f_vs,o + f_f


def passive_control_terms(model: VsdsModel, ff, p: PassifierParams, s: float, x, v) -> ControlTerms:
    w, _ = weights_flagged(model, x)
    D = eval_damping(model, x, w)
    nominal = eval_vsds_org(model, x, w) + ff.evaluate(model, x, w, D)
    kappa = activation(p, x)
    z = kappa * float(v @ nominal)
    _, _, gamma = gates(p, s, z)
    F = potential_force(p, x) + gamma * kappa * nominal - D @ v
    return ControlTerms(F, z, kappa, D, nominal)


def passive_control(model: VsdsModel, ff, p: PassifierParams, tank: TankState, x, v):
    """Passified control force and the port power ``z`` for the tank update."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    terms = passive_control_terms(model, ff, p, tank.s, x, v)
    return terms.F, terms.z


def unpassified_control(model: VsdsModel, ff, p: PassifierParams, x, v) -> np.ndarray:
    """The velocity-tracking law without tank gating: ``Phi + kappa (f_vs,o + f_f) - D v``."""
    w, _ = weights_flagged(model, x)
    D = eval_damping(model, x, w)
    nominal = eval_vsds_org(model, x, w) + ff.evaluate(model, x, w, D)
    return potential_force(p, x) + activation(p, x) * nominal - D @ v


def original_control(model: VsdsModel, x, v) -> np.ndarray:
    """The original law with unit smoothing gain: ``f_vs,o(x) - D(x) v``."""
    w, _ = weights_flagged(model, x)
    return eval_vsds_org(model, x, w) - eval_damping(model, x, w) @ v
