"""Scenario configuration: a single YAML tree validated with pydantic.

Defaults follow the experimental parameter set (N = 20 springs,
zeta = 0.006, tau_min = 1, k_o = 0.4, s0 = 30 J, eta = 1.05, F_min = 10 N,
K_d = diag(1200, 1500), velocity-feedback damping 250 N s/m).
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import ds_core
from .energy_tank import PassifierParams
from .vsds_core import StiffnessProfile


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``(field path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{loc}: {msg}" for loc, msg in errors))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


PATH_PARAMS = {"k_corr", "blend_radius", "softmin_width", "approach_rate"}
DS_PARAMS = {
    "linear": {"gain"},
    "line": PATH_PARAMS | {"duration", "floor_fraction"},
    "min-jerk-line": PATH_PARAMS | {"duration", "floor_fraction"},
    "curve": PATH_PARAMS | {"shape", "amplitude", "speed", "n_segments"},
    "curve-preset": PATH_PARAMS | {"shape", "amplitude", "speed", "n_segments"},
    "angle": PATH_PARAMS | {"speeds"},
    "w": PATH_PARAMS | {"speeds"},
    "polyline": PATH_PARAMS | {"waypoints", "csv", "speeds"},
}


class DsConfig(_Section):
    type: Literal["linear", "line", "min-jerk-line", "curve", "curve-preset", "angle", "w", "polyline"]
    params: dict[str, Any] = Field(default_factory=dict)
    x0: Optional[list[float]] = None

    @model_validator(mode="after")
    def _check_params(self):
        unknown = sorted(set(self.params) - DS_PARAMS[self.type])
        if unknown:
            raise ValueError(f"unknown ds.params keys for type {self.type!r}: {unknown}")
        if self.type == "polyline" and not ({"waypoints", "csv"} & set(self.params)):
            raise ValueError("polyline needs params.waypoints or params.csv")
        if self.type in ("min-jerk-line", "curve-preset") and self.x0 is None:
            raise ValueError(f"{self.type} needs x0")
        if self.x0 is not None and not all(np.isfinite(self.x0)):
            raise ValueError("x0 must be finite")
        return self


class StiffnessConfig(_Section):
    type: Literal["constant", "sinusoidal", "tabulated"] = "constant"
    params: dict[str, Any] = Field(default_factory=lambda: {"diag": [1200.0, 1500.0]})

    @model_validator(mode="after")
    def _check(self):
        key = {"constant": "diag", "sinusoidal": "rows", "tabulated": "table"}[self.type]
        if set(self.params) != {key}:
            raise ValueError(f"stiffness type {self.type!r} takes exactly params.{key}")
        return self


class VsdsConfig(_Section):
    n_springs: int = Field(20, ge=2, le=200)
    eps_scale: float = Field(0.5, gt=0.0, le=5.0)
    # velocity-feedback damping, N s/m
    damping_eigs: list[float] = Field(default_factory=lambda: [250.0, 250.0])
    # damping for the org / qp / original controllers
    spring_damping: Union[Literal["critical"], list[float]] = "critical"

    @field_validator("damping_eigs")
    @classmethod
    def _positive(cls, v):
        if not v or any(d <= 0.0 for d in v):
            raise ValueError("damping eigenvalues must be positive")
        return v


class PassifierConfig(_Section):
    k_o: float = Field(0.4, gt=0.0)
    zeta: float = Field(0.006, gt=0.0)
    tau_min: float = Field(1.0, gt=0.0)
    kappa_rate: float = Field(10.0, gt=0.0)
    s0: float = Field(30.0, ge=0.0)
    s_max: float = Field(50.0, gt=0.0)
    eta: float = Field(1.05, gt=1.0)
    alpha_fill: float = Field(0.9, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _tank(self):
        if self.s0 > self.s_max:
            raise ValueError("s0 must not exceed s_max")
        return self


class FfConfig(_Section):
    method: Literal["org", "vf", "qp", "original", "baseline"] = "org"
    lower: float = -40.0
    upper: float = 40.0
    f_min: float = Field(10.0, gt=0.0)
    baseline_damping: list[float] = Field(default_factory=lambda: [250.0, 250.0])

    @model_validator(mode="after")
    def _bounds(self):
        if not self.lower < self.upper:
            raise ValueError("ff.lower must be below ff.upper")
        return self


class SimConfig(_Section):
    dt: float = Field(1e-3, gt=0.0, le=0.01)
    t_final: float = Field(20.0, gt=0.0, le=600.0)
    mass: list[float] = Field(default_factory=lambda: [1.0, 1.0])
    # the mass starts at ds.x0 + start_offset; the DS, springs and QP still use ds.x0
    start_offset: Optional[list[float]] = None

    @field_validator("mass")
    @classmethod
    def _mass(cls, v):
        if any(m <= 0.0 for m in v):
            raise ValueError("masses must be positive")
        return v


class PerturbationConfig(_Section):
    t_start: float = Field(ge=0.0)
    t_end: float
    mode: Literal["fixed", "perpendicular"] = "fixed"
    force: Optional[list[float]] = None
    magnitude: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if not self.t_start < self.t_end:
            raise ValueError("t_start must precede t_end")
        if self.mode == "fixed" and self.force is None:
            raise ValueError("fixed perturbation needs force")
        if self.mode == "perpendicular" and self.magnitude is None:
            raise ValueError("perpendicular perturbation needs magnitude")
        return self


class WallConfig(_Section):
    axis: int = Field(ge=0)
    position: float
    stiffness: float = Field(5000.0, gt=0.0)
    damping: float = Field(50.0, ge=0.0)
    side: Literal[-1, 1] = 1


class OutputConfig(_Section):
    csv_path: Optional[str] = None
    model_json_path: Optional[str] = None
    metrics_path: Optional[str] = None


class ScenarioConfig(_Section):
    name: str = "scenario"
    ds: DsConfig
    stiffness: StiffnessConfig = Field(default_factory=StiffnessConfig)
    vsds: VsdsConfig = Field(default_factory=VsdsConfig)
    passifier: PassifierConfig = Field(default_factory=PassifierConfig)
    ff: FfConfig = Field(default_factory=FfConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    perturbations: list[PerturbationConfig] = Field(default_factory=list)
    wall: Optional[WallConfig] = None
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _cross(self):
        spans = sorted((p.t_start, p.t_end) for p in self.perturbations)
        for (a0, a1), (b0, _) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ValueError("perturbation intervals overlap")
        m = len(self.sim.mass)
        for name, vec in (("vsds.damping_eigs", self.vsds.damping_eigs), ("ff.baseline_damping", self.ff.baseline_damping)):
            if len(vec) != m:
                raise ValueError(f"{name} must have {m} entries")
        if self.sim.start_offset is not None and len(self.sim.start_offset) != m:
            raise ValueError(f"sim.start_offset must have {m} entries")
        if self.wall is not None and self.wall.axis >= m:
            raise ValueError("wall.axis out of range")
        return self

    # -- conversions -----------------------------------------------------

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def with_method(self, method: str) -> "ScenarioConfig":
        data = self.to_dict()
        data["ff"]["method"] = method
        return parse_config(data)

    def updated(self, **sections) -> "ScenarioConfig":
        """Copy with nested overrides, e.g. ``updated(sim={"dt": 5e-4})``."""
        data = self.to_dict()
        for key, val in sections.items():
            if isinstance(val, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **val}
            else:
                data[key] = val
        return parse_config(data)


def _format_errors(exc) -> list[tuple[str, str]]:
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"]
        if err["type"] == "missing":
            msg = f"missing required section or field {loc!r}"
        elif err["type"] == "extra_forbidden":
            msg = f"unknown key {loc!r}"
        out.append((loc, msg))
    return out


def parse_config(data: dict) -> ScenarioConfig:
    from pydantic import ValidationError

    if not isinstance(data, dict):
        raise ConfigError([("<root>", "configuration must be a mapping")])
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([(str(path), str(exc))]) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ConfigError([(where, f"YAML syntax error: {getattr(exc, 'problem', exc)}")]) from None
    cfg = parse_config(data)
    # relative CSV paths resolve against the config file
    if cfg.ds.type == "polyline" and "csv" in cfg.ds.params:
        csv_path = Path(cfg.ds.params["csv"])
        if not csv_path.is_absolute():
            cfg.ds.params["csv"] = str((path.parent / csv_path).resolve())
    return cfg


def save_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(cfg.to_yaml())


# ---------------------------------------------------------------------------
# builders


def build_field(cfg: DsConfig) -> ds_core.MotionField:
    params = dict(cfg.params)
    x0 = cfg.x0
    if cfg.type == "linear":
        return ds_core.LinearField(np.asarray(params.get("gain", np.eye(2)), dtype=float))
    if cfg.type in ("line", "curve", "angle", "w"):
        return ds_core.make_preset(cfg.type, x0, **params)
    if cfg.type == "min-jerk-line":
        return ds_core.min_jerk_line(x0, **params)
    if cfg.type == "curve-preset":
        return ds_core.curve_preset(x0, **params)
    speeds = params.pop("speeds", 0.2)
    if "csv" in params:
        return ds_core.load_polyline_csv(params.pop("csv"), default_speed=speeds, **params)
    return ds_core.polyline_field(params.pop("waypoints"), speeds, **params)


def start_point(cfg: DsConfig, field: ds_core.MotionField) -> np.ndarray:
    if cfg.x0 is not None:
        return np.asarray(cfg.x0, dtype=float)
    if isinstance(field, ds_core.PathField):
        return field.points[0].copy()
    raise ConfigError([("ds.x0", "x0 is required for this motion type")])


def build_stiffness(cfg: StiffnessConfig) -> StiffnessProfile:
    if cfg.type == "constant":
        return StiffnessProfile.constant(cfg.params["diag"])
    if cfg.type == "sinusoidal":
        return StiffnessProfile.sinusoidal(cfg.params["rows"])
    return StiffnessProfile.tabulated(cfg.params["table"])


def build_passifier(cfg: PassifierConfig, tank_decay: bool = True) -> PassifierParams:
    return PassifierParams(**cfg.model_dump(), tank_decay=tank_decay)
