"""Experiment configuration: nested dataclasses loaded from YAML/JSON with path-qualified errors."""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .geometry import NORMALIZATIONS, PhysicalConstants

METHODS = ("sim_ga", "sim_qn", "sim_mf", "dpa_equal_aperture", "dpa_equal_rf")
SIM_METHODS = ("sim_ga", "sim_qn", "sim_mf")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


@dataclass
class GeometryConfig:
    aperture_wavelengths: float = 4.0
    cell_pitch_wavelengths: float = 0.5
    thickness_wavelengths: float = 5.0
    dipole_axis: str = "x"
    propagation_normalization: str = "passive"


@dataclass
class HardwareConfig:
    T_sim: float = 0.7
    dpa_efficiency: float = 0.9
    patch_effective_area: float = 0.0026
    # None: physical cell area, cell_pitch ** 2
    cell_effective_area: Optional[float] = None
    noise_figure_db: float = 18.8
    rf_gain_db: float = 12.5
    T_bs: float = 290.0
    T_env: float = 290.0


@dataclass
class PathLossConfig:
    exponent: float = 3.67
    reference_loss_db: float = 52.7


@dataclass
class PlacementConfig:
    min_distance: float = 20.0
    max_distance: float = 200.0
    height_offset: float = 8.5


@dataclass
class OptimizerSettings:
    ga_iterations: int = 500
    qn_iterations: int = 100
    # None: 1.8 for one user, 2.2 otherwise
    alpha_init: Optional[float] = None
    backtrack_factor: float = 0.5
    armijo_c: float = 1e-4
    rel_improvement_tol: float = 1e-6
    patience: int = 10
    mirror_probe: bool = True
    qn_memory: int = 10


@dataclass
class ChannelSource:
    kind: str = "generate_rayleigh"
    path: Optional[str] = None


@dataclass
class GradCheckConfig:
    instances: int = 20
    max_layers: int = 4
    max_grid_side: int = 4
    max_users: int = 3
    step: float = 1e-6
    tolerance: float = 1e-5
    seed: int = 0


@dataclass
class ExperimentConfig:
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    users: int = 1
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    pt_dbm_per_m2: list[float] = field(default_factory=lambda: [20.0])
    layers: list[int] = field(default_factory=lambda: [5])
    placements: int = 10
    realizations_per_placement: int = 100
    master_seed: int = 0
    path_loss: PathLossConfig = field(default_factory=PathLossConfig)
    placement: PlacementConfig = field(default_factory=PlacementConfig)
    hardware: HardwareConfig = field(default_factory=HardwareConfig)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    channel_source: ChannelSource = field(default_factory=ChannelSource)
    grad_check: GradCheckConfig = field(default_factory=GradCheckConfig)
    workers: int = 1
    record_timing: bool = False

    def validate(self) -> "ExperimentConfig":
        def need(cond, path, msg):
            if not cond:
                raise ConfigError(path, msg)

        need(self.constants.carrier_frequency > 0, "constants.carrier_frequency", "must be positive")
        need(self.constants.bandwidth > 0, "constants.bandwidth", "must be positive")
        need(self.users >= 1, "users", "must be >= 1")
        need(len(self.methods) > 0, "methods", "must not be empty")
        for i, m in enumerate(self.methods):
            need(m in METHODS, f"methods[{i}]", f"unknown method {m!r}; choose from {METHODS}")
        need(len(set(self.methods)) == len(self.methods), "methods", "duplicate entries")
        need(len(self.pt_dbm_per_m2) > 0, "pt_dbm_per_m2", "sweep must not be empty")
        need(len(self.layers) > 0, "layers", "sweep must not be empty")
        for i, L in enumerate(self.layers):
            need(L >= 1, f"layers[{i}]", "layer count must be >= 1")
        need(self.placements >= 1, "placements", "must be >= 1")
        need(self.realizations_per_placement >= 1, "realizations_per_placement", "must be >= 1")
        need(self.master_seed >= 0, "master_seed", "must be non-negative")
        need(self.workers >= 1, "workers", "must be >= 1")
        g = self.geometry
        ratio = g.aperture_wavelengths / g.cell_pitch_wavelengths if g.cell_pitch_wavelengths > 0 else -1
        need(ratio > 0 and abs(ratio - round(ratio)) < 1e-9, "geometry.cell_pitch_wavelengths",
             "aperture side must be an integer multiple of the cell pitch")
        need(g.thickness_wavelengths > 0, "geometry.thickness_wavelengths", "must be positive")
        need(g.dipole_axis in ("x", "y"), "geometry.dipole_axis", "must be 'x' or 'y'")
        need(g.propagation_normalization in NORMALIZATIONS, "geometry.propagation_normalization",
             f"must be one of {NORMALIZATIONS}")
        h = self.hardware
        need(0 < h.T_sim <= 1, "hardware.T_sim", "must lie in (0, 1]")
        need(0 < h.dpa_efficiency <= 1, "hardware.dpa_efficiency", "must lie in (0, 1]")
        need(h.patch_effective_area > 0, "hardware.patch_effective_area", "must be positive")
        need(h.cell_effective_area is None or h.cell_effective_area > 0, "hardware.cell_effective_area",
             "must be positive")
        need(self.placement.min_distance > 0, "placement.min_distance", "must be positive")
        need(self.placement.max_distance >= self.placement.min_distance, "placement.max_distance",
             "must be >= min_distance")
        need(self.placement.height_offset < self.placement.min_distance, "placement.height_offset",
             "must be smaller than min_distance")
        o = self.optimizer
        need(o.ga_iterations >= 1, "optimizer.ga_iterations", "must be >= 1")
        need(o.qn_iterations >= 1, "optimizer.qn_iterations", "must be >= 1")
        need(0 < o.backtrack_factor < 1, "optimizer.backtrack_factor", "must lie in (0, 1)")
        need(0 < o.armijo_c < 1, "optimizer.armijo_c", "must lie in (0, 1)")
        need(o.alpha_init is None or o.alpha_init > 0, "optimizer.alpha_init", "must be positive")
        src = self.channel_source
        need(src.kind in ("generate_rayleigh", "import"), "channel_source.kind",
             "must be 'generate_rayleigh' or 'import'")
        if src.kind == "import":
            need(bool(src.path), "channel_source.path", "required when kind is 'import'")
            dpa = [m for m in self.methods if m not in SIM_METHODS]
            need(not dpa, "methods", f"{dpa} need generated channels; imported files only cover the SIM aperture")
        return self


def _is_optional(tp) -> tuple[bool, Any]:
    origin = typing.get_origin(tp)
    if origin in (Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return True, args[0]
    return False, tp


def _coerce(tp, value, path):
    optional, tp = _is_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError(path, "must not be null")
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    origin = typing.get_origin(tp)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        (item,) = typing.get_args(tp)
        return [_coerce(item, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {tp!r}")


def _build(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown field")
    kwargs = {
        name: _coerce(hints[name], value, f"{path}.{name}" if path else name)
        for name, value in data.items()
    }
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}).validate()


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("", f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(config: ExperimentConfig) -> dict:
    return dataclasses.asdict(config)
