"""Run configuration: schema, unit conversion and dotted-path overrides.

Config files are TOML or JSON with explicit units in the key names
(``length_mm``, ``wavelength_nm``, ``fwhm_ps``, ``alpha_s_db_cm`` ...). Everything
is converted to SI exactly once, in :meth:`PhysicsConfig.build_setup`.
"""

from __future__ import annotations

import copy
import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

try:  # python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml

from . import __version__
from .physics import (
    C_LIGHT,
    DispersionBranch,
    DomainError,
    FrequencyGrid,
    PumpPulse,
    Setup,
    WaveguideSpec,
    loss_db_per_cm_to_si,
    qpm_wavevector,
)
from .propagation import IntegratorConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass(frozen=True)
class BranchConfig:
    n: float = 1.9
    group_velocity_over_c: float = 0.9 / 1.9

    def validate(self, name):
        if not self.n > 0:
            raise ConfigError(f"dispersion.{name}.n must be positive")
        if not 0 < self.group_velocity_over_c < 1:
            raise ConfigError(f"dispersion.{name}.group_velocity_over_c must lie in (0, 1)")


@dataclass(frozen=True)
class DispersionConfig:
    pump: BranchConfig = BranchConfig(1.9, 0.9 / 1.9)
    signal: BranchConfig = BranchConfig(1.9, 0.95 * 0.9 / 1.9)
    idler: BranchConfig = BranchConfig(1.8, 0.9 / 1.9)


@dataclass(frozen=True)
class WaveguideConfig:
    length_mm: float = 10.0
    alpha_s_db_cm: float = 0.0
    alpha_i_db_cm: float = 0.0
    gamma_per_m: Union[float, str] = "auto"
    k_qpm_per_m: Optional[float] = None


@dataclass(frozen=True)
class PumpConfig:
    wavelength_nm: float = 755.0
    fwhm_ps: float = 0.5


@dataclass(frozen=True)
class GridConfig:
    n_points: int = 192
    half_window_thz: float = 4.0


@dataclass(frozen=True)
class IntegratorSection:
    steps: int = 512
    method: str = "rk4"
    tolerance: float = 1e-8


@dataclass(frozen=True)
class PhysicsConfig:
    """Waveguide, pump, dispersion and grid in config units."""

    waveguide: WaveguideConfig = WaveguideConfig()
    pump: PumpConfig = PumpConfig()
    dispersion: DispersionConfig = DispersionConfig()
    grid: GridConfig = GridConfig()

    def validate(self):
        wg = self.waveguide
        if not wg.length_mm > 0:
            raise ConfigError("waveguide.length_mm must be positive")
        if wg.alpha_s_db_cm < 0 or wg.alpha_i_db_cm < 0:
            raise ConfigError("losses must be non-negative")
        if isinstance(wg.gamma_per_m, str):
            if wg.gamma_per_m != "auto":
                raise ConfigError("waveguide.gamma_per_m must be a number or 'auto'")
        elif wg.gamma_per_m < 0:
            raise ConfigError("waveguide.gamma_per_m must be non-negative")
        if not self.pump.wavelength_nm > 0 or not self.pump.fwhm_ps > 0:
            raise ConfigError("pump wavelength and duration must be positive")
        if self.grid.n_points < 2 or not self.grid.half_window_thz > 0:
            raise ConfigError("grid needs n_points >= 2 and a positive half window")
        for name in ("pump", "signal", "idler"):
            getattr(self.dispersion, name).validate(name)

    def with_losses(self, alpha_s_db_cm: float, alpha_i_db_cm: float) -> "PhysicsConfig":
        return replace_path(self, {"waveguide.alpha_s_db_cm": alpha_s_db_cm,
                                   "waveguide.alpha_i_db_cm": alpha_i_db_cm})

    def with_grid(self, n_points: int) -> "PhysicsConfig":
        return replace_path(self, {"grid.n_points": n_points})

    def build_setup(self, gamma: Optional[float] = None) -> Setup:
        """SI setup; ``gamma`` overrides ``waveguide.gamma_per_m``."""
        wg = self.waveguide
        if gamma is None:
            if isinstance(wg.gamma_per_m, str):
                raise ConfigError("gamma is 'auto'; calibrate it first")
            gamma = float(wg.gamma_per_m)
        try:
            pulse = PumpPulse(self.pump.wavelength_nm * 1e-9, self.pump.fwhm_ps * 1e-12)
            w_p = pulse.omega_p
            d = self.dispersion
            pump = DispersionBranch(d.pump.n, d.pump.group_velocity_over_c * C_LIGHT, w_p)
            signal = DispersionBranch(d.signal.n, d.signal.group_velocity_over_c * C_LIGHT, w_p / 2)
            idler = DispersionBranch(d.idler.n, d.idler.group_velocity_over_c * C_LIGHT, w_p / 2)
            k_qpm = wg.k_qpm_per_m if wg.k_qpm_per_m is not None else qpm_wavevector(pump, signal, idler, w_p)
            guide = WaveguideSpec(
                length=wg.length_mm * 1e-3, pump=pump, signal=signal, idler=idler,
                alpha_s=loss_db_per_cm_to_si(wg.alpha_s_db_cm),
                alpha_i=loss_db_per_cm_to_si(wg.alpha_i_db_cm),
                k_qpm=k_qpm, gamma=gamma,
            )
            grid = FrequencyGrid.centered(w_p / 2, 2 * np.pi * self.grid.half_window_thz * 1e12,
                                          self.grid.n_points)
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        return Setup(guide, pulse, grid)


@dataclass(frozen=True)
class HomSection:
    tau_min_ps: float = -6.0
    tau_max_ps: float = 6.0
    points: int = 241
    delay_reference: Union[str, float] = "half-walkoff"


@dataclass(frozen=True)
class CalibrateSection:
    target_photons: float = 2.1e-4


@dataclass(frozen=True)
class InvertSection:
    g2_s: Optional[float] = None
    g2_i: Optional[float] = None
    r_n: Optional[float] = None
    g2_tolerance: float = 1e-4
    r_n_tolerance: float = 0.05
    measurement_error: float = 0.02
    g2_definition: str = "click"
    alpha_max_db_cm: float = 30.0
    r_max: float = 0.9
    alpha_points: int = 61
    r_points: int = 61
    grid_n_points: int = 128
    grid_steps: int = 256
    max_iterations: int = 30
    cache_dir: Optional[str] = None
    export_isolines: bool = True


@dataclass(frozen=True)
class SweepSection:
    alphas_db_cm: Optional[list] = None
    alpha_bar_db_cm: Optional[list] = None
    r: Optional[list] = None
    hom: bool = False


@dataclass(frozen=True)
class OutputSection:
    temporal_min_ps: float = -4.0
    temporal_max_ps: float = 8.0
    temporal_points: int = 601


@dataclass(frozen=True)
class RunConfig:
    waveguide: WaveguideConfig = WaveguideConfig()
    pump: PumpConfig = PumpConfig()
    dispersion: DispersionConfig = DispersionConfig()
    grid: GridConfig = GridConfig()
    integrator: IntegratorSection = IntegratorSection()
    hom: HomSection = HomSection()
    calibrate: CalibrateSection = CalibrateSection()
    invert: InvertSection = InvertSection()
    sweep: SweepSection = SweepSection()
    output: OutputSection = OutputSection()

    @property
    def physics(self) -> PhysicsConfig:
        return PhysicsConfig(self.waveguide, self.pump, self.dispersion, self.grid)

    def integrator_config(self) -> IntegratorConfig:
        try:
            return IntegratorConfig(self.integrator.steps, self.integrator.method, self.integrator.tolerance)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self) -> "RunConfig":
        self.physics.validate()
        self.integrator_config()
        h = self.hom
        if h.points < 1 or h.tau_max_ps < h.tau_min_ps:
            raise ConfigError("hom needs points >= 1 and tau_max_ps >= tau_min_ps")
        if isinstance(h.delay_reference, str) and h.delay_reference not in ("half-walkoff", "none"):
            raise ConfigError("hom.delay_reference must be 'half-walkoff', 'none' or a delay in ps")
        if self.calibrate.target_photons < 0:
            raise ConfigError("calibrate.target_photons must be non-negative")
        inv = self.invert
        if inv.g2_definition not in ("click", "moment"):
            raise ConfigError("invert.g2_definition must be 'click' or 'moment'")
        if not 0 < inv.r_max < 1 or inv.alpha_max_db_cm <= 0:
            raise ConfigError("invert grid needs 0 < r_max < 1 and alpha_max_db_cm > 0")
        if inv.alpha_points < 1 or inv.r_points < 1:
            raise ConfigError("invert grid needs at least one point per axis")
        o = self.output
        if o.temporal_points < 2 or o.temporal_max_ps <= o.temporal_min_ps:
            raise ConfigError("output temporal window is empty")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        return config_hash(self.to_dict())


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=float).encode()
    return hashlib.sha256(blob).hexdigest()


# --- construction from mappings ---------------------------------------------

def _build(cls, data: Any, path: str, base=None):
    """Instance of ``cls`` from ``data``, with missing keys taken from ``base``."""
    if not isinstance(data, dict):
        raise ConfigError(f"section {path or '<root>'} must be a table")
    known = {f.name: f for f in fields(cls)}
    hints = typing.get_type_hints(cls)
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or '<root>'}: {', '.join(sorted(unknown))}")
    defaults = cls() if base is None else base
    kwargs = {}
    for name, f in known.items():
        here = f"{path}.{name}" if path else name
        default = getattr(defaults, name)
        if name not in data:
            kwargs[name] = default
            continue
        value = data[name]
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, here, default)
        else:
            kwargs[name] = _coerce(value, hints[name], here)
    return cls(**kwargs)


def _coerce(value, hint, path):
    """Check ``value`` against a field annotation; ints are widened to float."""
    if isinstance(value, dict):
        raise ConfigError(f"{path} must be a scalar, got a table")
    options = typing.get_args(hint) if typing.get_origin(hint) is Union else (hint,)
    if value is None:
        if type(None) in options:
            return None
        raise ConfigError(f"{path} may not be null")
    for opt in options:
        if opt is bool and isinstance(value, bool):
            return value
        if isinstance(value, bool):
            continue
        if opt is int and isinstance(value, int):
            return value
        if opt is float and isinstance(value, (int, float)):
            return float(value)
        if opt is str and isinstance(value, str):
            return value
        if opt is list and isinstance(value, list):
            if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
                raise ConfigError(f"{path} must be a list of numbers")
            return [float(x) for x in value]
    names = " or ".join(getattr(o, "__name__", str(o)) for o in options if o is not type(None))
    raise ConfigError(f"{path} must be {names}, got {type(value).__name__}")


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def parse_text(text: str, suffix: str) -> dict:
    try:
        if suffix == ".json":
            return json.loads(text)
        return _toml.loads(text)
    except (ValueError, _toml.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc


def parse_override(item: str) -> tuple[str, Any]:
    """``key.path=value``; the value is read as a TOML literal, else as a bare string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = _toml.loads(f"v = {raw.strip()}")["v"]
    except _toml.TOMLDecodeError:
        value = raw.strip()
    return key, value


def apply_overrides(data: dict, overrides: dict) -> dict:
    data = copy.deepcopy(data)
    for key, value in overrides.items():
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a scalar")
        node[parts[-1]] = value
    return data


def load_config(path: Union[str, Path], overrides: Optional[dict] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    data = parse_text(text, path.suffix.lower())
    return config_from_dict(apply_overrides(data, overrides or {}))


def replace_path(obj, updates: dict):
    """Copy of a (nested, frozen) dataclass with dotted-path fields replaced."""
    data = apply_overrides({}, updates)
    return _build(type(obj), data, "", obj)


def dump_toml(cfg: RunConfig) -> str:
    """Serialize to TOML with sections in declaration order; None values omitted."""
    lines: list[str] = []

    def emit(prefix, obj):
        scalars, tables = [], []
        for f in fields(obj):
            v = getattr(obj, f.name)
            (tables if is_dataclass(v) else scalars).append((f.name, v))
        if scalars:
            if prefix:
                lines.append(f"[{prefix}]")
            for name, v in scalars:
                if v is not None:
                    lines.append(f"{name} = {_toml_value(v)}")
            lines.append("")
        for name, v in tables:
            emit(f"{prefix}.{name}" if prefix else name, v)

    emit("", cfg)
    return "\n".join(lines).rstrip() + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {v!r}")


def code_version() -> str:
    return __version__
