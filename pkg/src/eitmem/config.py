import hashlib
import logging
import os
from typing import List, Literal, Optional

import ujson
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PrivateAttr,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from .errors import ConfigError
from .fields import read_pulse_csv
from .medium import (
    DEFAULT_GAMMA,
    DEFAULT_GAMMA_S,
    DEFAULT_LENGTH,
    CalibrationAnchors,
    MediumParams,
    calibrate,
    rad_per_us,
)
from .shapes import SHAPES, shape_by_name, starting_pulse
from .solver import SolverGrid

logger = logging.getLogger("eitmem.config")

OUTPUT_ENV = "EITMEM_OUT"
DEFAULT_OUTPUT_DIR = "runs"


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MediumBlock(_Block):
    """Either the explicit medium form or the calibrated lab form"""

    alpha_L: Optional[float] = Field(None, ge=0.0, description="Optical depth")
    temperature_C: Optional[float] = Field(None, description="Cell temperature, °C")
    control_power_mW: Optional[float] = Field(None, ge=0.0, description="Control power, mW")
    gamma_rad_per_s: float = Field(DEFAULT_GAMMA, gt=0.0)
    gamma_s_rad_per_s: float = Field(DEFAULT_GAMMA_S, ge=0.0)
    length_m: float = Field(DEFAULT_LENGTH, gt=0.0)

    @model_validator(mode="after")
    def _one_form(self):
        explicit = self.alpha_L is not None
        calibrated = self.temperature_C is not None
        if explicit == calibrated:
            raise ValueError("give exactly one of alpha_L or temperature_C")
        if self.control_power_mW is not None and not calibrated:
            raise ValueError("control_power_mW belongs to the calibrated form")
        return self

    def to_params(self, anchors=None):
        return MediumParams.from_config(self.model_dump(exclude_none=True), anchors)

    def calibrated_rabi(self, anchors=None):
        """Control Rabi frequency (rad/μs) of the calibrated form, None otherwise"""
        if self.temperature_C is None or self.control_power_mW is None:
            return None
        _, rabi = calibrate(self.temperature_C, self.control_power_mW, anchors)
        return rad_per_us(rabi)


class SignalSpec(_Block):
    """A built-in shape with a duration, or a pulse CSV file"""

    shape: Optional[str] = Field(None, description="Built-in shape name")
    duration_us: Optional[float] = Field(None, gt=0.0, description="Window length, μs")
    file: Optional[str] = Field(None, description="Pulse CSV (t_us, re, [im]), relative to the config")
    amplitude: float = Field(1.0, ge=0.0, description="Scale applied to the pulse")

    # Directory of the config file; relative pulse paths resolve against it
    _base_dir: str = PrivateAttr("")

    @field_validator("shape")
    @classmethod
    def _known_shape(cls, name):
        if name is not None and name not in SHAPES:
            raise ValueError(f"unknown shape '{name}', expected one of {sorted(SHAPES)}")
        return name

    @field_validator("file")
    @classmethod
    def _file_exists(cls, path, info: ValidationInfo):
        if path is None:
            return None
        base = (info.context or {}).get("base_dir", "")
        resolved = os.path.normpath(os.path.join(base, path))
        if not os.path.isfile(resolved):
            raise ValueError(f"pulse file not found: {resolved}")
        return path

    @model_validator(mode="after")
    def _one_source(self, info: ValidationInfo):
        if (self.shape is None) == (self.file is None):
            raise ValueError("give exactly one of shape or file")
        self._base_dir = (info.context or {}).get("base_dir", "")
        return self

    @property
    def resolved_file(self):
        if self.file is None:
            return None
        return os.path.normpath(os.path.join(self._base_dir, self.file))

    def build(self, nt_per_us, duration=None):
        """Signal on the writing window ending at t=0

        Args:
            nt_per_us: Sample density for built-in shapes
            duration: Window length used when the signal block gives none
        """
        if self.file is not None:
            pulse = read_pulse_csv(self.resolved_file)
            pulse = pulse.shifted(-pulse.t_end)
        else:
            length = self.duration_us or duration
            if length is None:
                raise ConfigError("signal.duration_us", "required for built-in shapes here")
            n = SolverGrid(nt_per_us=nt_per_us).time_axis(-length, 0.0).size
            pulse = shape_by_name(self.shape, length, n)
        return pulse.scaled(self.amplitude)

    def build_start(self, nt_per_us, window, transit):
        """Starting pulse for signal iteration on the window [-window, 0]

        A built-in shape without its own duration is squeezed into the last transit
        time so the first pass already stores most of it.
        """
        if self.file is not None or self.duration_us is not None:
            return self.build(nt_per_us, window)
        n = SolverGrid(nt_per_us=nt_per_us).time_axis(-window, 0.0).size
        return starting_pulse(self.shape, transit, window, n).scaled(self.amplitude)


class SimulateBlock(_Block):
    signal: SignalSpec
    write_control_mW: Optional[float] = Field(None, ge=0.0)
    write_rabi_rad_per_us: Optional[float] = Field(None, ge=0.0)
    read_control: Literal["flat", "time_reversed"] = "flat"
    tau_us: float = Field(0.0, ge=0.0, description="Storage time, μs")

    @model_validator(mode="after")
    def _one_control(self):
        if self.write_control_mW is not None and self.write_rabi_rad_per_us is not None:
            raise ValueError("give at most one of write_control_mW or write_rabi_rad_per_us")
        return self


class IterateBlock(_Block):
    signal: SignalSpec
    control_powers_mW: List[float] = Field(..., min_length=1)
    tau_us: float = Field(0.0, ge=0.0)
    tol: float = Field(1e-3, gt=0.0, lt=1.0)
    max_iter: int = Field(20, ge=0)
    window_transits: float = Field(6.0, gt=0.0)

    @field_validator("control_powers_mW")
    @classmethod
    def _positive_powers(cls, powers):
        if any(p <= 0 for p in powers):
            raise ValueError("control powers must be positive")
        return powers


class OptimizeControlBlock(_Block):
    signals: List[SignalSpec] = Field(..., min_length=1)
    tau_us: float = Field(0.0, ge=0.0)
    max_rabi_factor: float = Field(10.0, gt=0.0)
    max_iter: int = Field(200, ge=1)
    patience: int = Field(15, ge=1)
    tolerance: float = Field(0.03, ge=0.0)


class ScanBlock(_Block):
    alpha_L_values: List[float] = Field(..., min_length=1)
    control_powers_mW: List[float] = Field([0.5, 1.0, 2.0], min_length=1)
    tau_us: float = Field(100.0, ge=0.0)
    spin_decay_time_us: Optional[float] = Field(
        500.0, gt=0.0, description="1/(2γ_s), μs; null disables spin decay"
    )
    samples_per_transit: float = Field(200.0, gt=0.0)
    window_transits: float = Field(6.0, gt=0.0)
    tol: float = Field(1e-3, gt=0.0, lt=1.0)
    max_iter: int = Field(20, ge=0)

    @field_validator("alpha_L_values")
    @classmethod
    def _positive_depths(cls, values):
        if any(a <= 0 for a in values):
            raise ValueError("optical depths must be positive")
        return values

    @property
    def gamma_s(self):
        """Spin decay rate in rad/s"""
        if self.spin_decay_time_us is None:
            return 0.0
        return 1.0 / (2.0 * self.spin_decay_time_us * 1e-6)


class RunConfig(_Block):
    """Validated run configuration"""

    medium: MediumBlock
    grid: SolverGrid = Field(default_factory=SolverGrid)
    simulate: Optional[SimulateBlock] = None
    iterate: Optional[IterateBlock] = None
    optimize_control: Optional[OptimizeControlBlock] = None
    scan: Optional[ScanBlock] = None
    run_id: Optional[str] = Field(None, pattern=r"^[A-Za-z0-9._-]+$")
    output_dir: Optional[str] = None

    def block(self, command):
        """Command block, raising ConfigError when it is missing"""
        name = command.replace("-", "_")
        value = getattr(self, name, None)
        if value is None:
            raise ConfigError(name, f"the {command} command needs a '{name}' block")
        return value

    def anchors(self):
        return CalibrationAnchors()


def _field_path(error):
    return ".".join(str(part) for part in error["loc"]) or "config"


def parse_config(data, base_dir=""):
    """Validate a decoded configuration mapping

    Raises:
        ConfigError: naming the first offending field
    """
    try:
        return RunConfig.model_validate(data, context={"base_dir": base_dir})
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(_field_path(first), first["msg"]) from e


def load_config(path):
    """Read and validate a JSON run configuration"""
    try:
        with open(path) as f:
            data = ujson.load(f)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except ValueError as e:
        raise ConfigError("config", f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigError("config", f"{path}: top level must be an object")
    return parse_config(data, os.path.dirname(os.path.abspath(path)))


def config_hash(cfg):
    """sha256 of the canonical configuration without run_id and output_dir"""
    # Pulse file paths are hashed as written in the config
    payload = cfg.model_dump(mode="json", exclude={"run_id", "output_dir"})
    canonical = ujson.dumps(payload, sort_keys=True, ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def resolve_output_root(cli_out=None, cfg=None):
    """CLI flag, then config, then EITMEM_OUT, then ./runs"""
    if cli_out:
        return cli_out
    if cfg is not None and cfg.output_dir:
        return cfg.output_dir
    return os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT_DIR


def resolve_run_id(cli_run_id, cfg, digest):
    return cli_run_id or cfg.run_id or digest[:12]
