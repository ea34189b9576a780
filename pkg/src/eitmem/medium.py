import logging
import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import ParameterError, RangeError

logger = logging.getLogger("eitmem.medium")

SPEED_OF_LIGHT = 299_792_458.0  # m/s

# Lab values: 2γ = 2π×290 MHz (stored as HWHM), 1/(2γ_s) = 500 μs, 75 mm cell
DEFAULT_GAMMA = 2 * math.pi * 145e6
DEFAULT_GAMMA_S = 1.0 / (2 * 500e-6)
DEFAULT_LENGTH = 0.075

US = 1e-6


def rad_per_us(rate):
    """Convert a rate from rad/s to the solver's rad/μs"""
    return rate * US


class MediumParams(BaseModel):
    """Physical parameters of the Λ-type ensemble (SI units)"""

    model_config = ConfigDict(frozen=True)

    alpha_L: float = Field(..., ge=0.0, description="Optical depth (intensity)")
    gamma: float = Field(
        DEFAULT_GAMMA, gt=0.0, description="Optical polarization decay, rad/s (HWHM)"
    )
    gamma_s: float = Field(
        DEFAULT_GAMMA_S, ge=0.0, description="Spin coherence decay, rad/s"
    )
    length: float = Field(DEFAULT_LENGTH, gt=0.0, description="Medium length, m")
    light_speed: float = Field(SPEED_OF_LIGHT, gt=0.0, description="c, m/s")

    @property
    def alpha(self):
        """Absorption coefficient per meter"""
        return self.alpha_L / self.length

    @property
    def depth(self):
        """Amplitude optical depth αL/2 used by the retarded-frame equations"""
        return self.alpha_L / 2.0

    @property
    def gamma_us(self):
        return rad_per_us(self.gamma)

    @property
    def gamma_s_us(self):
        return rad_per_us(self.gamma_s)

    @classmethod
    def from_config(cls, block, anchors=None):
        """Build parameters from a JSON configuration block

        Args:
            block: dict in the explicit form {alpha_L, gamma_rad_per_s, gamma_s_rad_per_s,
                length_m} or the calibrated form {temperature_C, control_power_mW}
            anchors: CalibrationAnchors for the calibrated form

        Returns:
            MediumParams
        """
        explicit = "alpha_L" in block
        calibrated = "temperature_C" in block or "control_power_mW" in block
        if explicit == calibrated:
            raise ParameterError(
                "medium block needs exactly one of alpha_L or temperature_C/control_power_mW"
            )
        if explicit:
            alpha_L = block["alpha_L"]
        else:
            alpha_L, _ = calibrate(
                block["temperature_C"], block.get("control_power_mW", 0.0), anchors
            )
        return cls(
            alpha_L=alpha_L,
            gamma=block.get("gamma_rad_per_s", DEFAULT_GAMMA),
            gamma_s=block.get("gamma_s_rad_per_s", DEFAULT_GAMMA_S),
            length=block.get("length_m", DEFAULT_LENGTH),
        )

    def with_depth(self, alpha_L):
        return self.model_copy(update={"alpha_L": float(alpha_L)})

    def without_spin_decay(self):
        return self.model_copy(update={"gamma_s": 0.0})


def _check_medium(m):
    if not (m.alpha_L >= 0 and m.gamma > 0 and m.gamma_s >= 0 and m.length > 0):
        raise ParameterError(f"invalid medium parameters: {m!r}")


def derive_coupling(m):
    """Collective coupling g√N = √(γαc/2)

    Args:
        m: MediumParams

    Returns:
        float: coupling constant in s⁻¹·m^{1/2}·(c-scaled) units
    """
    _check_medium(m)
    return math.sqrt(m.gamma * m.alpha * m.light_speed / 2.0)


def group_velocity(rabi, m):
    """EIT group velocity v_g = 2|Ω|²/(αγ) in m/s

    Args:
        rabi: Control Rabi frequency, rad/s
        m: MediumParams
    """
    _check_medium(m)
    if m.alpha_L == 0:
        raise ParameterError("group velocity is undefined for zero optical depth")
    return 2.0 * abs(rabi) ** 2 / (m.alpha * m.gamma)


def eit_bandwidth(rabi, m):
    """Transparency window width √(αL)·v_g/L in rad/s"""
    v_g = group_velocity(rabi, m)
    return math.sqrt(m.alpha_L) * v_g / m.length


def storage_decay_factor(m, tau):
    """Energy retained after a dark storage interval

    Args:
        m: MediumParams
        tau: Storage time in seconds

    Returns:
        float: exp(-2 γ_s τ)
    """
    if tau < 0:
        raise ParameterError(f"storage time must be non-negative, got {tau}")
    return math.exp(-2.0 * m.gamma_s * tau)


def transit_time_us(rabi_us, m):
    """L/v_g in μs for a control Rabi frequency given in rad/μs"""
    if rabi_us == 0:
        return math.inf
    return m.depth * m.gamma_us / abs(rabi_us) ** 2


def rabi_for_transit(transit_us, m):
    """Constant Rabi frequency (rad/μs) whose group delay across L is transit_us"""
    if transit_us <= 0:
        raise ParameterError(f"transit time must be positive, got {transit_us}")
    return math.sqrt(m.depth * m.gamma_us / transit_us)


def rubidium_vapor_pressure_torr(t_c):
    """Saturated Rb vapor pressure over the liquid, log10 P[torr] = 2.881 + 4.312 - 4040/T"""
    return 10 ** (2.881 + 4.312 - 4040.0 / (np.asarray(t_c) + 273.15))


def rubidium_density_table(t_min=40.0, t_max=80.0, step=0.5, anchor=60.5):
    """Relative Rb vapor density over temperature

    Ideal gas n ∝ P/T from the liquid-phase vapor pressure, normalized to 1 at the anchor
    temperature.

    Returns:
        tuple: (temperatures °C, relative densities)
    """
    temps = np.arange(t_min, t_max + 0.5 * step, step)

    def density(t_c):
        return rubidium_vapor_pressure_torr(t_c) / (t_c + 273.15)

    rel = density(temps) / density(anchor)
    return tuple(float(t) for t in temps), tuple(float(r) for r in rel)


def _default_density_table():
    return rubidium_density_table()


class CalibrationAnchors(BaseModel):
    """Lab anchors relating cell temperature and control power to αL and Ω"""

    model_config = ConfigDict(frozen=True)

    anchor_alpha_L: Tuple[float, float] = Field(
        (60.5, 24.0), description="(temperature °C, αL) reference pair"
    )
    anchor_rabi: Tuple[float, float] = Field(
        (16.0, 2 * math.pi * 6.13e6), description="(power mW, Ω rad/s) reference pair"
    )
    density_vs_temperature: Tuple[Tuple[float, ...], Tuple[float, ...]] = Field(
        default_factory=_default_density_table,
        description="(temperatures °C, relative vapor density) table",
    )

    @field_validator("density_vs_temperature")
    @classmethod
    def _strictly_monotone(cls, table):
        temps, dens = (np.asarray(col, dtype=float) for col in table)
        if temps.size < 2 or temps.size != dens.size:
            raise ValueError("density table needs two equal-length columns")
        if np.any(np.diff(temps) <= 0) or np.any(np.diff(dens) <= 0):
            raise ValueError("density table must be strictly increasing")
        return table

    @model_validator(mode="after")
    def _anchor_inside_table(self):
        temps = self.density_vs_temperature[0]
        if not temps[0] <= self.anchor_alpha_L[0] <= temps[-1]:
            raise ValueError("anchor temperature lies outside the density table")
        if self.anchor_rabi[0] <= 0:
            raise ValueError("anchor power must be positive")
        return self

    def relative_density(self, temperature):
        temps, dens = self.density_vs_temperature
        if not temps[0] <= temperature <= temps[-1]:
            raise RangeError(
                f"temperature {temperature} °C outside calibrated range "
                f"[{temps[0]}, {temps[-1]}] °C"
            )
        return float(np.interp(temperature, temps, dens))

    def rabi_for_power(self, control_power):
        """Ω in rad/s for a control power in mW (Ω ∝ √P)"""
        if control_power < 0:
            raise ParameterError(f"control power must be non-negative, got {control_power}")
        p0, omega0 = self.anchor_rabi
        return omega0 * math.sqrt(control_power / p0)


def calibrate(temperature, control_power, anchors=None):
    """Map lab settings to the three-level model parameters

    Args:
        temperature: Cell temperature in °C
        control_power: Control beam power in mW
        anchors: CalibrationAnchors, defaults to the lab anchors

    Returns:
        tuple: (alpha_L, rabi in rad/s)
    """
    anchors = anchors or CalibrationAnchors()
    t0, depth0 = anchors.anchor_alpha_L
    alpha_L = depth0 * anchors.relative_density(temperature) / anchors.relative_density(t0)
    rabi = anchors.rabi_for_power(control_power)
    logger.debug(
        f"calibrated {temperature} °C, {control_power} mW -> αL={alpha_L:.3f}, "
        f"Ω=2π×{rabi / (2 * math.pi) / 1e6:.3f} MHz"
    )
    return alpha_L, rabi
