import math

import numpy as np
import pytest

from eitmem.errors import ParameterError, RangeError
from eitmem.medium import (
    CalibrationAnchors,
    MediumParams,
    calibrate,
    derive_coupling,
    eit_bandwidth,
    group_velocity,
    rabi_for_transit,
    rad_per_us,
    rubidium_vapor_pressure_torr,
    storage_decay_factor,
    transit_time_us,
)

LAB_RABI = 2 * math.pi * 6.13e6


def test_coupling_identity():
    for alpha_L in (0.5, 6.0, 24.0, 88.0):
        m = MediumParams(alpha_L=alpha_L)
        g = derive_coupling(m)
        assert g**2 * 2 * m.length / (m.gamma * m.light_speed) == pytest.approx(alpha_L, rel=1e-12)


def test_coupling_zero_depth_and_scaling():
    assert derive_coupling(MediumParams(alpha_L=0.0)) == 0.0
    g6 = derive_coupling(MediumParams(alpha_L=6.0))
    g24 = derive_coupling(MediumParams(alpha_L=24.0))
    assert g24 == pytest.approx(2 * g6)


def test_group_velocity_lab_values(medium24):
    v_g = group_velocity(LAB_RABI, medium24)
    assert v_g == pytest.approx(1.0e4, rel=0.05)
    assert medium24.length / v_g == pytest.approx(7.4e-6, rel=0.01)
    assert transit_time_us(rad_per_us(LAB_RABI), medium24) == pytest.approx(
        medium24.length / v_g * 1e6, rel=1e-9
    )


def test_group_velocity_edge_cases(medium24):
    assert group_velocity(0.0, medium24) == 0.0
    assert group_velocity(math.sqrt(2) * LAB_RABI, medium24) == pytest.approx(
        2 * group_velocity(LAB_RABI, medium24)
    )
    with pytest.raises(ParameterError):
        group_velocity(LAB_RABI, MediumParams(alpha_L=0.0))


def test_eit_bandwidth(medium24):
    bw = eit_bandwidth(LAB_RABI, medium24)
    assert bw == pytest.approx(6.6e5, rel=0.03)
    assert bw * medium24.length / group_velocity(LAB_RABI, medium24) == pytest.approx(
        math.sqrt(24.0)
    )
    assert eit_bandwidth(0.0, medium24) == 0.0


def test_storage_decay_factor(medium24):
    assert storage_decay_factor(medium24, 100e-6) == pytest.approx(0.819, abs=1e-3)
    assert storage_decay_factor(medium24, 0.0) == 1.0
    assert storage_decay_factor(medium24.without_spin_decay(), 1.0) == 1.0
    f = storage_decay_factor(medium24, 30e-6) * storage_decay_factor(medium24, 70e-6)
    assert f == pytest.approx(storage_decay_factor(medium24, 100e-6))
    with pytest.raises(ParameterError):
        storage_decay_factor(medium24, -1e-6)


def test_invalid_medium_rejected():
    with pytest.raises(ValueError):
        MediumParams(alpha_L=-1.0)
    with pytest.raises(ValueError):
        MediumParams(alpha_L=1.0, gamma=0.0)


def test_calibrate_anchor_points():
    alpha_L, rabi = calibrate(60.5, 16.0)
    assert alpha_L == pytest.approx(24.0)
    assert rabi == pytest.approx(LAB_RABI)

    _, quarter = calibrate(60.5, 4.0)
    assert quarter == pytest.approx(LAB_RABI / 2)
    assert calibrate(60.5, 0.0)[1] == 0.0


def test_vapor_pressure_in_torr():
    # Room temperature Rb sits a little below 1e-6 torr
    assert 1e-7 < rubidium_vapor_pressure_torr(25.0) < 1e-6
    assert 1e-5 < rubidium_vapor_pressure_torr(60.5) < 2e-5


def test_calibrate_covers_lab_depth_range():
    assert 5.5 < calibrate(45.0, 16.0)[0] < 7.5
    assert 75.0 < calibrate(77.0, 16.0)[0] < 95.0


def test_calibrate_is_monotone():
    temps = np.linspace(40.0, 80.0, 41)
    depths = [calibrate(t, 1.0)[0] for t in temps]
    assert np.all(np.diff(depths) > 0)
    rabis = [calibrate(60.5, p)[1] for p in (0.0, 1.0, 2.0, 8.0)]
    assert np.all(np.diff(rabis) > 0)


def test_calibrate_errors():
    with pytest.raises(RangeError):
        calibrate(25.0, 16.0)
    with pytest.raises(ParameterError):
        calibrate(60.5, -1.0)


def test_anchor_table_must_be_monotone():
    with pytest.raises(ValueError):
        CalibrationAnchors(density_vs_temperature=((40.0, 50.0, 60.0), (1.0, 0.5, 2.0)))


def test_transit_round_trip(medium24):
    rabi = rabi_for_transit(2.5, medium24)
    assert transit_time_us(rabi, medium24) == pytest.approx(2.5)
    assert transit_time_us(0.0, medium24) == math.inf


def test_from_config_forms():
    explicit = MediumParams.from_config({"alpha_L": 12.0, "length_m": 0.05})
    assert explicit.alpha_L == 12.0
    assert explicit.length == 0.05

    calibrated = MediumParams.from_config({"temperature_C": 60.5, "control_power_mW": 16.0})
    assert calibrated.alpha_L == pytest.approx(24.0)

    with pytest.raises(ParameterError):
        MediumParams.from_config({"alpha_L": 12.0, "temperature_C": 60.5})
    with pytest.raises(ParameterError):
        MediumParams.from_config({"length_m": 0.05})
