import numpy as np
import pytest

from eitmem.errors import ParameterError
from eitmem.fields import SampledPulse, energy, opposite_phase_fraction
from eitmem.shapes import SHAPES, shape_by_name, sinc_segment, starting_pulse


@pytest.mark.parametrize("name", sorted(SHAPES))
def test_shapes_have_unit_energy(name):
    pulse = shape_by_name(name, 4.0, 401)
    assert pulse.window == pytest.approx((-4.0, 0.0))
    assert energy(pulse) == pytest.approx(1.0)


def test_unknown_shape():
    with pytest.raises(ParameterError):
        shape_by_name("triangle", 1.0, 11)


def test_sinc_segment_keeps_one_sign():
    assert np.all(sinc_segment(3.0, 301).samples.real >= -1e-12)
    assert opposite_phase_fraction(sinc_segment(3.0, 301)) == 0.0
    assert opposite_phase_fraction(sinc_segment(3.0, 301, half_width=1.5)) > 0.01


def test_opposite_phase_fraction():
    t = np.linspace(-1.0, 0.0, 101)
    flipped = SampledPulse(-1.0, 0.0, np.where(t < -0.75, -1.0, 1.0) * (1 + 1j))
    assert opposite_phase_fraction(flipped) == pytest.approx(0.25, abs=0.01)
    assert opposite_phase_fraction(SampledPulse.zeros(-1.0, 0.0, 11)) == 0.0


def test_starting_pulse_sits_in_last_transit():
    pulse = starting_pulse("gaussian", 1.0, 6.0, 601)
    assert pulse.window == pytest.approx((-6.0, 0.0))
    assert energy(pulse) == pytest.approx(1.0)
    assert energy(pulse, (-1.0, 0.0)) == pytest.approx(1.0, abs=1e-3)
    assert np.all(pulse.samples[pulse.times < -1.0 - pulse.dt] == 0)
    assert pulse.duration() < 1.0


def test_starting_pulse_fills_a_short_window():
    pulse = starting_pulse("rounded_step", 2.0, 1.5, 151)
    assert pulse.window == pytest.approx((-1.5, 0.0))
    assert energy(pulse) == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        starting_pulse("gaussian", 0.0, 1.0, 11)
