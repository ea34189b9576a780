import logging

import numpy as np

from .errors import ParameterError
from .fields import SampledPulse, normalize, resample
from .medium import transit_time_us

logger = logging.getLogger("eitmem.shapes")

# Retrieval runs to completion once ∫Ω²dt reaches this many αLγ/2 (i.e. transit times)
RETRIEVAL_COMPLETION_TRANSITS = 20.0


def _window(duration, t_end):
    if duration <= 0:
        raise ParameterError(f"pulse duration must be positive, got {duration}")
    return t_end - duration, t_end


def gaussian(duration, n, sigma=None, t_end=0.0):
    """Unit-energy Gaussian centered in the window [t_end - duration, t_end]"""
    t0, t1 = _window(duration, t_end)
    sigma = sigma or duration / 6.0
    center = 0.5 * (t0 + t1)
    return normalize(
        SampledPulse.from_function(
            lambda t: np.exp(-((t - center) ** 2) / (4.0 * sigma**2)), t0, t1, n
        )
    )


def rounded_step(duration, n, edge_fraction=0.15, t_end=0.0):
    """Flat-top pulse with raised-cosine edges"""
    t0, t1 = _window(duration, t_end)
    edge = edge_fraction * duration

    def envelope(t):
        x = np.ones_like(t)
        rise = t < t0 + edge
        fall = t > t1 - edge
        x[rise] = 0.5 * (1 - np.cos(np.pi * (t[rise] - t0) / edge))
        x[fall] = 0.5 * (1 - np.cos(np.pi * (t1 - t[fall]) / edge))
        return x

    return normalize(SampledPulse.from_function(envelope, t0, t1, n))


def sinc_segment(duration, n, half_width=1.0, t_end=0.0):
    """sinc(x) for x in [-half_width, half_width] stretched over the window

    The default keeps the positive main lobe. Side lobes change sign, and a non-negative
    control cannot store them.
    """
    t0, t1 = _window(duration, t_end)
    return normalize(
        SampledPulse.from_function(
            lambda t: np.sinc(half_width * (2 * (t - t0) / duration - 1)), t0, t1, n
        )
    )


def descending_ramp(duration, n, floor=0.05, t_end=0.0):
    """Linear ramp from 1 down to floor across the window"""
    t0, t1 = _window(duration, t_end)
    return normalize(
        SampledPulse.from_function(
            lambda t: 1.0 - (1.0 - floor) * (t - t0) / duration, t0, t1, n
        )
    )


SHAPES = {
    "gaussian": gaussian,
    "rounded_step": rounded_step,
    "sinc_segment": sinc_segment,
    "descending_ramp": descending_ramp,
}


def shape_by_name(name, duration, n, t_end=0.0):
    """Build one of the built-in unit-energy signal shapes

    Args:
        name: gaussian, rounded_step, sinc_segment or descending_ramp
        duration: Window length in μs
        n: Number of samples
        t_end: End of the window, 0 for writing-stage inputs

    Returns:
        SampledPulse
    """
    try:
        builder = SHAPES[name]
    except KeyError:
        raise ParameterError(
            f"unknown pulse shape '{name}', expected one of {sorted(SHAPES)}"
        ) from None
    return builder(duration, n, t_end=t_end)


def starting_pulse(name, transit, window, n):
    """Built-in shape of length L/v_g ending at t=0, zero earlier in [-window, 0]

    Args:
        name: Built-in shape name
        transit: L/v_g of the writing control, μs
        window: Writing window length, μs
        n: Samples over the whole window
    """
    if transit <= 0 or window <= 0:
        raise ParameterError("starting pulse needs positive transit and window lengths")
    length = min(transit, window)
    inner_n = max(8, int(round((n - 1) * length / window)) + 1)
    inner = shape_by_name(name, length, inner_n)
    return normalize(resample(inner, n, (-window, 0.0)))


def constant_control(rabi, t_start, t_end, n):
    """Flat control envelope (rad/μs)"""
    if rabi < 0:
        raise ParameterError(f"control Rabi frequency must be non-negative, got {rabi}")
    return SampledPulse(t_start, t_end, np.full(n, float(rabi)))


def retrieval_window_us(rabi, m, transits=RETRIEVAL_COMPLETION_TRANSITS):
    """Retrieval window length (μs) for which a constant control extracts the spin wave

    Args:
        rabi: Constant read control, rad/μs
        m: MediumParams

    Returns:
        float: transits × L/v_g
    """
    if rabi <= 0:
        raise ParameterError("retrieval needs a nonzero control")
    return transits * transit_time_us(rabi, m)


def flat_read_control(rabi, tau, m, nt_per_us, transits=RETRIEVAL_COMPLETION_TRANSITS):
    """Constant read control on [τ, τ + completion window]"""
    length = retrieval_window_us(rabi, m, transits)
    n = max(2, int(np.ceil(length * nt_per_us)) + 1)
    return constant_control(rabi, tau, tau + length, n)
