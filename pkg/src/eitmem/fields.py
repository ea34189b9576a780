import csv
import logging
import math

import numpy as np
from scipy.integrate import trapezoid

from .errors import DegenerateInputError, ParameterError, RangeError

logger = logging.getLogger("eitmem.fields")

# Relative slack when comparing window endpoints and grid spacings
WINDOW_RTOL = 1e-9


def _frozen(samples):
    arr = np.array(samples, dtype=np.complex128)
    arr.setflags(write=False)
    return arr


class SampledPulse:
    """Complex envelope on a uniform time grid over [t_start, t_end] (μs)

    The pulse is zero outside its window.
    """

    __slots__ = ("t_start", "t_end", "samples")

    def __init__(self, t_start, t_end, samples):
        samples = _frozen(samples)
        if samples.ndim != 1 or samples.size < 2:
            raise ParameterError("a pulse needs at least 2 samples")
        if not t_end > t_start:
            raise ParameterError(f"empty pulse window [{t_start}, {t_end}]")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("pulse samples must be finite")
        object.__setattr__(self, "t_start", float(t_start))
        object.__setattr__(self, "t_end", float(t_end))
        object.__setattr__(self, "samples", samples)

    def __setattr__(self, name, value):
        raise AttributeError("SampledPulse is immutable")

    def __repr__(self):
        return (
            f"SampledPulse([{self.t_start:.6g}, {self.t_end:.6g}] us, "
            f"n={self.samples.size}, energy={energy(self):.6g})"
        )

    def __reduce__(self):
        return (SampledPulse, (self.t_start, self.t_end, np.array(self.samples)))

    def __len__(self):
        return self.samples.size

    @classmethod
    def zeros(cls, t_start, t_end, n):
        return cls(t_start, t_end, np.zeros(n))

    @classmethod
    def from_function(cls, func, t_start, t_end, n):
        """Sample func(t) on n uniformly spaced points of the window"""
        times = np.linspace(t_start, t_end, n)
        return cls(t_start, t_end, func(times))

    @property
    def times(self):
        return np.linspace(self.t_start, self.t_end, self.samples.size)

    @property
    def dt(self):
        return (self.t_end - self.t_start) / (self.samples.size - 1)

    @property
    def window(self):
        return (self.t_start, self.t_end)

    @property
    def intensity(self):
        return np.abs(self.samples) ** 2

    def duration(self):
        """Effective pulse length √12 × rms width of |E|²

        Equals the window length for a flat pulse. A zero pulse reports its window.
        """
        weight = self.intensity
        total = trapezoid(weight, dx=self.dt)
        if total <= 0:
            return self.t_end - self.t_start
        t = self.times
        mean = trapezoid(t * weight, dx=self.dt) / total
        var = trapezoid((t - mean) ** 2 * weight, dx=self.dt) / total
        return math.sqrt(12.0 * var)

    def peak_time(self):
        return float(self.times[int(np.argmax(self.intensity))])

    def shifted(self, offset):
        return SampledPulse(self.t_start + offset, self.t_end + offset, self.samples)

    def scaled(self, factor):
        return SampledPulse(self.t_start, self.t_end, self.samples * factor)

    def with_samples(self, samples):
        return SampledPulse(self.t_start, self.t_end, samples)

    def real_nonnegative(self):
        """Magnitude envelope, used for controls"""
        return SampledPulse(self.t_start, self.t_end, np.abs(self.samples))


class SpinWave:
    """Complex spin coherence S(z̃) on a uniform grid over z̃ ∈ [0, 1]"""

    __slots__ = ("samples",)

    def __init__(self, samples):
        samples = _frozen(samples)
        if samples.ndim != 1 or samples.size < 2:
            raise ParameterError("a spin wave needs at least 2 samples")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("spin wave samples must be finite")
        object.__setattr__(self, "samples", samples)

    def __setattr__(self, name, value):
        raise AttributeError("SpinWave is immutable")

    def __repr__(self):
        return f"SpinWave(n={self.samples.size}, norm={self.norm():.6g})"

    def __reduce__(self):
        return (SpinWave, (np.array(self.samples),))

    def __len__(self):
        return self.samples.size

    @classmethod
    def zeros(cls, nz):
        return cls(np.zeros(nz))

    @property
    def positions(self):
        return np.linspace(0.0, 1.0, self.samples.size)

    @property
    def dz(self):
        return 1.0 / (self.samples.size - 1)

    def norm(self):
        """Stored energy ∫|S|² dz̃ (same units as ∫|E|² dt in μs)"""
        return float(trapezoid(np.abs(self.samples) ** 2, dx=self.dz))

    def scaled(self, factor):
        return SpinWave(self.samples * factor)

    def normalized(self):
        n = self.norm()
        if n <= 0:
            raise DegenerateInputError("cannot normalize a zero spin wave")
        return self.scaled(1.0 / math.sqrt(n))

    def phase_fixed(self):
        """Rotate the global phase so the largest sample is real and positive"""
        peak = self.samples[int(np.argmax(np.abs(self.samples)))]
        if peak == 0:
            return self
        return self.scaled(abs(peak) / peak)

    def resampled(self, nz):
        z = np.linspace(0.0, 1.0, nz)
        re = np.interp(z, self.positions, self.samples.real)
        im = np.interp(z, self.positions, self.samples.imag)
        return SpinWave(re + 1j * im)


def _within(inner, outer):
    span = max(abs(outer[1] - outer[0]), 1.0)
    tol = WINDOW_RTOL * span
    return inner[0] >= outer[0] - tol and inner[1] <= outer[1] + tol


def time_reverse(p):
    """Reverse sample order inside the same window"""
    return SampledPulse(p.t_start, p.t_end, p.samples[::-1])


def energy(p, sub_window=None):
    """Trapezoidal ∫|E|² dt over the window or a sub-window of it

    Args:
        p: SampledPulse
        sub_window: optional (t0, t1) inside the pulse window

    Returns:
        float: energy in amplitude² · μs
    """
    if sub_window is None:
        return float(trapezoid(p.intensity, dx=p.dt))
    t0, t1 = sub_window
    if t1 < t0 or not _within((t0, t1), p.window):
        raise RangeError(
            f"sub-window [{t0}, {t1}] outside pulse window [{p.t_start}, {p.t_end}]"
        )
    t0 = max(t0, p.t_start)
    t1 = min(t1, p.t_end)
    times = p.times
    inside = (times > t0) & (times < t1)
    t = np.concatenate(([t0], times[inside], [t1]))
    values = _interp_complex(t, times, p.samples)
    return float(trapezoid(np.abs(values) ** 2, t))


def normalize(p):
    """Scale to unit energy ∫|E|² dt = 1 (t in μs)"""
    e = energy(p)
    if e <= 0:
        raise DegenerateInputError("cannot normalize a zero-energy pulse")
    return p.scaled(1.0 / math.sqrt(e))


def _interp_complex(x, xp, fp):
    re = np.interp(x, xp, fp.real, left=0.0, right=0.0)
    im = np.interp(x, xp, fp.imag, left=0.0, right=0.0)
    return re + 1j * im


def resample(p, n, window=None):
    """Linear interpolation onto n points over window, zero outside the pulse window"""
    if n < 2:
        raise ParameterError(f"resample needs n >= 2, got {n}")
    t0, t1 = window if window is not None else p.window
    times = np.linspace(t0, t1, n)
    if n == p.samples.size and np.allclose((t0, t1), p.window, rtol=0, atol=1e-12):
        return SampledPulse(t0, t1, p.samples)
    return SampledPulse(t0, t1, _interp_complex(times, p.times, p.samples))


def common_grid(a, b):
    """Both pulses on the finer of the two spacings over the union window"""
    t0 = min(a.t_start, b.t_start)
    t1 = max(a.t_end, b.t_end)
    dt = min(a.dt, b.dt)
    n = int(round((t1 - t0) / dt)) + 1
    return resample(a, n, (t0, t1)), resample(b, n, (t0, t1))


def inner_product(a, b):
    """Trapezoidal ⟨a, b⟩ = ∫ a* b dt on the common grid"""
    ra, rb = common_grid(a, b)
    return complex(trapezoid(np.conj(ra.samples) * rb.samples, dx=ra.dt))


def overlap(a, b):
    """Normalized squared overlap |⟨a,b⟩|²/(‖a‖²‖b‖²) in [0, 1]"""
    ra, rb = common_grid(a, b)
    ea, eb = energy(ra), energy(rb)
    if ea <= 0 or eb <= 0:
        raise DegenerateInputError("overlap needs two nonzero pulses")
    ip = trapezoid(np.conj(ra.samples) * rb.samples, dx=ra.dt)
    return float(min(abs(ip) ** 2 / (ea * eb), 1.0))


def spin_wave_overlap(a, b):
    """Normalized squared overlap of two spin waves on a common z grid"""
    nz = max(len(a), len(b))
    sa, sb = a.resampled(nz), b.resampled(nz)
    na, nb = sa.norm(), sb.norm()
    if na <= 0 or nb <= 0:
        raise DegenerateInputError("overlap needs two nonzero spin waves")
    ip = trapezoid(np.conj(sa.samples) * sb.samples, dx=sa.dz)
    return float(min(abs(ip) ** 2 / (na * nb), 1.0))


def opposite_phase_fraction(p):
    """Energy fraction whose phase is more than 90° off the pulse's dominant phase"""
    weight = p.intensity
    total = trapezoid(weight, dx=p.dt)
    if total <= 0:
        return 0.0
    dominant = np.angle(np.sum(p.samples * np.abs(p.samples)))
    against = np.real(p.samples * np.exp(-1j * dominant)) < 0
    return float(trapezoid(np.where(against, weight, 0.0), dx=p.dt) / total)


def _write_rows(path, header, columns, config_hash):
    with open(path, "w", newline="") as f:
        if config_hash is not None:
            f.write(f"# config_hash: {config_hash}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow(["%.12e" % value for value in row])


def _read_rows(path, first_column):
    with open(path, newline="") as f:
        lines = [line for line in f if line.strip() and not line.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [name.strip() for name in next(reader)]
    except StopIteration:
        raise ParameterError(f"{path}: empty CSV file") from None
    if header[0] != first_column or len(header) not in (2, 3):
        raise ParameterError(
            f"{path}: expected header '{first_column}, re, [im]', got {header}"
        )
    try:
        data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    except ValueError as e:
        raise ParameterError(f"{path}: {e}") from e
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != len(header):
        raise ParameterError(f"{path}: needs at least 2 rows of {len(header)} columns")
    axis = data[:, 0]
    steps = np.diff(axis)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-6, atol=0):
        raise ParameterError(f"{path}: {first_column} column must be uniformly increasing")
    values = data[:, 1] + (1j * data[:, 2] if data.shape[1] == 3 else 0.0)
    return axis, values


def write_pulse_csv(path, p, config_hash=None):
    _write_rows(
        path, ["t_us", "re", "im"], [p.times, p.samples.real, p.samples.imag], config_hash
    )


def read_pulse_csv(path):
    """Load a pulse from a `t_us, re, [im]` CSV file (lines starting with # are skipped)"""
    t, values = _read_rows(path, "t_us")
    return SampledPulse(t[0], t[-1], values)


def write_spin_wave_csv(path, s, config_hash=None):
    _write_rows(
        path,
        ["z_norm", "re", "im"],
        [s.positions, s.samples.real, s.samples.imag],
        config_hash,
    )


def read_spin_wave_csv(path):
    z, values = _read_rows(path, "z_norm")
    if not (abs(z[0]) < 1e-9 and abs(z[-1] - 1.0) < 1e-9):
        raise ParameterError(f"{path}: z_norm must span [0, 1]")
    return SpinWave(values)
