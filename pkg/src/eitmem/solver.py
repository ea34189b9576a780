import logging
import math
from functools import lru_cache
from typing import Literal, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.special import i0e

from .errors import NumericalInstabilityError, ParameterError
from .fields import SampledPulse, SpinWave, energy

logger = logging.getLogger("eitmem.solver")

# RK4 substep bound for the adiabatic mode: h·(2Ω²/γ + γ_s) ≤ this
ADIABATIC_STEP_LIMIT = 0.5
WINDOW_TOLERANCE = 1e-9


class SolverGrid(BaseModel):
    """Discretization of the retarded-frame integration"""

    model_config = ConfigDict(frozen=True)

    nz: int = Field(256, ge=32, description="Spatial samples over z/L ∈ [0, 1]")
    nt_per_us: float = Field(100.0, gt=0.0, description="Output samples per μs")
    mode: Literal["full", "adiabatic"] = Field(
        "adiabatic", description="Keep P dynamic (full) or eliminate it (adiabatic)"
    )

    def time_axis(self, t_start, t_end):
        n_steps = max(1, int(math.ceil((t_end - t_start) * self.nt_per_us - 1e-9)))
        return np.linspace(t_start, t_end, n_steps + 1)


class PolarizationField(BaseModel):
    """P(z, t) snapshots at the solver output times"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: np.ndarray
    positions: np.ndarray
    values: np.ndarray = Field(..., description="Complex array of shape (nt, nz)")


class Propagation(NamedTuple):
    output: SampledPulse
    spin_wave: SpinWave
    polarization: Optional[PolarizationField]


class ProtocolResult(BaseModel):
    """Everything one write/store/retrieve run produces"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    signal: SampledPulse
    leak: SampledPulse
    spin_after_write: SpinWave
    spin_after_storage: SpinWave
    retrieved: SampledPulse
    tau: float
    input_energy: float
    efficiency: float = Field(..., ge=0.0, le=1.0)
    leak_fraction: float
    stored_fraction: float

    def to_summary(self):
        return {
            "tau_us": self.tau,
            "input_energy": self.input_energy,
            "efficiency": self.efficiency,
            "leak_fraction": self.leak_fraction,
            "stored_fraction": self.stored_fraction,
            "storage_fraction_after_decay": (
                self.spin_after_storage.norm() / self.input_energy
                if self.input_energy > 0
                else 0.0
            ),
        }


@lru_cache(maxsize=32)
def exponential_weights(depth, nz):
    """Lower-triangular quadrature of ∫₀^z e^{-d(z-z')} S(z') dz'

    Exact for S linear between grid nodes.

    Args:
        depth: d = αL/2
        nz: Number of nodes on [0, 1]

    Returns:
        np.ndarray: (nz, nz) read-only matrix K with (K S)[j] ≈ the integral up to z_j
    """
    h = 1.0 / (nz - 1)
    a = depth * h
    if a < 1e-3:
        # series of h∫₀¹ e^{-ax} x dx and h∫₀¹ e^{-ax} dx
        far = h * (0.5 - a / 3.0 + a**2 / 8.0 - a**3 / 30.0)
        whole = h * (1.0 - a / 2.0 + a**2 / 6.0 - a**3 / 24.0)
    else:
        far = (-math.expm1(-a) - a * math.exp(-a)) / (depth * a)
        whole = -math.expm1(-a) / depth
    near = whole - far

    j, i = np.indices((nz, nz))
    lag = j - i
    kernel = np.zeros((nz, nz))
    near_mask = (lag >= 0) & (i >= 1)
    kernel[near_mask] += near * np.exp(-a * lag[near_mask])
    far_mask = lag >= 1
    kernel[far_mask] += far * np.exp(-a * (lag[far_mask] - 1))
    kernel.setflags(write=False)
    return kernel


def trapezoid_weights(nz):
    w = np.full(nz, 1.0 / (nz - 1))
    w[[0, -1]] *= 0.5
    return w


def retrieval_efficiency_kernel(alpha_L, nz):
    """Control-independent forward-retrieval kernel on the z grid

    k(z, z') = (d/2)·exp(-d(a+b)/2)·I0(d√(ab)) with a = 1-z, b = 1-z', d = αL/2,
    so that the decay-free retrieval efficiency of S is ∫∫ S*(z) k(z,z') S(z') dz dz'.
    """
    d = alpha_L / 2.0
    a = 1.0 - np.linspace(0.0, 1.0, nz)
    x = d * np.sqrt(np.outer(a, a))
    return 0.5 * d * i0e(x) * np.exp(x - 0.5 * d * np.add.outer(a, a))


def retrieval_quadratic_form(alpha_L, nz):
    """G with η_retrieval ≈ Sᴴ G S for spin-wave samples S"""
    w = trapezoid_weights(nz)
    return w[:, None] * retrieval_efficiency_kernel(alpha_L, nz) * w[None, :]


def _lerp(values, n, frac):
    return values[n] + frac * (values[n + 1] - values[n])


class AdiabaticPropagator:
    """Spin-wave integrator with the polarization eliminated

    In the retarded frame with z/L ∈ [0, 1], d = αL/2 and k = √(γd),
        E(z) = e^{-dz} e_in - κΩ ∫₀^z e^{-d(z-z')} S(z') dz',   κ = √(d/γ)
        ∂t S = -γ_s S + Ω² (κ²K - 1/γ) S - κΩ e^{-dz} e_in
    """

    def __init__(self, m, nz):
        self.medium = m
        self.nz = nz
        self.depth = m.depth
        self.gamma = m.gamma_us
        self.gamma_s = m.gamma_s_us
        self.coupling = math.sqrt(self.gamma * self.depth)
        self.kappa = math.sqrt(self.depth / self.gamma)
        self.kappa2 = self.depth / self.gamma
        self.kernel = exponential_weights(self.depth, nz)
        self.profile = np.exp(-self.depth * np.linspace(0.0, 1.0, nz))

    def substeps(self, dt, omega_max):
        stiffness = 2.0 * omega_max**2 / self.gamma + self.gamma_s
        return max(1, int(math.ceil(dt * stiffness / ADIABATIC_STEP_LIMIT)))

    def _b(self, s):
        return self.kappa2 * (self.kernel @ s) - s / self.gamma

    def _bt(self, lam):
        return self.kappa2 * (self.kernel.T @ lam) - lam / self.gamma

    def rhs(self, s, omega, e):
        source = np.multiply.outer(self.profile, e)
        return -self.gamma_s * s + omega**2 * self._b(s) - self.kappa * omega * source

    def field(self, s, omega, e):
        """E(z) on the grid"""
        return np.multiply.outer(self.profile, e) - self.kappa * omega * (self.kernel @ s)

    def output(self, s, omega, e):
        return self.profile[-1] * e - self.kappa * omega * (self.kernel[-1] @ s)

    def polarization(self, s, omega, e):
        return 1j * (self.coupling * self.field(s, omega, e) + omega * s) / self.gamma

    def _rk4(self, s, h, stages):
        (o1, e1), (oh, eh), (o2, e2) = stages
        k1 = self.rhs(s, o1, e1)
        k2 = self.rhs(s + 0.5 * h * k1, oh, eh)
        k3 = self.rhs(s + 0.5 * h * k2, oh, eh)
        k4 = self.rhs(s + h * k3, o2, e2)
        return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def _stages(self, e, omega, n, r, m):
        fracs = (r / m, (r + 0.5) / m, (r + 1.0) / m)
        return [(_lerp(omega, n, f), _lerp(e, n, f)) for f in fracs], fracs

    def integrate(self, times, e, omega, s0, keep_polarization=False, substeps=None):
        """RK4 over the output grid with inputs linearly interpolated between samples

        Args:
            times: Output times (uniform), μs
            e: Input field at z=0, shape (nt,) or (nt, B)
            omega: Real control, rad/μs, shape (nt,)
            s0: Initial spin wave, shape (nz,) or (nz, B)
            keep_polarization: Record P(z, t) at the output times
            substeps: Override the RK4 substep count per output step

        Returns:
            tuple: (output at z=L, final spin wave, polarization snapshots or None)
        """
        nt = times.size
        dt = times[1] - times[0]
        m = substeps or self.substeps(dt, float(np.max(np.abs(omega))))
        h = dt / m
        logger.debug(f"adiabatic integration: {nt - 1} steps x {m} substeps")

        s = np.array(s0, dtype=np.complex128)
        out = np.empty((nt,) + s.shape[1:], dtype=np.complex128)
        out[0] = self.output(s, omega[0], e[0])
        snaps = None
        if keep_polarization:
            snaps = np.empty((nt, self.nz), dtype=np.complex128)
            snaps[0] = self.polarization(s, omega[0], e[0])

        for n in range(nt - 1):
            for r in range(m):
                stages, _ = self._stages(e, omega, n, r, m)
                s = self._rk4(s, h, stages)
            if not np.all(np.isfinite(s)):
                raise NumericalInstabilityError(n + 1, times[n + 1])
            out[n + 1] = self.output(s, omega[n + 1], e[n + 1])
            if keep_polarization:
                snaps[n + 1] = self.polarization(s, omega[n + 1], e[n + 1])
        return out, s, snaps

    def _dfdomega(self, s, omega, e):
        return 2.0 * omega * self._b(s) - self.kappa * self.profile * e

    def _adjoint_apply(self, lam, omega):
        return -self.gamma_s * lam + omega**2 * self._bt(lam)

    def write_gradient(self, times, e, omega, weight, scale=1.0, substeps=None):
        """Objective J = scale·Re(S_Tᴴ W S_T) of a writing run and its gradient in Ω

        The gradient is the exact adjoint of the discrete RK4 map, chained to the
        control samples through the linear interpolation between them.

        Args:
            times: Output times of the writing window
            e: Input field samples, shape (nt,)
            omega: Control samples, rad/μs, shape (nt,)
            weight: Hermitian (nz, nz) matrix W
            scale: Constant factor on the objective
            substeps: RK4 substeps per output step

        Returns:
            tuple: (J, dJ/dΩ array of shape (nt,), final spin wave samples)
        """
        nt = times.size
        dt = times[1] - times[0]
        m = substeps or self.substeps(dt, float(np.max(np.abs(omega))))
        h = dt / m

        s = np.zeros(self.nz, dtype=np.complex128)
        history = []
        for n in range(nt - 1):
            for r in range(m):
                history.append(s)
                stages, _ = self._stages(e, omega, n, r, m)
                s = self._rk4(s, h, stages)
            if not np.all(np.isfinite(s)):
                raise NumericalInstabilityError(n + 1, times[n + 1])

        ws = weight @ s
        objective = scale * float(np.real(np.vdot(s, ws)))
        lam = 2.0 * scale * ws
        grad = np.zeros(nt)

        for n in range(nt - 2, -1, -1):
            for r in range(m - 1, -1, -1):
                y = history[n * m + r]
                stages, fracs = self._stages(e, omega, n, r, m)
                (o1, e1), (oh, eh), (o2, e2) = stages
                k1 = self.rhs(y, o1, e1)
                y2 = y + 0.5 * h * k1
                k2 = self.rhs(y2, oh, eh)
                y3 = y + 0.5 * h * k2
                k3 = self.rhs(y3, oh, eh)
                y4 = y + h * k3

                lk1 = (h / 6.0) * lam
                lk2 = (h / 3.0) * lam
                lk3 = (h / 3.0) * lam
                lk4 = (h / 6.0) * lam
                ly = lam.copy()

                g_end = np.real(np.vdot(lk4, self._dfdomega(y4, o2, e2)))
                ly4 = self._adjoint_apply(lk4, o2)
                ly += ly4
                lk3 = lk3 + h * ly4

                g_mid = np.real(np.vdot(lk3, self._dfdomega(y3, oh, eh)))
                ly3 = self._adjoint_apply(lk3, oh)
                ly += ly3
                lk2 = lk2 + 0.5 * h * ly3

                g_mid += np.real(np.vdot(lk2, self._dfdomega(y2, oh, eh)))
                ly2 = self._adjoint_apply(lk2, oh)
                ly += ly2
                lk1 = lk1 + 0.5 * h * ly2

                g_start = np.real(np.vdot(lk1, self._dfdomega(y, o1, e1)))
                ly += self._adjoint_apply(lk1, o1)
                lam = ly

                for g, frac in zip((g_start, g_mid, g_end), fracs):
                    grad[n] += (1.0 - frac) * g
                    grad[n + 1] += frac * g

        return objective, grad, s


class FullPropagator:
    """RK4 on (P, S) with the field recovered by z-quadrature at each stage

        E = e_in + i k ∫₀^z P dz'
        ∂t P = -γP + i k E + iΩS
        ∂t S = -γ_s S + iΩP
    """

    def __init__(self, m, nz):
        self.medium = m
        self.nz = nz
        self.depth = m.depth
        self.gamma = m.gamma_us
        self.gamma_s = m.gamma_s_us
        self.coupling = math.sqrt(self.gamma * self.depth)
        self.hz = 1.0 / (nz - 1)

    def substeps(self, dt, omega_max):
        limit = min(0.1 / self.gamma, 1.0 / (self.gamma * (1.0 + self.depth) + omega_max))
        return max(1, int(math.ceil(dt / limit)))

    def _field(self, p, e):
        return e + 1j * self.coupling * cumulative_trapezoid(
            p, dx=self.hz, axis=0, initial=0
        )

    def output(self, p, e):
        return e + 1j * self.coupling * trapezoid(p, dx=self.hz, axis=0)

    def rhs(self, p, s, omega, e):
        field = self._field(p, e)
        dp = -self.gamma * p + 1j * self.coupling * field + 1j * omega * s
        ds = -self.gamma_s * s + 1j * omega * p
        return dp, ds

    def integrate(self, times, e, omega, s0, keep_polarization=False, substeps=None):
        nt = times.size
        dt = times[1] - times[0]
        m = substeps or self.substeps(dt, float(np.max(np.abs(omega))))
        h = dt / m
        logger.debug(f"full integration: {nt - 1} steps x {m} substeps")

        s = np.array(s0, dtype=np.complex128)
        p = np.zeros_like(s)
        out = np.empty((nt,) + s.shape[1:], dtype=np.complex128)
        out[0] = self.output(p, e[0])
        snaps = None
        if keep_polarization:
            snaps = np.empty((nt, self.nz), dtype=np.complex128)
            snaps[0] = p

        for n in range(nt - 1):
            for r in range(m):
                (o1, e1), (oh, eh), (o2, e2) = [
                    (_lerp(omega, n, f), _lerp(e, n, f))
                    for f in (r / m, (r + 0.5) / m, (r + 1.0) / m)
                ]
                dp1, ds1 = self.rhs(p, s, o1, e1)
                dp2, ds2 = self.rhs(p + 0.5 * h * dp1, s + 0.5 * h * ds1, oh, eh)
                dp3, ds3 = self.rhs(p + 0.5 * h * dp2, s + 0.5 * h * ds2, oh, eh)
                dp4, ds4 = self.rhs(p + h * dp3, s + h * ds3, o2, e2)
                p = p + (h / 6.0) * (dp1 + 2.0 * dp2 + 2.0 * dp3 + dp4)
                s = s + (h / 6.0) * (ds1 + 2.0 * ds2 + 2.0 * ds3 + ds4)
            if not (np.all(np.isfinite(s)) and np.all(np.isfinite(p))):
                raise NumericalInstabilityError(n + 1, times[n + 1])
            out[n + 1] = self.output(p, e[n + 1])
            if keep_polarization:
                snaps[n + 1] = p
        return out, s, snaps


def make_propagator(m, grid):
    if grid.mode == "full":
        return FullPropagator(m, grid.nz)
    return AdiabaticPropagator(m, grid.nz)


def _check_same_window(a, b, what):
    span = max(1.0, a.t_end - a.t_start)
    if (
        abs(a.t_start - b.t_start) > WINDOW_TOLERANCE * span
        or abs(a.t_end - b.t_end) > WINDOW_TOLERANCE * span
    ):
        raise ParameterError(
            f"{what}: windows differ ([{a.t_start}, {a.t_end}] vs [{b.t_start}, {b.t_end}])"
        )


def on_axis(pulse, times):
    """Pulse samples on a solver time axis covering the same window"""
    if pulse.samples.size == times.size:
        return np.array(pulse.samples)
    t = pulse.times
    re = np.interp(times, t, pulse.samples.real)
    im = np.interp(times, t, pulse.samples.imag)
    return re + 1j * im


def control_samples(control, times):
    values = on_axis(control, times)
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    if peak > 0 and float(np.max(np.abs(values.imag))) > 1e-9 * peak:
        raise ParameterError("control envelopes must be real")
    return values.real.copy()


def propagate(e_in, control, m, s0=None, grid=None, keep_polarization=False):
    """Integrate one stage of the storage protocol

    Args:
        e_in: Signal at z=0 over the stage window
        control: Control Rabi frequency (rad/μs) over the same window
        m: MediumParams
        s0: Initial SpinWave, zero when omitted
        grid: SolverGrid
        keep_polarization: Also return P(z, t)

    Returns:
        Propagation: (field at z=L, spin wave at the end of the window, polarization)
    """
    grid = grid or SolverGrid()
    _check_same_window(e_in, control, "propagate")
    times = grid.time_axis(e_in.t_start, e_in.t_end)
    e = on_axis(e_in, times)
    omega = control_samples(control, times)
    if s0 is None:
        s_init = np.zeros(grid.nz, dtype=np.complex128)
    else:
        s_init = np.array(s0.resampled(grid.nz).samples)

    prop = make_propagator(m, grid)
    out, s, snaps = prop.integrate(times, e, omega, s_init, keep_polarization)
    polarization = None
    if keep_polarization:
        polarization = PolarizationField(
            times=times, positions=np.linspace(0.0, 1.0, grid.nz), values=snaps
        )
    return Propagation(SampledPulse(times[0], times[-1], out), SpinWave(s), polarization)


def retrieve(s, control, m, grid=None):
    """Read a stored spin wave out with the given control"""
    zero = SampledPulse.zeros(control.t_start, control.t_end, len(control))
    return propagate(zero, control, m, s0=s, grid=grid).output


def propagate_batch(e, omega, s0, m, grid, times):
    """Column-batched integration used to assemble linear operators

    Args:
        e: Input fields, shape (nt, B)
        omega: Control samples, shape (nt,)
        s0: Initial spin waves, shape (nz, B)

    Returns:
        tuple: (outputs (nt, B), final spin waves (nz, B))
    """
    out, s, _ = make_propagator(m, grid).integrate(times, e, omega, s0)
    return out, s


def run_protocol(e_in, omega_write, omega_read, tau, m, grid=None):
    """Write, store for τ, then retrieve

    Args:
        e_in: Signal on the writing window [-T, 0]
        omega_write: Writing control on the same window; switched off at t=0
        omega_read: Retrieval control on a window starting at or after τ
        tau: Storage time, μs
        m: MediumParams
        grid: SolverGrid

    Returns:
        ProtocolResult
    """
    grid = grid or SolverGrid()
    if tau < 0:
        raise ParameterError(f"storage time must be non-negative, got {tau}")
    _check_same_window(e_in, omega_write, "writing stage")
    if e_in.t_end > WINDOW_TOLERANCE * max(1.0, abs(e_in.t_start)):
        raise ParameterError(f"writing window must end at t=0, got {e_in.t_end}")
    if omega_read.t_start < tau - WINDOW_TOLERANCE * max(1.0, tau):
        raise ParameterError(
            f"retrieval window starts at {omega_read.t_start} before τ={tau}"
        )

    logger.debug(f"writing on [{e_in.t_start:.4g}, 0] us")
    written = propagate(e_in, omega_write, m, grid=grid)
    stored = written.spin_wave.scaled(math.exp(-m.gamma_s_us * tau))
    logger.debug(f"stored for {tau:.4g} us, reading on [{omega_read.t_start:.4g}, {omega_read.t_end:.4g}] us")
    retrieved = retrieve(stored, omega_read, m, grid)

    e0 = energy(e_in)
    if e0 > 0:
        efficiency = energy(retrieved) / e0
        if efficiency > 1.0:
            raise NumericalInstabilityError(
                len(retrieved) - 1,
                retrieved.t_end,
                f"retrieved energy is {efficiency:.6g} times the input",
            )
        leak_fraction = energy(written.output) / e0
        stored_fraction = written.spin_wave.norm() / e0
    else:
        efficiency = leak_fraction = stored_fraction = 0.0

    return ProtocolResult(
        signal=e_in,
        leak=written.output,
        spin_after_write=written.spin_wave,
        spin_after_storage=stored,
        retrieved=retrieved,
        tau=float(tau),
        input_energy=e0,
        efficiency=efficiency,
        leak_fraction=leak_fraction,
        stored_fraction=stored_fraction,
    )
