import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg, optimize

from .errors import (
    ConvergenceError,
    DegenerateInputError,
    EITMemError,
    OptimizationStalledError,
    ParameterError,
)
from .fields import (
    SampledPulse,
    SpinWave,
    energy,
    normalize,
    opposite_phase_fraction,
    overlap,
    time_reverse,
)
from .medium import CalibrationAnchors, rabi_for_transit, rad_per_us, transit_time_us
from .shapes import (
    RETRIEVAL_COMPLETION_TRANSITS,
    constant_control,
    starting_pulse,
)
from .solver import (
    AdiabaticPropagator,
    SolverGrid,
    on_axis,
    propagate,
    propagate_batch,
    retrieval_efficiency_kernel,
    retrieval_quadratic_form,
    retrieve,
    run_protocol,
    trapezoid_weights,
)

logger = logging.getLogger("eitmem.optimizer")

STALL_FLOOR = 1e-6
DEFAULT_WINDOW_TRANSITS = 6.0
OPPOSITE_PHASE_WARN = 1e-3


class IterationRecord(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    input: SampledPulse
    retrieved: SampledPulse
    efficiency: float = Field(..., ge=0.0, le=1.0)
    overlap_with_previous: float = Field(..., ge=0.0, le=1.0)


class OptimizationTrace(BaseModel):
    """Per-iteration record of the signal-shape optimization"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    iterations: List[IterationRecord]
    converged: bool
    final_input: SampledPulse
    final_efficiency: float

    @property
    def efficiencies(self):
        return [record.efficiency for record in self.iterations]

    @property
    def final_retrieved(self):
        return self.iterations[-1].retrieved


class OptimalMode(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    spin_wave: SpinWave
    eta_max: float = Field(..., ge=0.0, le=1.0)
    cycles: int = 0


class ControlOptions(BaseModel):
    """Caps and tolerances of the writing-control ascent"""

    model_config = ConfigDict(frozen=True)

    max_rabi: Optional[float] = Field(
        None, gt=0.0, description="Absolute cap on Ω, rad/μs (overrides the factor)"
    )
    max_rabi_factor: float = Field(
        10.0, gt=0.0, description="Cap on Ω relative to the initial constant control"
    )
    max_iter: int = Field(200, ge=1, description="L-BFGS-B iteration cap")
    patience: int = Field(15, ge=1, description="Iterations without relative gain before stopping")
    min_gain: float = Field(1e-4, ge=0.0, description="Relative gain counted as progress")
    tolerance: float = Field(0.03, ge=0.0, description="Allowed shortfall from the target η")
    target: Optional[float] = Field(
        None, ge=0.0, le=1.0, description="Target η, defaults to the decayed kernel optimum"
    )


class ControlOptimization(BaseModel):
    """Result of the writing-control synthesis"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    control: SampledPulse
    achieved_eta: float
    at_optimum: bool
    target: float
    iterations: int
    history: List[float]
    initial_rabi: float
    spin_wave: SpinWave
    flat_output: SampledPulse
    reversed_output: SampledPulse
    flat_overlap: float
    reversed_overlap: float

    def report(self):
        return {
            "achieved_eta": self.achieved_eta,
            "at_optimum": self.at_optimum,
            "target": self.target,
            "iterations": self.iterations,
            "initial_rabi_rad_per_us": self.initial_rabi,
            "flat_retrieval_overlap": self.flat_overlap,
            "time_reversed_retrieval_overlap": self.reversed_overlap,
        }


def kernel_optimal_mode(alpha_L, nz=256):
    """Decay-free optimum from the analytic retrieval kernel

    The retrieve/time-reverse/write cycle acts on sample vectors as the mirrored
    kernel operator J·W^{1/2} k W^{1/2}; its largest |eigenvalue|² is the optimum.

    Returns:
        tuple: (eta_max, optimal SpinWave)
    """
    if alpha_L <= 0:
        raise ParameterError(f"optical depth must be positive, got {alpha_L}")
    root_w = np.sqrt(trapezoid_weights(nz))
    sym = root_w[:, None] * retrieval_efficiency_kernel(alpha_L, nz) * root_w[None, :]
    values, vectors = linalg.eig(sym[::-1])
    lead = int(np.argmax(np.abs(values)))
    mode = SpinWave(vectors[:, lead] / root_w).phase_fixed().normalized()
    return float(min(abs(values[lead]) ** 2, 1.0)), mode


def kernel_efficiency_bound(alpha_L, nz=256):
    return kernel_optimal_mode(alpha_L, nz)[0]


def _cycle_controls(m, grid):
    """Constant control with a 1 μs transit and its completion window"""
    rabi = rabi_for_transit(1.0, m)
    length = RETRIEVAL_COMPLETION_TRANSITS * transit_time_us(rabi, m)
    n = grid.time_axis(0.0, length).size
    read = constant_control(rabi, 0.0, length, n)
    write = constant_control(rabi, -length, 0.0, n)
    return read, write


def verification_read_control(m, tau, grid):
    """Flat read on [τ, τ + completion window] shared by every input of a medium"""
    read, _ = _cycle_controls(m, grid)
    return read.shifted(tau)


def optimal_spin_wave(m, grid=None, max_cycles=60, rtol=1e-6, settle=3):
    """Power iteration S → write(time_reverse(retrieve(S))) without spin decay

    Args:
        m: MediumParams, γ_s is ignored
        grid: SolverGrid
        max_cycles: Cycle cap
        rtol: Relative change of the per-cycle energy ratio counted as settled
        settle: Consecutive settled cycles needed

    Returns:
        OptimalMode
    """
    grid = grid or SolverGrid()
    if m.alpha_L <= 0:
        raise ParameterError(f"optical depth must be positive, got {m.alpha_L}")
    m0 = m.without_spin_decay()
    read, write = _cycle_controls(m0, grid)

    s = SpinWave(np.ones(grid.nz)).normalized()
    ratios = []
    for cycle in range(1, max_cycles + 1):
        out = retrieve(s, read, m0, grid)
        signal = time_reverse(out).shifted(write.t_start - out.t_start)
        s_new = propagate(signal, write, m0, grid=grid).spin_wave
        ratio = s_new.norm() / s.norm()
        ratios.append(ratio)
        if ratio <= 0:
            raise ConvergenceError("spin wave vanished during power iteration", ratio)
        s = s_new.normalized()
        recent = ratios[-(settle + 1):]
        if len(recent) == settle + 1 and all(
            abs(b - a) <= rtol * abs(b) for a, b in zip(recent, recent[1:])
        ):
            logger.info(
                f"αL={m.alpha_L:.4g}: optimal spin wave after {cycle} cycles, "
                f"η_max={ratio:.4f}"
            )
            return OptimalMode(
                spin_wave=s.phase_fixed(), eta_max=min(ratio, 1.0), cycles=cycle
            )
    raise ConvergenceError(
        f"power iteration did not settle within {max_cycles} cycles", ratios[-1]
    )


def dense_operator_efficiency(m, grid=None):
    """Largest |eigenvalue|² of the retrieve-then-write map assembled column by column"""
    grid = grid or SolverGrid()
    m0 = m.without_spin_decay()
    read, write = _cycle_controls(m0, grid)
    t_read = grid.time_axis(read.t_start, read.t_end)
    t_write = grid.time_axis(write.t_start, write.t_end)
    omega_read = on_axis(read, t_read).real
    omega_write = on_axis(write, t_write).real

    nz = grid.nz
    outputs, _ = propagate_batch(
        np.zeros((t_read.size, nz), dtype=np.complex128),
        omega_read,
        np.eye(nz, dtype=np.complex128),
        m0,
        grid,
        t_read,
    )
    _, operator = propagate_batch(
        outputs[::-1],
        omega_write,
        np.zeros((nz, nz), dtype=np.complex128),
        m0,
        grid,
        t_write,
    )
    values = linalg.eigvals(operator)
    return float(np.max(np.abs(values)) ** 2)


def _curve_point(alpha_L, m_template, grid):
    mode = optimal_spin_wave(m_template.with_depth(alpha_L), grid)
    return {"alpha_L": float(alpha_L), "eta_max": mode.eta_max, "cycles": mode.cycles}


def _run_points(func, arg_list, jobs):
    if jobs <= 1:
        return [func(*args) for args in arg_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(func, *args) for args in arg_list]
        return [future.result() for future in futures]


def max_efficiency_curve(alpha_L_values, m_template, grid=None, jobs=1):
    """Decay-free optimum η_max for each optical depth

    Returns:
        list: rows {alpha_L, eta_max, cycles}
    """
    grid = grid or SolverGrid()
    if not alpha_L_values:
        raise ParameterError("need at least one optical depth")
    if any(a <= 0 for a in alpha_L_values):
        raise ParameterError("all optical depths must be positive")
    rows = _run_points(
        _curve_point, [(a, m_template, grid) for a in alpha_L_values], jobs
    )
    ordered = sorted(rows, key=lambda row: row["alpha_L"])
    for prev, row in zip(ordered, ordered[1:]):
        if row["eta_max"] < prev["eta_max"] - 1e-3:
            logger.warning(
                f"η_max drops from {prev['eta_max']:.4f} at αL={prev['alpha_L']:.4g} "
                f"to {row['eta_max']:.4f} at αL={row['alpha_L']:.4g}"
            )
    return rows


def read_control_for(omega_write, tau):
    """Time-reversed writing control placed on [τ, τ + T]"""
    return time_reverse(omega_write).shifted(tau - omega_write.t_start)


def iterate_signal(e0, omega_write, tau, m, grid=None, tol=1e-3, max_iter=20):
    """Iterative time-reversal optimization of the signal shape

    Each step stores and retrieves with the time-reversed control, then feeds the
    renormalized time-reversed output back as the next input.

    Args:
        e0: Starting signal on the writing window [-T, 0]
        omega_write: Writing control on the same window
        tau: Storage time, μs
        m: MediumParams
        grid: SolverGrid
        tol: Stop once the input overlap with the previous input exceeds 1 - tol
        max_iter: Number of feedback steps after the zeroth run

    Returns:
        OptimizationTrace
    """
    grid = grid or SolverGrid()
    if energy(e0) <= 0:
        raise DegenerateInputError("iterate_signal needs a nonzero starting signal")
    omega_read = read_control_for(omega_write, tau)

    def run(signal):
        result = run_protocol(signal, omega_write, omega_read, tau, m, grid)
        if energy(result.retrieved) < STALL_FLOOR * energy(signal):
            raise OptimizationStalledError(
                f"retrieved energy fell below {STALL_FLOOR:g} of the input"
            )
        return result

    current = normalize(e0)
    result = run(current)
    records = [
        IterationRecord(
            input=current,
            retrieved=result.retrieved,
            efficiency=result.efficiency,
            overlap_with_previous=0.0,
        )
    ]
    logger.info(f"iteration 0: η={result.efficiency:.4f}")

    converged = False
    for k in range(1, max_iter + 1):
        # Renormalized time-reversed output becomes the next input
        reversed_out = time_reverse(result.retrieved)
        candidate = normalize(reversed_out.shifted(current.t_start - reversed_out.t_start))
        candidate = candidate.with_samples(on_axis(candidate, current.times))
        step_overlap = overlap(candidate, current)
        current = candidate
        result = run(current)
        records.append(
            IterationRecord(
                input=current,
                retrieved=result.retrieved,
                efficiency=result.efficiency,
                overlap_with_previous=step_overlap,
            )
        )
        logger.info(
            f"iteration {k}: η={result.efficiency:.4f}, overlap={step_overlap:.6f}"
        )
        if step_overlap > 1.0 - tol:
            converged = True
            break

    return OptimizationTrace(
        iterations=records,
        converged=converged,
        final_input=current,
        final_efficiency=records[-1].efficiency,
    )


def optimize_control(e_in, m, tau, grid=None, opts=None):
    """Writing control maximizing storage followed by complete retrieval

    Projected quasi-Newton ascent (L-BFGS-B within [0, cap]) on the control samples,
    with gradients from the discrete adjoint of the writing integration.

    Args:
        e_in: Signal on the writing window [-T, 0]
        m: MediumParams
        tau: Storage time, μs
        grid: SolverGrid, adiabatic integration is always used
        opts: ControlOptions

    Returns:
        ControlOptimization
    """
    grid = grid or SolverGrid()
    opts = opts or ControlOptions()
    e_energy = energy(e_in)
    if e_energy <= 0:
        raise DegenerateInputError("optimize_control needs a nonzero signal")
    if tau < 0:
        raise ParameterError(f"storage time must be non-negative, got {tau}")

    against = opposite_phase_fraction(e_in)
    if against > OPPOSITE_PHASE_WARN:
        logger.warning(
            f"{against:.1%} of the input energy is out of phase with the rest; "
            f"a real control cannot store it"
        )

    times = grid.time_axis(e_in.t_start, e_in.t_end)
    e = on_axis(e_in, times)
    # Start from the constant control whose transit matches the pulse length
    omega_init = rabi_for_transit(e_in.duration(), m)
    cap = opts.max_rabi if opts.max_rabi is not None else opts.max_rabi_factor * omega_init
    upper = cap / omega_init

    # Objective is the kernel efficiency of the written spin wave, decayed over τ
    decay = math.exp(-2.0 * m.gamma_s_us * tau)
    eta_bound, mode = kernel_optimal_mode(m.alpha_L, grid.nz)
    target = opts.target if opts.target is not None else eta_bound * decay

    prop = AdiabaticPropagator(m, grid.nz)
    substeps = prop.substeps(times[1] - times[0], cap)
    weight = retrieval_quadratic_form(m.alpha_L, grid.nz)
    scale = decay / e_energy

    state = {"x": None, "eta": 0.0, "best_x": None, "best_eta": -1.0}
    history = []

    def objective(x):
        eta, grad, _ = prop.write_gradient(
            times, e, x * omega_init, weight, scale, substeps
        )
        state["x"] = x.copy()
        state["eta"] = eta
        if eta > state["best_eta"]:
            state["best_eta"] = eta
            state["best_x"] = x.copy()
        return -eta, -grad * omega_init

    def callback(xk):
        if state["x"] is None or not np.array_equal(xk, state["x"]):
            objective(xk)
        history.append(state["eta"])
        logger.debug(f"control ascent step {len(history)}: η={state['eta']:.5f}")
        if len(history) > opts.patience:
            before = history[-1 - opts.patience]
            if history[-1] - before <= opts.min_gain * before:
                logger.info(f"control ascent stalled after {len(history)} steps")
                raise StopIteration

    x0 = np.full(times.size, min(1.0, upper))
    optimize.minimize(
        objective,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, upper)] * times.size,
        callback=callback,
        options={"maxiter": opts.max_iter},
    )

    best_x = state["best_x"] if state["best_x"] is not None else x0
    best_eta = state["best_eta"]
    control = SampledPulse(times[0], times[-1], best_x * omega_init)
    at_optimum = best_eta >= target - opts.tolerance
    if not at_optimum:
        logger.warning(
            f"control optimization stopped at η={best_eta:.4f}, "
            f"target {target:.4f} ± {opts.tolerance}"
        )

    # Verify with a read control that is the same for every input
    flat = verification_read_control(m, tau, grid)
    result = run_protocol(e_in, control, flat, tau, m, grid)
    reference = retrieve(mode, flat, m, grid)
    # Time-reversed read should hand back the time-reversed input
    reversed_output = retrieve(result.spin_after_storage, read_control_for(control, tau), m, grid)
    reversed_overlap = _aligned_overlap(reversed_output, time_reverse(e_in))

    logger.info(
        f"optimized control: η={result.efficiency:.4f} (target {target:.4f}), "
        f"{len(history)} steps"
    )
    return ControlOptimization(
        control=control,
        achieved_eta=result.efficiency,
        at_optimum=at_optimum,
        target=target,
        iterations=len(history),
        history=history,
        initial_rabi=omega_init,
        spin_wave=result.spin_after_write,
        flat_output=result.retrieved,
        reversed_output=reversed_output,
        flat_overlap=_safe_overlap(result.retrieved, reference),
        reversed_overlap=reversed_overlap,
    )


def _safe_overlap(a, b):
    try:
        return overlap(a, b)
    except DegenerateInputError:
        return 0.0


def _aligned_overlap(output, expected):
    """Overlap after moving output onto expected's window start"""
    return _safe_overlap(output.shifted(expected.t_start - output.t_start), expected)


def _scan_point(power, alpha_L, gamma_s, tau, m_template, grid, anchors, options):
    row = {
        "control_power_mW": float(power),
        "alpha_L": float(alpha_L),
        "gamma_s_rad_per_s": float(gamma_s),
        "tau_us": float(tau),
        "efficiency": float("nan"),
        "iterations": 0,
        "converged": False,
        "error": "",
    }
    try:
        m = m_template.model_copy(update={"alpha_L": float(alpha_L), "gamma_s": float(gamma_s)})
        rabi = rad_per_us(anchors.rabi_for_power(power))
        if rabi <= 0:
            raise ParameterError("scan needs a nonzero control power")
        transit = transit_time_us(rabi, m)
        window = options["window_transits"] * transit
        point_grid = grid.model_copy(
            update={"nt_per_us": options["samples_per_transit"] / transit}
        )
        n = point_grid.time_axis(-window, 0.0).size
        # Start from a pulse about one transit long, ending as the control switches off
        e0 = starting_pulse("gaussian", transit, window, n)
        omega_write = constant_control(rabi, -window, 0.0, n)
        trace = iterate_signal(
            e0, omega_write, tau, m, point_grid, options["tol"], options["max_iter"]
        )
        row.update(
            efficiency=trace.final_efficiency,
            iterations=len(trace.iterations) - 1,
            converged=trace.converged,
        )
    except EITMemError as e:
        row["error"] = f"{type(e).__name__}: {e}"
    return row


def efficiency_vs_depth_scan(
    control_powers,
    alpha_L_values,
    gamma_s,
    tau,
    m_template,
    grid=None,
    anchors=None,
    samples_per_transit=200,
    window_transits=DEFAULT_WINDOW_TRANSITS,
    tol=1e-3,
    max_iter=20,
    jobs=1,
):
    """Converged iterate_signal efficiency over control power and optical depth

    Spin decay acts during writing, storage and retrieval. Failed points carry an
    error message and a NaN efficiency; the scan continues.

    Args:
        control_powers: Control powers in mW, mapped to Ω through the anchors
        alpha_L_values: Optical depths
        gamma_s: Spin decay rate, rad/s
        tau: Storage time, μs
        m_template: MediumParams supplying γ and L
        grid: SolverGrid, its nt_per_us is replaced per point
        anchors: CalibrationAnchors
        samples_per_transit: Time samples per L/v_g
        window_transits: Writing and reading window length in transit times
        jobs: Worker processes

    Returns:
        list: rows in (power, αL) order
    """
    grid = grid or SolverGrid()
    anchors = anchors or CalibrationAnchors()
    if not control_powers or not alpha_L_values:
        raise ParameterError("scan needs nonempty power and optical-depth lists")
    options = {
        "samples_per_transit": samples_per_transit,
        "window_transits": window_transits,
        "tol": tol,
        "max_iter": max_iter,
    }
    args = [
        (p, a, gamma_s, tau, m_template, grid, anchors, options)
        for p in control_powers
        for a in alpha_L_values
    ]
    rows = _run_points(_scan_point, args, jobs)
    for row in rows:
        if row["error"]:
            logger.warning(
                f"scan point P={row['control_power_mW']} mW, αL={row['alpha_L']}: {row['error']}"
            )
        else:
            logger.info(
                f"scan point P={row['control_power_mW']} mW, αL={row['alpha_L']}: "
                f"η={row['efficiency']:.4f}"
            )
    return rows
