import argparse
import logging
import math
import os
import sys

from pydantic import ValidationError

from .artifacts import RunDirectory, plot_controls, plot_protocol, plot_scan, plot_trace
from .database import RunCatalog
from .config import config_hash, load_config, resolve_output_root, resolve_run_id
from .errors import (
    ConfigError,
    ConvergenceError,
    NumericalInstabilityError,
    OptimizationStalledError,
    ParameterError,
)
from .fields import overlap, spin_wave_overlap
from .medium import rad_per_us, storage_decay_factor, transit_time_us
from .optimizer import (
    ControlOptions,
    efficiency_vs_depth_scan,
    iterate_signal,
    max_efficiency_curve,
    optimize_control,
    read_control_for,
)
from .shapes import constant_control, flat_read_control
from .solver import run_protocol

logger = logging.getLogger("eitmem.main")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

COMMANDS = ("simulate", "iterate", "optimize-control", "scan")

SCAN_COLUMNS = [
    "control_power_mW",
    "alpha_L",
    "gamma_s_rad_per_s",
    "tau_us",
    "efficiency",
    "iterations",
    "converged",
    "error",
]


def _finite_or_none(value):
    return value if value is not None and math.isfinite(value) else None


class EITMemApp:
    """Runs one command of a configuration and writes its run directory"""

    def __init__(self, cfg, out_root=None, run_id=None, jobs=1):
        """Prepare the run

        Args:
            cfg: Validated RunConfig
            out_root: Output root from the command line
            run_id: Run id from the command line
            jobs: Worker processes for scans
        """
        self.cfg = cfg
        self.digest = config_hash(cfg)
        self.run_id = resolve_run_id(run_id, cfg, self.digest)
        self.out_root = resolve_output_root(out_root, cfg)
        self.jobs = max(1, int(jobs))
        self.anchors = cfg.anchors()
        self.medium = cfg.medium.to_params(self.anchors)
        self.grid = cfg.grid
        self.warnings = 0
        self.run_dir = None
        self.catalog = None

    def _open(self):
        self.run_dir = RunDirectory(self.out_root, self.run_id, self.digest)
        self.catalog = RunCatalog(os.path.join(self.out_root, "catalog.db"))
        logger.info(f"run {self.run_id} -> {self.run_dir.path}")

    def _warn(self, message):
        self.warnings += 1
        logger.warning(message)

    def _medium_summary(self):
        return self.medium.model_dump()

    def _rabi_for_power(self, power):
        return rad_per_us(self.anchors.rabi_for_power(power))

    def run(self, command):
        handlers = {
            "simulate": self.simulate,
            "iterate": self.iterate,
            "optimize-control": self.optimize_control,
            "scan": self.scan,
        }
        block = self.cfg.block(command)
        self._open()
        # Run directory exists from here on
        efficiency = handlers[command](block)
        self.catalog.record_run(self.run_id, command, self.digest, _finite_or_none(efficiency))
        return efficiency

    def _write_rabi(self, block):
        if block.write_rabi_rad_per_us is not None:
            return block.write_rabi_rad_per_us
        if block.write_control_mW is not None:
            return self._rabi_for_power(block.write_control_mW)
        rabi = self.cfg.medium.calibrated_rabi(self.anchors)
        if rabi is None:
            raise ConfigError(
                "simulate.write_control_mW",
                "set write_control_mW, write_rabi_rad_per_us or medium.control_power_mW",
            )
        return rabi

    def simulate(self, block):
        rabi = self._write_rabi(block)
        # Default signal length is one transit time of the writing control
        duration = None
        if rabi > 0:
            duration = transit_time_us(rabi, self.medium)
        signal = block.signal.build(self.grid.nt_per_us, duration)
        omega_write = constant_control(rabi, signal.t_start, signal.t_end, len(signal))
        if block.read_control == "time_reversed" or rabi <= 0:
            omega_read = read_control_for(omega_write, block.tau_us)
        else:
            omega_read = flat_read_control(rabi, block.tau_us, self.medium, self.grid.nt_per_us)

        # Store and retrieve
        result = run_protocol(signal, omega_write, omega_read, block.tau_us, self.medium, self.grid)
        logger.info(f"simulate: η={result.efficiency:.4f}")

        rd = self.run_dir
        rd.write_json(
            "summary.json",
            {
                "command": "simulate",
                "run_id": self.run_id,
                "medium": self._medium_summary(),
                "write_rabi_rad_per_us": rabi,
                "read_control": block.read_control,
                "result": result.to_summary(),
            },
        )
        rd.write_pulse("signal.csv", signal)
        rd.write_pulse("leak.csv", result.leak)
        rd.write_pulse("retrieved.csv", result.retrieved)
        rd.write_pulse("control_write.csv", omega_write)
        rd.write_pulse("control_read.csv", omega_read)
        rd.write_spin_wave("spin_after_write.csv", result.spin_after_write)
        rd.write_spin_wave("spin_after_storage.csv", result.spin_after_storage)
        rd.save_figure("protocol.svg", plot_protocol(result, omega_write, omega_read))
        return result.efficiency

    def iterate(self, block):
        rows = []
        for power in block.control_powers_mW:
            rabi = self._rabi_for_power(power)
            transit = transit_time_us(rabi, self.medium)
            window = block.window_transits * transit
            signal = block.signal.build_start(self.grid.nt_per_us, window, transit)
            omega_write = constant_control(rabi, signal.t_start, signal.t_end, len(signal))
            logger.info(f"iterate at {power:g} mW (Ω={rabi:.4g} rad/μs)")
            trace = iterate_signal(
                signal, omega_write, block.tau_us, self.medium, self.grid, block.tol, block.max_iter
            )
            if not trace.converged:
                self._warn(f"{power:g} mW: no convergence after {block.max_iter} iterations")

            # Per-power artifacts
            tag = f"{power:g}mW"
            self.run_dir.write_table(
                f"trace_{tag}.csv",
                ["iteration", "efficiency", "overlap_with_previous"],
                [
                    {
                        "iteration": k,
                        "efficiency": record.efficiency,
                        "overlap_with_previous": record.overlap_with_previous,
                    }
                    for k, record in enumerate(trace.iterations)
                ],
            )
            self.run_dir.write_pulse(f"final_input_{tag}.csv", trace.final_input)
            self.run_dir.write_pulse(f"final_output_{tag}.csv", trace.final_retrieved)
            self.run_dir.save_figure(f"iterations_{tag}.svg", plot_trace(trace, tag))
            rows.append(
                {
                    "control_power_mW": power,
                    "rabi_rad_per_us": rabi,
                    "final_efficiency": trace.final_efficiency,
                    "converged": trace.converged,
                    "iterations": len(trace.iterations) - 1,
                }
            )

        finals = [row["final_efficiency"] for row in rows]
        self.run_dir.write_json(
            "summary.json",
            {
                "command": "iterate",
                "run_id": self.run_id,
                "medium": self._medium_summary(),
                "tau_us": block.tau_us,
                "traces": rows,
                "efficiency_spread": max(finals) - min(finals),
                "warnings": self.warnings,
            },
        )
        return max(finals)

    def optimize_control(self, block):
        opts = ControlOptions(
            max_rabi_factor=block.max_rabi_factor,
            max_iter=block.max_iter,
            patience=block.patience,
            tolerance=block.tolerance,
        )
        signals, results, reports = [], [], []
        for k, spec in enumerate(block.signals):
            duration = transit_time_us(self._rabi_for_power(self.anchors.anchor_rabi[0]), self.medium)
            signal = spec.build(self.grid.nt_per_us, duration)
            result = optimize_control(signal, self.medium, block.tau_us, self.grid, opts)
            if not result.at_optimum:
                self._warn(
                    f"signal {k}: η={result.achieved_eta:.4f} not within "
                    f"{opts.tolerance} of {result.target:.4f}"
                )
            self.run_dir.write_pulse(f"signal_{k}.csv", signal)
            self.run_dir.write_pulse(f"control_{k}.csv", result.control)
            self.run_dir.write_pulse(f"flat_output_{k}.csv", result.flat_output)
            self.run_dir.write_pulse(f"reversed_output_{k}.csv", result.reversed_output)
            self.run_dir.write_spin_wave(f"spin_wave_{k}.csv", result.spin_wave)
            signals.append(signal)
            results.append(result)
            reports.append(dict(result.report(), signal=spec.model_dump(exclude_none=True)))

        # Every input should end in the same spin wave and the same flat-read output
        flat_overlaps = [
            [overlap(a.flat_output, b.flat_output) for b in results] for a in results
        ]
        spin_overlaps = [
            [spin_wave_overlap(a.spin_wave, b.spin_wave) for b in results] for a in results
        ]
        self.run_dir.write_json(
            "report.json",
            {
                "command": "optimize-control",
                "run_id": self.run_id,
                "medium": self._medium_summary(),
                "tau_us": block.tau_us,
                "signals": reports,
                "flat_output_overlaps": flat_overlaps,
                "stored_spin_wave_overlaps": spin_overlaps,
                "warnings": self.warnings,
            },
        )
        self.run_dir.save_figure("controls.svg", plot_controls(signals, results))
        return min(result.achieved_eta for result in results)

    def scan(self, block):
        template = self.medium.model_copy(update={"gamma_s": block.gamma_s})
        # Decay-free optimum per depth first, then the iterated scan
        curve = max_efficiency_curve(block.alpha_L_values, template, self.grid, self.jobs)
        storage_factor = storage_decay_factor(template, block.tau_us * 1e-6)
        rows = efficiency_vs_depth_scan(
            block.control_powers_mW,
            block.alpha_L_values,
            block.gamma_s,
            block.tau_us,
            template,
            self.grid,
            self.anchors,
            samples_per_transit=block.samples_per_transit,
            window_transits=block.window_transits,
            tol=block.tol,
            max_iter=block.max_iter,
            jobs=self.jobs,
        )
        failures = [row for row in rows if row["error"]]
        for row in failures:
            self._warn(f"scan point failed: {row['error']}")

        # Write tables and figure, then index the points
        self.run_dir.write_table(
            "max_efficiency.csv",
            ["alpha_L", "eta_max", "eta_storage_decay", "cycles"],
            [dict(row, eta_storage_decay=row["eta_max"] * storage_factor) for row in curve],
        )
        self.run_dir.write_table("scan.csv", SCAN_COLUMNS, rows)
        self.run_dir.save_figure("scan.svg", plot_scan(curve, storage_factor, rows))
        self.catalog.record_scan_points(self.run_id, rows)
        self.run_dir.write_json(
            "summary.json",
            {
                "command": "scan",
                "run_id": self.run_id,
                "medium": self._medium_summary(),
                "storage_decay_factor": storage_factor,
                "points": len(rows),
                "failed_points": len(failures),
                "warnings": self.warnings,
            },
        )
        successes = [row["efficiency"] for row in rows if not row["error"]]
        return max(successes) if successes else None


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eitmem", description="EIT light storage simulator and optimizer"
    )
    parser.add_argument("command", choices=COMMANDS, help="What to run")
    parser.add_argument("--config", required=True, help="Run configuration (JSON)")
    parser.add_argument("--jobs", type=int, default=1, help="Worker processes for scans")
    parser.add_argument("--out", default=None, help="Output root (default: $EITMEM_OUT or ./runs)")
    parser.add_argument("--run-id", default=None, help="Run directory name")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    return parser


def main(argv=None):
    """Entry point for the command line"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%H:%M:%S",
    )

    # Load config and run the command
    try:
        cfg = load_config(args.config)
        app = EITMemApp(cfg, out_root=args.out, run_id=args.run_id, jobs=args.jobs)
        app.run(args.command)
    except ConfigError as e:
        logger.error(f"configuration error: {e}")
        return EXIT_CONFIG
    except (ValidationError, ParameterError, FileNotFoundError) as e:
        logger.error(f"configuration error: {e}")
        return EXIT_CONFIG
    except (NumericalInstabilityError, ConvergenceError, OptimizationStalledError) as e:
        logger.error(f"numerical failure: {e}")
        return EXIT_NUMERICAL
    except KeyboardInterrupt:
        logger.info("Interrupted by user.")
        return 130

    if app.warnings:
        logger.warning(f"finished with {app.warnings} warning(s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
