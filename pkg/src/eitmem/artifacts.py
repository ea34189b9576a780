import csv
import logging
import os
import threading

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import ujson  # noqa: E402

from .fields import write_pulse_csv, write_spin_wave_csv  # noqa: E402

logger = logging.getLogger("eitmem.artifacts")


def _format(value):
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.12e" % value
    return str(value)


class RunDirectory:
    """Writes the artifacts of one run under <root>/<run_id>

    Every file carries the configuration hash: CSV files in a leading comment,
    JSON files as a field and SVG files in their metadata.
    """

    def __init__(self, root, run_id, config_hash):
        """Create the run directory

        Args:
            root: Output root directory
            run_id: Run identifier, also the directory name
            config_hash: Hex digest of the run configuration
        """
        self.root = root
        self.run_id = run_id
        self.config_hash = config_hash
        self.path = os.path.join(root, run_id)
        self.lock = threading.Lock()
        os.makedirs(self.path, exist_ok=True)
        self.written = []

    def _target(self, name):
        path = os.path.join(self.path, name)
        self.written.append(name)
        return path

    def write_json(self, name, payload):
        document = dict(payload)
        document["config_hash"] = self.config_hash
        with self.lock, open(self._target(name), "w") as f:
            f.write(ujson.dumps(document, sort_keys=True, indent=2, ensure_ascii=False))
            f.write("\n")

    def write_pulse(self, name, pulse):
        with self.lock:
            write_pulse_csv(self._target(name), pulse, self.config_hash)

    def write_spin_wave(self, name, spin_wave):
        with self.lock:
            write_spin_wave_csv(self._target(name), spin_wave, self.config_hash)

    def write_table(self, name, columns, rows):
        """Rows of dicts as CSV, floats in %.12e"""
        with self.lock, open(self._target(name), "w", newline="") as f:
            f.write(f"# config_hash: {self.config_hash}\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_format(row[c]) for c in columns])

    def save_figure(self, name, fig, description=""):
        plt.rcParams["svg.hashsalt"] = self.config_hash
        with self.lock:
            fig.savefig(
                self._target(name),
                format="svg",
                metadata={
                    "Date": None,
                    "Description": f"config_hash={self.config_hash} {description}".strip(),
                },
            )
        plt.close(fig)


def _amplitude(pulse):
    return np.abs(pulse.samples)


def plot_protocol(result, omega_write, omega_read):
    """Signal, leak and retrieved amplitudes vs time with the control overlaid"""
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(result.signal.times, _amplitude(result.signal), label="input")
    ax.plot(result.leak.times, _amplitude(result.leak), label="leak")
    ax.plot(result.retrieved.times, _amplitude(result.retrieved), label="retrieved")
    ax.set_xlabel("t (μs)")
    ax.set_ylabel("|E| (normalized)")
    twin = ax.twinx()
    for control in (omega_write, omega_read):
        twin.plot(control.times, control.samples.real, color="0.5", linestyle="--")
    twin.set_ylabel("Ω (rad/μs)")
    ax.set_title(f"η = {result.efficiency:.3f}")
    ax.legend(loc="upper right")
    fig.tight_layout()
    return fig


def plot_trace(trace, label=""):
    """Inputs (left) and retrieved outputs (right) per iteration"""
    rows = len(trace.iterations)
    fig, axes = plt.subplots(rows, 2, figsize=(8, 1.6 * rows + 0.6), squeeze=False, sharex="col")
    for k, record in enumerate(trace.iterations):
        left, right = axes[k]
        left.plot(record.input.times, _amplitude(record.input))
        right.plot(record.retrieved.times, _amplitude(record.retrieved))
        left.set_ylabel(f"#{k}")
        right.text(
            0.98, 0.85, f"η={record.efficiency:.3f}", transform=right.transAxes, ha="right"
        )
    axes[-1][0].set_xlabel("t (μs)")
    axes[-1][1].set_xlabel("t (μs)")
    axes[0][0].set_title(f"input {label}".strip())
    axes[0][1].set_title("output")
    fig.tight_layout()
    return fig


def plot_controls(signals, results):
    """Optimized writing controls with their signals"""
    fig, axes = plt.subplots(len(results), 1, figsize=(7, 2.2 * len(results)), squeeze=False)
    for ax, signal, result in zip(axes[:, 0], signals, results):
        ax.plot(signal.times, _amplitude(signal), label="signal")
        ax.set_ylabel("|E|")
        twin = ax.twinx()
        twin.plot(result.control.times, result.control.samples.real, color="C3", label="control")
        twin.set_ylabel("Ω (rad/μs)")
        ax.set_title(f"η = {result.achieved_eta:.3f}")
    axes[-1, 0].set_xlabel("t (μs)")
    fig.tight_layout()
    return fig


def plot_scan(curve_rows, storage_factor, scan_rows):
    """Efficiency vs optical depth: no decay, storage decay only, decay in all stages"""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    depth = np.array([row["alpha_L"] for row in curve_rows])
    eta = np.array([row["eta_max"] for row in curve_rows])
    order = np.argsort(depth)
    ax.plot(depth[order], eta[order], color="k", linewidth=0.8, label="no decay")
    ax.plot(
        depth[order], storage_factor * eta[order], color="k", linewidth=2.0, label="storage decay"
    )
    powers = sorted({row["control_power_mW"] for row in scan_rows})
    for power in powers:
        points = sorted(
            (row["alpha_L"], row["efficiency"])
            for row in scan_rows
            if row["control_power_mW"] == power and not row["error"]
        )
        if points:
            x, y = zip(*points)
            ax.plot(x, y, marker="o", label=f"{power:g} mW")
    ax.set_xlabel("αL")
    ax.set_ylabel("η")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    return fig
