import os

import pytest
import ujson

from eitmem import main as cli
from eitmem.config import SignalSpec, config_hash, load_config, parse_config
from eitmem.database import RunCatalog
from eitmem.errors import ConfigError, NumericalInstabilityError
from eitmem.fields import energy

GRID = {"nz": 32, "nt_per_us": 20.0}
PULSE_CSV = "t_us,re\n" + "".join(f"{0.1 * k:.1f},{min(k, 40 - k) / 20:.3f}\n" for k in range(41))


def write_config(tmp_path, data, name="run.json"):
    path = tmp_path / name
    path.write_text(ujson.dumps(data))
    return str(path)


def simulate_config(**signal):
    return {
        "medium": {"alpha_L": 6.0, "gamma_s_rad_per_s": 0.0},
        "grid": GRID,
        "simulate": {
            "signal": signal or {"shape": "gaussian", "duration_us": 6.0},
            "write_control_mW": 16.0,
        },
    }


def run_dir_files(path):
    return {
        name: (path / name).read_bytes() for name in sorted(os.listdir(path))
    }


def test_simulate_writes_artifacts(tmp_path):
    config = write_config(tmp_path, simulate_config())
    out = tmp_path / "out"
    code = cli.main(["simulate", "--config", config, "--out", str(out), "--run-id", "sim"])
    assert code == cli.EXIT_OK

    run = out / "sim"
    for name in ("summary.json", "signal.csv", "leak.csv", "retrieved.csv", "protocol.svg"):
        assert (run / name).exists()
    summary = ujson.loads((run / "summary.json").read_text())
    digest = config_hash(load_config(config))
    assert summary["config_hash"] == digest
    assert 0 < summary["result"]["efficiency"] < 1
    assert (run / "retrieved.csv").read_text().startswith(f"# config_hash: {digest}\n")
    assert digest in (run / "protocol.svg").read_text()

    entry = RunCatalog(str(out / "catalog.db")).get_run("sim")
    assert entry["command"] == "simulate"
    assert entry["efficiency"] == pytest.approx(summary["result"]["efficiency"])


def test_simulate_is_byte_reproducible(tmp_path):
    config = write_config(tmp_path, simulate_config())
    for root in ("a", "b"):
        cli.main(["simulate", "--config", config, "--out", str(tmp_path / root), "--run-id", "r"])
    assert run_dir_files(tmp_path / "a" / "r") == run_dir_files(tmp_path / "b" / "r")


def test_simulate_zero_signal(tmp_path):
    config = write_config(
        tmp_path, simulate_config(shape="gaussian", duration_us=6.0, amplitude=0.0)
    )
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", config, "--out", str(out), "--run-id", "z"]) == 0
    summary = ujson.loads((out / "z" / "summary.json").read_text())
    assert summary["result"]["efficiency"] == 0.0


def test_simulate_from_pulse_file(tmp_path):
    (tmp_path / "pulse.csv").write_text(PULSE_CSV)
    config = write_config(tmp_path, simulate_config(file="pulse.csv"))
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", config, "--out", str(out), "--run-id", "f"]) == 0
    assert (out / "f" / "signal.csv").exists()


def test_missing_pulse_file_is_a_config_error(tmp_path, caplog):
    config = write_config(tmp_path, simulate_config(file="missing.csv"))
    code = cli.main(["simulate", "--config", config, "--out", str(tmp_path / "out")])
    assert code == cli.EXIT_CONFIG
    assert "missing.csv" in caplog.text
    assert not (tmp_path / "out").exists()


def test_conflicting_medium_forms(tmp_path, caplog):
    data = simulate_config()
    data["medium"] = {"alpha_L": 6.0, "temperature_C": 60.0}
    config = write_config(tmp_path, data)
    assert cli.main(["simulate", "--config", config, "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "medium" in caplog.text


def test_missing_command_block(tmp_path):
    config = write_config(tmp_path, simulate_config())
    assert cli.main(["scan", "--config", config, "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_missing_config_file(tmp_path):
    code = cli.main(["simulate", "--config", str(tmp_path / "nope.json")])
    assert code == cli.EXIT_CONFIG


def test_unknown_command():
    with pytest.raises(SystemExit):
        cli.main(["teleport", "--config", "run.json"])


def test_output_root_from_environment(tmp_path, monkeypatch):
    config = write_config(tmp_path, simulate_config())
    root = tmp_path / "env_out"
    monkeypatch.setenv("EITMEM_OUT", str(root))
    assert cli.main(["simulate", "--config", config]) == 0
    run_id = config_hash(load_config(config))[:12]
    assert (root / run_id / "summary.json").exists()


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def unstable(*args, **kwargs):
        raise NumericalInstabilityError(12, 0.5)

    monkeypatch.setattr(cli, "run_protocol", unstable)
    config = write_config(tmp_path, simulate_config())
    assert cli.main(["simulate", "--config", config, "--out", str(tmp_path)]) == cli.EXIT_NUMERICAL


def test_iterate_without_feedback(tmp_path):
    data = {
        "medium": {"alpha_L": 6.0},
        "grid": GRID,
        "iterate": {
            "signal": {"shape": "gaussian"},
            "control_powers_mW": [16.0],
            "max_iter": 0,
        },
    }
    config = write_config(tmp_path, data)
    out = tmp_path / "out"
    assert cli.main(["iterate", "--config", config, "--out", str(out), "--run-id", "it"]) == 0
    summary = ujson.loads((out / "it" / "summary.json").read_text())
    (trace,) = summary["traces"]
    assert trace["iterations"] == 0
    assert not trace["converged"]
    assert summary["warnings"] == 1
    lines = (out / "it" / "trace_16mW.csv").read_text().splitlines()
    assert lines[1] == "iteration,efficiency,overlap_with_previous"
    assert len(lines) == 3


def test_tiny_scan(tmp_path):
    data = {
        "medium": {"alpha_L": 1.0},
        "grid": GRID,
        "scan": {
            "alpha_L_values": [4.0],
            "control_powers_mW": [16.0],
            "tau_us": 10.0,
            "samples_per_transit": 20,
            "max_iter": 2,
        },
    }
    config = write_config(tmp_path, data)
    out = tmp_path / "out"
    assert cli.main(["scan", "--config", config, "--out", str(out), "--run-id", "s"]) == 0
    run = out / "s"
    for name in ("scan.csv", "max_efficiency.csv", "scan.svg", "summary.json"):
        assert (run / name).exists()
    summary = ujson.loads((run / "summary.json").read_text())
    assert summary["points"] == 1
    assert summary["failed_points"] == 0

    ((alpha_L, efficiency, power),) = RunCatalog(str(out / "catalog.db")).best_efficiency_by_depth()
    assert alpha_L == 4.0
    assert power == 16.0
    assert 0 < efficiency < 1


def test_config_hash_ignores_run_id_and_output_dir():
    base = simulate_config()
    named = dict(base, run_id="mine", output_dir="/tmp/elsewhere")
    deeper = dict(base, medium={"alpha_L": 7.0, "gamma_s_rad_per_s": 0.0})
    assert config_hash(parse_config(base)) == config_hash(parse_config(named))
    assert config_hash(parse_config(base)) != config_hash(parse_config(deeper))


def test_parse_config_names_offending_field():
    data = simulate_config()
    data["grid"] = {"nz": 8}
    with pytest.raises(ConfigError) as info:
        parse_config(data)
    assert info.value.field_path == "grid.nz"


def test_config_hash_is_independent_of_checkout(tmp_path, monkeypatch):
    configs = []
    for name in ("one", "two"):
        root = tmp_path / name
        root.mkdir()
        (root / "pulse.csv").write_text(PULSE_CSV)
        configs.append(load_config(write_config(root, simulate_config(file="pulse.csv"))))
    one, two = configs
    assert config_hash(one) == config_hash(two)
    assert one.simulate.signal.file == "pulse.csv"

    monkeypatch.chdir(tmp_path)
    assert len(two.simulate.signal.build(20.0)) == 41
    assert two.simulate.signal.resolved_file == str(tmp_path / "two" / "pulse.csv")


def test_iteration_start_fills_the_last_transit():
    squeezed = SignalSpec(shape="gaussian").build_start(20.0, 6.0, 1.0)
    assert squeezed.window == pytest.approx((-6.0, 0.0))
    assert energy(squeezed, (-1.0, 0.0)) == pytest.approx(1.0, abs=1e-3)

    explicit = SignalSpec(shape="gaussian", duration_us=6.0).build_start(20.0, 6.0, 1.0)
    assert explicit.duration() > 1.0
