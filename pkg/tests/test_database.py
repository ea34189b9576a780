import pytest

from eitmem.database import RunCatalog


@pytest.fixture
def catalog(tmp_path):
    return RunCatalog(str(tmp_path / "catalog.db"))


def scan_row(power, alpha_L, efficiency, error=""):
    return {
        "control_power_mW": power,
        "alpha_L": alpha_L,
        "efficiency": efficiency,
        "error": error,
    }


def test_record_and_get_run(catalog):
    catalog.record_run("abc", "simulate", "f00d", 0.42)
    entry = catalog.get_run("abc")
    assert entry["command"] == "simulate"
    assert entry["config_hash"] == "f00d"
    assert entry["efficiency"] == pytest.approx(0.42)
    assert catalog.get_run("missing") is None


def test_rerun_replaces_entry(catalog):
    catalog.record_run("abc", "simulate", "f00d", 0.42)
    catalog.record_run("abc", "iterate", "beef")
    entry = catalog.get_run("abc")
    assert entry["command"] == "iterate"
    assert entry["efficiency"] is None


def test_best_efficiency_by_depth(catalog):
    catalog.record_scan_points(
        "one",
        [
            scan_row(0.5, 6.0, 0.2),
            scan_row(2.0, 6.0, 0.3),
            scan_row(1.0, 24.0, float("nan"), error="ConvergenceError: cap"),
        ],
    )
    catalog.record_scan_points("two", [scan_row(1.0, 24.0, 0.45), scan_row(1.0, 6.0, 0.25)])
    assert catalog.best_efficiency_by_depth() == [(6.0, 0.3, 2.0), (24.0, 0.45, 1.0)]


def test_scan_points_replaced_per_run(catalog):
    catalog.record_scan_points("one", [scan_row(1.0, 6.0, 0.9)])
    catalog.record_scan_points("one", [scan_row(1.0, 6.0, 0.1)])
    assert catalog.best_efficiency_by_depth() == [(6.0, 0.1, 1.0)]
