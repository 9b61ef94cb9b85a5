import csv
import json
import math

import numpy as np
import pytest

from brwlab.brw_engine import SiteConfiguration, occupation_measure, run_to_horizon
from brwlab.experiments import (
    ExperimentConfig,
    default_config,
    displacement_band,
    exact_geometric_check,
    load_tolerances,
    max_displacement_constant,
    run_experiment,
    run_max_displacement,
    run_profile,
    run_survival_curve,
    run_total_mass,
)
from brwlab.gw_core import InsufficientSurvivors, geometric_half
from brwlab.rw_core import WalkParams


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig("teleport")
    with pytest.raises(ValueError):
        ExperimentConfig("profile", alpha=1.0)
    with pytest.raises(ValueError):
        ExperimentConfig("profile", n_grid=(100, 50))
    with pytest.raises(ValueError):
        ExperimentConfig("profile", n_grid=())
    with pytest.raises(ValueError):
        ExperimentConfig("profile", replicates=0)
    with pytest.raises(ValueError):
        ExperimentConfig("profile", law="cauchy")
    assert ExperimentConfig("profile", law="geom").law == "geometric_half"


def test_theory_constant():
    assert max_displacement_constant(1.5, 0.5) == 0.25
    assert max_displacement_constant(1.2, 1.0) == pytest.approx(0.05)
    assert max_displacement_constant(1.5, 1.0) == max_displacement_constant(1.5, 0.5) / 2


def test_tolerance_file_holds_declared_values():
    tol = load_tolerances()
    assert tol["version"] >= 1
    assert tol["profile"]["mean_ks_max"] == 0.1
    assert tol["total_mass"] == {"slack": 0.02, "n_se": 3}
    assert tol["yaglom"] == {"ks_max": 0.08, "mean_rel": 0.1}
    assert tol["kolmogorov"]["abs"] == 0.01
    assert tol["feller"]["ks_max"] == 0.01
    assert tol["oracle"]["abs"] == 1e-10
    assert tol["tail"] == {"rel": 0.05, "ratio": [0.8, 1.25]}
    assert "recipe" in tol["max_displacement"]["pilot"]


def test_calibrated_bands_are_sane():
    tol = load_tolerances()
    cells = tol["max_displacement"]["cells"]
    assert sorted(c["n"] for c in cells) == [50, 100, 200]
    theta = 0.25
    for c in cells:
        lo, hi = c["band"]
        assert 0.4 * theta <= lo < c["pilot_median"] < hi <= 2.5 * theta
        assert displacement_band(tol, 1.5, 0.5, "geometric_half", c["n"])[:2] == (lo, hi)
    # Cells outside the calibration fall back to the default band.
    lo, hi, desc = displacement_band(tol, 1.3, 0.5, "geometric_half", 100)
    assert (lo, hi) == pytest.approx((0.4 * 0.15, 2.5 * 0.15)) and "default" in desc


def test_total_mass_deterministic_across_workers(tmp_path):
    config = default_config("total_mass", replicates=9000, master_seed=4)
    one = run_total_mass(config, workers=1)
    two = run_total_mass(config, workers=2)
    assert one.to_json() == two.to_json()
    a = one.write(tmp_path / "a")
    b = two.write(tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a" / "raw.csv").read_bytes() == (tmp_path / "b" / "raw.csv").read_bytes()


def test_total_mass_report_and_raw_rows(tmp_path):
    config = default_config("total_mass", replicates=5000, deltas=(0.0, 1.0, 50.0), master_seed=8)
    report = run_total_mass(config)
    cell = report.cell(100)
    assert cell.theory["survival_limit"] == pytest.approx(1 - math.exp(-1))
    assert cell.estimates["exceed_50"].value == 0.0
    assert cell.estimates["feller_exceed_50"].value == 0.0
    report.write(tmp_path)
    with open(tmp_path / "raw.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["replicate", "n", "survived", "statistic_name", "value"]
    vals = np.array([float(r["value"]) for r in rows])
    for delta in (0.0, 1.0):
        est = cell.estimates[f"exceed_{delta:g}"]
        phat = np.mean(vals > delta)
        assert phat == est.value
        assert math.sqrt(phat * (1 - phat) / vals.size) == pytest.approx(est.stderr)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert set(doc) == {"config", "cells", "verdicts", "meta"}
    assert set(doc["meta"]) == {"seed", "version", "rng", "events"}
    for c in doc["cells"]:
        for est in c["estimates"].values():
            assert set(est) == {"value", "stderr", "count"}
        for v in c["verdicts"].values():
            assert set(v) == {"pass", "tolerance"}
    assert (tmp_path / "curves" / "total_mass.csv").exists()
    assert "wallclock_s" in json.loads((tmp_path / "timing.json").read_text())


def test_survival_curve_small():
    report = run_survival_curve(default_config("survival_curve", replicates=40_000, horizon=200, n_grid=(50,)))
    assert report.verdicts["kolmogorov"].passed
    assert report.verdicts["geometric_closed_form"].passed
    assert report.cell(50).verdicts["brw_survival"].passed
    header, rows = report.curves["survival_curve"]
    for m, rho, _ in rows:
        assert rho == pytest.approx(1 / (m + 1), rel=1e-9)


def test_exact_geometric_check():
    assert exact_geometric_check(500)


def test_profile_small_run():
    config = default_config("profile", replicates=200, n_grid=(50, 100), master_seed=3)
    report = run_profile(config)
    for c in report.cells:
        assert c.estimates["survival_frequency"].count >= 200
        assert 0 < c.estimates["mean_ks"].value < 1
        assert c.verdicts["survival_frequency"].passed
    assert "ks_decreasing" in report.verdicts


def test_normalized_profile_has_unit_mass(rng):
    rec = run_to_horizon(SiteConfiguration.at_origin(200), WalkParams(0.5, 100), geometric_half(), 150, rng)
    if rec.survived:
        masses, over = occupation_measure(rec.final, 10.0, (0, 0.5, 1, 2, math.inf))
        assert (masses.sum() + over) / rec.final.total == 1.0


def test_max_displacement_small_run():
    config = default_config("max_displacement", replicates=200, n_grid=(30, 60), master_seed=5)
    report = run_max_displacement(config)
    for c in report.cells:
        assert c.theory["max_displacement_constant"] == 0.25
        med = c.estimates["median_scaled_rightmost"]
        assert med.count >= 200
        assert c.estimates["signed_distance_to_theory"].value == pytest.approx(med.value - 0.25)
        assert "default" in c.verdicts["median_in_band"].tolerance
    assert "trend_nonincreasing" in report.verdicts


def test_insufficient_survivors_carry_cell():
    config = default_config("profile", replicates=5, n_grid=(50,), min_survivors=400)
    with pytest.raises(InsufficientSurvivors) as info:
        run_experiment(config)
    assert "n=50" in str(info.value)


def test_runner_checks_experiment_kind():
    with pytest.raises(ValueError):
        run_profile(default_config("total_mass"))
