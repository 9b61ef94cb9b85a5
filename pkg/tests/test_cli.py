import csv
import json

import pytest

from brwlab.cli import main, read_config, UsageError
from brwlab.exact_probs import rw_dp_transition_prob
from brwlab.rw_core import WalkParams


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_validate_passes(tmp_path):
    assert main(["validate", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert all(v["pass"] for v in doc["cells"][0]["verdicts"].values())


def test_exact_prob_row_matches_dp(tmp_path, capsys):
    assert main(["exact-prob", "--beta", "0.5", "--n", "100", "--start", "0", "--m", "4", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "exact_prob.csv")
    dp = rw_dp_transition_prob(WalkParams(0.5, 100), 0, 4)
    row2 = next(r for r in rows if r["site"] == "2")
    assert float(row2["probability"]) == dp[2]
    assert abs(float(row2["kac"]) - dp[2]) < 1e-10
    assert "site,probability" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["validate", "--frobnicate"], ["teleport"], [], ["profile", "--n", "abc"]])
def test_usage_errors_exit_2(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)] if argv else argv) == 2


def test_bad_parameter_value_exit_2(tmp_path):
    assert main(["exact-prob", "--beta", "9", "--n", "16", "--out", str(tmp_path)]) == 2
    assert main(["profile", "--n-grid", "100,50", "--out", str(tmp_path)]) == 2


def test_config_file_grammar(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# demo\nbeta = 0.25\nn-grid = 50,100\n\nlaw=geom  # trailing comment\n")
    assert read_config(cfg) == {"beta": 0.25, "n_grid": (50, 100), "law": "geom"}
    cfg.write_text("beta = 0.25\ncolour = red\n")
    with pytest.raises(UsageError):
        read_config(cfg)
    cfg.write_text("just words\n")
    with pytest.raises(UsageError):
        read_config(cfg)


def test_unknown_config_key_exit_2(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("beta = 0.5\nfoo = 1\n")
    assert main(["exact-prob", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("beta = 0.25\nn = 16\nm = 3\nstart = 1\n")
    assert main(["exact-prob", "--config", str(cfg), "--beta", "0.5", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["config"] == {"subcommand": "exact-prob", "beta": 0.5, "n": 16, "start": 1, "m": 3}


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BRWLAB_OUT", str(tmp_path / "envout"))
    assert main(["exact-prob", "--m", "2"]) == 0
    assert (tmp_path / "envout" / "exact_prob.csv").exists()


def test_runtime_error_exit_3(tmp_path):
    # A survivor target below the required minimum of 200.
    assert main(["max-displacement", "--n-grid", "20", "--replicates", "50", "--out", str(tmp_path)]) == 3


def test_verdict_failure_exit_1(tmp_path):
    assert main(["profile", "--n", "50", "--replicates", "200", "--out", str(tmp_path)]) == 1
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["cells"][0]["verdicts"]["mean_ks"]["pass"] is False


def test_experiment_outputs_and_determinism(tmp_path):
    args = ["total-mass", "--replicates", "3000", "--seed", "11", "--delta", "0,0.5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--workers", "2", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    assert (tmp_path / "a" / "raw.csv").read_bytes() == (tmp_path / "b" / "raw.csv").read_bytes()
    assert (tmp_path / "a" / "curves" / "total_mass.csv").exists()
    doc = json.loads((tmp_path / "a" / "report.json").read_text())
    assert doc["config"]["deltas"] == [0.0, 0.5]
    assert doc["meta"]["rng"]["name"] == "Philox4x64-10"


def test_feller_csv(tmp_path):
    assert main(["feller", "--replicates", "50000", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "feller.csv")
    assert len(rows) == 50000 and list(rows[0]) == ["sample", "mass"]


def test_gw_stats(tmp_path):
    assert main(["gw-stats", "--m", "100", "--replicates", "100000", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "curves" / "survival.csv")
    assert len(rows) == 100 and float(rows[0]["rho_m"]) == 0.5
    assert main(["gw-stats", "--m", "400", "--replicates", "400000", "--law", "binary", "--out", str(tmp_path)]) == 0


def test_simulate_brw(tmp_path):
    assert main(["simulate-brw", "--n", "50", "--alpha", "1.2", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "snapshots.csv")
    assert rows[0] == {"generation": "0", "site": "0", "count": str(int(-(-50**1.2 // 1)))}
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["run"]["horizon"] == int(50**1.2)
