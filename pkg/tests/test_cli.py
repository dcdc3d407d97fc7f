import csv
import json
import math
import subprocess
import sys

import pytest

from compnull.bounds import avg_power_lower_bound, size_upper_bound, validity_check
from compnull.cli import main


def run_cli(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = main([*argv, "--out-dir", str(out)])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


class TestBounds:
    def test_worked_example(self, tmp_path, capsys):
        code, out = run_cli(tmp_path, "bounds", "--a", "0.4", "--b", "0.6", "--eps", "0.05", "--m", "9", "--r", "100000")
        assert code == 0
        text = capsys.readouterr().out
        line = next(l for l in text.splitlines() if l.startswith("size_upper_raw"))
        assert float(line.split()[1]) == pytest.approx(0.19675, abs=1e-4)
        assert manifest(out)["exit_code"] == 0
        assert str(out / "bounds.txt") in manifest(out)["outputs"]

    def test_degenerate_range(self, tmp_path, capsys):
        code, out = run_cli(tmp_path, "bounds", "--a", "0.4", "--b", "0.4", "--eps", "0.05", "--r", "1000")
        assert code == 2
        assert "degenerate range" in capsys.readouterr().err
        assert "degenerate range" in manifest(out)["error"]

    def test_guard(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "bounds", "--eps", "0.001", "--r", "100")
        assert code == 2
        assert "bound not applicable" in capsys.readouterr().err

    def test_allow_vacuous(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "bounds", "--eps", "0.001", "--r", "100", "--allow-vacuous")
        assert code == 0
        assert "nan" in capsys.readouterr().out

    def test_phi_and_csv(self, tmp_path, capsys):
        csv_path = tmp_path / "b.csv"
        code, _ = run_cli(tmp_path, "bounds", "--eps", "0.05", "--m", "9", "--r", "1e5",
                          "--p-prime", "0.1", "--csv", str(csv_path))
        assert code == 0
        assert "0.943079" in capsys.readouterr().out
        row = next(csv.DictReader(open(csv_path)))
        assert float(row["avg_power_lower"]) == pytest.approx(0.79710, abs=1e-5)
        assert row["is_valid"] == "false"

    def test_default_m(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "bounds", "--eps", "0.05", "--r", "100000")
        assert code == 0
        assert any(l.split() == ["m", "9"] for l in capsys.readouterr().out.splitlines())


class TestOptimize:
    def test_synthetic_design_is_recheckable(self, tmp_path, capsys):
        code, out = run_cli(tmp_path, "optimize", "--synthetic", "0.4", "0.6", "--alpha", "0.1", "--nu", "1e6",
                            "--m-tilde", "10", "--r-tilde", "1000", "--seed", "3")
        assert code == 0
        payload = json.loads((out / "optimize.json").read_text())
        d = payload["design"]
        width = payload["range_used"]["b"] - payload["range_used"]["a"]
        assert validity_check(d["epsilon"], d["m"], d["r"], width, d["alpha"])
        assert payload["h_star"] == avg_power_lower_bound(d["epsilon"], d["m"], d["r"], width)
        assert (d["m"] + 1) * d["r"] <= 10**6 - 10 * 1000
        assert manifest(out)["budget_ledger"]["spent"] == 10_000

    def test_default_pilot_on_narrow_budget_has_no_design(self, tmp_path):
        code, out = run_cli(tmp_path, "optimize", "--synthetic", "0.4", "0.6", "--nu", "1e6")
        assert code == 3
        assert json.loads((out / "optimize.json").read_text())["no_valid_design"]

    def test_budget_below_pilot(self, tmp_path):
        code, out = run_cli(tmp_path, "optimize", "--synthetic", "0.4", "0.6", "--nu", "500")
        assert code == 4
        assert manifest(out)["exit_code"] == 4

    def test_known_range(self, tmp_path):
        code, out = run_cli(tmp_path, "optimize", "--range-a", "0.898", "--range-b", "1.0", "--nu", "5000000", "--skip-pilot")
        assert code == 0
        d = json.loads((out / "optimize.json").read_text())["design"]
        assert 0 < d["epsilon"] <= 0.102
        assert validity_check(d["epsilon"], d["m"], d["r"], 0.102, 0.1)

    def test_skip_pilot_needs_range(self, tmp_path):
        code, _ = run_cli(tmp_path, "optimize", "--skip-pilot", "--range-a", "0.4")
        assert code == 2

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"nu": 1_000_000, "seed": 1, "optimizer": {"m_tilde": 10, "r_tilde": 1000, "alpha": 0.2}}))
        code, out = run_cli(tmp_path, "optimize", "--config", str(cfg), "--synthetic", "0.4", "0.6", "--alpha", "0.1")
        assert code == 0
        assert manifest(out)["config"]["optimizer"]["alpha"] == 0.1
        assert manifest(out)["config"]["optimizer"]["m_tilde"] == 10


SPREAD = {f"n{i}": round(0.3 + 0.05 * i, 10) for i in range(9)}


def rigged_config(tmp_path, q_prime_value):
    cfg = {
        "nu": 1_000_000,
        "seed": 0,
        "source": {"kind": "rigged", "parameters": {"table": {**SPREAD, "qp": q_prime_value}}},
        "null_queries": list(SPREAD),
        "q_prime": "qp",
        "optimizer": {"m_tilde": 9, "r_tilde": 1000, "sampling_mode": "without_replacement"},
    }
    path = tmp_path / f"rigged-{q_prime_value}.json"
    path.write_text(json.dumps(cfg))
    return str(path)


class TestTestCommand:
    def test_agreeing_source_accepts(self, tmp_path):
        code, out = run_cli(tmp_path, "test", "--config", rigged_config(tmp_path, 0.5))
        assert code == 0
        payload = json.loads((out / "test.json").read_text())
        assert payload["reject"] is False
        assert payload["statistic"] == 0.0
        assert payload["ledger"]["spent"] <= 1_000_000

    def test_disjoint_source_rejects(self, tmp_path):
        code, out = run_cli(tmp_path, "test", "--config", rigged_config(tmp_path, 0.95))
        assert code == 0
        assert json.loads((out / "test.json").read_text())["reject"] is True

    def test_seeded_synthetic_rerun_is_identical(self, tmp_path):
        argv = ["test", "--synthetic", "0.4", "0.6", "--nu", "1e6", "--m-tilde", "10", "--r-tilde", "1000",
                "--q-prime", "probe", "--seed", "7"]
        _, a = run_cli(tmp_path, *argv, name="a")
        _, b = run_cli(tmp_path, *argv, name="b")
        assert (a / "test.json").read_bytes() == (b / "test.json").read_bytes()
        assert manifest(a)["config_digest"] == manifest(b)["config_digest"]

    def test_missing_q_prime(self, tmp_path):
        code, _ = run_cli(tmp_path, "test", "--synthetic", "0.4", "0.6", "--m-tilde", "10", "--r-tilde", "1000")
        assert code == 2

    def test_no_valid_design_exit(self, tmp_path):
        code, out = run_cli(tmp_path, "test", "--synthetic", "0.4", "0.6", "--nu", "1e6", "--q-prime", "probe")
        assert code == 3
        assert (out / "no_valid_design.json").exists()
        assert manifest(out)["exit_code"] == 3


class TestReproduce:
    def test_figure1_null(self, tmp_path):
        code, out = run_cli(tmp_path, "reproduce", "figure1", "--p1", "0.87", "--p2", "0.87", "--trials", "200")
        assert code == 0
        for row in csv.DictReader(open(out / "figure1_rates.csv")):
            se = math.sqrt(0.05 * 0.95 / 200)
            assert float(row["rejection_rate"]) <= 0.05 + 3 * se

    def test_figure1_separated(self, tmp_path):
        code, out = run_cli(tmp_path, "reproduce", "figure1", "--p1", "0.87", "--p2", "0.948",
                            "--r", "168700", "--trials", "100")
        assert code == 0
        pvals = [float(r["p_value"]) for r in csv.DictReader(open(out / "figure1_pvalues.csv"))]
        assert len(pvals) == 100 and max(pvals) < 1e-6

    def test_figure2_bounds_match_bounds_command(self, tmp_path, capsys):
        code, out = run_cli(tmp_path, "reproduce", "figure2", "--scale", "desk")
        assert code == 0
        rows = list(csv.DictReader(open(out / "figure2_size.csv")))
        assert rows
        for i, row in enumerate(rows):
            capsys.readouterr()
            c, _ = run_cli(tmp_path, "bounds", "--eps", row["epsilon"], "--m", row["m"], "--r", row["r"], name=f"b{i}")
            assert c == 0
            printed = dict(l.split(None, 1) for l in capsys.readouterr().out.splitlines())
            assert float(printed["size_upper_raw"]) == float(row["analytical_bound"])
        skipped = json.loads((out / "figure2_skipped.json").read_text())
        assert skipped and all("reason" in s for s in skipped)

    def test_figure2_explicit_invalid_grid(self, tmp_path):
        code, _ = run_cli(tmp_path, "reproduce", "figure2", "--eps", "0.01,0.05")
        assert code == 4
        code, out = run_cli(tmp_path, "reproduce", "figure2", "--eps", "0.01,0.05", "--skip-invalid", name="ok")
        assert code == 0

    def test_figure2_byte_identical(self, tmp_path):
        argv = ["reproduce", "figure2", "--eps", "0.05,0.08", "--n-p-prime", "10", "--reps", "10"]
        _, a = run_cli(tmp_path, *argv, name="a")
        _, b = run_cli(tmp_path, *argv, "--jobs", "2", name="b")
        for name in ("figure2_size.csv", "figure2_power.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_sweep(self, tmp_path):
        code, out = run_cli(tmp_path, "reproduce", "sweep", "--seeds", "10")
        assert code == 0
        rows = {r["label"]: float(r["rejection_rate"]) for r in csv.DictReader(open(out / "sweep.csv"))}
        assert rows["inside"] <= rows["near"] <= rows["far"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "compnull", "bounds", "--eps", "0.05", "--m", "9", "--r", "100000",
         "--out-dir", str(tmp_path / "m")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "size_upper" in proc.stdout
