import json
from pathlib import Path

import pandas as pd
import pytest

from orbitforge.cli import Artifacts, emit_plot_data, main
from orbitforge.curve import Grid, psi_curve
from orbitforge.parsers import curve_to_frame
from orbitforge.report import RunReport, load_report

from conftest import MINIMIZER_ENERGY

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMALL = ["--set", "grid.T=6", "--set", "grid.M=301"]


def run(command, config, out, *extra):
    code = main([command, "--config", str(CONFIGS / config), "--out", str(out), "--log-level", "WARNING", *extra])
    return code, load_report(Path(out) / "report.json")


def test_verify_two_channel(tmp_path):
    code, report = run("verify", "two_channel.json", tmp_path)
    assert code == 0
    assert report["stages"]["verify"]["passed"] is True
    assert report["results"]["assumptions"]["passed"] is True
    assert report["results"]["symmetry"]["passed"] is True


def test_verify_degenerate_well_exits_2(tmp_path):
    code, report = run("verify", "degenerate.json", tmp_path)
    assert code == 2
    assert report["exit_code"] == 2
    assert report["stages"]["verify"]["passed"] is False
    assert report["stages"]["verify"]["error"] == "SpecViolation"
    assert report["results"]["assumptions"]["nondegeneracy"]["passed"] is False


@pytest.mark.parametrize("extra", [["--set", "grid.M=100"], ["--set", "wrong.key=1"], ["--set", "grid.colour=1"]])
def test_config_errors_exit_4(tmp_path, extra):
    code, report = run("verify", "two_channel.json", tmp_path, *extra)
    assert code == 4
    assert report["stages"]["config"]["passed"] is False


def test_unknown_block_in_file_exits_4(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"potential": {"kind": "two_channel"}, "mesh": {"M": 11}}))
    code = main(["verify", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert code == 4
    assert load_report(tmp_path / "out" / "report.json")["exit_code"] == 4


def test_pairs_on_product_double_well(tmp_path):
    code, report = run("pairs", "product_double_well.json", tmp_path, *SMALL, "--set", "multistart.n_seeds=2")
    assert code == 0
    mm = report["results"]["m_matrix"]
    assert mm["m"] == pytest.approx(MINIMIZER_ENERGY, abs=1e-3)
    assert mm["margins"] == {}
    assert (tmp_path / "orbit_m_0_1.csv").exists()


@pytest.mark.slow
def test_pairs_on_product_double_well_full_resolution(tmp_path):
    code, report = run("pairs", "product_double_well.json", tmp_path)
    assert code == 0
    assert report["results"]["m_matrix"]["m"] == pytest.approx(MINIMIZER_ENERGY, abs=1e-4)


def test_gap_on_product_double_well_exits_2(tmp_path):
    code, report = run("gap", "product_double_well.json", tmp_path, *SMALL, "--set", "multistart.n_seeds=4")
    assert code == 2
    assert report["stages"]["gap"]["error"] == "GapNotDetected"
    assert report["results"]["gap"]["passed"] is False
    assert (tmp_path / "orbit_minimizer_0.csv").exists()


def test_mp_on_two_channel(tmp_path):
    code, report = run("mp", "two_channel.json", tmp_path, "--set", "grid.T=8", "--set", "grid.M=401",
                       "--set", "multistart.n_seeds=16")
    assert code == 0
    assert sorted(p.name for p in tmp_path.glob("orbit_*.csv")) == [
        "orbit_minimizer_0.csv", "orbit_minimizer_1.csv", "orbit_saddle.csv"]
    profile = pd.read_csv(tmp_path / "path_profile.csv")
    assert len(profile) == 17
    assert list(profile.columns) == ["s", "image_energy", "grad_norm"]
    saddle = report["results"]["saddle"]
    assert saddle["label"] == "heteroclinic(0->1)"
    assert saddle["margin_m"] > 0.01
    assert (tmp_path / "relax_history.csv").exists()
    assert (tmp_path / "traces.csv").exists()


def test_solver_budget_exhaustion_exits_3(tmp_path):
    code, report = run("minimize", "product_double_well.json", tmp_path, *SMALL, "--set", "multistart.n_seeds=2",
                       "--set", "solver.max_iter=1", "--set", "solver.restarts=0")
    assert code == 3
    assert report["stages"]["minimize"]["error"] == "AllSeedsFailed"


def test_diagnose_an_orbit_file(tmp_path, pdw):
    orbit = tmp_path / "psi.csv"
    curve_to_frame(pdw, psi_curve(Grid(8.0, 801), (-1.0, 0.0), (1.0, 0.0))).to_csv(
        orbit, index=False, float_format="%.17g")
    code, report = run("diagnose", "product_double_well.json", tmp_path / "out", "--orbit", str(orbit))
    assert code == 0
    diag = report["results"]["diagnostics"]
    assert diag["M"] == 801
    assert diag["label"] == "heteroclinic(0->1)"
    assert diag["energy"] == pytest.approx(31.0 / 15.0, abs=1e-4)
    assert diag["residual_order"] is not None
    assert diag["splitting"]["count"] == 1


def test_diagnose_needs_an_orbit(tmp_path):
    code, _ = run("diagnose", "product_double_well.json", tmp_path)
    assert code == 4


def test_normalized_reports_are_reproducible(tmp_path):
    args = [*SMALL, "--set", "multistart.n_seeds=2", "--normalized-report"]
    assert run("minimize", "product_double_well.json", tmp_path / "a", *args)[0] == 0
    assert run("minimize", "product_double_well.json", tmp_path / "b", *args)[0] == 0
    for name in ("report.json", "orbit_minimizer_0_1.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    report = load_report(tmp_path / "a" / "report.json")
    assert "timings" not in report and "created_at" not in report
    assert "directory" not in report["config"]["output"]


def test_empty_run_writes_only_the_report(tmp_path):
    written = emit_plot_data(RunReport("verify"), Artifacts(), tmp_path)
    assert written == [tmp_path / "report.json"]
    assert [p.name for p in tmp_path.iterdir()] == ["report.json"]


def test_png_figures(tmp_path):
    code, _ = run("minimize", "product_double_well.json", tmp_path, *SMALL, "--set", "multistart.n_seeds=1",
                  "--set", 'output.formats=["csv", "png"]')
    assert code == 0
    assert (tmp_path / "traces.png").stat().st_size > 0
