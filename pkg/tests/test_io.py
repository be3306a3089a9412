import json
from dataclasses import dataclass

import numpy as np
import pandas as pd
import pytest

from orbitforge import config
from orbitforge.curve import DiscreteCurve, Grid, constant_curve, psi_curve
from orbitforge.errors import ConfigError, InvalidGrid, WellMismatch
from orbitforge.mountainpass import init_path
from orbitforge.parsers import (curve_to_frame, frame_to_curve, history_frame, path_profile_frame, read_orbit_csv,
                                traces_frame)
from orbitforge.report import RunReport, load_report, save_report
from orbitforge.runconfig import apply_overrides, from_document, load_run_config, parse_override
from orbitforge.utils import to_jsonable, write_tables

LEFT, RIGHT = (-1.0, 0.0), (1.0, 0.0)
GRID = Grid(4.0, 81)


def test_orbit_table_columns(pdw):
    df = curve_to_frame(pdw, psi_curve(GRID, LEFT, RIGHT))
    assert list(df.columns) == ["t", "u_1", "u_2", "e_density"]
    assert len(df) == GRID.M
    assert df["t"].iloc[GRID.center] == 0.0


def test_orbit_csv_reads_back_exactly(pdw, tmp_path):
    q = psi_curve(GRID, LEFT, RIGHT)
    path = tmp_path / "orbit.csv"
    write_tables(tmp_path, {"orbit": curve_to_frame(pdw, q)})
    back = read_orbit_csv(pdw, path)
    assert back.grid.M == GRID.M
    assert np.array_equal(back.values, q.values)


def test_orbit_csv_keeps_values_without_a_short_decimal(pdw, tmp_path):
    t = GRID.nodes
    q = DiscreteCurve(GRID, np.column_stack([np.tanh(t), -0.7000000000000001 * np.exp(-t ** 2)]), LEFT, RIGHT)
    write_tables(tmp_path, {"orbit": curve_to_frame(pdw, q)})
    back = read_orbit_csv(pdw, tmp_path / "orbit.csv")
    assert back.values[GRID.center, 1] == -0.7000000000000001
    assert np.array_equal(back.values, q.values)


def test_orbit_table_is_writable_and_detached(pdw):
    q = psi_curve(GRID, LEFT, RIGHT)
    df = curve_to_frame(pdw, q)
    df.loc[3, "u_2"] = 5.0
    traces = traces_frame({"a": q})
    traces.loc[3, "u_1"] = 5.0
    assert q.values[3, 1] == 0.0
    assert q.values[3, 0] != 5.0


def test_orbit_ends_snap_to_wells(pdw):
    df = curve_to_frame(pdw, psi_curve(GRID, LEFT, RIGHT))
    df.loc[0, "u_1"] = -1.0 + 1e-8
    assert np.array_equal(frame_to_curve(pdw, df).left, LEFT)
    df.loc[0, "u_1"] = -1.0 + 1e-3
    with pytest.raises(WellMismatch):
        frame_to_curve(pdw, df)


@pytest.mark.parametrize("mutate", [
    lambda df: df.iloc[:-1],
    lambda df: df.drop(columns=["u_2"]),
    lambda df: df.assign(t=df["t"] + np.linspace(0.0, 0.1, len(df))),
])
def test_bad_orbit_tables(pdw, mutate):
    df = curve_to_frame(pdw, psi_curve(GRID, LEFT, RIGHT))
    with pytest.raises(InvalidGrid):
        frame_to_curve(pdw, mutate(df))


def test_path_profile_and_traces(pdw):
    q0 = psi_curve(GRID, LEFT, RIGHT)
    path = init_path(q0, q0.with_values(q0.values * 0.5), 5, pdw)
    profile = path_profile_frame(path, np.zeros(5))
    assert profile["s"].tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    traces = traces_frame({"a": q0, "b": constant_curve(GRID, RIGHT)})
    assert len(traces) == 2 * GRID.M
    assert set(traces["orbit"]) == {"a", "b"}
    assert traces_frame({}).empty


def test_history_frame_flattens_bump_centres():
    df = history_frame([{"iteration": 0, "max_energy": 2.5, "bump_centers": [10, 40]},
                        {"iteration": 10, "max_energy": 2.4, "bump_centers": []}])
    assert df["bump_centers"].tolist() == ["10 40", ""]
    assert df["n_bumps"].tolist() == [2, 0]


@dataclass
class _Row:
    x: float
    n: int


def test_to_jsonable():
    out = to_jsonable({"a": np.float64(np.nan), "b": np.int64(3), "c": np.array([1.0, np.inf]),
                       "d": _Row(1.5, 2), 4: (np.bool_(True),)})
    assert out == {"a": None, "b": 3, "c": [1.0, None], "d": {"x": 1.5, "n": 2}, "4": [True]}
    json.dumps(out, allow_nan=False)


def test_write_tables_skips_empty_frames(tmp_path):
    df = pd.DataFrame({"x": [0.1, 1.0 / 3.0]})
    written = write_tables(tmp_path, {"full": df, "empty": pd.DataFrame()}, ("csv", "parquet"))
    assert sorted(p.name for p in written) == ["full.csv", "full.parquet"]
    assert pd.read_csv(tmp_path / "full.csv", float_precision="round_trip")["x"].tolist() == df["x"].tolist()
    assert pd.read_parquet(tmp_path / "full.parquet")["x"].tolist() == df["x"].tolist()


def test_report_round_trip(tmp_path):
    report = RunReport("gap", workers=2)
    report.mark("verify", True)
    report.fail("gap", ConfigError("bad"))
    report.results["value"] = float("nan")
    path = save_report(tmp_path / "r" / "report.json", report)
    assert not (tmp_path / "r" / "report.json.tmp").exists()
    data = load_report(path)
    assert data["passed"] is False
    assert data["stages"]["gap"] == {"passed": False, "error": "ConfigError", "message": "bad", "exit_code": 4}
    assert data["results"]["value"] is None
    assert "timings" in data
    assert "timings" not in report.to_dict(normalized=True)
    assert load_report(tmp_path / "missing.json") is None


def test_parse_override():
    assert parse_override("grid.M=401") == ("grid", "M", 401)
    assert parse_override("path.spring=auto") == ("path", "spring", "auto")
    assert parse_override('output.formats=["csv"]') == ("output", "formats", ["csv"])
    for bad in ("grid.M", "M=3", "mesh.M=3"):
        with pytest.raises(ConfigError):
            parse_override(bad)


def test_overrides_leave_the_document_alone():
    doc = {"potential": {"kind": "two_channel"}, "grid": {"M": 11}}
    new = apply_overrides(doc, ["grid.M=21", "solver.tol_grad=1e-6"])
    assert doc["grid"]["M"] == 11
    assert new["grid"]["M"] == 21 and new["solver"] == {"tol_grad": 1e-6}


def test_document_defaults_and_options():
    cfg = from_document({"potential": {"kind": "two_channel"}, "multistart": {"pair": [1, 0]}})
    assert cfg.grid.M == 2001 and cfg.path.N == 17
    assert cfg.multistart.pair == (1, 0)
    assert cfg.make_grid() == Grid(10.0, 2001)
    assert cfg.minimize_options().tol_grad == 1e-8
    assert cfg.refine_options().cluster_threshold == 0.05
    assert cfg.sym_options().drift_window == 100
    assert cfg.multistart_options(workers=3).workers == 3
    assert cfg.to_dict()["multistart"]["pair"] == [1, 0]


@pytest.mark.parametrize("patch", [
    {"multistart": {"pair": [0, 0]}},
    {"multistart": {"pair": [0, 5]}},
    {"path": {"spring": "stiff"}},
    {"path": {"N": 2}},
    {"output": {"formats": ["xlsx"]}},
    {"grid": {"T": 0.5}},
    {"solver": {"tol_grad": 0}},
])
def test_invalid_documents(patch):
    with pytest.raises(ConfigError):
        from_document({"potential": {"kind": "two_channel"}, **patch})


def test_load_run_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"potential": {"kind": "product_double_well"}}))
    cfg = load_run_config(path)
    assert cfg.output.directory == config.OUT_DIR
    cfg = load_run_config(path, ["grid.M=101"], out=str(tmp_path / "o"), normalized=True)
    assert cfg.grid.M == 101
    assert cfg.output.directory == str(tmp_path / "o") and cfg.output.normalized
    assert "directory" not in cfg.to_dict(normalized=True)["output"]
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "nope.json")
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "broken.json")
