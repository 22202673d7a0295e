import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ivdeepc.controller import ControllerConfig
from ivdeepc.experiments import (
    RunRecord,
    ScenarioConfig,
    emit,
    figure_config,
    load_config,
    load_manifest,
    medians,
    rerun_manifest,
    run_one,
    run_scenario,
    summarize,
    tracking_metric,
)
from ivdeepc.experiments.config import dump_config
from ivdeepc.experiments.io import RECORD_COLUMNS, SUMMARY_COLUMNS, read_records

REPO = Path(__file__).resolve().parents[1]


def small(**kw):
    base = dict(name="t", controller=ControllerConfig(n_cols=100), T_control=30, n_realizations=2)
    base.update(kw)
    return ScenarioConfig(**base)


def record(metric, variant="iv", value=None, seed=0, error=""):
    return RunRecord("s", variant, value, seed, metric, error=error)


# --- metric ------------------------------------------------------------------------------

def test_metric_zero_error():
    ref = np.array([1.0, -2.0, 3.0])
    assert tracking_metric(ref, ref) == 0.0


def test_metric_constant_offset():
    ref = np.array([3.0, 4.0, 0.0, 0.0])  # norm 5
    assert tracking_metric(ref + 1, ref) == pytest.approx(1 / 5)


def test_metric_accepts_rows():
    ref = np.arange(1.0, 6.0)
    assert tracking_metric(ref[None, :] + 2, ref[None, :]) == pytest.approx(4 / np.linalg.norm(ref))


@given(err=arrays(np.float64, 12, elements=st.floats(-1e3, 1e3)), seed=st.integers(0, 1000))
def test_metric_time_reversal(err, seed):
    ref = np.random.default_rng(seed).uniform(1, 100, 12)
    a = tracking_metric(ref + err, ref)
    b = tracking_metric(ref + err[::-1], ref)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)
    assert a >= 0


def test_metric_errors():
    with pytest.raises(ValueError):
        tracking_metric(np.ones(3), np.zeros(3))
    with pytest.raises(ValueError):
        tracking_metric(np.ones(3), np.ones(4))


# --- config --------------------------------------------------------------------------------

def test_repo_config_has_defaults():
    assert load_config(REPO / "configs" / "scenario.yaml") == ScenarioConfig()


@pytest.mark.parametrize("suffix", [".json", ".yaml"])
def test_config_roundtrip(tmp_path, suffix):
    cfg = small(sweep_axis="horizon", sweep_values=(10, 20), n_cols_per_horizon=6)
    path = tmp_path / f"c{suffix}"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_config_inf_bounds(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("controller:\n  u_max: inf\n  du_max: .inf\n")
    cfg = load_config(path)
    assert math.isinf(cfg.controller.u_max) and math.isinf(cfg.controller.du_max)


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"controller": {"bogus": 1}},
    {"variants": []},
    {"variants": ["lqr"]},
    {"sweep_axis": "data_window"},
    {"sweep_axis": "time"},
    {"n_realizations": 0},
])
def test_config_rejects(data):
    with pytest.raises((ValueError, TypeError)):
        ScenarioConfig.from_dict(data)


def test_seeds_derived():
    assert small(base_seed=7, n_realizations=3).seeds == [7, 8, 9]


def test_resolve_axes():
    cfg = small(sweep_axis="horizon", sweep_values=(10,), n_cols_per_horizon=6)
    ctrl, var = cfg.resolve(10, "iv")
    assert (ctrl.p, ctrl.f, ctrl.n_cols, ctrl.variant) == (10, 10, 60, "iv")
    ctrl, var = small(sweep_axis="noise_variance", sweep_values=(0.25,)).resolve(0.25, "nominal")
    assert var == 0.25 and ctrl.lambda_g == pytest.approx(2.5)
    ctrl, _ = small(sweep_axis="data_window", sweep_values=(60,)).resolve(60, "random_avg")
    assert ctrl.n_cols == 60
    # the embedded controller is not mutated
    assert small().controller.variant == "iv"


def test_figure_presets():
    f4a = figure_config("4a", n_realizations=100)
    assert f4a.sweep_axis == "data_window" and tuple(f4a.sweep_values) == (60, 125, 250, 500)
    assert f4a.noise_variance == pytest.approx(0.25) and f4a.n_realizations == 100
    assert (f4a.controller.p, f4a.controller.f) == (20, 20)
    f4c = figure_config("4c")
    assert tuple(f4c.sweep_values) == (10, 20, 30, 40) and f4c.n_cols_per_horizon == 6
    f4b = figure_config("4b")
    assert f4b.controller.n_cols == 200 and f4b.sweep_axis == "noise_variance"
    f2 = figure_config("2")
    assert f2.noise_variance == pytest.approx(0.01) and f2.controller.n_cols == 500
    assert set(f2.variants) == {"iv", "random_avg"}
    with pytest.raises(ValueError):
        figure_config("3")


# --- runs ------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def records():
    return run_scenario(small(sweep_axis="data_window", sweep_values=(60, 100)))


def test_record_count_and_order(records):
    assert len(records) == 2 * 2 * 2
    keys = [(r.sweep_value, r.seed, r.variant) for r in records]
    assert keys == [(v, s, w) for v in (60, 100) for s in (0, 1) for w in ("iv", "random_avg")]


def test_records_valid(records):
    for r in records:
        assert r.ok and r.metric >= 0 and r.error == ""
        assert r.max_abs_u <= 15.0 and r.max_abs_du <= 3.75


def test_single_realization_two_variants():
    assert len(run_scenario(small(n_realizations=1))) == 2


def test_seed_isolation():
    full = run_scenario(small(n_realizations=3, variants=("iv",)))
    alone = run_one(small(variants=("iv",)), "iv", None, 2)
    assert full[2].seed == 2 and full[2].metric == alone.metric


def test_workers_preserve_results(records):
    again = run_scenario(small(sweep_axis="data_window", sweep_values=(60, 100)), workers=2)
    assert [r.metric for r in again] == [r.metric for r in records]


def test_failure_is_recorded():
    # 1200 excitation samples cannot hold a 2000-column data matrix
    rec = run_one(small(controller=ControllerConfig(n_cols=2000)), "iv", None, 0)
    assert not rec.ok and math.isnan(rec.metric) and "ValueError" in rec.error


# --- summaries ---------------------------------------------------------------------------------

def test_summary_single_record():
    (row,) = summarize([record(0.3)])
    assert row.median == row.p10 == row.p90 == 0.3 and row.n == 1


def test_summary_linear_percentiles():
    (row,) = summarize([record(float(v)) for v in range(1, 101)])
    assert row.median == 50.5
    assert row.p10 == pytest.approx(10.9) and row.p90 == pytest.approx(90.1)
    assert row.n == 100


def test_summary_groups_and_failures():
    recs = [record(1.0), record(3.0), record(float("nan"), error="boom"), record(5.0, variant="random_avg", value=60)]
    rows = {(r.sweep_value, r.variant): r for r in summarize(recs)}
    assert rows[(None, "iv")].median == 2.0 and rows[(None, "iv")].n_failed == 1
    assert medians(recs) == {(None, "iv"): 2.0, (60, "random_avg"): 5.0}


# --- emission and manifests ------------------------------------------------------------------

def test_emit_empty(tmp_path):
    files = emit([], [], tmp_path, small())
    with open(files["records"]) as fh:
        rows = list(csv.reader(fh))
    assert rows == [list(RECORD_COLUMNS)]
    with open(files["summary"]) as fh:
        assert list(csv.reader(fh)) == [list(SUMMARY_COLUMNS)]
    manifest = json.loads(files["manifest"].read_text())
    assert manifest["seeds"] == [0, 1] and manifest["config"]["name"] == "t"
    assert "version" in manifest


def test_emit_full_precision(tmp_path):
    x = 0.1 + 0.2
    files = emit([record(x)], summarize([record(x)]), tmp_path, small())
    (row,) = read_records(files["records"])
    assert row["metric"] == "0.30000000000000004"
    assert float(row["metric"]) == x
    assert row["sweep_value"] == "" and row["error"] == ""


def test_emit_rfc4180_quoting(tmp_path):
    rec = record(1.0, error='ValueError: bad, "quoted"')
    files = emit([rec], [], tmp_path, small())
    assert read_records(files["records"])[0]["error"] == rec.error


def test_manifest_rerun_identical(tmp_path, records):
    cfg = small(sweep_axis="data_window", sweep_values=(60, 100))
    files = emit(records, summarize(records), tmp_path, cfg)
    loaded, variants = load_manifest(files["manifest"])
    assert loaded == cfg and variants == ("iv", "random_avg")
    again = rerun_manifest(files["manifest"])
    emit(again, summarize(again), tmp_path / "again", loaded)
    a = [{k: r[k] for k in ("variant", "sweep_value", "seed", "metric")} for r in read_records(files["records"])]
    b = [{k: r[k] for k in ("variant", "sweep_value", "seed", "metric")}
         for r in read_records(tmp_path / "again" / "records.csv")]
    assert a == b
