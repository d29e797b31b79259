"""Benchmark harness, summaries and the ``mcse`` command."""

import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from pfpcmc.bench import (
    CSV_FIELDS,
    TIMING_FIELDS,
    BenchmarkConfig,
    BenchmarkRecord,
    EstimatorConfig,
    ScenarioConfig,
    read_records,
    run_benchmark,
    run_cell,
    summarize,
    sweep_hyperparameters,
)
from pfpcmc.cli import main
from pfpcmc.measgen import NoiseSpec
from pfpcmc.models import ModelError, mape

ROOT = Path(__file__).resolve().parents[1]
SMALL = {"cases": ["case4"], "methods": ["m1", "s1"], "fads": [0.4], "seeds": 3, "ds": [3]}


def test_mape_examples():
    assert mape([1.0, 1.0], [1.0, 1.0]) == 0
    assert mape([1.01, 0.99], [1.0, 1.0]) == pytest.approx(1.0)
    assert mape(np.full(4, 1.01), np.ones(4)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mape([1.0, 1.0], [1.0, 0.0])


def test_method_map():
    cfg = EstimatorConfig.for_method("m1")
    assert (cfg.model, cfg.strategy, cfg.method) == ("mcse", "full", "m1")
    assert EstimatorConfig.for_method("s2").strategy == "s2"
    with pytest.raises(ModelError):
        EstimatorConfig.for_method("m9")
    with pytest.raises(ModelError):
        EstimatorConfig(model="mc", strategy="s2")


def test_config_aliases():
    cfg = EstimatorConfig.from_dict({"method": "s1", "lambda": 3, "bnb": {"max_nodes": 7}, "solver": {"time_limit": 5}})
    assert cfg.lam == 3 and cfg.max_nodes == 7 and cfg.solver_time_limit == 5
    with pytest.raises(ModelError):
        EstimatorConfig.from_dict({"method": "s1", "colour": "red"})
    grid = BenchmarkConfig.from_dict({"case": "case4", "method": ["s1"], "seeds": 2, "lambda": 4})
    assert grid.cases == ["case4"] and grid.seeds == [0, 1] and grid.estimator == {"lambda": 4}


def test_record_round_trip():
    rec = run_cell(ScenarioConfig("case4", 0.4, 1), EstimatorConfig.for_method("s1", d=3))
    assert rec.ok and rec.mape_vmag >= 0 and rec.wall_time > 0
    again = BenchmarkRecord.from_row(rec.row())
    assert again.row() == rec.row()


def test_failed_cell_is_not_zero():
    # a 1-iteration solver budget cannot reach optimality
    cfg = EstimatorConfig.for_method("m1", backend="scs", feas_tol=1e-12, gap_tol=1e-12, solver_time_limit=1e-4)
    rec = run_cell(ScenarioConfig("case4", 0.4, 0), cfg)
    assert rec.status != "optimal" and not rec.ok
    assert np.isnan(rec.mape_vmag)
    rows = summarize([rec])
    assert rows[0]["ok"] == 0 and np.isnan(rows[0]["mape_median"])


def test_bad_cell_does_not_abort(tmp_path):
    cfg = dict(SMALL, methods=["s1"], seeds=[0], ds=[3, 50])  # d=50 exceeds the 4-bus W
    run = run_benchmark(cfg, tmp_path)
    status = {r.d: r.status for r in run.records}
    assert status[3] == "optimal" and status[50] == "model-error"
    assert "N/A" in (tmp_path / "summary.md").read_text()


def test_reproducible_csv(tmp_path):
    def strip(path):
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        return [{k: v for k, v in r.items() if k not in TIMING_FIELDS} for r in rows]

    run_benchmark(SMALL, tmp_path / "a")
    run_benchmark(dict(SMALL, workers=2), tmp_path / "b")
    assert strip(tmp_path / "a" / "cells.csv") == strip(tmp_path / "b" / "cells.csv")
    with open(tmp_path / "a" / "cells.csv") as fh:
        assert tuple(next(csv.reader(fh))) == CSV_FIELDS


def test_summary_recompute_script(tmp_path):
    run_benchmark(SMALL, tmp_path)
    out = subprocess.run(
        [sys.executable, str(ROOT / "scripts" / "recompute_summary.py"), str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0, out.stdout + out.stderr
    assert "summary OK" in out.stdout


def test_summary_dispersion():
    recs = [
        BenchmarkRecord(case="c", method="s1", fad=0.3, seed=s, k=1, lam=10.0, d=5, n_d=10, delta=None,
                        mape_vmag=m, mape_angle=float("nan"), wall_time=1.0, status="optimal")
        for s, m in enumerate([0.4, 0.1, 0.3, 0.2])
    ]
    (row,) = summarize(recs)
    assert row["mape_median"] == pytest.approx(0.25)
    assert row["mape_iqr"] == pytest.approx(np.subtract(*np.percentile([0.1, 0.2, 0.3, 0.4], [75, 25])))
    assert row["best_seed"] == 1 and row["mape_best"] == 0.1


def test_sweep_forces_s1(tmp_path):
    run = sweep_hyperparameters(dict(SMALL, methods=["m1"], seeds=[0], ds=[2, 3], n_ds=[8]), tmp_path)
    assert {r.method for r in run.records} == {"s1"}
    assert {(r.d, r.n_d) for r in run.records} == {(2, 8), (3, 8)}


def test_full_information_sanity():
    rec = run_cell(ScenarioConfig("case141", 1.0, 0, NoiseSpec.zero()), EstimatorConfig.for_method("s1"))
    assert rec.ok and rec.mape_vmag <= 0.1


def test_k_insensitivity_4bus():
    spread = []
    for seed in range(10):
        scn = ScenarioConfig("case4", 0.4, seed)
        m = [run_cell(scn, EstimatorConfig.for_method("s1", k=k)).mape_vmag for k in range(1, 6)]
        spread.append(max(m) - min(m))
    assert np.median(spread) <= 0.3


# -- CLI -------------------------------------------------------------------------


def test_cli_estimate_json(tmp_path, capsys):
    code = main(["estimate", "--case", "case4", "--method", "s1", "--fad", "0.4", "--seed", "2", "--d", "3", "--k", "1", "--lambda", "10"])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["record"]["method"] == "s1" and doc["record"]["status"] == "optimal"
    assert len(doc["vmag"]) == 3


def test_cli_estimate_flags_to_csv(tmp_path):
    out = tmp_path / "one.csv"
    model = tmp_path / "model.json"
    trace = tmp_path / "trace.jsonl"
    code = main(
        ["estimate", "--case", "case4", "--method", "s2", "--fad", "0.4", "--seed", "1", "--nd", "10", "--d", "3",
         "--max-nodes", "5", "--time-limit", "60", "--gap", "1e-3", "--noise-v", "0.002", "--noise-s", "0.02",
         "--dump-model", str(model), "--trace", str(trace), "--out", str(out)]
    )
    assert code in (0, 2)
    (rec,) = read_records(out)
    assert rec.method == "s2" and rec.n_d == 10 and rec.nodes >= 1
    assert json.loads(model.read_text())["name"].startswith("pfpc")
    assert trace.read_text().strip()


def test_cli_m1_delta():
    assert main(["estimate", "--case", "case4", "--method", "m1", "--delta", "0.05", "--out", "/dev/null"]) == 0


def test_cli_config_file(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"case": "case4", "fad": 0.5, "seed": 4, "method": "m2", "lambda": 5}))
    out = tmp_path / "r.json"
    assert main(["estimate", "--config", str(cfg), "--out", str(out)]) == 0
    rec = json.loads(out.read_text())["record"]
    assert rec["method"] == "m2" and float(rec["lambda"]) == 5 and float(rec["fad"]) == 0.5


def test_cli_benchmark_and_sweep(tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps(dict(SMALL, seeds=2)))
    assert main(["benchmark", "--config", str(grid), "--out", str(tmp_path / "b")]) == 0
    assert main(["sweep", "--config", str(grid), "--out", str(tmp_path / "s"), "--workers", "1"]) == 0
    for sub in ("b", "s"):
        assert {p.name for p in (tmp_path / sub).iterdir()} == {"cells.csv", "summary.csv", "summary.md"}


def test_cli_errors(capsys):
    assert main(["estimate", "--case", "nowhere.m"]) == 1
    with pytest.raises(SystemExit):
        main(["estimate", "--method", "m7"])


def test_console_script():
    out = subprocess.run(["mcse", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "benchmark" in out.stdout
