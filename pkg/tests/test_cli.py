import copy
from pathlib import Path

import numpy as np
import pytest
import yaml

from prescribe_select.cli import (
    ConfigError,
    ExperimentConfig,
    cmd_gen,
    cmd_report,
    cmd_run,
    load_config,
    main,
)

BASE = {
    "problem": "newsvendor",
    "master_seed": 321,
    "train_sizes": [60],
    "samples": 1,
    "test_horizon": 60,
    "folds": 3,
    "repetitions": 1,
    "tree": {"max_depth": 2, "min_leaf": 5},
    "predictor": {"rf_min_leaf": 4},
    "jobs": 1,
}


def write_cfg(tmp_path, **overrides):
    raw = copy.deepcopy(BASE)
    raw.update(overrides)
    raw.setdefault("output_dir", str(tmp_path / "out"))
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, problem="nope"))
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, train_sizes=[5]))
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, bogus_key=1))
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, policies=["SAA", "nope"]))
    cfg = load_config(write_cfg(tmp_path))
    assert cfg.folds == 3


def test_cli_exit_code_on_config_error(tmp_path):
    path = write_cfg(tmp_path, problem="nope")
    assert main(["gen", "--config", str(path)]) == 1


def test_gen_writes_expected_files_and_is_deterministic(tmp_path):
    path = write_cfg(tmp_path, samples=2)
    cfg = load_config(path)
    assert cmd_gen(cfg) == 0
    data = Path(cfg.output_dir) / "data"
    files = sorted(p.name for p in data.iterdir())
    assert files == ["manifest.yaml", "test.csv", "train_N60_s0.csv", "train_N60_s1.csv"]
    first = {p.name: p.read_bytes() for p in data.iterdir()}
    assert cmd_gen(cfg) == 0
    second = {p.name: p.read_bytes() for p in data.iterdir()}
    assert first == second


def test_run_degenerate_library_saa_equals_ps(tmp_path):
    path = write_cfg(tmp_path, policies=["SAA"])
    cfg = load_config(path)
    assert cmd_run(cfg) == 0
    rows = _rows(cfg)
    overall = {r["policy"]: r["mean_profit"] for r in rows if r["segment"] == "all"}
    assert set(overall) == {"SAA", "PS"}
    assert overall["SAA"] == overall["PS"]


def test_run_rerun_is_bitwise_identical(tmp_path):
    path = write_cfg(tmp_path)
    cfg = load_config(path)
    assert cmd_run(cfg) == 0
    results = Path(cfg.output_dir) / "results" / "results.csv"
    blob1 = results.read_bytes()
    # wipe and rerun from scratch
    results.unlink()
    assert cmd_run(cfg) == 0
    assert results.read_bytes() == blob1


def test_run_resume_skips_completed_cells(tmp_path, capsys):
    path = write_cfg(tmp_path, samples=2)
    cfg = load_config(path)
    assert cmd_run(cfg) == 0
    results = Path(cfg.output_dir) / "results" / "results.csv"
    blob = results.read_bytes()
    assert cmd_run(cfg) == 0  # everything already complete
    out = capsys.readouterr().out
    assert "resuming: 2 cells" in out
    assert results.read_bytes() == blob  # no duplicate rows


def test_dump_trees_writes_two_dot_files_per_cell(tmp_path):
    path = write_cfg(tmp_path, dump_trees=True, repetitions=2)
    cfg = load_config(path)
    assert cmd_run(cfg) == 0
    dots = list((Path(cfg.output_dir) / "trees" / "N60_s0").glob("*.dot"))
    assert len(dots) == 2
    assert all("digraph" in p.read_text() for p in dots)


def _rows(cfg):
    import csv

    with open(Path(cfg.output_dir) / "results" / "results.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def test_report_summary_and_segments(tmp_path):
    path = write_cfg(tmp_path, samples=2)
    cfg = load_config(path)
    assert cmd_run(cfg) == 0
    assert cmd_report(cfg) == 0
    report = Path(cfg.output_dir) / "report"
    summary = (report / "summary.csv").read_text().splitlines()
    assert summary[0] == "problem,N,policy,mean,ci_lo,ci_hi"
    assert any(",PS," in line for line in summary)
    segs = (report / "segments.csv").read_text().splitlines()
    assert segs[0] == "problem,N,policy,segment,mean,ci_lo,ci_hi"
    labels = {line.split(",")[3] for line in segs[1:]}
    assert labels <= {"A", "B", "C"} and "B" in labels


def test_report_without_results_errors(tmp_path):
    cfg = load_config(write_cfg(tmp_path, output_dir=str(tmp_path / "empty")))
    with pytest.raises(ConfigError):
        cmd_report(cfg)


def test_shipment_smoke_profit_is_negated_cost(tmp_path):
    path = write_cfg(
        tmp_path,
        problem="shipment",
        train_sizes=[60],
        test_horizon=40,
        policies=["SAA", "PP-kNN"],
    )
    cfg = load_config(path)
    assert cmd_run(cfg) == 0
    for r in _rows(cfg):
        assert float(r["mean_profit"]) == pytest.approx(-float(r["mean_cost"]))
        if r["segment"] == "all":
            # one attribution unit per day for shipment
            assert float(r["segment_mean_profit"]) == pytest.approx(float(r["mean_profit"]))
