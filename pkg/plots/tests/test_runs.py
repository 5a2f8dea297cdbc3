"""Run-directory loading, schema validation, and aggregate cross-checks."""

import json
import shutil

import numpy as np
import pandas as pd
import pytest

from mabarc_plots.runs import (
    SchemaError,
    SummaryMismatchError,
    load_manifest,
    load_run,
    mean_std_curves,
)


def copy_run(src, dst):
    shutil.copytree(src, dst)
    return dst


def test_load_run_parses_real_output(comparison_runs):
    run = load_run(str(comparison_runs["olp"]))
    assert run.instance == "nu_sim"
    assert run.algorithm == "olp" == run.label
    assert run.epochs == [0, 1]
    assert len(run.trace) == 2 * 250
    assert run.summary["config"]["horizon"] == 250


def test_missing_files_are_schema_errors(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(SchemaError, match="trace.csv"):
        load_run(str(empty))
    (empty / "trace.csv").write_text("epoch,t\n")
    with pytest.raises(SchemaError, match="summary.json"):
        load_run(str(empty))


def test_missing_column_is_named(comparison_runs, tmp_path):
    bad = copy_run(comparison_runs["olp"], tmp_path / "bad")
    trace = pd.read_csv(bad / "trace.csv")
    trace.drop(columns=["cum_violation"]).to_csv(bad / "trace.csv",
                                                 index=False)
    with pytest.raises(SchemaError, match="cum_violation"):
        load_run(str(bad))


def test_tampered_summary_mean_detected(comparison_runs, tmp_path):
    bad = copy_run(comparison_runs["olp"], tmp_path / "bad")
    summary = json.loads((bad / "summary.json").read_text())
    summary["metrics"]["terminal_regret"]["mean"] += 1e-3
    (bad / "summary.json").write_text(json.dumps(summary))
    with pytest.raises(SummaryMismatchError, match="terminal_regret"):
        load_run(str(bad))


def test_tampered_per_epoch_detected(comparison_runs, tmp_path):
    bad = copy_run(comparison_runs["olp"], tmp_path / "bad")
    summary = json.loads((bad / "summary.json").read_text())
    summary["metrics"]["terminal_violation"]["per_epoch"][0] += 1e-6
    (bad / "summary.json").write_text(json.dumps(summary))
    with pytest.raises(SummaryMismatchError, match="terminal_violation"):
        load_run(str(bad))


def test_tampered_cumulative_column_detected(comparison_runs, tmp_path):
    bad = copy_run(comparison_runs["olp"], tmp_path / "bad")
    trace = pd.read_csv(bad / "trace.csv")
    trace.loc[17, "cum_regret"] += 1e-6
    trace.to_csv(bad / "trace.csv", index=False)
    with pytest.raises(SummaryMismatchError, match="cum_regret"):
        load_run(str(bad))


def test_clean_copy_still_loads(comparison_runs, tmp_path):
    # round-tripping the CSV through pandas must not break the checks
    good = copy_run(comparison_runs["oplp"], tmp_path / "good")
    trace = pd.read_csv(good / "trace.csv")
    trace.to_csv(good / "trace.csv", index=False)
    run = load_run(str(good))
    assert run.algorithm == "oplp"


def test_mean_std_curves_shapes(comparison_runs, single_epoch_run):
    run = load_run(str(comparison_runs["oplp"]))
    t, mean, std = mean_std_curves(run, "cum_violation")
    assert t.tolist() == list(range(1, 251))
    assert mean.shape == std.shape == (250,)
    assert np.all(std >= 0.0)
    single = load_run(str(single_epoch_run))
    _, mean1, std1 = mean_std_curves(single, "cum_regret")
    assert np.all(std1 == 0.0)  # one epoch: the band collapses
    assert np.all(np.diff(mean1) >= 0.0)


def test_manifest_loading(sweep_dir, tmp_path):
    manifest = load_manifest(str(sweep_dir))
    assert manifest["param"] == "gamma_scale"
    assert [p["value"] for p in manifest["points"]] == [1.0, 0.1]
    for point in manifest["points"]:
        run = load_run(str(sweep_dir / point["dir"]))
        assert run.summary["oracle"]["gamma_star"] == pytest.approx(
            point["value"], abs=1e-7)
    with pytest.raises(SchemaError, match="manifest.json"):
        load_manifest(str(tmp_path))
