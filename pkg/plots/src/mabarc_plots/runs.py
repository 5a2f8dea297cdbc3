"""Loading, validating, and aggregating simulator run directories.

A run directory holds trace.csv (one row per round per epoch, simulator
schema) and summary.json (config echo, oracle constants, terminal
aggregates).  Loading recomputes the terminal aggregates from the raw
per-round rows and cross-checks them against the summary, so schema
drift between producer and consumer fails loudly instead of plotting
garbage.
"""

import json
import os
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "manifest.json"

REQUIRED_COLUMNS = ("epoch", "t", "context", "arm", "reward", "mode",
                    "pessimistic_feasible", "instant_regret",
                    "instant_violation", "cum_regret", "cum_violation",
                    "cum_reward")

# summary metric name -> (per-round column, cumulative column)
_METRIC_COLUMNS = {
    "terminal_regret": ("instant_regret", "cum_regret"),
    "terminal_violation": ("instant_violation", "cum_violation"),
    "terminal_reward": ("reward", "cum_reward"),
}

CROSS_CHECK_TOL = 1e-9


class SchemaError(ValueError):
    """Run directory does not conform to the simulator file schema."""


class SummaryMismatchError(ValueError):
    """Recomputed aggregates disagree with the stored summary."""


class RunData:
    """Parsed trace plus summary for one run directory."""

    __slots__ = ("path", "trace", "summary")

    def __init__(self, path: str, trace: pd.DataFrame, summary: Dict):
        self.path = path
        self.trace = trace
        self.summary = summary

    @property
    def instance(self) -> str:
        return self.summary["config"]["instance"]

    @property
    def algorithm(self) -> str:
        return self.summary["config"]["algorithm"]

    @property
    def label(self) -> str:
        return self.algorithm

    @property
    def epochs(self) -> List[int]:
        return sorted(self.trace["epoch"].unique().tolist())


def _epoch_cumsums(trace: pd.DataFrame, column: str) -> Dict[int, np.ndarray]:
    out = {}
    for epoch, group in trace.sort_values(["epoch", "t"]).groupby("epoch"):
        out[int(epoch)] = np.cumsum(group[column].to_numpy())
    return out


def cross_check(trace: pd.DataFrame, summary: Dict, path: str,
                tol: float = CROSS_CHECK_TOL) -> None:
    """Recompute terminal aggregates from raw rows; compare to summary."""
    metrics = summary.get("metrics")
    if not isinstance(metrics, dict):
        raise SchemaError(f"summary.json in {path} lacks a metrics block")
    for metric, (instant_col, cum_col) in _METRIC_COLUMNS.items():
        stored = metrics.get(metric)
        if stored is None:
            raise SchemaError(f"summary.json in {path} lacks {metric}")
        cumsums = _epoch_cumsums(trace, instant_col)
        terminals = np.array([series[-1] for _, series in
                              sorted(cumsums.items())])
        if len(terminals) != len(stored["per_epoch"]):
            raise SummaryMismatchError(
                f"{metric} in {path}: {len(stored['per_epoch'])} epochs in "
                f"summary but {len(terminals)} in trace")
        per_epoch = np.asarray(stored["per_epoch"], dtype=float)
        worst = float(np.abs(terminals - per_epoch).max())
        if worst > tol:
            raise SummaryMismatchError(
                f"{metric} per-epoch values in {path} differ from the "
                f"recomputed ones by up to {worst:.3g}")
        mean = float(terminals.mean())
        std = float(terminals.std(ddof=1)) if terminals.size > 1 else 0.0
        if abs(mean - stored["mean"]) > tol or abs(std - stored["std"]) > tol:
            raise SummaryMismatchError(
                f"{metric} mean/std in {path} differ from the recomputed "
                f"aggregates")
        # the stored running column must agree with the recomputation too
        for epoch, series in cumsums.items():
            stored_cum = trace.loc[trace["epoch"] == epoch, cum_col]
            drift = float(np.abs(stored_cum.to_numpy() - series).max())
            if drift > tol:
                raise SummaryMismatchError(
                    f"{cum_col} column in {path} (epoch {epoch}) drifts "
                    f"from the recomputed cumulative sum by {drift:.3g}")


def load_run(path: str) -> RunData:
    """Read and validate one run directory."""
    trace_path = os.path.join(path, TRACE_FILE)
    summary_path = os.path.join(path, SUMMARY_FILE)
    if not os.path.exists(trace_path):
        raise SchemaError(f"missing {TRACE_FILE} in {path}")
    if not os.path.exists(summary_path):
        raise SchemaError(f"missing {SUMMARY_FILE} in {path}")
    trace = pd.read_csv(trace_path)
    missing = [c for c in REQUIRED_COLUMNS if c not in trace.columns]
    if missing:
        raise SchemaError(f"{TRACE_FILE} in {path} lacks column(s): "
                          + ", ".join(missing))
    with open(summary_path) as handle:
        summary = json.load(handle)
    if "config" not in summary:
        raise SchemaError(f"{SUMMARY_FILE} in {path} lacks a config block")
    cross_check(trace, summary, path)
    return RunData(path, trace, summary)


def load_manifest(path: str) -> Dict:
    """Read a sweep manifest; points reference subdirectories of path."""
    manifest_path = os.path.join(path, MANIFEST_FILE)
    if not os.path.exists(manifest_path):
        raise SchemaError(f"missing {MANIFEST_FILE} in {path}")
    with open(manifest_path) as handle:
        manifest = json.load(handle)
    if "points" not in manifest or not manifest["points"]:
        raise SchemaError(f"{MANIFEST_FILE} in {path} lists no points")
    return manifest


def mean_std_curves(run: RunData,
                    column: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Round index, cross-epoch mean, and std of one cumulative column."""
    if column not in run.trace.columns:
        raise SchemaError(f"{TRACE_FILE} in {run.path} lacks column(s): "
                          + column)
    wide = run.trace.pivot(index="t", columns="epoch", values=column)
    t = wide.index.to_numpy()
    values = wide.to_numpy()
    mean = values.mean(axis=1)
    if values.shape[1] > 1:
        std = values.std(axis=1, ddof=1)
    else:
        std = np.zeros_like(mean)
    return t, mean, std
