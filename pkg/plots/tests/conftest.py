"""Shared fixtures: real run directories produced via the mabarc CLI."""

import subprocess
import sys

import pytest

MABARC = (sys.executable, "-m", "mabarc.cli")


def mabarc(*args):
    proc = subprocess.run([*MABARC, *args], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="session")
def comparison_runs(tmp_path_factory):
    """olp and oplp runs on the same instance, two epochs each."""
    root = tmp_path_factory.mktemp("runs")
    dirs = {}
    for alg in ("olp", "oplp"):
        out = root / alg
        mabarc("run", "--alg", alg, "--instance", "catalog:nu_sim",
               "--horizon", "250", "--epochs", "2", "--seed", "4",
               "--out", str(out))
        dirs[alg] = out
    return dirs


@pytest.fixture(scope="session")
def single_epoch_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("single") / "run"
    mabarc("run", "--alg", "greedy", "--instance", "catalog:greedy_ce",
           "--horizon", "120", "--epochs", "1", "--seed", "2",
           "--out", str(out))
    return out


@pytest.fixture(scope="session")
def foreign_run(tmp_path_factory):
    """A run on a different instance, for mismatch diagnostics."""
    out = tmp_path_factory.mktemp("foreign") / "run"
    mabarc("run", "--alg", "olp", "--instance", "catalog:greedy_ce",
           "--horizon", "60", "--epochs", "2", "--seed", "3",
           "--out", str(out))
    return out


@pytest.fixture(scope="session")
def sweep_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep") / "sw"
    mabarc("sweep", "--alg", "oplp", "--instance", "catalog:nu_prime_ns",
           "--param", "gamma_scale", "--values", "1", "0.1",
           "--horizon", "150", "--epochs", "2", "--seed", "1",
           "--out", str(out))
    return out
