"""Runs the interaction protocol and records traces and metric series.

Each episode draws contexts i.i.d., lets the chosen policy emit an
allocation, samples an arm from the allocation's column, draws a reward,
and feeds the observation back.  Instantaneous regret and violation are
computed every round from the emitted allocation against the true means;
realized rewards are kept separately for the performance comparison.
Randomness comes from three independent counter-based streams per
(base seed, epoch): contexts, arms, rewards - so episodes are
reproducible bit for bit and can run in parallel.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .instances import Instance
from .oracle import OracleReport, optimal_allocation
from .policies import (
    ConfidenceState,
    PublicInstance,
    bounds,
    greedy_step,
    noncontextual_step,
    olp_step,
    oplp_step,
    update_state,
)

ALGORITHMS = {
    "olp": olp_step,
    "oplp": oplp_step,
    "greedy": greedy_step,
    "noncontextual": noncontextual_step,
}

DEFAULT_ALLOC_STRIDE = 50

CSV_COLUMNS = ("epoch", "t", "context", "arm", "reward", "mode",
               "pessimistic_feasible", "instant_regret", "instant_violation",
               "cum_regret", "cum_violation", "cum_reward")
CSV_HEADER = ",".join(CSV_COLUMNS)

_STREAM_CONTEXT = 0
_STREAM_ARM = 1
_STREAM_REWARD = 2


class SimulationError(ValueError):
    """Invalid run configuration or mismatched inputs."""


class RunConfig:
    """Everything needed to reproduce one experiment."""

    __slots__ = ("instance", "algorithm", "horizon", "epochs", "base_seed",
                 "alloc_stride", "out_dir")

    def __init__(self, instance: Instance, algorithm: str, horizon: int,
                 epochs: int = 1, base_seed: int = 0,
                 alloc_stride: int = DEFAULT_ALLOC_STRIDE,
                 out_dir: Optional[str] = None):
        if algorithm not in ALGORITHMS:
            raise SimulationError(
                f"unknown algorithm {algorithm!r}; "
                f"expected one of {sorted(ALGORITHMS)}")
        if horizon < 1:
            raise SimulationError(f"horizon must be >= 1, got {horizon}")
        if epochs < 1:
            raise SimulationError(f"epochs must be >= 1, got {epochs}")
        if base_seed < 0:
            raise SimulationError(f"base seed must be >= 0, got {base_seed}")
        if alloc_stride < 1:
            raise SimulationError(f"alloc stride must be >= 1, "
                                  f"got {alloc_stride}")
        self.instance = instance
        self.algorithm = algorithm
        self.horizon = int(horizon)
        self.epochs = int(epochs)
        self.base_seed = int(base_seed)
        self.alloc_stride = int(alloc_stride)
        self.out_dir = out_dir


class RoundRecord(NamedTuple):
    t: int
    context: int
    arm: int
    reward: float
    mode: str
    pessimistic_feasible: bool
    allocation: Optional[np.ndarray]  # only on logged rounds
    instant_regret: float
    instant_violation: float


class RunTrace:
    """Columnar record of one episode.

    Per-round arrays cover every round; full allocation matrices are kept
    only for rounds where (t - 1) is a multiple of the logging stride.
    pess_margin holds min_k g_k(LCB, w) - lambda_k and conf_event whether
    the true means sat inside the confidence box of every visited cell.
    """

    __slots__ = ("instance_name", "algorithm", "epoch", "horizon", "f_star",
                 "contexts", "arms", "rewards", "modes", "pessimistic",
                 "instant_regret", "instant_violation", "pess_margin",
                 "conf_event", "alloc_rounds", "allocations", "final_counts")

    def __init__(self, instance_name, algorithm, epoch, horizon, f_star,
                 contexts, arms, rewards, modes, pessimistic, instant_regret,
                 instant_violation, pess_margin, conf_event, alloc_rounds,
                 allocations, final_counts):
        self.instance_name = instance_name
        self.algorithm = algorithm
        self.epoch = epoch
        self.horizon = horizon
        self.f_star = f_star
        self.contexts = contexts
        self.arms = arms
        self.rewards = rewards
        self.modes = modes
        self.pessimistic = pessimistic
        self.instant_regret = instant_regret
        self.instant_violation = instant_violation
        self.pess_margin = pess_margin
        self.conf_event = conf_event
        self.alloc_rounds = alloc_rounds
        self.allocations = allocations
        self.final_counts = final_counts

    def record(self, index: int) -> RoundRecord:
        """Row view of round index (0-based; round t = index + 1)."""
        t = index + 1
        position = np.searchsorted(self.alloc_rounds, t)
        allocation = None
        if (position < len(self.alloc_rounds)
                and self.alloc_rounds[position] == t):
            allocation = self.allocations[position]
        return RoundRecord(t, int(self.contexts[index]),
                           int(self.arms[index]), float(self.rewards[index]),
                           str(self.modes[index]),
                           bool(self.pessimistic[index]), allocation,
                           float(self.instant_regret[index]),
                           float(self.instant_violation[index]))

    def __repr__(self) -> str:
        return (f"RunTrace({self.algorithm} on {self.instance_name!r}, "
                f"epoch={self.epoch}, horizon={self.horizon})")


class MetricsSeries:
    """Cumulative metric curves plus terminal cross-epoch aggregates."""

    __slots__ = ("instance_name", "algorithm", "horizon", "epochs",
                 "cum_regret", "cum_violation", "cum_reward",
                 "terminal_regret", "terminal_violation", "terminal_reward")

    def __init__(self, instance_name, algorithm, horizon, epochs,
                 cum_regret, cum_violation, cum_reward):
        self.instance_name = instance_name
        self.algorithm = algorithm
        self.horizon = horizon
        self.epochs = epochs
        self.cum_regret = cum_regret
        self.cum_violation = cum_violation
        self.cum_reward = cum_reward
        self.terminal_regret = cum_regret[:, -1].copy()
        self.terminal_violation = cum_violation[:, -1].copy()
        self.terminal_reward = cum_reward[:, -1].copy()

    @staticmethod
    def _stats(values: np.ndarray) -> Dict[str, object]:
        spread = float(values.std(ddof=1)) if values.size > 1 else 0.0
        return {"per_epoch": [float(v) for v in values],
                "mean": float(values.mean()), "std": spread}

    def summary(self) -> Dict[str, object]:
        return {
            "instance": self.instance_name,
            "algorithm": self.algorithm,
            "horizon": self.horizon,
            "epochs": self.epochs,
            "terminal_regret": self._stats(self.terminal_regret),
            "terminal_violation": self._stats(self.terminal_violation),
            "terminal_reward": self._stats(self.terminal_reward),
        }


def instant_metrics(weighted_means: np.ndarray, thresholds: np.ndarray,
                    w: np.ndarray, f_star: float) -> Tuple[float, float]:
    """Per-round regret and violation of an allocation against true means."""
    value = float((weighted_means * w).sum())
    revenue = (weighted_means * w).sum(axis=1)
    shortfall = np.clip(thresholds - revenue, 0.0, None)
    return max(f_star - value, 0.0), float(shortfall.sum())


def _stream(base_seed: int, epoch: int, tag: int) -> np.random.Generator:
    """Independent deterministic stream for one purpose within one epoch."""
    seq = np.random.SeedSequence((base_seed, epoch, tag))
    return np.random.Generator(np.random.Philox(seq))


def run_episode(config: RunConfig, epoch_index: int) -> RunTrace:
    """Execute one full episode; fully determined by (config, epoch)."""
    inst = config.instance
    _, f_star, _ = optimal_allocation(inst)  # refuses infeasible instances
    weighted = inst.weighted_means
    thresholds = inst.thresholds
    num_arms, num_contexts = inst.means.shape
    step = ALGORITHMS[config.algorithm]
    public = PublicInstance.of_instance(inst)

    ctx_rng = _stream(config.base_seed, epoch_index, _STREAM_CONTEXT)
    arm_rng = _stream(config.base_seed, epoch_index, _STREAM_ARM)
    reward_rng = _stream(config.base_seed, epoch_index, _STREAM_REWARD)

    horizon = config.horizon
    contexts = np.empty(horizon, dtype=np.int64)
    arms = np.empty(horizon, dtype=np.int64)
    rewards = np.empty(horizon)
    modes = np.empty(horizon, dtype="<U13")
    pessimistic = np.zeros(horizon, dtype=bool)
    inst_regret = np.empty(horizon)
    inst_violation = np.empty(horizon)
    pess_margin = np.empty(horizon)
    conf_event = np.zeros(horizon, dtype=bool)
    alloc_rounds: List[int] = []
    allocations: List[np.ndarray] = []

    state = ConfidenceState.fresh(num_arms, num_contexts)
    for t in range(1, horizon + 1):
        decision = step(state, public, t)
        w = decision.allocation.w
        bound = bounds(state, 1.0 / t, state.n.size)
        lcb_revenue = (public.probs * bound.lcb * w).sum(axis=1)
        pess_margin[t - 1] = float((lcb_revenue - thresholds).min())
        visited = state.n > 0
        errors = np.abs(state.mu_hat - inst.means)
        conf_event[t - 1] = bool((errors[visited]
                                  <= bound.epsilon[visited]).all())
        regret, violation = instant_metrics(weighted, thresholds, w, f_star)
        inst_regret[t - 1] = regret
        inst_violation[t - 1] = violation
        modes[t - 1] = decision.mode
        pessimistic[t - 1] = decision.pessimistic_feasible
        if (t - 1) % config.alloc_stride == 0:
            alloc_rounds.append(t)
            allocations.append(w.copy())

        context = int(ctx_rng.choice(num_contexts, p=inst.probs))
        column = w[:, context]
        arm = int(arm_rng.choice(num_arms, p=column / column.sum()))
        reward = inst.noise.draw(reward_rng, float(inst.means[arm, context]))
        contexts[t - 1] = context
        arms[t - 1] = arm
        rewards[t - 1] = reward
        state = update_state(state, arm, context, reward)

    return RunTrace(inst.name, config.algorithm, epoch_index, horizon,
                    f_star, contexts, arms, rewards, modes, pessimistic,
                    inst_regret, inst_violation, pess_margin, conf_event,
                    np.asarray(alloc_rounds, dtype=np.int64),
                    np.asarray(allocations),
                    state.n.astype(np.int64))


def _episode_task(payload) -> RunTrace:
    config, epoch_index = payload
    return run_episode(config, epoch_index)


def run_all(config: RunConfig, max_workers: int = 1) -> List[RunTrace]:
    """All epochs of a run, in fixed epoch order.

    Workers > 1 execute epochs in separate processes; the output is
    identical to the sequential run because every episode depends only on
    (config, epoch index).
    """
    epochs = list(range(config.epochs))
    if max_workers <= 1 or config.epochs == 1:
        return [run_episode(config, e) for e in epochs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_episode_task, [(config, e) for e in epochs]))


def compute_metrics(traces: Union[RunTrace, Sequence[RunTrace]],
                    report: Optional[OracleReport] = None) -> MetricsSeries:
    """Aggregate cumulative metric curves across the given epochs.

    When an oracle report is supplied, its optimal value must match the
    one the traces were computed against - a cheap guard against pairing
    a report with traces from a different instance.
    """
    if isinstance(traces, RunTrace):
        traces = [traces]
    traces = list(traces)
    if not traces:
        raise SimulationError("no traces given")
    first = traces[0]
    for trace in traces:
        if (trace.instance_name != first.instance_name
                or trace.algorithm != first.algorithm
                or trace.horizon != first.horizon):
            raise SimulationError("traces mix instances, algorithms, "
                                  "or horizons")
        if report is not None and abs(trace.f_star - report.f_star) > 1e-9:
            raise SimulationError(
                f"oracle report (f*={report.f_star!r}) does not match "
                f"trace (f*={trace.f_star!r})")
    cum_regret = np.vstack([np.cumsum(t.instant_regret) for t in traces])
    cum_violation = np.vstack([np.cumsum(t.instant_violation)
                               for t in traces])
    cum_reward = np.vstack([np.cumsum(t.rewards) for t in traces])
    return MetricsSeries(first.instance_name, first.algorithm, first.horizon,
                         len(traces), cum_regret, cum_violation, cum_reward)


def coverage_experiment(instance: Instance, algorithm: str, horizon: int,
                        epochs: int, base_seed: int = 0,
                        checkpoints: Sequence[int] = (100, 1000, 10000),
                        max_workers: int = 1) -> List[Dict[str, float]]:
    """Empirical simultaneous confidence coverage at chosen rounds.

    For each checkpoint t, reports the fraction of epochs in which every
    visited cell's true mean lay within its confidence radius at round t,
    next to the 1 - 1/t target and the binomial standard error.
    """
    checkpoints = sorted(int(t) for t in checkpoints)
    if not checkpoints or checkpoints[0] < 1 or checkpoints[-1] > horizon:
        raise SimulationError(
            f"checkpoints {checkpoints} outside [1, {horizon}]")
    config = RunConfig(instance, algorithm, horizon, epochs, base_seed)
    traces = run_all(config, max_workers=max_workers)
    table = []
    for t in checkpoints:
        hits = np.array([trace.conf_event[t - 1] for trace in traces])
        coverage = float(hits.mean())
        stderr = math.sqrt(coverage * (1.0 - coverage) / epochs)
        table.append({"t": t, "coverage": coverage,
                      "target": 1.0 - 1.0 / t, "stderr": stderr})
    return table


def write_trace_csv(traces: Sequence[RunTrace], path: str) -> None:
    """One CSV row per round per epoch, with running cumulative metrics."""
    with open(path, "w", newline="") as handle:
        handle.write(CSV_HEADER + "\n")
        for trace in traces:
            cum_regret = np.cumsum(trace.instant_regret)
            cum_violation = np.cumsum(trace.instant_violation)
            cum_reward = np.cumsum(trace.rewards)
            for i in range(trace.horizon):
                handle.write(
                    f"{trace.epoch},{i + 1},{trace.contexts[i]},"
                    f"{trace.arms[i]},{float(trace.rewards[i])!r},"
                    f"{trace.modes[i]},{bool(trace.pessimistic[i])},"
                    f"{float(trace.instant_regret[i])!r},"
                    f"{float(trace.instant_violation[i])!r},"
                    f"{float(cum_regret[i])!r},"
                    f"{float(cum_violation[i])!r},"
                    f"{float(cum_reward[i])!r}\n")


def summary_payload(config: RunConfig, metrics: MetricsSeries,
                    report: OracleReport) -> Dict[str, object]:
    """JSON-ready run summary: config echo, oracle constants, aggregates."""
    return {
        "config": {
            "instance": config.instance.name,
            "algorithm": config.algorithm,
            "horizon": config.horizon,
            "epochs": config.epochs,
            "base_seed": config.base_seed,
            "alloc_stride": config.alloc_stride,
        },
        "oracle": {
            "f_star": report.f_star,
            "gamma_star": report.gamma_star,
            "rho_star": report.rho_star,
            "enumeration_truncated": report.enumeration_truncated,
        },
        "metrics": metrics.summary(),
    }


def write_summary_json(payload: Dict[str, object], path: str) -> None:
    with open(path, "w") as handle:
        handle.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
