"""Online allocation policies built on confidence bounds.

All policies share the same sufficient statistics: per-cell observation
counts, reward sums, and empirical means.  Each round they emit a full
K x |C| allocation matrix.  The optimistic policy plans against upper
confidence bounds everywhere; the optimistic-pessimistic variant guards
the revenue floors with lower bounds whenever that tighter system is
feasible; the greedy plug-in trusts raw empirical means; and the
non-contextual baseline ignores context identity and allocates a single
revenue-ratio mixture in every context.
"""

import math
from typing import Dict, Iterable, Optional

import numpy as np

from .instances import RewardModel
from .lp_core import (
    EQ,
    GE,
    STATUS_INFEASIBLE,
    STATUS_OPTIMAL,
    LinearProgram,
    SolverContractError,
    build_alloc_lp,
    solve_lp,
)
from .oracle import TOL_ACT, ActiveSet, Allocation

# Confidence radius substituted for unvisited cells, where the formula
# diverges; large enough to force exploration, finite to keep LPs bounded.
M_CAP = 1e3

MODE_OPTIMISTIC = "OptimisticLP"
MODE_PESSIMISTIC = "PessimisticLP"
MODE_FALLBACK = "Fallback"
MODE_GREEDY = "Greedy"
MODE_NONCONTEXTUAL = "NonContextual"

MODES = (MODE_OPTIMISTIC, MODE_PESSIMISTIC, MODE_FALLBACK, MODE_GREEDY,
         MODE_NONCONTEXTUAL)


class PolicyError(ValueError):
    """Invalid policy input or parameter."""


class PublicInstance:
    """The observable side of a problem: floors, context distribution,
    and the noise family.  Mean rewards stay hidden from policies."""

    __slots__ = ("thresholds", "probs", "noise")

    def __init__(self, thresholds, probs, noise: Optional[RewardModel] = None):
        thresholds = np.array(thresholds, dtype=float)
        probs = np.array(probs, dtype=float)
        if thresholds.ndim != 1 or thresholds.size < 1:
            raise PolicyError("thresholds must be a non-empty vector")
        if probs.ndim != 1 or probs.size < 1:
            raise PolicyError("probs must be a non-empty vector")
        if not np.isfinite(thresholds).all():
            raise PolicyError("thresholds must be finite")
        if not np.isfinite(probs).all() or (probs <= 0).any():
            raise PolicyError("context probabilities must be positive")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            raise PolicyError(f"context probabilities sum to {probs.sum()!r}")
        for arr in (thresholds, probs):
            arr.flags.writeable = False
        self.thresholds = thresholds
        self.probs = probs
        self.noise = RewardModel() if noise is None else noise

    @classmethod
    def of_instance(cls, inst) -> "PublicInstance":
        return cls(inst.thresholds, inst.probs, inst.noise)

    @property
    def num_arms(self) -> int:
        return self.thresholds.size

    @property
    def num_contexts(self) -> int:
        return self.probs.size


class ConfidenceState:
    """Sufficient statistics after t - 1 observations.

    Counts, reward sums, and empirical means per (arm, context) cell;
    cells never visited keep a zero mean.  The round index t always
    equals one plus the total observation count.
    """

    __slots__ = ("n", "mu_hat", "sum_r", "t")

    def __init__(self, n, mu_hat, sum_r, t: int):
        n = np.array(n, dtype=float)
        mu_hat = np.array(mu_hat, dtype=float)
        sum_r = np.array(sum_r, dtype=float)
        if n.ndim != 2 or n.shape != mu_hat.shape or n.shape != sum_r.shape:
            raise PolicyError("state matrices must share one K x C shape")
        if (n < 0).any():
            raise PolicyError("counts must be non-negative")
        if t != int(n.sum()) + 1:
            raise PolicyError(
                f"round index {t} inconsistent with {n.sum():.0f} observations")
        visited = n > 0
        expected = np.where(visited, sum_r / np.where(visited, n, 1.0), 0.0)
        if not np.allclose(mu_hat, expected, rtol=1e-9, atol=1e-12):
            raise PolicyError("means inconsistent with counts and sums")
        for arr in (n, mu_hat, sum_r):
            arr.flags.writeable = False
        self.n = n
        self.mu_hat = mu_hat
        self.sum_r = sum_r
        self.t = int(t)

    @classmethod
    def fresh(cls, num_arms: int, num_contexts: int) -> "ConfidenceState":
        shape = (num_arms, num_contexts)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape), 1)

    @property
    def num_arms(self) -> int:
        return self.n.shape[0]

    @property
    def num_contexts(self) -> int:
        return self.n.shape[1]

    def __repr__(self) -> str:
        return (f"ConfidenceState(t={self.t}, "
                f"K={self.num_arms}, C={self.num_contexts})")


class BoundMatrices:
    """Entrywise confidence radii with the induced upper and lower bounds."""

    __slots__ = ("epsilon", "ucb", "lcb")

    def __init__(self, epsilon, ucb, lcb):
        for arr in (epsilon, ucb, lcb):
            arr.flags.writeable = False
        self.epsilon = epsilon
        self.ucb = ucb
        self.lcb = lcb


class PolicyDecision:
    """One round's output: the allocation plus bookkeeping.

    mode names which program produced the allocation;
    pessimistic_feasible records whether the floor-guarded system was
    solvable this round (always False for policies that never try it).
    diagnostics carries the total confidence radius seen by the played
    allocation and the binding structure of the surrogate solution.
    """

    __slots__ = ("allocation", "mode", "pessimistic_feasible", "diagnostics")

    def __init__(self, allocation: Allocation, mode: str,
                 pessimistic_feasible: bool, diagnostics: Dict):
        if mode not in MODES:
            raise PolicyError(f"unknown mode {mode!r}")
        self.allocation = allocation
        self.mode = mode
        self.pessimistic_feasible = bool(pessimistic_feasible)
        self.diagnostics = diagnostics

    def __repr__(self) -> str:
        return (f"PolicyDecision({self.mode}, "
                f"pessimistic_feasible={self.pessimistic_feasible})")


def update_state(state: ConfidenceState, arm: int, context: int,
                 reward: float) -> ConfidenceState:
    """Fold one observation into the statistics; returns a new state."""
    if not 0 <= arm < state.num_arms or not 0 <= context < state.num_contexts:
        raise IndexError(f"cell ({arm}, {context}) out of range")
    n = state.n.copy()
    sum_r = state.sum_r.copy()
    mu_hat = state.mu_hat.copy()
    n[arm, context] += 1
    sum_r[arm, context] += reward
    mu_hat[arm, context] = sum_r[arm, context] / n[arm, context]
    return ConfidenceState(n, mu_hat, sum_r, state.t + 1)


def bounds(state: ConfidenceState, delta: float, kappa: int,
           m_cap: float = M_CAP) -> BoundMatrices:
    """Confidence radii sqrt(2 log(2 kappa / delta) / n) with UCB and LCB.

    Unvisited cells get the radius m_cap instead of the divergent
    formula.  delta must lie in (0, 1]; kappa is the cell count used in
    the union bound.
    """
    if not 0 < delta <= 1:
        raise PolicyError(f"delta must be in (0, 1], got {delta}")
    if kappa < 1:
        raise PolicyError(f"kappa must be >= 1, got {kappa}")
    coef = 2.0 * math.log(2.0 * kappa / delta)
    with np.errstate(divide="ignore"):
        radius = np.sqrt(coef / state.n)
    radius = np.where(state.n > 0, radius, float(m_cap))
    return BoundMatrices(radius, state.mu_hat + radius, state.mu_hat - radius)


def _round_bounds(state: ConfidenceState, t: int) -> BoundMatrices:
    """Per-round bounds under the delta = 1/t schedule."""
    if t < 1:
        raise PolicyError(f"round index must be >= 1, got {t}")
    return bounds(state, 1.0 / t, state.n.size)


def _alloc_of(sol, num_arms: int, num_contexts: int) -> Allocation:
    return Allocation(sol.x.reshape(num_contexts, num_arms).T)


def _solve_or_none(obj_weighted, cons_weighted, thresholds):
    """Allocation maximizing the surrogate LP, or None when infeasible."""
    sol = solve_lp(build_alloc_lp(obj_weighted, cons_weighted, thresholds))
    if sol.status == STATUS_OPTIMAL:
        return _alloc_of(sol, *obj_weighted.shape)
    if sol.status == STATUS_INFEASIBLE:
        return None
    raise SolverContractError("allocation surrogate cannot be unbounded")


def _fallback_alloc(cons_weighted, thresholds) -> Allocation:
    """Allocation minimizing the worst revenue shortfall.

    Solves min s subject to g_k(w) >= lambda_k - s over the product of
    simplices; always feasible, and only reached when the surrogate
    floors cannot all be met.
    """
    num_arms, num_contexts = cons_weighted.shape
    cells = num_arms * num_contexts
    objective = np.zeros(cells + 1)
    objective[-1] = -1.0  # maximize -s
    constraints = []
    for k in range(num_arms):
        row = np.zeros(cells + 1)
        row[k:cells:num_arms] = cons_weighted[k]
        row[-1] = 1.0
        constraints.append((row, GE, thresholds[k]))
    for c in range(num_contexts):
        row = np.zeros(cells + 1)
        row[c * num_arms:(c + 1) * num_arms] = 1.0
        constraints.append((row, EQ, 1.0))
    sol = solve_lp(LinearProgram(cells + 1, objective, constraints))
    if sol.status != STATUS_OPTIMAL:
        raise SolverContractError("shortfall relaxation must be solvable")
    return Allocation(sol.x[:cells].reshape(num_contexts, num_arms).T)


def _surrogate_active_set(cons_weighted, thresholds,
                          alloc: Allocation) -> ActiveSet:
    """Binding structure of the allocation under the surrogate means."""
    revenue = (cons_weighted * alloc.w).sum(axis=1)
    num_arms, num_contexts = alloc.w.shape
    saturated = [k for k in range(num_arms)
                 if abs(revenue[k] - thresholds[k]) <= TOL_ACT]
    zeros = [(k, c) for k in range(num_arms) for c in range(num_contexts)
             if alloc.w[k, c] <= TOL_ACT]
    return ActiveSet(saturated, zeros)


def _decide(alloc: Allocation, mode: str, pessimistic_feasible: bool,
            bound: BoundMatrices, cons_weighted,
            thresholds) -> PolicyDecision:
    radius = float((2.0 * bound.epsilon * alloc.w).sum())
    guess = _surrogate_active_set(cons_weighted, thresholds, alloc)
    return PolicyDecision(alloc, mode, pessimistic_feasible,
                          {"rho_radius": radius, "active_set_guess": guess})


def olp_step(state: ConfidenceState, public: PublicInstance,
             t: int) -> PolicyDecision:
    """Plan against upper confidence bounds in objective and floors."""
    bound = _round_bounds(state, t)
    weighted_ucb = public.probs * bound.ucb
    alloc = _solve_or_none(weighted_ucb, weighted_ucb, public.thresholds)
    if alloc is None:
        alloc = _fallback_alloc(weighted_ucb, public.thresholds)
        return _decide(alloc, MODE_FALLBACK, False, bound,
                       weighted_ucb, public.thresholds)
    return _decide(alloc, MODE_OPTIMISTIC, False, bound,
                   weighted_ucb, public.thresholds)


def oplp_step(state: ConfidenceState, public: PublicInstance,
              t: int) -> PolicyDecision:
    """Guard floors with lower bounds when possible, else fall back to
    the all-optimistic program."""
    bound = _round_bounds(state, t)
    weighted_ucb = public.probs * bound.ucb
    weighted_lcb = public.probs * bound.lcb
    alloc = _solve_or_none(weighted_ucb, weighted_lcb, public.thresholds)
    if alloc is not None:
        return _decide(alloc, MODE_PESSIMISTIC, True, bound,
                       weighted_lcb, public.thresholds)
    alloc = _solve_or_none(weighted_ucb, weighted_ucb, public.thresholds)
    if alloc is None:
        alloc = _fallback_alloc(weighted_ucb, public.thresholds)
        return _decide(alloc, MODE_FALLBACK, False, bound,
                       weighted_ucb, public.thresholds)
    return _decide(alloc, MODE_OPTIMISTIC, False, bound,
                   weighted_ucb, public.thresholds)


def greedy_step(state: ConfidenceState, public: PublicInstance,
                t: int) -> PolicyDecision:
    """Plug-in rule: plan against raw empirical means, no bonuses.

    Unvisited cells keep their zero mean, so early rounds usually land
    in the shortfall fallback until the floors look attainable.
    """
    bound = _round_bounds(state, t)  # diagnostics only
    weighted_hat = public.probs * state.mu_hat
    alloc = _solve_or_none(weighted_hat, weighted_hat, public.thresholds)
    if alloc is None:
        alloc = _fallback_alloc(weighted_hat, public.thresholds)
        return _decide(alloc, MODE_FALLBACK, False, bound,
                       weighted_hat, public.thresholds)
    return _decide(alloc, MODE_GREEDY, False, bound,
                   weighted_hat, public.thresholds)


def noncontextual_step(state: ConfidenceState, public: PublicInstance,
                       t: int) -> PolicyDecision:
    """Context-blind baseline from aggregate optimistic means.

    Each arm gets the mixture weight lambda_k / m_k where m_k is its
    aggregate upper-bound mean; leftover mass goes to the best aggregate
    arm, and an overfull mixture is rescaled onto the simplex.  Arms
    whose aggregate bound is non-positive commit full effort, since no
    mixture can reach a positive floor.
    """
    bound = _round_bounds(state, t)
    weighted_ucb = public.probs * bound.ucb
    aggregate = weighted_ucb.sum(axis=1)
    q = np.zeros(public.num_arms)
    for k in range(public.num_arms):
        if public.thresholds[k] <= 0:
            q[k] = 0.0
        elif aggregate[k] <= 0:
            q[k] = 1.0
        else:
            q[k] = public.thresholds[k] / aggregate[k]
    total = float(q.sum())
    if total > 1.0:
        q /= total
    else:
        q[int(np.argmax(aggregate))] += 1.0 - total
    alloc = Allocation(np.repeat(q[:, None], public.num_contexts, axis=1))
    return _decide(alloc, MODE_NONCONTEXTUAL, False, bound,
                   weighted_ucb, public.thresholds)
