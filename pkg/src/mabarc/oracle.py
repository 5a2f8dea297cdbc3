"""Exact planning: optimal allocations, margins, and sensitivity constants.

Everything here reduces to small LPs over the product of per-context
simplices.  Beyond the optimal allocation itself, the module computes the
problem constants that govern learning difficulty: the feasibility margin
(how much every revenue floor could be raised at once), the sensitivity of
the optimal value to such tightening, and for every candidate set of
active constraints the feasibility gap, sensitivity, and suboptimality
score whose minimum over wrong sets plays the role of the classic
arm-gap.
"""

import itertools
import math
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from .instances import Instance
from .lp_core import (
    STATUS_INFEASIBLE,
    STATUS_OPTIMAL,
    SolverContractError,
    build_alloc_lp,
    build_opt_lp,
    solve_lp,
)

# Membership tolerance for extracting active sets from a solved vertex;
# looser than the solver's 1e-9 so solver noise cannot flip membership.
TOL_ACT = 1e-7

# Difference-quotient step sizes for the one-sided slope estimates.
_SLOPE_STEPS = (1e-4, 1e-6)
_SLOPE_RTOL = 1e-3

DEFAULT_MAX_SETS = 100000


class PlanningError(RuntimeError):
    """The instance is infeasible; carries the phase-1 residual."""

    def __init__(self, message: str, certificate: float = math.nan):
        super().__init__(message)
        self.certificate = certificate


class ActiveSet:
    """A candidate set of saturated constraints.

    saturated_arms lists arms whose revenue floor is met with equality;
    zero_pairs lists (arm, context) entries forced to zero.  Both are
    stored sorted, so equality and hashing are canonical.
    """

    __slots__ = ("saturated_arms", "zero_pairs")

    def __init__(self, saturated_arms: Iterable[int] = (),
                 zero_pairs: Iterable[Tuple[int, int]] = ()):
        arms = tuple(sorted(int(k) for k in saturated_arms))
        pairs = tuple(sorted((int(k), int(c)) for k, c in zero_pairs))
        if len(set(arms)) != len(arms) or len(set(pairs)) != len(pairs):
            raise ValueError("duplicate entries in active set")
        if any(k < 0 for k in arms) or any(k < 0 or c < 0 for k, c in pairs):
            raise ValueError("active set indices must be non-negative")
        self.saturated_arms = arms
        self.zero_pairs = pairs

    @property
    def size(self) -> int:
        return len(self.saturated_arms) + len(self.zero_pairs)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ActiveSet)
                and self.saturated_arms == other.saturated_arms
                and self.zero_pairs == other.zero_pairs)

    def __hash__(self) -> int:
        return hash((self.saturated_arms, self.zero_pairs))

    def __repr__(self) -> str:
        return (f"ActiveSet(saturated_arms={self.saturated_arms}, "
                f"zero_pairs={self.zero_pairs})")


class Allocation:
    """Column-stochastic K x |C| matrix of arm probabilities per context."""

    __slots__ = ("w",)

    def __init__(self, w):
        w = np.array(w, dtype=float)
        if w.ndim != 2:
            raise ValueError("allocation must be a K x C matrix")
        if (w < -1e-12).any() or (w > 1 + 1e-12).any():
            raise ValueError("allocation entries outside [0, 1]")
        sums = w.sum(axis=0)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ValueError(f"allocation columns sum to {sums}, not 1")
        w = np.clip(w, 0.0, 1.0)
        w.flags.writeable = False
        self.w = w

    @property
    def num_arms(self) -> int:
        return self.w.shape[0]

    @property
    def num_contexts(self) -> int:
        return self.w.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, Allocation) and np.array_equal(self.w, other.w)

    def __repr__(self) -> str:
        return f"Allocation({self.w.tolist()})"


class OracleReport:
    """Complete planning summary for one instance."""

    __slots__ = ("w_star", "f_star", "active_set", "gamma_star", "S_gamma",
                 "rho_star", "per_set_gaps", "degenerate",
                 "enumeration_truncated")

    def __init__(self, w_star: Allocation, f_star: float,
                 active_set: ActiveSet, gamma_star: float, S_gamma: float,
                 rho_star: float,
                 per_set_gaps: Dict[ActiveSet, Tuple[float, float, float, float]],
                 degenerate: bool, enumeration_truncated: bool):
        self.w_star = w_star
        self.f_star = f_star
        self.active_set = active_set
        self.gamma_star = gamma_star
        self.S_gamma = S_gamma
        self.rho_star = rho_star
        self.per_set_gaps = per_set_gaps
        self.degenerate = degenerate
        self.enumeration_truncated = enumeration_truncated

    def __repr__(self) -> str:
        return (f"OracleReport(f_star={self.f_star:.6g}, "
                f"gamma_star={self.gamma_star:.6g}, "
                f"rho_star={self.rho_star:.6g})")


def _revenues(weighted: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Aggregated revenue per arm: g_k = sum_c p_c mu_{k,c} w_{k,c}."""
    return (weighted * w).sum(axis=1)


def _planning_solution(inst: Instance):
    """Solve LP(mu, mu) and extract (solution, w*, f*, I*)."""
    weighted = inst.weighted_means
    sol = solve_lp(build_alloc_lp(weighted, weighted, inst.thresholds))
    if sol.status == STATUS_INFEASIBLE:
        raise PlanningError(
            f"instance {inst.name!r} is infeasible "
            f"(residual {sol.objective_value:.3g})",
            certificate=sol.objective_value)
    if sol.status != STATUS_OPTIMAL:
        raise SolverContractError("allocation program cannot be unbounded")
    w = sol.x.reshape(inst.num_contexts, inst.num_arms).T
    alloc = Allocation(w)
    revenue = _revenues(weighted, alloc.w)
    saturated = [k for k in range(inst.num_arms)
                 if abs(revenue[k] - inst.thresholds[k]) <= TOL_ACT]
    zeros = [(k, c) for k in range(inst.num_arms)
             for c in range(inst.num_contexts) if alloc.w[k, c] <= TOL_ACT]
    return sol, alloc, sol.objective_value, ActiveSet(saturated, zeros)


def optimal_allocation(inst: Instance) -> Tuple[Allocation, float, ActiveSet]:
    """Solve the planning problem and extract the binding structure.

    Returns (w*, f*, I*) where the active set collects arms whose revenue
    sits within TOL_ACT of the floor and entries within TOL_ACT of zero.
    Infeasible instances raise PlanningError with the phase-1 residual.
    """
    _, alloc, f_star, active_set = _planning_solution(inst)
    return alloc, f_star, active_set


def _margin_solution(inst: Instance):
    """Solve max s with every floor raised to threshold + s, s >= 0."""
    from .lp_core import GE, EQ, LinearProgram

    weighted = inst.weighted_means
    num_arms, num_contexts = weighted.shape
    kappa = num_arms * num_contexts
    objective = np.zeros(kappa + 1)
    objective[-1] = 1.0
    constraints = []
    for k in range(num_arms):
        row = np.zeros(kappa + 1)
        row[k:kappa:num_arms] = weighted[k]
        row[-1] = -1.0
        constraints.append((row, GE, inst.thresholds[k]))
    for c in range(num_contexts):
        row = np.zeros(kappa + 1)
        row[c * num_arms:(c + 1) * num_arms] = 1.0
        constraints.append((row, EQ, 1.0))
    return solve_lp(LinearProgram(kappa + 1, objective, constraints))


def feasibility_margin(inst: Instance) -> float:
    """Largest uniform slack gamma* by which all floors could be raised.

    Zero means some constraint already binds every feasible allocation;
    an infeasible instance raises PlanningError.
    """
    sol = _margin_solution(inst)
    if sol.status == STATUS_INFEASIBLE:
        raise PlanningError(
            f"instance {inst.name!r} is infeasible even with zero slack "
            f"(residual {sol.objective_value:.3g})",
            certificate=sol.objective_value)
    if sol.status != STATUS_OPTIMAL:
        raise SolverContractError("margin program cannot be unbounded")
    return max(sol.objective_value, 0.0)


def rescale_to_margin(inst: Instance, target: float,
                      tol: float = 1e-12) -> Tuple[Instance, float]:
    """Scale the threshold vector so the feasibility margin hits target.

    Scaling nonnegative floors up tightens the margin monotonically, so
    the crossing scale is found by bisection on exact margin programs.
    Returns the rescaled instance and the scale factor.  Raises
    ValueError when no nonnegative scale attains the target, e.g. when it
    exceeds the margin of the unconstrained instance.
    """
    if target < 0.0:
        raise ValueError(f"target margin must be >= 0, got {target}")
    thresholds = inst.thresholds
    if np.any(thresholds < 0.0):
        raise ValueError("rescaling requires nonnegative thresholds")

    def margin_at(scale: float) -> float:
        candidate = Instance(inst.means, inst.probs, thresholds * scale,
                             inst.noise, name=inst.name)
        try:
            return feasibility_margin(candidate)
        except PlanningError:
            return -math.inf

    ceiling = margin_at(0.0)
    if target > ceiling + 1e-9:
        raise ValueError(f"target margin {target:g} unattainable: even "
                         f"zero floors only allow {ceiling:g}")
    hi = 1.0
    while margin_at(hi) > target:
        hi *= 2.0
        if hi > 2.0 ** 40:
            raise ValueError("margin never falls below the target; "
                             "thresholds may be all zero")
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if margin_at(mid) >= target:
            lo = mid
        else:
            hi = mid
    scale = lo if margin_at(lo) >= target else hi
    achieved = margin_at(scale)
    if not math.isfinite(achieved) or abs(achieved - target) > 1e-8:
        raise ValueError(f"bisection stalled at margin {achieved:g} "
                         f"for target {target:g}")
    rescaled = Instance(inst.means, inst.probs, thresholds * scale,
                        inst.noise, name=f"{inst.name}#margin={target:g}")
    return rescaled, scale


def _raised_value(inst: Instance, s: float) -> Optional[float]:
    """y(s): optimal reward with all floors raised by s; None if empty."""
    weighted = inst.weighted_means
    sol = solve_lp(build_alloc_lp(weighted, weighted, inst.thresholds + s))
    if sol.status == STATUS_INFEASIBLE:
        return None
    if sol.status != STATUS_OPTIMAL:
        raise SolverContractError("raised allocation program unbounded")
    return sol.objective_value


def _eval_or_backoff(fn, x: float, nudge: float) -> float:
    """Evaluate fn(x), tolerating boundary roundoff by nudging into the
    feasible side (nudge is +1 or -1)."""
    for probe in (x, x + nudge * 1e-10, x + nudge * 1e-8):
        val = fn(probe)
        if val is not None:
            return val
    raise SolverContractError(f"value function empty at {x!r}")


def _endpoint_slope(fn, x0: float, direction: float, span: float) -> float:
    """Steepest one-sided difference quotient of a concave monotone fn at x0.

    direction +1 probes to the right of a non-decreasing curve, -1 to the
    left of a non-increasing one; either way the quotient is >= 0 up to
    noise.  span bounds how far probes may go.  Two step sizes must agree
    within a relative 1e-3, otherwise the step shrinks geometrically.
    """
    base = fn(x0)
    steps = [h for h in _SLOPE_STEPS if h <= span] or [span / 8]

    def quotient(h: float) -> float:
        # probing left on a non-increasing curve and right on a
        # non-decreasing one both give (val - base)/h >= 0
        val = fn(x0 + direction * h)
        return (val - base) / h

    prev = quotient(steps[0])
    h = steps[1] if len(steps) > 1 else steps[0] / 100
    for _ in range(24):
        cur = quotient(h)
        if abs(cur - prev) <= _SLOPE_RTOL * max(abs(cur), abs(prev), 1.0):
            return cur
        prev = cur
        h /= 4.0
        if h < 1e-12:
            break
    return prev


def performance_sensitivity(inst: Instance,
                            gamma_star: Optional[float] = None) -> float:
    """Steepest decrease rate of the raised-floor value curve on [0, gamma*].

    The curve y(s) is concave and non-increasing, so its largest
    difference quotient is the left-slope at gamma*; a 64-point grid scan
    guards against numerical surprises.  Requires gamma* > 0.
    """
    if gamma_star is None:
        gamma_star = feasibility_margin(inst)
    if gamma_star <= 0:
        raise ValueError("performance sensitivity needs gamma* > 0")

    def y_strict(s: float) -> float:
        return _eval_or_backoff(lambda v: _raised_value(inst, v), s, -1.0)

    grid = np.linspace(0.0, gamma_star, 64)
    vals = np.array([y_strict(s) for s in grid])
    diffs = (vals[:-1] - vals[1:]) / np.diff(grid)
    endpoint = _endpoint_slope(y_strict, gamma_star, -1.0, gamma_star)
    return max(float(diffs.max()), endpoint, 0.0)


def _pinned_lp(inst: Instance, active_set: ActiveSet, s: float):
    """LP over psi(s, I): floors relaxed by s, caps on saturated arms,
    pinned entries zero."""
    from .lp_core import GE, LE, EQ, LinearProgram

    weighted = inst.weighted_means
    num_arms, num_contexts = weighted.shape
    kappa = num_arms * num_contexts
    _check_set(active_set, num_arms, num_contexts)
    constraints = []
    for k in range(num_arms):
        row = np.zeros(kappa)
        row[k::num_arms] = weighted[k]
        constraints.append((row, GE, inst.thresholds[k] - s))
    for k in active_set.saturated_arms:
        row = np.zeros(kappa)
        row[k::num_arms] = weighted[k]
        constraints.append((row, LE, inst.thresholds[k] + s))
    for k, c in active_set.zero_pairs:
        row = np.zeros(kappa)
        row[c * num_arms + k] = 1.0
        constraints.append((row, EQ, 0.0))
    for c in range(num_contexts):
        row = np.zeros(kappa)
        row[c * num_arms:(c + 1) * num_arms] = 1.0
        constraints.append((row, EQ, 1.0))
    return LinearProgram(kappa, weighted.T.reshape(-1), constraints)


def _check_set(active_set: ActiveSet, num_arms: int, num_contexts: int) -> None:
    for k in active_set.saturated_arms:
        if k >= num_arms:
            raise ValueError(f"saturated arm {k} out of range")
    for k, c in active_set.zero_pairs:
        if k >= num_arms or c >= num_contexts:
            raise ValueError(f"zero pair ({k}, {c}) out of range")


def _pinned_value(inst: Instance, active_set: ActiveSet,
                  s: float) -> Optional[float]:
    """z_I(s): optimal reward over psi(s, I), or None when empty."""
    sol = solve_lp(_pinned_lp(inst, active_set, s))
    if sol.status == STATUS_INFEASIBLE:
        return None
    if sol.status != STATUS_OPTIMAL:
        raise SolverContractError("pinned allocation program unbounded")
    return sol.objective_value


def feasibility_gap(inst: Instance, active_set: ActiveSet) -> float:
    """Smallest slack s >= 0 making psi(s, I) non-empty.

    Zero exactly when I is consistent with some feasible allocation;
    +inf when no slack helps (the pins empty out a whole context).
    """
    from .lp_core import GE, LE, EQ, LinearProgram

    weighted = inst.weighted_means
    num_arms, num_contexts = weighted.shape
    kappa = num_arms * num_contexts
    _check_set(active_set, num_arms, num_contexts)
    objective = np.zeros(kappa + 1)
    objective[-1] = -1.0  # maximize -s, i.e. minimize the slack
    constraints = []
    for k in range(num_arms):
        row = np.zeros(kappa + 1)
        row[k:kappa:num_arms] = weighted[k]
        row[-1] = 1.0
        constraints.append((row, GE, inst.thresholds[k]))
    for k in active_set.saturated_arms:
        row = np.zeros(kappa + 1)
        row[k:kappa:num_arms] = weighted[k]
        row[-1] = -1.0
        constraints.append((row, LE, inst.thresholds[k]))
    for k, c in active_set.zero_pairs:
        row = np.zeros(kappa + 1)
        row[c * num_arms + k] = 1.0
        constraints.append((row, EQ, 0.0))
    for c in range(num_contexts):
        row = np.zeros(kappa + 1)
        row[c * num_arms:(c + 1) * num_arms] = 1.0
        constraints.append((row, EQ, 1.0))
    sol = solve_lp(LinearProgram(kappa + 1, objective, constraints))
    if sol.status == STATUS_INFEASIBLE:
        return math.inf
    if sol.status != STATUS_OPTIMAL:
        raise SolverContractError("gap program cannot be unbounded")
    return max(-sol.objective_value, 0.0)


def set_sensitivity(inst: Instance, active_set: ActiveSet,
                    s_gap: Optional[float] = None) -> float:
    """Largest growth rate of the pinned value curve z_I beyond its gap.

    z_I is concave and non-decreasing for s >= s(I), so the supremal
    difference quotient is the right-slope at s(I) itself.
    """
    if s_gap is None:
        s_gap = feasibility_gap(inst, active_set)
    if not math.isfinite(s_gap):
        raise ValueError("set sensitivity undefined for an empty system")

    def z_strict(s: float) -> float:
        return _eval_or_backoff(
            lambda v: _pinned_value(inst, active_set, v), s, 1.0)

    return max(_endpoint_slope(z_strict, s_gap, 1.0, 1.0), 0.0)


def suboptimality_gap(inst: Instance, active_set: ActiveSet,
                      f_star: Optional[float] = None,
                      s_gamma: Optional[float] = None) -> float:
    """rho(I): how wrong it is to treat I as the binding structure.

    Combines the feasibility gap s(I) with the normalized performance gap
    P(I) = (f* - z_I(s(I))) / (max(1, S) + L(I)); returns their max, or
    +inf when psi(s, I) is empty for every s.
    """
    s_gap = feasibility_gap(inst, active_set)
    if not math.isfinite(s_gap):
        return math.inf
    if f_star is None:
        _, f_star, _ = optimal_allocation(inst)
    if s_gamma is None:
        s_gamma = performance_sensitivity(inst)
    z_at_gap = _eval_or_backoff(
        lambda v: _pinned_value(inst, active_set, v), s_gap, 1.0)
    sens = set_sensitivity(inst, active_set, s_gap)
    perf = (f_star - z_at_gap) / (max(1.0, s_gamma) + sens)
    return max(s_gap, perf)


def _candidate_sets(num_arms: int, num_contexts: int):
    """Basis-sized active sets: kappa - |C| picks from rows and pins."""
    items = [("arm", k) for k in range(num_arms)]
    items += [("pin", (k, c)) for k in range(num_arms)
              for c in range(num_contexts)]
    size = num_arms * num_contexts - num_contexts
    for combo in itertools.combinations(items, size):
        arms = [v for kind, v in combo if kind == "arm"]
        pins = [v for kind, v in combo if kind == "pin"]
        yield ActiveSet(arms, pins)


def enumerate_gaps(inst: Instance, max_sets: int = DEFAULT_MAX_SETS,
                   f_star: Optional[float] = None,
                   s_gamma: Optional[float] = None):
    """Gap tuple (s, L, P, rho) for every finite candidate set.

    Returns (gaps, truncated): a dict keyed by ActiveSet, and whether the
    enumeration stopped early at max_sets candidates.  Sets whose pinned
    system is empty for every slack are skipped entirely.
    """
    if f_star is None:
        _, f_star, _ = optimal_allocation(inst)
    if s_gamma is None:
        s_gamma = performance_sensitivity(inst)
    gaps: Dict[ActiveSet, Tuple[float, float, float, float]] = {}
    truncated = False
    for count, cand in enumerate(_candidate_sets(inst.num_arms,
                                                 inst.num_contexts)):
        if count >= max_sets:
            truncated = True
            break
        s_gap = feasibility_gap(inst, cand)
        if not math.isfinite(s_gap):
            continue
        z_at_gap = _eval_or_backoff(
            lambda v, cand=cand: _pinned_value(inst, cand, v), s_gap, 1.0)
        sens = set_sensitivity(inst, cand, s_gap)
        perf = (f_star - z_at_gap) / (max(1.0, s_gamma) + sens)
        gaps[cand] = (s_gap, sens, perf, max(s_gap, perf))
    return gaps, truncated


def rho_star(inst: Instance, max_sets: int = DEFAULT_MAX_SETS) -> float:
    """Minimum rho(I) over enumerated candidate sets other than I*."""
    _, f_star, optimal_set = optimal_allocation(inst)
    s_gamma = performance_sensitivity(inst)
    gaps, _ = enumerate_gaps(inst, max_sets, f_star, s_gamma)
    others = [v[3] for cand, v in gaps.items() if cand != optimal_set]
    return min(others) if others else math.inf


def check_best_arm_characterization(inst: Instance, alloc: Allocation,
                                    active_set: ActiveSet):
    """Unsaturated arms may only receive mass where they are per-context best.

    Returns (True, None) when every (k, c) with w_{k,c} > TOL_ACT and k
    outside the saturated arms has mu_{k,c} equal to the column maximum
    within 1e-9; otherwise (False, (k, c)) for the first violation.
    """
    saturated = set(active_set.saturated_arms)
    col_max = inst.means.max(axis=0)
    for c in range(inst.num_contexts):
        for k in range(inst.num_arms):
            if k in saturated or alloc.w[k, c] <= TOL_ACT:
                continue
            if inst.means[k, c] < col_max[c] - 1e-9:
                return False, (k, c)
    return True, None


def zero_entry_exists(alloc: Allocation) -> bool:
    """Whether the allocation leaves some (arm, context) entirely unplayed."""
    return bool((alloc.w <= TOL_ACT).any())


def _is_degenerate(inst: Instance, sol, alloc: Allocation) -> bool:
    """Vertex degeneracy or alternative-optimum signal on the planning LP."""
    weighted = inst.weighted_means
    num_arms, num_contexts = weighted.shape
    revenue = _revenues(weighted, alloc.w)
    active = num_contexts  # the simplex equalities always bind
    active += int(np.sum(np.abs(revenue - inst.thresholds) <= 1e-9))
    active += int(np.sum(alloc.w <= 1e-9))
    if active > num_arms * num_contexts:
        return True
    # Non-basic zero entries with zero reduced cost admit another optimum.
    lp = build_alloc_lp(weighted, weighted, inst.thresholds)
    reduced = lp.coeffs.T @ sol.dual_values - lp.objective
    for j in range(lp.num_vars):
        if j not in sol.basis and sol.x[j] <= 1e-9 and abs(reduced[j]) <= 1e-9:
            return True
    return False


def analyze_instance(inst: Instance,
                     max_sets: int = DEFAULT_MAX_SETS) -> OracleReport:
    """Full planning report: w*, f*, I*, gamma*, S, rho*, per-set gaps."""
    sol, alloc, f_star, optimal_set = _planning_solution(inst)
    gamma = feasibility_margin(inst)
    s_gamma = performance_sensitivity(inst, gamma) if gamma > 0 else 0.0
    gaps, truncated = enumerate_gaps(inst, max_sets, f_star, s_gamma)
    others = [v[3] for cand, v in gaps.items() if cand != optimal_set]
    rho = min(others) if others else math.inf
    return OracleReport(alloc, f_star, optimal_set, gamma, s_gamma, rho,
                        gaps, _is_degenerate(inst, sol, alloc), truncated)
