"""Tests for the planning layer: allocations, margins, and gap constants.

Hand-derived fixtures freeze every constant for a 2-arm instance small
enough to solve on paper; the catalog instances are checked against their
known closed forms and against the scipy-backed reference oracles.
"""

import math

import numpy as np
import pytest

import reference_oracles as ref
from mabarc import oracle
from mabarc.instances import Instance, catalog_get, random_feasible_instance
from mabarc.lp_core import STATUS_OPTIMAL, build_opt_lp, solve_lp
from mabarc.oracle import ActiveSet, Allocation, PlanningError

# Two arms, one context, mu = (2, 1), floors (0.5, 0.2).  Worked by hand:
# w* = (0.8, 0.2), f* = 1.8, arm 1 saturates, gamma* = 11/30, S = 1, and
# the three wrong candidate sets give rho values 11/30, 0.8, 0.2.
HAND = Instance([[2.0], [1.0]], [1.0], [0.5, 0.2], name="hand")

SIM = catalog_get("nu_sim")
NS = catalog_get("nu_prime_ns")
GREEDY = catalog_get("greedy_ce")

SIM_W = np.array([[1.0, 0.5, 0.5], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]])
SIM_SET = ActiveSet((1, 2), ((1, 0), (1, 2), (2, 0), (2, 1)))
NS_SET = ActiveSet((), ((0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)))


@pytest.fixture(scope="module")
def sim_report():
    return oracle.analyze_instance(SIM)


def grid_slope(inst, hi, points=257):
    """Reference max difference quotient of the raised-floor value curve."""
    weighted = inst.weighted_means
    grid = np.linspace(0.0, hi, points)
    vals = []
    for s in grid:
        v = ref.reference_y(weighted, weighted, inst.thresholds, s)
        if v is None:  # right endpoint roundoff
            v = ref.reference_y(weighted, weighted, inst.thresholds, s - 1e-9)
        vals.append(v)
    vals = np.asarray(vals)
    return float(((vals[:-1] - vals[1:]) / np.diff(grid)).max())


def test_active_set_canonical():
    a = ActiveSet([2, 0], [(1, 2), (0, 1)])
    assert a.saturated_arms == (0, 2)
    assert a.zero_pairs == ((0, 1), (1, 2))
    assert a.size == 4
    b = ActiveSet((0, 2), ((0, 1), (1, 2)))
    assert a == b and hash(a) == hash(b)
    assert a != ActiveSet((0,), ((0, 1), (1, 2)))
    assert ActiveSet().size == 0
    with pytest.raises(ValueError):
        ActiveSet([1, 1])
    with pytest.raises(ValueError):
        ActiveSet([], [(0, 1), (0, 1)])
    with pytest.raises(ValueError):
        ActiveSet([-1])
    with pytest.raises(ValueError):
        ActiveSet([], [(0, -2)])


def test_allocation_validation():
    good = Allocation([[0.25, 1.0], [0.75, 0.0]])
    assert good.num_arms == 2 and good.num_contexts == 2
    assert good == Allocation([[0.25, 1.0], [0.75, 0.0]])
    clipped = Allocation([[-1e-13, 1.0], [1.0 + 1e-13, 0.0]])
    assert (clipped.w >= 0.0).all() and (clipped.w <= 1.0).all()
    with pytest.raises(ValueError):
        Allocation([0.5, 0.5])  # 1-d
    with pytest.raises(ValueError):
        Allocation([[-0.1], [1.1]])
    with pytest.raises(ValueError):
        Allocation([[0.6], [0.6]])  # column sums to 1.2
    with pytest.raises(ValueError):
        good.w[0, 0] = 0.5


def test_hand_planning_constants():
    alloc, f_star, active = oracle.optimal_allocation(HAND)
    assert np.allclose(alloc.w, [[0.8], [0.2]], atol=1e-9)
    assert abs(f_star - 1.8) <= 1e-9
    assert active == ActiveSet((1,))
    assert not oracle.zero_entry_exists(alloc)
    assert oracle.check_best_arm_characterization(HAND, alloc, active) == \
        (True, None)

    assert abs(oracle.feasibility_margin(HAND) - 11.0 / 30.0) <= 1e-9
    assert abs(oracle.performance_sensitivity(HAND) - 1.0) <= 1e-6

    expected = {
        ActiveSet((0,)): (0.0, 0.5, 11.0 / 30.0),
        ActiveSet((), ((0, 0),)): (0.5, 0.0, 0.8),
        ActiveSet((), ((1, 0),)): (0.2, 0.0, 0.2),
    }
    for cand, (s_exp, slope_exp, rho_exp) in expected.items():
        s = oracle.feasibility_gap(HAND, cand)
        assert abs(s - s_exp) <= 1e-9
        assert abs(oracle.set_sensitivity(HAND, cand, s) - slope_exp) <= 1e-6
        rho = oracle.suboptimality_gap(HAND, cand)
        assert abs(rho - rho_exp) <= 1e-6
    assert oracle.suboptimality_gap(HAND, active) <= 1e-7
    assert abs(oracle.rho_star(HAND) - 0.2) <= 1e-9


def test_hand_slope_reference():
    assert abs(grid_slope(HAND, 11.0 / 30.0) - 1.0) <= 1e-6


def test_sim_planning_exact():
    alloc, f_star, active = oracle.optimal_allocation(SIM)
    assert np.allclose(alloc.w, SIM_W, atol=1e-9)
    assert abs(f_star - 5.25) <= 1e-9
    assert active == SIM_SET
    assert abs(oracle.feasibility_margin(SIM) - 0.25) <= 1e-9
    assert oracle.feasibility_gap(SIM, active) <= 1e-7
    assert oracle.suboptimality_gap(SIM, active) <= 1e-7
    assert oracle.zero_entry_exists(alloc)
    assert oracle.check_best_arm_characterization(SIM, alloc, active) == \
        (True, None)


def test_sim_sensitivity_reference():
    s_val = oracle.performance_sensitivity(SIM)
    s_ref = grid_slope(SIM, 0.25)
    assert abs(s_val - 2.0) <= 1e-6  # the value curve has constant slope -2
    assert abs(s_val - s_ref) <= 1e-3 * max(1.0, abs(s_ref))


def test_sim_wrong_sets_hand_values():
    # Swapping the pin (2,1) for (0,1) keeps the system feasible at zero
    # slack but caps the reachable value at 4.75, growing at rate 2.
    swapped = ActiveSet((1, 2), ((0, 1), (1, 0), (1, 2), (2, 0)))
    s = oracle.feasibility_gap(SIM, swapped)
    assert abs(s) <= 1e-9
    assert abs(oracle.set_sensitivity(SIM, swapped, s) - 2.0) <= 1e-3
    assert abs(oracle.suboptimality_gap(SIM, swapped) - 0.125) <= 1e-6

    # Saturating arm 0 while pinning the rest of context 0 forces its
    # revenue to 3, which needs slack 2 on a floor of 1.
    forced = ActiveSet((0, 1, 2), ((1, 0), (2, 0), (2, 1)))
    s = oracle.feasibility_gap(SIM, forced)
    assert abs(s - 2.0) <= 1e-7
    assert abs(oracle.suboptimality_gap(SIM, forced) - 2.0) <= 1e-6


def test_ns_planning_exact():
    alloc, f_star, active = oracle.optimal_allocation(NS)
    assert np.allclose(alloc.w, np.eye(3), atol=1e-9)
    assert abs(f_star - 9.0) <= 1e-9
    assert active == NS_SET
    assert active.saturated_arms == ()
    assert abs(oracle.feasibility_margin(NS) - 2.0) <= 1e-9
    # The identity allocation stays optimal under any floor raise, so the
    # value curve is flat.
    assert oracle.performance_sensitivity(NS) <= 1e-9
    assert oracle.feasibility_gap(NS, active) <= 1e-7
    assert oracle.suboptimality_gap(NS, active) <= 1e-7


def test_greedy_ce_planning_exact():
    alloc, f_star, active = oracle.optimal_allocation(GREEDY)
    assert np.allclose(alloc.w, [[0.0, 1.0], [1.0, 0.0]], atol=1e-9)
    assert abs(f_star - 4.0) <= 1e-9
    assert active == ActiveSet((), ((0, 0), (1, 1)))
    assert abs(oracle.feasibility_margin(GREEDY) - 1.9) <= 1e-9
    assert oracle.performance_sensitivity(GREEDY) <= 1e-9


def test_nu0_planning():
    # Arm 2 outearns arm 0 in context 2 here (weighted 2 vs 1), so it
    # keeps the whole column and only arm 1 saturates.
    inst = catalog_get("nu0")
    alloc, f_star, active = oracle.optimal_allocation(inst)
    expected = np.array([[1.0, 0.5, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(alloc.w, expected, atol=1e-9)
    assert abs(f_star - 5.75) <= 1e-9
    assert active == ActiveSet((1,), ((0, 2), (1, 0), (1, 2), (2, 0), (2, 1)))
    assert abs(oracle.feasibility_margin(inst) - 0.25) <= 1e-9


@pytest.mark.parametrize("name,eps", [
    ("nu0", None), ("nu_sim", None), ("nu_prime_ns", None),
    ("greedy_ce", None), ("nu_plus", 0.1), ("nu_minus", 0.1),
    ("nu_prime_lb", 0.5),
])
def test_catalog_against_reference(name, eps):
    inst = catalog_get(name, eps) if eps is not None else catalog_get(name)
    weighted = inst.weighted_means
    alloc, f_star, active = oracle.optimal_allocation(inst)
    status, _, f_ref = ref.reference_opt(weighted, weighted, inst.thresholds)
    assert status == "optimal"
    assert abs(f_star - f_ref) <= 1e-7
    gamma = oracle.feasibility_margin(inst)
    gamma_ref = ref.reference_gamma_star(weighted, inst.thresholds)
    assert abs(gamma - gamma_ref) <= 1e-7
    # Re-solving with the binding structure imposed as equalities must
    # reproduce the optimal value (the active set determines the vertex).
    pinned = solve_lp(build_opt_lp(weighted, weighted,
                                   inst.thresholds, active))
    assert pinned.status == STATUS_OPTIMAL
    assert abs(pinned.objective_value - f_star) <= 1e-7


def test_perturbed_variants_closed_forms():
    for sign, name in ((1.0, "nu_plus"), (-1.0, "nu_minus")):
        eps = 0.1
        inst = catalog_get(name, eps)
        alloc, f_star, active = oracle.optimal_allocation(inst)
        w_mid = 1.0 / (2.0 * (1.0 + sign * eps))
        expected = np.array([[1.0, 1.0 - w_mid, 0.0],
                             [0.0, w_mid, 0.0],
                             [0.0, 0.0, 1.0]])
        assert np.allclose(alloc.w, expected, atol=1e-7)
        assert 1 in active.saturated_arms

    inst = catalog_get("nu_prime_lb", 0.5)
    alloc, f_star, _ = oracle.optimal_allocation(inst)
    assert np.allclose(alloc.w, SIM_W, atol=1e-7)
    assert abs(f_star - 6.0) <= 1e-9


def test_margin_boundary_and_bisection():
    for inst, gamma in ((HAND, 11.0 / 30.0), (SIM, 0.25)):
        weighted = inst.weighted_means
        assert oracle._raised_value(inst, gamma - 1e-6) is not None
        assert oracle._raised_value(inst, gamma + 1e-6) is None
        found = ref.bisect_threshold(
            lambda s: ref.reference_y(weighted, weighted,
                                      inst.thresholds, s) is not None,
            0.0, gamma + 1.0)
        assert abs(found - gamma) <= 1e-6


def test_pinned_value_monotone_and_reference():
    weighted = SIM.weighted_means
    for cand in (SIM_SET, ActiveSet((1, 2), ((0, 1), (1, 0), (1, 2), (2, 0)))):
        grid = np.linspace(0.0, 2.0, 16)
        vals = [oracle._pinned_value(SIM, cand, s) for s in grid]
        assert all(v is not None for v in vals)
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
        for s, v in zip(grid, vals):
            v_ref = ref.reference_z(weighted, weighted, SIM.thresholds,
                                    cand.saturated_arms, cand.zero_pairs, s)
            assert abs(v - v_ref) <= 1e-7
    assert abs(oracle._pinned_value(SIM, SIM_SET, 0.0) - 5.25) <= 1e-9


def test_sim_enumeration_against_reference(sim_report):
    assert not sim_report.enumeration_truncated
    mine = {(a.saturated_arms, a.zero_pairs): v
            for a, v in sim_report.per_set_gaps.items()}
    theirs = ref.reference_gaps(SIM.weighted_means, SIM.weighted_means,
                                SIM.thresholds, grid_slope(SIM, 0.25, 65))
    assert set(mine) == set(theirs)
    for key, (s_m, _, _, rho_m) in mine.items():
        s_r, _, _, rho_r = theirs[key]
        assert abs(s_m - s_r) <= 1e-6
        assert abs(rho_m - rho_r) <= 1e-4 * max(1.0, abs(rho_r))
    opt_key = (SIM_SET.saturated_arms, SIM_SET.zero_pairs)
    rho_ref = min(v[3] for k, v in theirs.items() if k != opt_key)
    assert abs(sim_report.rho_star - rho_ref) <= 1e-5
    assert sim_report.rho_star > 1e-4


def test_sim_report_consistency(sim_report):
    assert abs(sim_report.f_star - 5.25) <= 1e-9
    assert sim_report.active_set == SIM_SET
    assert abs(sim_report.gamma_star - 0.25) <= 1e-9
    assert abs(sim_report.S_gamma - 2.0) <= 1e-6
    assert not sim_report.degenerate
    assert np.allclose(sim_report.w_star.w, SIM_W, atol=1e-9)
    gaps = sim_report.per_set_gaps
    assert gaps[SIM_SET][0] <= 1e-7 and gaps[SIM_SET][3] <= 1e-7
    others = [v[3] for cand, v in gaps.items() if cand != SIM_SET]
    assert abs(min(others) - sim_report.rho_star) <= 1e-12
    # All 924 basis-sized candidates are visited; these are the feasible ones.
    assert len(gaps) == 675
    assert "OracleReport" in repr(sim_report)


def test_greedy_enumeration_against_reference():
    report = oracle.analyze_instance(GREEDY)
    assert not report.enumeration_truncated
    assert not report.degenerate
    mine = {(a.saturated_arms, a.zero_pairs): v
            for a, v in report.per_set_gaps.items()}
    theirs = ref.reference_gaps(GREEDY.weighted_means, GREEDY.weighted_means,
                                GREEDY.thresholds, grid_slope(GREEDY, 1.9, 65))
    assert set(mine) == set(theirs)
    for key, (s_m, _, _, rho_m) in mine.items():
        s_r, _, _, rho_r = theirs[key]
        assert abs(s_m - s_r) <= 1e-6
        assert abs(rho_m - rho_r) <= 1e-4 * max(1.0, abs(rho_r))
    assert report.rho_star > 1e-4


def test_enumeration_truncation():
    gaps, truncated = oracle.enumerate_gaps(SIM, max_sets=10,
                                            f_star=5.25, s_gamma=2.0)
    assert truncated and len(gaps) <= 10
    report = oracle.analyze_instance(SIM, max_sets=10)
    assert report.enumeration_truncated


def test_degeneracy_flag():
    # A single arm forced to exactly its floor: simplex row and revenue
    # row both bind on one variable.
    tight = Instance([[1.0]], [1.0], [1.0], name="tight")
    assert oracle.analyze_instance(tight).degenerate
    # Two identical arms with slack floors admit two optimal vertices.
    tied = Instance([[1.0], [1.0]], [1.0], [0.0, 0.0], name="tied")
    assert oracle.analyze_instance(tied).degenerate
    assert not oracle.analyze_instance(NS).degenerate


def test_single_arm_edge():
    solo = Instance([[2.0]], [1.0], [1.0], name="solo")
    alloc, f_star, active = oracle.optimal_allocation(solo)
    assert alloc.w[0, 0] == 1.0 and abs(f_star - 2.0) <= 1e-9
    assert active == ActiveSet()
    assert abs(oracle.feasibility_margin(solo) - 1.0) <= 1e-9
    # The only candidate set is the optimal one, so no gap minimum exists.
    assert oracle.rho_star(solo) == math.inf
    report = oracle.analyze_instance(solo)
    assert report.rho_star == math.inf
    assert not report.degenerate
    assert report.S_gamma <= 1e-9


def test_best_arm_witness():
    # The wrong matching on the 2x2 counterexample plays each arm where it
    # earns less, so the first violation is arm 0 in context 0.
    wrong = Allocation([[1.0, 0.0], [0.0, 1.0]])
    holds, witness = oracle.check_best_arm_characterization(
        GREEDY, wrong, ActiveSet((), ((0, 1), (1, 0))))
    assert not holds and witness == (0, 0)
    # Saturated arms are exempt from the best-arm requirement.
    holds, witness = oracle.check_best_arm_characterization(
        GREEDY, wrong, ActiveSet((0, 1), ()))
    assert holds and witness is None


def test_permutation_equivariance():
    perm_arms = [2, 0, 1]
    perm_ctx = [1, 2, 0]
    permuted = Instance(SIM.means[np.ix_(perm_arms, perm_ctx)],
                        SIM.probs[perm_ctx],
                        SIM.thresholds[perm_arms], name="sim-permuted")
    alloc_p, f_p, set_p = oracle.optimal_allocation(permuted)
    assert abs(f_p - 5.25) <= 1e-9
    assert np.allclose(alloc_p.w, SIM_W[np.ix_(perm_arms, perm_ctx)],
                       atol=1e-9)
    new_arm = {old: new for new, old in enumerate(perm_arms)}
    new_ctx = {old: new for new, old in enumerate(perm_ctx)}
    expected = ActiveSet([new_arm[k] for k in SIM_SET.saturated_arms],
                         [(new_arm[k], new_ctx[c])
                          for k, c in SIM_SET.zero_pairs])
    assert set_p == expected
    assert abs(oracle.feasibility_margin(permuted) - 0.25) <= 1e-9


def test_random_instances_structural_properties():
    processed = 0
    for seed in range(12):
        inst = random_feasible_instance(3, 3, seed=seed)
        sol, alloc, f_star, active = oracle._planning_solution(inst)
        weighted = inst.weighted_means
        revenue = (weighted * alloc.w).sum(axis=1)
        assert (revenue >= inst.thresholds - 1e-9).all()
        assert np.allclose(alloc.w.sum(axis=0), 1.0, atol=1e-9)
        _, _, f_ref = ref.reference_opt(weighted, weighted, inst.thresholds)
        assert abs(f_star - f_ref) <= 1e-7
        assert oracle.feasibility_gap(inst, active) <= 1e-7
        pinned = solve_lp(build_opt_lp(weighted, weighted,
                                       inst.thresholds, active))
        assert pinned.status == STATUS_OPTIMAL
        assert abs(pinned.objective_value - f_star) <= 1e-7
        if oracle._is_degenerate(inst, sol, alloc):
            continue
        assert oracle.zero_entry_exists(alloc)
        holds, witness = oracle.check_best_arm_characterization(
            inst, alloc, active)
        assert holds, witness
        processed += 1
    assert processed >= 6  # degenerate draws should be rare


def test_error_paths():
    starved = Instance([[0.1]], [1.0], [1.0], name="starved")
    with pytest.raises(PlanningError) as info:
        oracle.optimal_allocation(starved)
    assert info.value.certificate > 0.1
    with pytest.raises(PlanningError):
        oracle.feasibility_margin(starved)

    tight = Instance([[1.0]], [1.0], [1.0], name="tight")
    with pytest.raises(ValueError):
        oracle.performance_sensitivity(tight)  # margin is zero

    with pytest.raises(ValueError):
        oracle.feasibility_gap(HAND, ActiveSet((5,)))
    with pytest.raises(ValueError):
        oracle.feasibility_gap(HAND, ActiveSet((), ((0, 3),)))

    # Pinning the whole single context leaves nothing to allocate.
    starving_pins = ActiveSet((), ((0, 0), (1, 0)))
    assert oracle.feasibility_gap(HAND, starving_pins) == math.inf
    assert oracle.suboptimality_gap(HAND, starving_pins) == math.inf
    with pytest.raises(ValueError):
        oracle.set_sensitivity(HAND, starving_pins)


def test_rescale_to_margin_linear_family():
    # Uniform floors on NS give margin 3 - scale, so targets map to
    # closed-form scales.
    for target in (1.0, 0.1, 0.001):
        inst, scale = oracle.rescale_to_margin(NS, target)
        assert scale == pytest.approx(3.0 - target, abs=1e-6)
        assert oracle.feasibility_margin(inst) == pytest.approx(target,
                                                                abs=1e-7)
        assert inst.name.startswith("nu_prime_ns")
        assert np.allclose(inst.thresholds, scale * NS.thresholds)
    # target equal to the current margin keeps the thresholds
    inst, scale = oracle.rescale_to_margin(SIM, 0.25)
    assert scale == pytest.approx(1.0, abs=1e-6)
    # target equal to the zero-floor ceiling drives the scale to zero
    inst, scale = oracle.rescale_to_margin(SIM, 0.5)
    assert scale == pytest.approx(0.0, abs=1e-9)
    assert oracle.feasibility_margin(inst) == pytest.approx(0.5, abs=1e-7)


def test_rescale_to_margin_errors():
    with pytest.raises(ValueError):
        oracle.rescale_to_margin(NS, 5.0)  # above the zero-floor ceiling
    with pytest.raises(ValueError):
        oracle.rescale_to_margin(NS, -0.1)
    signed = Instance([[1.0], [1.0]], [1.0], [0.5, -0.5], name="signed")
    with pytest.raises(ValueError):
        oracle.rescale_to_margin(signed, 0.1)
