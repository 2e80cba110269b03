import math
import sys
import os

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.core.eann import (
    EannSpec,
    MemberOutput,
    QualityCurve,
    case_inflation,
    competitive_depth,
    expected_inflation_bound,
    gated_anytime_outputs,
    illustrate_schedule,
    inflation,
    inflation_grid,
    linear_ensemble_inflation,
    locate,
    locate_minimum,
    merge_inflation_reports,
    plain_sequence_mean,
    prediction_count,
    simulate_inflation,
    sup_inflation,
)
from src.core.errors import ContractViolation, DomainError, NoPredictionYet
from src.schemas.experiment import BudgetSampler


# =============================================================================
# Schedule geometry
# =============================================================================

def test_member_depths_and_prefix_costs():
    spec = EannSpec(base=2.0, member_count=4)
    assert spec.depths.tolist() == [1.0, 2.0, 4.0, 8.0]
    assert spec.prefix_costs.tolist() == [0.0, 1.0, 3.0, 7.0, 15.0]
    assert spec.total_cost == 15.0


def test_spec_rejects_bad_parameters():
    with pytest.raises(DomainError):
        EannSpec(base=1.0, member_count=3)
    with pytest.raises(ContractViolation):
        EannSpec(base=2.0, member_count=0)
    with pytest.raises(ContractViolation):
        EannSpec(base=2.0, member_count=3, workers=0)


def test_locate_first_member():
    point = locate(EannSpec(2.0, 4), 0.5)
    assert point.member_number == 1
    assert point.member_depth == 1.0
    assert point.within_member_depth == 0.5


def test_locate_after_first_member_completes():
    point = locate(EannSpec(2.0, 4), 1.5)
    assert point.member_number == 2
    assert point.member_depth == 2.0
    assert point.within_member_depth == 0.5


def test_locate_at_member_boundary():
    point = locate(EannSpec(2.0, 4), 3.0)
    assert point.member_number == 2
    assert point.within_member_depth == 2.0
    assert point.budget == point.within_member_depth + 1.0


def test_locate_saturates_past_total_cost():
    spec = EannSpec(2.0, 3)
    point = locate(spec, 100.0)
    assert point.budget == spec.total_cost
    assert point.member_number == 3
    assert point.within_member_depth == 4.0


def test_locate_rejects_negative_budget():
    with pytest.raises(DomainError):
        locate(EannSpec(2.0, 3), -1.0)


def test_competitive_depth_reuses_previous_member():
    assert competitive_depth(EannSpec(2.0, 4), 1.5) == 1.0


def test_competitive_depth_past_previous_member():
    assert competitive_depth(EannSpec(2.0, 4), 2.5) == 1.5


def test_competitive_depth_base_three():
    # member 3 (depth 9) starts after 1 + 3 = 4
    assert competitive_depth(EannSpec(3.0, 4), 4.0 + 2.0) == 3.0


def test_no_prediction_before_first_unit():
    with pytest.raises(NoPredictionYet):
        competitive_depth(EannSpec(2.0, 3), 0.5)


def test_plain_networks_compete_with_last_finished_member():
    spec = EannSpec(2.0, 3, anytime=False)
    assert competitive_depth(spec, 1.0) == 1.0
    assert competitive_depth(spec, 2.9) == 1.0
    assert competitive_depth(spec, 3.0) == 2.0
    assert competitive_depth(spec, 6.0) == 2.0


def test_inflation_at_case_one_right_edge():
    assert inflation(EannSpec(2.0, 3), 2.0) == pytest.approx(2.0)
    assert case_inflation(2.0, 1, 1.0) == pytest.approx(2.0)


def test_case_one_approaches_supremum():
    assert case_inflation(2.0, 30, 2.0 ** 29) == pytest.approx(3.0, abs=1e-8)


def test_direct_definition_matches_case_formulas():
    rng = np.random.default_rng(3)
    bases = [1.5, 2.0, 3.0, 4.0]
    for k in range(10_000):
        b = bases[k % 4] if k % 2 == 0 else float(rng.uniform(1.1, 5.0))
        n = int(rng.integers(1, 9))
        z = float(rng.uniform(0.0, 1.0)) * b ** n
        if z == 0.0:
            continue
        spec = EannSpec(b, n + 1)
        budget = float(spec.prefix_costs[n]) + z
        assert inflation(spec, budget) == pytest.approx(case_inflation(b, n, z), abs=1e-12)


def test_first_member_has_no_inflation():
    spec = EannSpec(2.0, 3)
    assert inflation(spec, 1.0) == 1.0
    assert case_inflation(2.0, 0, 1.0) == 1.0


# =============================================================================
# Closed-form bounds
# =============================================================================

def test_sup_inflation_values():
    assert sup_inflation(2.0) == 3.0
    assert sup_inflation(1.5) == pytest.approx(4.0)
    assert sup_inflation(1e6) == pytest.approx(2.0, abs=1e-5)
    with pytest.raises(DomainError):
        sup_inflation(1.0)


def test_expected_inflation_bound_values():
    assert expected_inflation_bound(2.0) == pytest.approx(0.75 + 1.0 + math.log(2.0))
    assert expected_inflation_bound(2.0) == pytest.approx(2.4431, abs=1e-4)
    assert expected_inflation_bound(math.e) == pytest.approx(1.9800, abs=1e-4)
    assert expected_inflation_bound(1e6) == pytest.approx(1.0, abs=1e-4)
    with pytest.raises(DomainError):
        expected_inflation_bound(0.5)


def test_bounds_strictly_decrease_in_base():
    grid = np.linspace(1.01, 50.0, 500)
    sups = np.array([sup_inflation(b) for b in grid])
    means = np.array([expected_inflation_bound(b) for b in grid])
    assert np.all(np.diff(sups) < 0)
    assert np.all(np.diff(means) < 0)


def test_workers_amplify_the_base():
    parallel = EannSpec(2.0, 6, workers=2)
    single = EannSpec(4.0, 6)
    assert parallel.effective_base == 4.0
    assert np.array_equal(parallel.depths, single.depths)
    assert sup_inflation(parallel.effective_base) == sup_inflation(4.0)
    a = simulate_inflation(parallel, samples=5_000, seed=8)
    b = simulate_inflation(single, samples=5_000, seed=8)
    assert a.sup_c == b.sup_c
    assert a.mean_c == b.mean_c


def test_linear_ensemble_values():
    assert linear_ensemble_inflation(2.0).sup == pytest.approx(4.0)
    assert linear_ensemble_inflation(1.0 + math.sqrt(2.0)).mean_limit == pytest.approx(2.9142, abs=1e-4)
    b = 3.0
    bounds = linear_ensemble_inflation(b)
    assert bounds.sup == pytest.approx(2.0 + (b - 1.0) + 1.0 / (b - 1.0))
    with pytest.raises(DomainError):
        linear_ensemble_inflation(1.0)


def test_grid_search_recovers_linear_minima():
    sup_at, sup_min = locate_minimum(lambda b: linear_ensemble_inflation(b).sup, 1.01, 10.0)
    mean_at, mean_min = locate_minimum(lambda b: linear_ensemble_inflation(b).mean_limit, 1.01, 10.0)
    assert sup_at == pytest.approx(2.0, abs=1e-3)
    assert sup_min == pytest.approx(4.0, abs=1e-6)
    assert mean_at == pytest.approx(1.0 + math.sqrt(2.0), abs=1e-3)
    assert mean_min == pytest.approx(1.5 + math.sqrt(2.0), abs=1e-6)


def test_eann_dominates_linear_ensemble():
    for b in np.linspace(1.05, 20.0, 400):
        linear = linear_ensemble_inflation(b)
        assert sup_inflation(b) < linear.sup
        assert expected_inflation_bound(b) < linear.mean_limit


def test_plain_sequence_mean_approaches_limit_from_below():
    b = 1.0 + math.sqrt(2.0)
    limit = linear_ensemble_inflation(b).mean_limit
    short = plain_sequence_mean(EannSpec(b, 4, anytime=False))
    long = plain_sequence_mean(EannSpec(b, 30, anytime=False))
    assert short < long < limit + 1e-9
    assert long == pytest.approx(limit, rel=1e-4)


def test_plain_sequence_mean_needs_two_members():
    with pytest.raises(ContractViolation):
        plain_sequence_mean(EannSpec(2.0, 1, anytime=False))


# =============================================================================
# Simulation
# =============================================================================

def test_simulated_sup_and_mean_at_base_two():
    spec = EannSpec(2.0, 12)
    report = simulate_inflation(spec, samples=1_000_000, seed=0)
    assert report.samples == 1_000_000
    assert report.sup_c == pytest.approx(3.0, rel=0.01)
    assert report.sup_c <= sup_inflation(2.0)
    assert report.mean_c <= expected_inflation_bound(2.0)
    assert report.mean_c <= report.sup_c


def test_simulated_mean_bound_holds_across_seeds():
    spec = EannSpec(2.0, 12)
    bound = expected_inflation_bound(2.0)
    for seed in range(20):
        assert simulate_inflation(spec, samples=100_000, seed=seed).mean_c <= bound
        iid = simulate_inflation(spec, BudgetSampler.UNIFORM, samples=50_000, seed=seed)
        assert iid.mean_c <= bound + 3 * iid.mean_c_stderr


def test_simulated_sup_at_base_four():
    report = simulate_inflation(EannSpec(4.0, 10), samples=1_000_000, seed=1)
    assert report.sup_c == pytest.approx(2.0 + 1.0 / 3.0, rel=0.01)
    assert report.sup_c <= sup_inflation(4.0)


@pytest.mark.parametrize("b", [1.5, 2.0, 3.0, 4.0])
def test_simulated_inflation_meets_both_bounds(b):
    report = simulate_inflation(EannSpec(b, 12), samples=1_000_000, seed=3)
    assert report.sup_c == pytest.approx(2.0 + 1.0 / (b - 1.0), rel=0.01)
    assert report.sup_c <= sup_inflation(b)
    assert report.mean_c <= expected_inflation_bound(b)
    assert 1.0 <= report.mean_c <= report.sup_c


def test_dense_grid_never_exceeds_sup():
    for b in (1.5, 2.0, 3.0, 4.0):
        report = inflation_grid(EannSpec(b, 10), 20_001)
        assert report.sup_c <= sup_inflation(b) + 1e-12
        assert all(r.c >= 1.0 for r in report.per_budget)


def test_plain_sequence_simulation_matches_exact_mean():
    spec = EannSpec(2.0, 8, anytime=False)
    report = simulate_inflation(spec, samples=200_000, seed=2)
    assert report.mean_c == pytest.approx(plain_sequence_mean(spec), rel=1e-3)


def test_grid_sampler_ignores_seed():
    spec = EannSpec(2.0, 6)
    a = simulate_inflation(spec, BudgetSampler.GRID, samples=1_000, seed=1)
    b = simulate_inflation(spec, BudgetSampler.GRID, samples=1_000, seed=2)
    assert a == b


def test_recorded_budgets_have_csv_columns():
    report = simulate_inflation(EannSpec(2.0, 4), samples=50, seed=0, record=True)
    rows = report.csv_rows()
    assert len(rows) == 50
    assert list(rows[0]) == ["budget", "member", "z", "x_prime", "c"]
    assert all(r["c"] == pytest.approx(r["budget"] / r["x_prime"]) for r in rows)


def test_merge_is_order_independent():
    spec = EannSpec(2.0, 8)
    parts = [simulate_inflation(spec, BudgetSampler.UNIFORM, samples=n, seed=s) for n, s in ((300, 1), (1_000, 2), (50, 3))]
    forward = merge_inflation_reports(parts)
    backward = merge_inflation_reports(parts[::-1])
    shuffled = merge_inflation_reports([parts[1], parts[2], parts[0]])
    assert forward == backward == shuffled
    assert forward.samples == 1_350
    assert forward.sup_c == max(p.sup_c for p in parts)
    expected = sum(p.mean_c * p.samples for p in parts) / 1_350
    assert forward.mean_c == pytest.approx(expected)


def test_sharded_simulation_covers_the_range():
    spec = EannSpec(2.0, 10)
    report = simulate_inflation(spec, samples=40_000, seed=5, shards=4)
    assert report.samples == 40_000
    assert report.mean_c <= expected_inflation_bound(2.0)
    assert report.mean_c == pytest.approx(simulate_inflation(spec, samples=40_000, seed=5).mean_c, rel=1e-3)


def test_merge_of_nothing_fails():
    with pytest.raises(ContractViolation):
        merge_inflation_reports([])


# =============================================================================
# Prediction counts
# =============================================================================

def test_prediction_counts_at_seven_units():
    assert prediction_count(EannSpec(2.0, 3), 7.0) == 7
    assert prediction_count(EannSpec(2.0, 3, anytime=False), 7.0) == 3
    assert prediction_count(EannSpec(2.0, 3, unit=0.5), 7.0) == 14


def test_prediction_count_ratio_grows():
    anytime, plain = EannSpec(2.0, 21), EannSpec(2.0, 21, anytime=False)
    ratios = []
    for k in range(1, 21):
        budget = 2.0 ** k
        ratios.append(prediction_count(anytime, budget) / prediction_count(plain, budget))
    assert all(b > a for a, b in zip(ratios[1:], ratios[2:]))
    assert ratios[-1] > 10_000


# =============================================================================
# Gated outputs
# =============================================================================

def test_gating_skips_worse_outputs():
    schedule = gated_anytime_outputs([(1.0, 0.6, "a"), (2.0, 0.5, "b"), (3.0, 0.7, "c")])
    assert schedule.decisions == [True, False, True]
    assert [o.payload for o in schedule.published] == ["a", "c"]
    assert schedule.at(0.5) is None
    assert schedule.at(2.5) == "a"
    assert schedule.at(3.0) == "c"


def test_gating_publishes_monotone_scores():
    schedule = gated_anytime_outputs([MemberOutput(float(k), 0.1 * k) for k in range(1, 6)])
    assert all(schedule.decisions)


def test_gating_ties_keep_the_first_output():
    schedule = gated_anytime_outputs([(1.0, 0.5, 1), (2.0, 0.5, 2), (3.0, 0.5, 3)])
    assert schedule.decisions == [True, False, False]


def test_gating_requires_increasing_costs():
    with pytest.raises(ContractViolation):
        gated_anytime_outputs([(1.0, 0.1, None), (1.0, 0.2, None)])


def test_gating_is_invariant_to_monotone_score_transforms():
    rng = np.random.default_rng(9)
    transforms = (np.exp, lambda s: 2.0 * s + 5.0, lambda s: s ** 3)
    for _ in range(10_000):
        length = int(rng.integers(1, 12))
        scores = rng.uniform(0.0, 1.0, length)
        costs = np.cumsum(rng.uniform(0.1, 2.0, length))
        base = gated_anytime_outputs(zip(costs, scores, range(length)))
        published = [o.score for o in base.published]
        assert all(b > a for a, b in zip(published, published[1:]))
        for f in transforms:
            assert gated_anytime_outputs(zip(costs, f(scores), range(length))).decisions == base.decisions


def test_illustrated_schedule_tracks_optimal_scores():
    spec = EannSpec(2.0, 4)
    curve = QualityCurve(tau=4.0)
    schedule, rows = illustrate_schedule(spec, curve)
    assert len(rows) == 15
    assert rows[0].published_score is not None
    published = [o.score for o in schedule.published]
    assert all(b > a for a, b in zip(published, published[1:]))
    for row in rows:
        assert row.published_score <= row.optimal_score + 1e-12
    assert rows[-1].member == 4
