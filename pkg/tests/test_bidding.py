import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demandbandit.bidding import (
    brute_force_oracle,
    impression_utility,
    pure_demand_matrix,
    ratio_order,
    simulate_bidding,
)
from demandbandit.bidlog import LogGenParams, generate_log
from demandbandit.exceptions import ConfigError, ContractError

from conftest import make_log

E = np.eye(3)


def prefix_oracle(w, budget, log):
    """Best feasible prefix of the ratio-sorted order, by explicit enumeration."""
    util = log.kpi_values @ w
    order, _ = ratio_order(w, log)
    best_k, best_val = 0, 0.0
    for k in range(1, len(log) + 1):
        ids = order[:k]
        if math.fsum(log.cost[ids]) <= budget and util[ids].sum() >= best_val:
            best_k, best_val = k, util[ids].sum()
    return order[:best_k], best_val


def gmv_log(costs, gmvs):
    # ctr=0.5, cvr=1 so that GMV = price / 2
    n = len(costs)
    return make_log([0.5] * n, [1.0] * n, [2.0 * g for g in gmvs], costs)


@st.composite
def instances(draw, max_n=15):
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    log = generate_log(LogGenParams(n_impressions=n), seed)
    w = np.random.default_rng(seed).dirichlet(np.ones(3))
    frac = draw(st.floats(0.01, 1.0))
    return w, frac * log.total_cost, log


@pytest.mark.parametrize("w,ctr,expected", [
    ((1, 0, 0), 0.3, 1.0),
    ((0, 1, 0), 0.05, 0.05),
    ((0.5, 0.5, 0), 0.04, 0.52),
])
def test_impression_utility_examples(w, ctr, expected):
    imp = make_log([ctr], [0.1], [50.0], [1.0])[0]
    assert impression_utility(np.array(w, float), imp) == pytest.approx(expected, abs=1e-15)


def test_impression_utility_dimension_mismatch(small_log):
    with pytest.raises(ContractError):
        impression_utility(np.array([0.5, 0.5]), small_log[0])


def test_full_budget_wins_everything(small_log):
    out = simulate_bidding(np.array([0.2, 0.3, 0.5]), small_log.total_cost, small_log)
    assert out.won_count == len(small_log)
    assert out.performance[0] == len(small_log)
    assert out.lambda_ == 0.0


def test_budget_below_cheapest_wins_nothing(small_log):
    out = simulate_bidding(E[1], 0.5 * small_log.cost.min(), small_log)
    assert out.won_count == 0 and out.spend == 0.0
    np.testing.assert_array_equal(out.performance, 0.0)


def test_ten_impression_click_demand_matches_prefix_enumeration():
    log = generate_log(LogGenParams(n_impressions=10), seed=5)
    budget = 0.3 * log.total_cost
    out = simulate_bidding(E[1], budget, log)
    ids, _ = prefix_oracle(E[1], budget, log)
    assert out.performance[1] == pytest.approx(log.kpi_values[ids, 1].sum(), rel=1e-12)


def test_lambda_is_ratio_of_last_won(small_log):
    w = np.array([0.1, 0.6, 0.3])
    out = simulate_bidding(w, 0.2 * small_log.total_cost, small_log)
    util = small_log.kpi_values @ w
    ratios = util[out.winning_ids] / small_log.cost[out.winning_ids]
    assert out.lambda_ == pytest.approx(ratios.min(), rel=1e-15)
    lost = np.setdiff1d(np.arange(len(small_log)), out.winning_ids)
    # bid rule: every won impression clears the threshold
    assert np.all(util[out.winning_ids] >= out.lambda_ * small_log.cost[out.winning_ids]
                  * (1 - 1e-12))
    assert lost.size > 0


def test_ties_go_to_lower_id():
    log = make_log([0.1] * 4, [0.1] * 4, [10.0] * 4, [1.0] * 4)
    out = simulate_bidding(E[1], 2.0, log)
    np.testing.assert_array_equal(out.winning_ids, [0, 1])


def test_empty_budget_rejected(small_log):
    with pytest.raises(ConfigError):
        simulate_bidding(E[0], 0.0, small_log)


def test_brute_force_single_impression():
    log = gmv_log([5.0], [3.0])
    out = brute_force_oracle(E[2], 5.0, log)
    assert out.won_count == 1


def test_brute_force_hand_instance_as_stated():
    # costs {9, 10}, utilities {10, 12}, budget 10: greedy takes the 12 (ratio 1.2)
    log = gmv_log([9.0, 10.0], [10.0, 12.0])
    greedy = simulate_bidding(E[2], 10.0, log)
    exact = brute_force_oracle(E[2], 10.0, log)
    assert exact.performance[2] >= greedy.performance[2]
    assert exact.performance[2] == pytest.approx(12.0)


def test_brute_force_beats_greedy_prefix():
    # item 0 has the better ratio (7/6) but blocks the more valuable item 1
    log = gmv_log([6.0, 10.0], [7.0, 10.0])
    greedy = simulate_bidding(E[2], 10.0, log)
    exact = brute_force_oracle(E[2], 10.0, log)
    assert greedy.performance[2] == pytest.approx(7.0)
    assert exact.performance[2] == pytest.approx(10.0)
    assert greedy.performance[2] >= exact.performance[2] - 10.0


def test_brute_force_budget_below_min_cost():
    log = gmv_log([6.0, 10.0], [7.0, 10.0])
    assert brute_force_oracle(E[2], 5.999, log).won_count == 0


def test_brute_force_size_limit():
    log = generate_log(LogGenParams(n_impressions=21), seed=0)
    with pytest.raises(ContractError):
        brute_force_oracle(E[0], 1.0, log)


def test_pure_demand_dominance(default_log):
    _, norm = pure_demand_matrix(default_log, 0.1 * default_log.total_cost)
    np.testing.assert_array_equal(np.diag(norm), 1.0)
    assert np.all(norm[~np.eye(3, dtype=bool)] < 1.0)


@settings(max_examples=150, deadline=None)
@given(instances())
def test_feasible_and_prefix_optimal(inst):
    w, budget, log = inst
    out = simulate_bidding(w, budget, log)
    assert out.spend <= budget
    assert math.fsum(log.cost[out.winning_ids]) <= budget
    _, best = prefix_oracle(w, budget, log)
    assert w @ out.performance == pytest.approx(best, rel=1e-12, abs=1e-15)


@settings(max_examples=150, deadline=None)
@given(instances(max_n=12))
def test_integer_gap_bound(inst):
    w, budget, log = inst
    greedy = w @ simulate_bidding(w, budget, log).performance
    exact = w @ brute_force_oracle(w, budget, log).performance
    assert exact >= greedy - 1e-12
    assert greedy >= exact - (log.kpi_values @ w).max() - 1e-12


@settings(max_examples=100, deadline=None)
@given(instances(), st.floats(1e-3, 1e3))
def test_scale_invariance(inst, k):
    w, budget, log = inst
    a = simulate_bidding(w, budget, log)
    b = simulate_bidding(k * w, budget, log)
    np.testing.assert_array_equal(np.sort(a.winning_ids), np.sort(b.winning_ids))
    np.testing.assert_array_equal(a.performance, b.performance)


@settings(max_examples=100, deadline=None)
@given(instances(), st.floats(1.0, 3.0))
def test_budget_monotonicity(inst, grow):
    w, budget, log = inst
    small = w @ simulate_bidding(w, budget, log).performance
    large = w @ simulate_bidding(w, budget * grow, log).performance
    assert large >= small - 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(20, 300), st.floats(0.05, 0.9))
def test_threshold_policy_optimality(seed, n, frac):
    log = generate_log(LogGenParams(n_impressions=n), seed)
    w = np.random.default_rng(seed).dirichlet(np.ones(3))
    budget = frac * log.total_cost
    chosen = w @ simulate_bidding(w, budget, log).performance
    util = log.kpi_values @ w
    ratio = util / log.cost
    for lam in np.unique(ratio):
        won = ratio >= lam
        if log.cost[won].sum() <= budget:
            assert util[won].sum() <= chosen * (1 + 1e-12) + 1e-12


def test_deterministic(small_log):
    w = np.array([0.3, 0.3, 0.4])
    assert simulate_bidding(w, 500.0, small_log) == simulate_bidding(w, 500.0, small_log)


def test_unnormalized_demand_accepted(small_log):
    out = simulate_bidding(np.array([2.0, 0.0, 0.0]), 100.0, small_log)
    ref = simulate_bidding(E[0], 100.0, small_log)
    np.testing.assert_array_equal(out.winning_ids, ref.winning_ids)
    assert out.lambda_ == pytest.approx(2 * ref.lambda_, rel=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_budget_equal_to_total_cost_wins_all(seed):
    log = generate_log(LogGenParams(n_impressions=777), seed)
    w = np.random.default_rng(seed).dirichlet(np.ones(3))
    assert simulate_bidding(w, log.total_cost, log).won_count == 777
