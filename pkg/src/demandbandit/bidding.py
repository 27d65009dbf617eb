"""Budget-constrained optimal bidding over a replayed log.

For a demand vector ``w`` each impression is worth ``w . kpi_i``. Under a
second-price abstraction, winning impression ``i`` costs ``cost_i`` whatever
the bid, so picking the winning set is a 0/1 knapsack. The bid simulator uses
its LP relaxation: rank impressions by value per unit cost and win the
longest ratio-sorted prefix that fits in the budget. The equivalent bid rule
is "bid ``value_i / lambda``", i.e. win ``i`` iff ``w . kpi_i >= lambda * cost_i``.
"""
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_demand, check_positive
from .bidlog import N_KPIS
from .exceptions import ContractError

BRUTE_FORCE_MAX = 20


@dataclass(frozen=True, eq=False)
class BiddingOutcome:
    performance: np.ndarray
    spend: float
    lambda_: float
    won_count: int
    winning_ids: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, BiddingOutcome):
            return NotImplemented
        return (np.array_equal(self.performance, other.performance)
                and self.spend == other.spend and self.lambda_ == other.lambda_
                and np.array_equal(np.sort(self.winning_ids), np.sort(other.winning_ids)))

    __hash__ = None


def impression_utility(w, imp):
    """Value of one impression (an ``Impression`` or a KPI row) under demand ``w``."""
    kpi = np.asarray(getattr(imp, "kpi_values", imp), dtype=np.float64)
    w = check_demand(w, kpi.shape[-1], simplex=False)
    return float(kpi @ w)


def _outcome(log, ids, lambda_):
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size == 0:
        return BiddingOutcome(np.zeros(N_KPIS), 0.0, 0.0, 0, ids)
    return BiddingOutcome(
        performance=log.kpi_values[ids].sum(axis=0),
        spend=math.fsum(log.cost[ids]),
        lambda_=float(lambda_),
        won_count=int(ids.size),
        winning_ids=ids,
    )


def ratio_order(w, log):
    """Impression ids sorted by value-per-cost descending, ties by lower id."""
    ratio = (log.kpi_values @ w) / log.cost
    # stable sort on the negated ratio keeps equal ratios in id order
    return np.argsort(-ratio, kind="stable"), ratio


def simulate_bidding(w, budget, log):
    """Greedy LP-relaxation bidding; returns the realised ``BiddingOutcome``.

    The fractional last item of the LP optimum is dropped, since an
    impression cannot be partially won. ``lambda_`` is the ratio of the last
    impression won, or 0 when nothing or everything is won.
    """
    w = check_demand(w, N_KPIS, simplex=False)
    budget = check_positive(budget, "budget")
    if len(log) == 0:
        return _outcome(log, [], 0.0)
    order, ratio = ratio_order(w, log)
    costs = log.cost[order]
    k = int(np.searchsorted(np.cumsum(costs), budget, side="right"))
    # cumsum rounding can misplace the cut by an item; settle it on exact sums
    while k < len(costs) and math.fsum(costs[:k + 1]) <= budget:
        k += 1
    while k > 0 and math.fsum(costs[:k]) > budget:
        k -= 1
    ids = order[:k]
    if k == 0:
        return _outcome(log, ids, 0.0)
    lam = 0.0 if k == len(log) else ratio[ids[-1]]
    return _outcome(log, ids, lam)


def brute_force_oracle(w, budget, log):
    """Exact 0/1 knapsack optimum by enumerating every subset (tests only).

    Subset ``s`` holds impression ``i`` iff bit ``i`` of ``s`` is set; ties in
    objective go to the smallest ``s``.
    """
    w = check_demand(w, N_KPIS, simplex=False)
    budget = check_positive(budget, "budget")
    n = len(log)
    if n > BRUTE_FORCE_MAX:
        raise ContractError(f"brute force limited to {BRUTE_FORCE_MAX} impressions, got {n}")
    bits = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
    spend = bits @ log.cost
    value = bits @ (log.kpi_values @ w)
    feasible = spend <= budget
    # matmul rounding can flip subsets sitting right at the budget
    near = np.flatnonzero(np.abs(spend - budget) <= 1e-9 * budget)
    for s in near:
        feasible[s] = math.fsum(log.cost[bits[s] == 1]) <= budget
    best = int(np.argmax(np.where(feasible, value, -1.0)))
    return _outcome(log, np.flatnonzero(bits[best]), 0.0)


def pure_demand_matrix(log, budget):
    """KPI matrix for the pure demands e1..en, each column max-normalised.

    Row ``i`` is the performance obtained when optimising KPI ``i`` alone.
    """
    rows = [simulate_bidding(np.eye(N_KPIS)[i], budget, log).performance
            for i in range(N_KPIS)]
    raw = np.vstack(rows)
    col_max = raw.max(axis=0)
    norm = np.divide(raw, col_max, out=np.zeros_like(raw), where=col_max > 0)
    return raw, norm
