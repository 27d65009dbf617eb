"""Simulated advertisers: latent demands, conditional-logit adoption, rewards.

Every ad unit has a latent demand ``w* = A @ c`` where the columns of ``A``
are typical demand vectors and ``c`` mixes them. The agent sees ``A``, ``c``
and the budget, never ``w*``. When shown the performance ``v'`` of a
recommended strategy, the advertiser adopts with probability

    e^u / (e^u + C),    u = alpha / max(relative utility gap, eps_gap)

which is a conditional logit over {recommended item, null item} where the
null item has utility ``log C``.
"""
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._validation import (
    check_demand,
    check_int,
    check_kpi_vector,
    check_positive,
    check_random_state,
)
from .bidding import simulate_bidding
from .bidlog import N_KPIS
from .exceptions import ConfigError, ContractError

# exp(-36) is still above half an ulp of 1.0, so the logistic stays < 1
MAX_LOGIT = 36.0
_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True, eq=False)
class DemandBasis:
    """``n x m`` matrix whose columns are typical demand vectors."""

    matrix_a: np.ndarray

    def __post_init__(self):
        a = np.array(self.matrix_a, dtype=np.float64)
        if a.ndim != 2:
            raise ConfigError(f"basis must be a matrix, got shape {a.shape}")
        for j in range(a.shape[1]):
            try:
                check_demand(a[:, j], name=f"basis column {j}")
            except ContractError as exc:
                raise ConfigError(str(exc)) from exc
        a.setflags(write=False)
        object.__setattr__(self, "matrix_a", a)

    @property
    def n(self):
        return self.matrix_a.shape[0]

    @property
    def m(self):
        return self.matrix_a.shape[1]

    @classmethod
    def identity(cls, n=N_KPIS):
        return cls(np.eye(n))

    @classmethod
    def random(cls, n=N_KPIS, m=N_KPIS, seed=None, kpi_scale=None):
        """Columns drawn uniformly from the simplex.

        With ``kpi_scale`` (KPI per unit cost, see ``kpi_scale``) the draws are
        made in budget-normalised KPI units and mapped back to raw units, so
        no KPI dominates a demand merely because its raw magnitude is large.
        """
        rng = check_random_state(seed)
        cols = rng.dirichlet(np.ones(n), size=m).T
        if kpi_scale is not None:
            cols = to_raw_demand(cols.T, kpi_scale).T
        return cls(cols)


def kpi_scale(log):
    """Log-wide KPI obtained per unit of cost, one entry per KPI."""
    return log.kpi_values.sum(axis=0) / log.total_cost


def to_raw_demand(w_norm, scale):
    """Map demand(s) over budget-normalised KPIs to raw-KPI demand(s).

    ``w_norm . (v / (scale * B))`` is proportional to ``w_raw . v`` for every
    performance ``v``, so both rank strategies identically.
    """
    raw = np.asarray(w_norm, dtype=np.float64) / np.asarray(scale, dtype=np.float64)
    return raw / raw.sum(axis=-1, keepdims=True)


def to_normalized_demand(w_raw, scale):
    """Inverse of ``to_raw_demand``."""
    norm = np.asarray(w_raw, dtype=np.float64) * np.asarray(scale, dtype=np.float64)
    total = norm.sum(axis=-1, keepdims=True)
    return np.divide(norm, total, out=np.zeros_like(norm), where=total > 0)


@dataclass(frozen=True)
class AdoptionModelParams:
    alpha: float = 0.1
    c_null: float = 20.0
    eps_gap: float = 0.01
    u_cap: float = 30.0

    def __post_init__(self):
        for name in ("alpha", "c_null", "eps_gap", "u_cap"):
            check_positive(getattr(self, name), name)
        if self.eps_gap >= 1:
            raise ConfigError(f"eps_gap must be < 1, got {self.eps_gap}")
        if self.u_cap - math.log(self.c_null) > MAX_LOGIT:
            raise ConfigError(
                f"u_cap - log(c_null) = {self.u_cap - math.log(self.c_null):.3g} exceeds "
                f"{MAX_LOGIT}; adoption probability would round to exactly 1")


class UnitObservation(NamedTuple):
    """What the recommender may see about an ad unit."""

    unit_id: int
    matrix_a: np.ndarray
    feature_c: np.ndarray
    budget: float


@dataclass(eq=False)
class AdUnit:
    unit_id: int
    budget: float
    basis: DemandBasis
    feature_c: np.ndarray
    true_demand: np.ndarray
    opt_performance: np.ndarray
    # largest single-impression value over the optimum value: how far a
    # greedy-prefix "optimum" can trail the true knapsack optimum
    gap_slack: float = 0.0
    adoption_history: list = field(default_factory=list)

    def observe(self):
        return UnitObservation(self.unit_id, self.basis.matrix_a.copy(),
                               self.feature_c.copy(), self.budget)

    def opt_value(self):
        return float(self.true_demand @ self.opt_performance)


class EnvStep(NamedTuple):
    unit_id: int
    observed_features: UnitObservation
    recommended_performance: np.ndarray
    adopt_prob_recommended: float
    adopt_prob_optimal: float
    reward: int


def make_unit(unit_id, basis, feature_c, budget, log):
    """Build an ad unit and cache its optimal performance on ``log``."""
    feature_c = check_demand(feature_c, basis.m, name="feature_c")
    budget = check_positive(budget, "budget")
    w_star = basis.matrix_a @ feature_c
    opt = simulate_bidding(w_star, budget, log).performance
    opt_val = float(w_star @ opt)
    best_single = float((log.kpi_values @ w_star).max())
    slack = best_single / opt_val if opt_val > 0 else 0.0
    return AdUnit(unit_id=unit_id, budget=budget, basis=basis, feature_c=feature_c,
                  true_demand=w_star, opt_performance=opt, gap_slack=slack)


def generate_units(k, basis, budget_range, log, seed=None):
    """Sample ``k`` ad units; ``log`` is one shared log or one log per unit."""
    k = check_int(k, "k", minimum=1)
    lo, hi = budget_range
    if not (0 < lo <= hi) or not np.isfinite(hi):
        raise ConfigError(f"budget_range must satisfy 0 < lo <= hi, got {budget_range}")
    logs = list(log) if isinstance(log, (list, tuple)) else [log] * k
    if len(logs) != k:
        raise ConfigError(f"got {len(logs)} per-unit logs for {k} units")
    rng = check_random_state(seed)
    units = []
    for i in range(k):
        c = rng.dirichlet(np.ones(basis.m))
        budget = rng.uniform(lo, hi)
        units.append(make_unit(i, basis, c, budget, logs[i]))
    return units


def _logistic(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def utility_gap(unit, recommended_perf):
    """Relative shortfall of ``recommended_perf`` against the unit's optimum."""
    v = check_kpi_vector(recommended_perf, unit.true_demand.shape[0])
    opt = unit.opt_value()
    return (opt - float(unit.true_demand @ v)) / max(opt, _TINY)


def adoption_utility(gap, params):
    return min(params.alpha / max(gap, params.eps_gap), params.u_cap)


def adoption_probability(unit, recommended_perf, params):
    """Probability that ``unit`` adopts a strategy achieving ``recommended_perf``."""
    gap = utility_gap(unit, recommended_perf)
    # greedy optimum may trail the exact knapsack optimum by one impression
    if gap < -unit.gap_slack - 1e-12:
        raise ContractError(
            f"recommended performance beats the unit optimum by {-gap:.3g} "
            f"(allowed slack {unit.gap_slack:.3g}); was it bid on another log or budget?")
    u = adoption_utility(gap, params)
    return _logistic(u - math.log(params.c_null))


def step(unit, recommended_demand, log, params, rng):
    """Show the unit the performance of ``recommended_demand`` and draw a reward."""
    w = check_demand(recommended_demand, unit.true_demand.shape[0],
                     name="recommended_demand")
    v_rec = simulate_bidding(w, unit.budget, log).performance
    p_rec = adoption_probability(unit, v_rec, params)
    p_opt = adoption_probability(unit, unit.opt_performance, params)
    reward = int(rng.random() < p_rec)
    unit.adoption_history.append((w.copy(), bool(reward)))
    return EnvStep(unit.unit_id, unit.observe(), v_rec, p_rec, p_opt, reward)


def sample_visit(units, rng):
    if not units:
        raise ConfigError("cannot sample a visit from an empty unit list")
    return units[int(rng.integers(len(units)))].unit_id


class AdvertiserEnv:
    """Units plus their logs and adoption model, with a private RNG stream."""

    def __init__(self, units, log, params=None, seed=None):
        self.units = list(units)
        self.logs = list(log) if isinstance(log, (list, tuple)) else [log] * len(self.units)
        self.params = AdoptionModelParams() if params is None else params
        self.rng = check_random_state(seed)

    def visit(self):
        return self.units[sample_visit(self.units, self.rng)]

    def step(self, unit, recommended_demand):
        return step(unit, recommended_demand, self.logs[unit.unit_id], self.params, self.rng)
