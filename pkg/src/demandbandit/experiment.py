"""Closed-loop experiments: config, the bandit round loop, sweeps and outputs."""
import csv
import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._validation import check_int, check_positive, check_probability
from .agent import (
    HISTORY_MODES,
    DemandBanditAgent,
    PerformanceNormalizer,
    RandomDemandAgent,
    build_features,
    feature_dim,
    pooled_history,
)
from .bidlog import N_KPIS, LogGenParams, generate_log, load_log
from .env import (
    AdoptionModelParams,
    AdvertiserEnv,
    DemandBasis,
    generate_units,
    kpi_scale,
    to_normalized_demand,
)
from .exceptions import ConfigError, ContractError, DemandBanditError, NumericalError

BASIS_KINDS = ("identity", "random", "balanced")
AGENT_MODES = ("learned", "random-demand", "oracle")
METRICS_HEADER = ("t", "expected_reward", "optimal_expected_reward", "realized",
                  "cum_expected_regret", "cum_adoption_rate")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def _strict(cls, data, what):
    if not isinstance(data, dict):
        raise ConfigError(f"{what} must be a JSON object")
    unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {what}: {exc}") from exc


@dataclass(frozen=True)
class LogSpec:
    """Either a CSV ``path`` or generation ``params`` plus ``seed``."""

    path: str = None
    params: dict = field(default_factory=dict)
    seed: int = 0
    shared: bool = True

    def __post_init__(self):
        LogGenParams.from_dict(self.params)
        check_int(self.seed, "log.seed", minimum=0)
        if self.path is not None and not self.shared:
            raise ConfigError("per-unit logs can only be generated, not loaded from a path")

    def build(self, n_units):
        if self.path is not None:
            return load_log(self.path)
        params = LogGenParams.from_dict(self.params)
        if self.shared:
            return generate_log(params, self.seed)
        return [generate_log(params, self.seed + i) for i in range(n_units)]


@dataclass(frozen=True)
class AgentSpec:
    hidden_sizes: tuple = (64, 64)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    buffer_capacity: int = 2048
    train_steps_per_update: int = 1
    history_mode: str = "adopted-only"
    normalized_demand: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        if len(self.hidden_sizes) != 2:
            raise ConfigError("hidden_sizes must list exactly two layer widths")
        for h in self.hidden_sizes:
            check_int(h, "hidden size", minimum=1)
        check_positive(self.learning_rate, "learning_rate")
        check_int(self.batch_size, "batch_size", minimum=2)
        check_int(self.buffer_capacity, "buffer_capacity", minimum=1)
        check_int(self.train_steps_per_update, "train_steps_per_update", minimum=0)
        if self.history_mode not in HISTORY_MODES:
            raise ConfigError(f"history_mode must be one of {HISTORY_MODES}")


@dataclass(frozen=True)
class ExperimentConfig:
    arm: str = "learned"
    rounds: int = 2000
    n_units: int = 200
    budget_range: tuple = (200.0, 800.0)
    basis: str = "balanced"
    basis_m: int = N_KPIS
    basis_seed: int = 0
    dropout_rate: float = 0.4
    agent_mode: str = "learned"
    ablation: bool = False
    adoption: AdoptionModelParams = field(default_factory=AdoptionModelParams)
    log: LogSpec = field(default_factory=LogSpec)
    agent: AgentSpec = field(default_factory=AgentSpec)
    seed: int = 0
    seeds: tuple = DEFAULT_SEEDS
    output_dir: str = "results"

    def __post_init__(self):
        check_int(self.rounds, "rounds", minimum=1)
        check_int(self.n_units, "n_units", minimum=1)
        check_int(self.seed, "seed", minimum=0)
        lo, hi = self.budget_range
        if not (0 < lo <= hi):
            raise ConfigError(f"budget_range must satisfy 0 < lo <= hi, got {self.budget_range}")
        object.__setattr__(self, "budget_range", (float(lo), float(hi)))
        object.__setattr__(self, "seeds", tuple(check_int(s, "seeds[]", minimum=0)
                                                for s in self.seeds))
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.basis not in BASIS_KINDS:
            raise ConfigError(f"basis must be one of {BASIS_KINDS}, got {self.basis!r}")
        if self.basis == "identity" and self.basis_m != N_KPIS:
            raise ConfigError("identity basis requires basis_m == n_kpis")
        check_int(self.basis_m, "basis_m", minimum=1)
        check_probability(self.dropout_rate, "dropout_rate")
        if self.agent_mode not in AGENT_MODES:
            raise ConfigError(f"agent_mode must be one of {AGENT_MODES}")
        if not isinstance(self.ablation, bool):
            raise ConfigError("ablation must be a boolean")
        if not self.arm or any(ch in self.arm for ch in "/\\ "):
            raise ConfigError(f"arm name {self.arm!r} is not usable in a filename")

    @property
    def budget_mid(self):
        return 0.5 * (self.budget_range[0] + self.budget_range[1])

    def make_basis(self, log=None):
        if self.basis == "identity":
            return DemandBasis.identity(N_KPIS)
        scale = None
        if self.basis == "balanced":
            first = log[0] if isinstance(log, list) else log
            scale = kpi_scale(first)
        return DemandBasis.random(N_KPIS, self.basis_m, seed=self.basis_seed, kpi_scale=scale)

    def with_overrides(self, **changes):
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object")
        data = dict(data)
        nested = {"adoption": AdoptionModelParams, "log": LogSpec, "agent": AgentSpec}
        for key, sub in nested.items():
            if key in data and not isinstance(data[key], sub):
                data[key] = _strict(sub, data[key], key)
        return _strict(cls, data, "experiment config")

    def to_dict(self):
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)


class MetricsRow(NamedTuple):
    t: int
    expected_reward: float
    optimal_expected_reward: float
    realized: int
    cum_expected_regret: float
    cum_adoption_rate: float


def _make_agent(config, seed_seq, scale):
    spec = config.agent
    scale = scale if spec.normalized_demand else None
    if config.agent_mode == "random-demand":
        return RandomDemandAgent(n_kpis=N_KPIS, kpi_scale=scale,
                                 random_state=np.random.default_rng(seed_seq))
    if config.agent_mode == "oracle":
        return None
    return DemandBanditAgent(
        hidden_sizes=spec.hidden_sizes, dropout_rate=config.dropout_rate,
        learning_rate=spec.learning_rate, beta1=spec.beta1, beta2=spec.beta2,
        epsilon=spec.epsilon, batch_size=spec.batch_size,
        buffer_capacity=spec.buffer_capacity,
        train_steps_per_update=spec.train_steps_per_update, n_kpis=N_KPIS,
        kpi_scale=scale, random_state=np.random.default_rng(seed_seq))


def prepare(config, seed=None):
    """Build the environment and agent for one ``(config, seed)`` run."""
    seed = config.seed if seed is None else check_int(seed, "seed", minimum=0)
    units_seq, env_seq, agent_seq = np.random.SeedSequence(seed).spawn(3)
    log = config.log.build(config.n_units)
    units = generate_units(config.n_units, config.make_basis(log), config.budget_range,
                           log, seed=np.random.default_rng(units_seq))
    env = AdvertiserEnv(units, log, config.adoption, seed=np.random.default_rng(env_seq))
    agent = _make_agent(config, agent_seq, kpi_scale(env.logs[0]))
    if agent is not None:
        agent.initialize(feature_dim(N_KPIS, units[0].basis.m))
    return env, agent


def run_experiment(config, seed=None, outdir=None):
    """Run ``config.rounds`` bandit rounds; optionally write the metrics CSV.

    With ``outdir`` a JSON sidecar next to the CSV records the learned
    adoption bias.
    """
    return run_with_info(config, seed, outdir)[0]


def run_with_info(config, seed=None, outdir=None):
    """``run_experiment`` that also returns the final learner state (``run_info``)."""
    seed = config.seed if seed is None else seed
    env, agent = prepare(config, seed)
    normalizers = {}
    history_mode = config.agent.history_mode
    rows = []
    cum_regret = 0.0
    adopted = 0
    for t in range(1, config.rounds + 1):
        unit = env.visit()
        if agent is None:
            w = unit.true_demand
        else:
            pooled = pooled_history(unit, history_mode)
            if getattr(agent, "kpi_scale", None) is not None:
                pooled = to_normalized_demand(pooled, agent.kpi_scale)
            x = build_features(unit.observe(), pooled, config.budget_mid,
                               ablate=config.ablation)
            w, _ = agent.sample_demand(x)
            if not np.all(np.isfinite(w)):
                raise NumericalError(f"round {t}: agent produced non-finite demand {w}")
        result = env.step(unit, w)
        cum_regret += result.adopt_prob_optimal - result.adopt_prob_recommended
        adopted += result.reward
        rows.append(MetricsRow(t, result.adopt_prob_recommended, result.adopt_prob_optimal,
                                result.reward, cum_regret, adopted / t))
        if agent is not None:
            log = env.logs[unit.unit_id]
            norm = normalizers.get(id(log))
            if norm is None:
                norm = normalizers[id(log)] = PerformanceNormalizer(log)
            v_norm = norm(result.recommended_performance, unit.budget)
            agent.partial_fit(x[None, :], v_norm[None, :], [result.reward])
            # weights that blow up show in w next round; the bias needs its own check
            params = getattr(agent, "params_", None)
            if params is not None and not np.isfinite(params.bias):
                raise NumericalError(f"round {t}: network parameters diverged")
    info = run_info(agent)
    if outdir is not None:
        path = Path(outdir) / metrics_filename(config.arm, seed)
        write_metrics(rows, path)
        write_run_info(info, path.with_suffix(".json"))
    return rows, info


def run_info(agent):
    """Final learner state worth keeping next to the metrics (the adoption bias)."""
    params = getattr(agent, "params_", None)
    if params is None:
        return {"adoption_bias": None, "n_updates": 0}
    return {"adoption_bias": float(params.bias), "n_updates": int(agent.n_updates_)}


def write_run_info(info, path):
    with open(path, "w") as f:
        json.dump(info, f, indent=2, sort_keys=True)
        f.write("\n")


def metrics_filename(arm, seed):
    return f"metrics_{arm}_{seed}.csv"


def write_metrics(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for r in rows:
            writer.writerow([r.t, repr(r.expected_reward), repr(r.optimal_expected_reward),
                             r.realized, repr(r.cum_expected_regret),
                             repr(r.cum_adoption_rate)])


def read_metrics(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != METRICS_HEADER:
            raise ConfigError(f"{path}: unexpected header {header}")
        return [MetricsRow(int(r[0]), float(r[1]), float(r[2]), int(r[3]), float(r[4]),
                           float(r[5])) for r in reader]


def curve_transform(series, group_max=None):
    """``log(x + 1)`` elementwise, divided by ``group_max`` when given.

    Use ``transform_group`` to normalise several arms by their common maximum.
    """
    y = np.asarray(series, dtype=np.float64)
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ContractError("curve_transform needs finite nonnegative values")
    y = np.log1p(y)
    if group_max is not None and group_max > 0:
        y = y / group_max
    return y


def transform_group(curves):
    """Apply ``log(x + 1)`` to every curve and scale by the maximum over all of them."""
    logged = {k: curve_transform(v) for k, v in curves.items()}
    top = max((float(v.max()) for v in logged.values() if v.size), default=0.0)
    if top <= 0:
        return logged
    return {k: v / top for k, v in logged.items()}


class ArmResult(NamedTuple):
    arm: str
    seeds: tuple
    runs: tuple  # one list of MetricsRow per seed
    info: tuple = ()  # one run_info dict per seed

    @property
    def final_aer(self):
        return np.array([rows[-1].cum_expected_regret for rows in self.runs])

    @property
    def final_aar(self):
        return np.array([rows[-1].cum_adoption_rate for rows in self.runs])


def _run_task(args):
    config, seed, outdir = args
    try:
        return run_with_info(config, seed, outdir)
    except DemandBanditError:
        raise
    except Exception as exc:  # surfaced with the arm name attached by sweep()
        raise RuntimeError(f"{type(exc).__name__}: {exc}") from exc


def _n_workers():
    env = os.environ.get("DB_THREADS")
    if env is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(env))
    except ValueError as exc:
        raise ConfigError(f"DB_THREADS must be an integer, got {env!r}") from exc


class SweepError(DemandBanditError):
    def __init__(self, arm, seed, cause):
        super().__init__(f"arm {arm!r} seed {seed} failed: {cause}")
        self.arm = arm
        self.seed = seed


def sweep(configs, outdir=None, workers=None):
    """Run every arm over its seeds; returns ``(arm_results, summary_rows)``."""
    configs = list(configs)
    if not configs:
        raise ConfigError("sweep needs at least one arm")
    arms = [c.arm for c in configs]
    if len(set(arms)) != len(arms):
        raise ConfigError(f"arm names must be unique, got {arms}")
    tasks = [(c, s, outdir) for c in configs for s in c.seeds]
    workers = _n_workers() if workers is None else workers
    results = {}
    if workers <= 1 or len(tasks) == 1:
        for task in tasks:
            try:
                results[task[0].arm, task[1]] = _run_task(task)
            except Exception as exc:
                raise SweepError(task[0].arm, task[1], exc) from exc
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            futures = {(t[0].arm, t[1]): pool.submit(_run_task, t) for t in tasks}
            for key, fut in futures.items():
                try:
                    results[key] = fut.result()
                except Exception as exc:
                    raise SweepError(key[0], key[1], exc) from exc
    arm_results = [ArmResult(c.arm, c.seeds, tuple(results[c.arm, s][0] for s in c.seeds),
                             tuple(results[c.arm, s][1] for s in c.seeds))
                   for c in configs]
    summary = summarize(arm_results)
    if outdir is not None:
        emit_outputs(arm_results, summary, outdir)
    return arm_results, summary


def summarize(arm_results):
    """Seed-mean final AER/AAR per arm, plus each column divided by its max."""
    means = [(r.arm, float(r.final_aer.mean()), float(r.final_aar.mean()), len(r.seeds))
             for r in arm_results]
    max_aer = max(m[1] for m in means)
    max_aar = max(m[2] for m in means)
    return [
        {"arm": arm, "n_seeds": n, "mean_aer": aer, "mean_aar": aar,
         "aer_normalized": aer / max_aer if max_aer > 0 else 0.0,
         "aar_normalized": aar / max_aar if max_aar > 0 else 0.0}
        for arm, aer, aar, n in means
    ]


SUMMARY_HEADER = ("arm", "n_seeds", "mean_aer", "mean_aar", "aer_normalized",
                  "aar_normalized")


def emit_outputs(arm_results, summary, outdir):
    """Per-run metrics CSVs, ``summary.csv`` and the two SVG curve plots."""
    from .plots import write_curves_svg

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for res in arm_results:
        for seed, rows in zip(res.seeds, res.runs):
            write_metrics(rows, outdir / metrics_filename(res.arm, seed))
        for seed, info in zip(res.seeds, res.info):
            write_run_info(info, (outdir / metrics_filename(res.arm, seed)).with_suffix(".json"))
    with open(outdir / "summary.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for row in summary:
            writer.writerow([row["arm"], row["n_seeds"]]
                            + [repr(row[k]) for k in SUMMARY_HEADER[2:]])

    regret = {r.arm: np.mean([[m.cum_expected_regret for m in rows] for rows in r.runs],
                             axis=0) for r in arm_results}
    adoption = {r.arm: np.mean([[m.cum_adoption_rate for m in rows] for rows in r.runs],
                               axis=0) for r in arm_results}
    top = max(float(v.max()) for v in adoption.values())
    adoption = {k: (v / top if top > 0 else v) for k, v in adoption.items()}
    write_curves_svg(transform_group(regret), outdir / "regret.svg",
                     title="Accumulated expected regret, log(x+1), normalized")
    write_curves_svg(adoption, outdir / "adoption.svg",
                     title="Accumulated adoption rate, normalized")


DEFAULT_ARMS = (
    ("random", {"agent_mode": "random-demand"}),
    ("no-dropout", {"dropout_rate": 0.0}),
    ("dropout-20", {"dropout_rate": 0.2}),
    ("dropout-40", {"dropout_rate": 0.4}),
    ("dropout-60", {"dropout_rate": 0.6}),
    ("dropout-80", {"dropout_rate": 0.8}),
    ("dropout-40-no-demand-info", {"dropout_rate": 0.4, "ablation": True}),
)


def default_arms(base=None):
    base = ExperimentConfig() if base is None else base
    return [base.with_overrides(arm=name, **changes) for name, changes in DEFAULT_ARMS]


def load_sweep_config(path):
    """Sweep file: ``{"base": {...}, "arms": [{"arm": ..., overrides...}, ...]}``.

    ``arms`` defaults to the seven standard comparison arms. A bare list of full
    experiment configs is also accepted.
    """
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read sweep config {path}: {exc}") from exc
    if isinstance(data, list):
        return [ExperimentConfig.from_dict(d) for d in data]
    if not isinstance(data, dict):
        raise ConfigError("sweep config must be an object or a list")
    unknown = set(data) - {"base", "arms"}
    if unknown:
        raise ConfigError(f"unknown sweep config keys: {sorted(unknown)}")
    base = data.get("base", {})
    if "arms" not in data:
        return default_arms(ExperimentConfig.from_dict(base))
    configs = []
    for arm in data["arms"]:
        if not isinstance(arm, dict) or "arm" not in arm:
            raise ConfigError("every sweep arm needs an 'arm' name")
        merged = dict(base)
        for key, value in arm.items():
            if key in ("adoption", "log", "agent") and isinstance(value, dict):
                merged[key] = {**merged.get(key, {}), **value}
            else:
                merged[key] = value
        configs.append(ExperimentConfig.from_dict(merged))
    return configs
