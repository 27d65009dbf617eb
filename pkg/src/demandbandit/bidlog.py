"""Synthetic auction logs: generation and CSV persistence.

Each impression carries three KPI contributions, in order:

* page view (always exactly 1),
* click probability ``ctr``,
* expected GMV ``ctr * cvr * price``,

and a market clearing ``cost`` that is paid in full when the impression is won.

On disk a log is a CSV file with header ``id,ctr,cvr,price,cost`` plus a JSON
sidecar ``<path>.meta.json`` holding the schema version, seed and generation
parameters. Floats are written with ``repr`` so a save/load round trip is exact.
"""
import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ._validation import check_int, check_positive
from .exceptions import (
    ConfigError,
    InvariantViolationError,
    LogIOError,
    MalformedLogError,
    SchemaVersionError,
)

SCHEMA_VERSION = 1
CSV_COLUMNS = ("id", "ctr", "cvr", "price", "cost")
N_KPIS = 3
KPI_NAMES = ("PV", "Click Number", "GMV")


@dataclass(frozen=True)
class LogGenParams:
    n_impressions: int = 10000
    ctr_alpha: float = 2.0
    ctr_beta: float = 50.0
    cvr_alpha: float = 2.0
    cvr_beta: float = 30.0
    price_mu: float = 4.0
    price_sigma: float = 0.5
    cost_base: float = 100.0
    cost_noise: float = 0.3

    def __post_init__(self):
        check_int(self.n_impressions, "n_impressions", minimum=1)
        for name in ("ctr_alpha", "ctr_beta", "cvr_alpha", "cvr_beta",
                     "price_sigma", "cost_base"):
            check_positive(getattr(self, name), name)
        if not np.isfinite(self.price_mu):
            raise ConfigError(f"price_mu must be finite, got {self.price_mu!r}")
        check_positive(self.cost_noise, "cost_noise", allow_zero=True)
        if self.cost_noise >= 1.0:
            raise ConfigError("cost_noise must be < 1 so that costs stay positive")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown log parameters: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Impression:
    id: int
    kpi_values: tuple
    cost: float


def _readonly(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BidLog:
    """An immutable, ordered collection of impressions stored column-wise."""

    ctr: np.ndarray
    cvr: np.ndarray
    price: np.ndarray
    cost: np.ndarray
    rng_seed: int = None
    generation_params: LogGenParams = field(default=None)

    def __post_init__(self):
        cols = {}
        for name in ("ctr", "cvr", "price", "cost"):
            cols[name] = _readonly(getattr(self, name))
            object.__setattr__(self, name, cols[name])
        lengths = {a.shape for a in cols.values()}
        if len(lengths) != 1 or cols["ctr"].ndim != 1:
            raise InvariantViolationError(f"column shapes disagree: {lengths}")
        _check_columns(**cols)

    def __len__(self):
        return self.cost.shape[0]

    def __eq__(self, other):
        if not isinstance(other, BidLog):
            return NotImplemented
        return (
            self.rng_seed == other.rng_seed
            and self.generation_params == other.generation_params
            and all(np.array_equal(getattr(self, c), getattr(other, c))
                    for c in ("ctr", "cvr", "price", "cost"))
        )

    __hash__ = None

    @cached_property
    def kpi_values(self):
        """``(len, 3)`` array of per-impression KPI contributions."""
        kpi = np.column_stack([np.ones_like(self.ctr), self.ctr,
                               self.ctr * self.cvr * self.price])
        kpi.setflags(write=False)
        return kpi

    @cached_property
    def total_cost(self):
        # correctly rounded, so it does not depend on summation order
        return math.fsum(self.cost)

    def __getitem__(self, i):
        i = range(len(self))[i]
        return Impression(id=i, kpi_values=tuple(float(x) for x in self.kpi_values[i]),
                          cost=float(self.cost[i]))

    @property
    def impressions(self):
        return [self[i] for i in range(len(self))]


def _check_columns(ctr, cvr, price, cost):
    if not all(np.all(np.isfinite(a)) for a in (ctr, cvr, price, cost)):
        raise InvariantViolationError("log contains non-finite values")
    if np.any((ctr < 0) | (ctr > 1)):
        raise InvariantViolationError("click probability outside [0, 1]")
    if np.any((cvr < 0) | (cvr > 1)):
        raise InvariantViolationError("conversion probability outside [0, 1]")
    if np.any(price < 0):
        raise InvariantViolationError("negative item price")
    bad = np.flatnonzero(cost <= 0)
    if bad.size:
        raise InvariantViolationError(f"nonpositive cost at id {int(bad[0])}")


def generate_log(params=None, seed=0):
    """Draw a synthetic log; ``(params, seed)`` fully determine the result."""
    params = LogGenParams() if params is None else params
    seed = check_int(seed, "seed", minimum=0)
    rng = np.random.default_rng(seed)
    n = params.n_impressions
    ctr = rng.beta(params.ctr_alpha, params.ctr_beta, size=n)
    cvr = rng.beta(params.cvr_alpha, params.cvr_beta, size=n)
    price = rng.lognormal(params.price_mu, params.price_sigma, size=n)
    noise = rng.uniform(-params.cost_noise, params.cost_noise, size=n)
    # a zero ctr draw would give a free impression
    ctr = np.maximum(ctr, np.finfo(np.float64).tiny)
    cost = params.cost_base * ctr * (1.0 + noise)
    return BidLog(ctr, cvr, price, cost, rng_seed=seed, generation_params=params)


def _meta_path(path):
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def save_log(log, path):
    path = Path(path)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "rng_seed": log.rng_seed,
        "generation_params": (None if log.generation_params is None
                              else log.generation_params.to_dict()),
        "n_impressions": len(log),
    }
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for i in range(len(log)):
                writer.writerow([i, repr(float(log.ctr[i])), repr(float(log.cvr[i])),
                                 repr(float(log.price[i])), repr(float(log.cost[i]))])
        with open(_meta_path(path), "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as exc:
        raise LogIOError(f"cannot write log to {path}: {exc}") from exc


def load_log(path):
    path = Path(path)
    try:
        with open(_meta_path(path)) as f:
            meta = json.load(f)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    except json.JSONDecodeError as exc:
        raise MalformedLogError(f"bad metadata sidecar for {path}: {exc}") from exc
    except OSError as exc:
        raise LogIOError(f"cannot read log {path}: {exc}") from exc

    if not isinstance(meta, dict) or "schema_version" not in meta:
        raise MalformedLogError(f"metadata for {path} lacks schema_version")
    if meta["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: schema version {meta['schema_version']!r}, "
            f"this build reads {SCHEMA_VERSION}")
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise MalformedLogError(f"{path}: header must be {','.join(CSV_COLUMNS)}")
    body = rows[1:]
    if not body:
        raise MalformedLogError(f"{path}: no impressions")
    if any(len(r) != len(CSV_COLUMNS) for r in body):
        raise MalformedLogError(f"{path}: ragged rows")
    try:
        data = np.array([[float(x) for x in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise MalformedLogError(f"{path}: non-numeric field ({exc})") from exc
    if not np.array_equal(data[:, 0], np.arange(len(body))):
        raise InvariantViolationError(f"{path}: ids must be 0..n-1 without gaps")

    params = meta.get("generation_params")
    try:
        params = None if params is None else LogGenParams.from_dict(params)
    except (ConfigError, TypeError) as exc:
        raise MalformedLogError(f"{path}: bad generation_params ({exc})") from exc
    return BidLog(data[:, 1], data[:, 2], data[:, 3], data[:, 4],
                  rng_seed=meta.get("rng_seed"), generation_params=params)
