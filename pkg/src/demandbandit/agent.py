"""Contextual-bandit agent that learns advertiser demand.

``DemandBanditAgent`` follows the scikit-learn estimator conventions
(constructor only stores hyperparameters, learned state ends in ``_``,
``get_params``/``set_params`` via ``BaseEstimator``) so it can be cloned and
grid-searched. The lower-level functions below are what it is built from and
are usable on their own.

Feature layout (version 1), for ``n`` KPIs and ``m`` typical demands::

    [ A.ravel() (n*m) | c (m) | pooled history demand (n) | budget / budget_mid (1) ]
"""
import json
from collections import namedtuple
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_int, check_positive, check_probability, check_random_state
from .bidlog import N_KPIS
from .env import kpi_scale, to_raw_demand
from .exceptions import ConfigError, ContractError
from .network import (
    AdamHyper,
    NetworkParams,
    TENSOR_NAMES,
    adam_init,
    adam_step,
    backward,
    forward,
    init_params,
    predict_adoption,
    sample_mask,
)

FEATURE_LAYOUT_VERSION = 1
CHECKPOINT_VERSION = 1
HISTORY_MODES = ("adopted-only", "all")


def feature_dim(n=N_KPIS, m=N_KPIS):
    return n * m + m + n + 1


def build_features(observation, pooled, budget_mid, ablate=False):
    """Concatenate the observable unit state into a fixed-layout vector.

    With ``ablate=True`` the demand-related segments (A and c) are zeroed but
    keep their positions.
    """
    a = np.asarray(observation.matrix_a, dtype=np.float64)
    c = np.asarray(observation.feature_c, dtype=np.float64)
    pooled = np.asarray(pooled, dtype=np.float64)
    n, m = a.shape
    if c.shape != (m,) or pooled.shape != (n,):
        raise ContractError(f"feature segments disagree: A{a.shape} c{c.shape} "
                            f"history{pooled.shape}")
    budget_mid = check_positive(budget_mid, "budget_mid")
    demand_part = np.zeros(n * m + m) if ablate else np.concatenate([a.ravel(), c])
    x = np.concatenate([demand_part, pooled, [observation.budget / budget_mid]])
    if not np.all(np.isfinite(x)):
        raise ContractError("non-finite feature value")
    return x


def pooled_history(history, mode="adopted-only", n=N_KPIS):
    """Mean recommended demand over ``history`` (an ``AdUnit`` or its list)."""
    if mode not in HISTORY_MODES:
        raise ConfigError(f"history mode must be one of {HISTORY_MODES}, got {mode!r}")
    history = getattr(history, "adoption_history", history)
    chosen = [w for w, adopted in history if adopted or mode == "all"]
    if not chosen:
        return np.zeros(n)
    return np.mean(chosen, axis=0)


class PerformanceNormalizer:
    """Scales a KPI vector by what the budget would buy at log-average rates.

    ``scale_i`` is the log-wide KPI ``i`` per unit of cost, so a budget spent
    on a random slice of the log maps to roughly ``(1, 1, 1)``.
    """

    def __init__(self, log):
        self.scale = kpi_scale(log)

    def __call__(self, v, budget):
        return np.asarray(v, dtype=np.float64) / (self.scale * budget)


TrainingExample = namedtuple("TrainingExample", ["features", "perf_norm", "label"])


class _Pool:
    """Fixed-capacity FIFO of examples backed by preallocated arrays."""

    def __init__(self, capacity, n_features, n_kpis):
        self.X = np.zeros((capacity, n_features))
        self.V = np.zeros((capacity, n_kpis))
        self.capacity = capacity
        self.size = 0
        self._next = 0

    def add(self, x, v):
        self.X[self._next] = x
        self.V[self._next] = v
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng, k):
        idx = rng.integers(self.size, size=k)
        return self.X[idx], self.V[idx]


class ReplayBuffer:
    """Separate FIFO pools for adopted (label 1) and rejected (label 0) rounds."""

    def __init__(self, capacity, n_features, n_kpis=N_KPIS):
        self.capacity = check_int(capacity, "capacity", minimum=1)
        self.positives = _Pool(capacity, n_features, n_kpis)
        self.negatives = _Pool(capacity, n_features, n_kpis)

    def add(self, example):
        perf = np.asarray(example.perf_norm, dtype=np.float64)
        if not np.all(np.isfinite(perf)) or np.any(perf < 0):
            raise ContractError("perf_norm must be finite and nonnegative")
        if example.label not in (0, 1):
            raise ContractError(f"label must be 0 or 1, got {example.label!r}")
        pool = self.positives if example.label == 1 else self.negatives
        pool.add(example.features, perf)

    def __len__(self):
        return self.positives.size + self.negatives.size

    def can_sample(self, batch_size):
        half = batch_size // 2
        return self.positives.size >= half and self.negatives.size >= half

    def sample_balanced(self, rng, batch_size):
        """``batch_size // 2`` draws with replacement from each pool."""
        half = batch_size // 2
        Xp, Vp = self.positives.sample(rng, half)
        Xn, Vn = self.negatives.sample(rng, half)
        y = np.concatenate([np.ones(half), np.zeros(half)])
        return np.vstack([Xp, Xn]), np.vstack([Vp, Vn]), y


def train_step(buffer, params, opt_state, rng, hyper=AdamHyper(), batch_size=32):
    """One balanced mini-batch Adam update, or ``None`` if a pool is too small."""
    if batch_size < 2 or not buffer.can_sample(batch_size):
        return None
    X, V, y = buffer.sample_balanced(rng, batch_size)
    masks = sample_mask(params, rng, n=X.shape[0])
    _, grads = backward(params, X, V, y, masks)
    return adam_step(params, grads, opt_state, hyper)


def thompson_sample_demand(params, x, rng):
    """Draw one dropout mask (one posterior sample) and act greedily under it."""
    mask_seed = int(rng.integers(2 ** 63))
    mask = sample_mask(params, np.random.default_rng(mask_seed))
    return forward(params, x, mask), mask_seed


def replay_demand(params, x, mask_seed):
    """Recompute the demand a past ``thompson_sample_demand`` call produced."""
    return forward(params, x, sample_mask(params, np.random.default_rng(mask_seed)))


def save_checkpoint(params, path):
    """Write ``<path>.bin`` (raw little-endian float64) and ``<path>.json`` manifest."""
    path = Path(path)
    manifest = {"version": CHECKPOINT_VERSION, "dtype": "<f8",
                "dropout_rate": params.dropout_rate, "tensors": []}
    offset = 0
    chunks = []
    for name, value in params.tensors().items():
        value = np.asarray(value, dtype="<f8")
        manifest["tensors"].append({"name": name, "shape": list(value.shape),
                                    "offset": offset})
        offset += value.size
        chunks.append(value.ravel())
    np.concatenate(chunks).tofile(path.with_suffix(".bin"))
    with open(path.with_suffix(".json"), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def load_checkpoint(path):
    path = Path(path)
    with open(path.with_suffix(".json")) as f:
        manifest = json.load(f)
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {manifest.get('version')!r}")
    flat = np.fromfile(path.with_suffix(".bin"), dtype=manifest["dtype"])
    tensors = {}
    for entry in manifest["tensors"]:
        size = int(np.prod(entry["shape"], dtype=int))
        chunk = flat[entry["offset"]:entry["offset"] + size]
        if chunk.size != size:
            raise ConfigError(f"checkpoint data truncated at tensor {entry['name']}")
        tensors[entry["name"]] = chunk.reshape(entry["shape"]).astype(np.float64)
    if set(tensors) != set(TENSOR_NAMES):
        raise ConfigError(f"checkpoint tensors {sorted(tensors)} incomplete")
    return NetworkParams(**tensors, dropout_rate=manifest["dropout_rate"])


class DemandBanditAgent(BaseEstimator):
    """Dropout-Thompson-sampling demand estimator.

    Parameters
    ----------
    hidden_sizes : tuple of int, default=(64, 64)
    dropout_rate : float, default=0.4
        Zero turns Thompson sampling into greedy action selection.
    learning_rate, beta1, beta2, epsilon : float
        Adam hyperparameters.
    batch_size : int, default=32
        Split 1:1 between adopted and rejected examples.
    buffer_capacity : int, default=2048
        Per class.
    train_steps_per_update : int, default=1
        Mini-batch updates run by each ``partial_fit`` call.
    kpi_scale : array-like or None
        KPI per unit cost of the bid log. When given, the network's softmax
        output is read as a demand over budget-normalised KPIs (the units of
        ``perf_norm``) and ``sample_demand``/``predict`` return the equivalent
        raw-KPI demand, ready for the bidding oracle.
    random_state : int, Generator or None

    Attributes
    ----------
    params_ : NetworkParams
    buffer_ : ReplayBuffer
    n_features_in_ : int
    n_updates_ : int
        Mini-batch steps actually taken (skipped ones excluded).
    """

    def __init__(self, hidden_sizes=(64, 64), dropout_rate=0.4, learning_rate=1e-3,
                 beta1=0.9, beta2=0.999, epsilon=1e-8, batch_size=32,
                 buffer_capacity=2048, train_steps_per_update=1, n_kpis=N_KPIS,
                 kpi_scale=None, random_state=None):
        self.hidden_sizes = hidden_sizes
        self.dropout_rate = dropout_rate
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.buffer_capacity = buffer_capacity
        self.train_steps_per_update = train_steps_per_update
        self.n_kpis = n_kpis
        self.kpi_scale = kpi_scale
        self.random_state = random_state

    def _to_bidding(self, w):
        return w if self.kpi_scale is None else to_raw_demand(w, self.kpi_scale)

    def _hyper(self):
        return AdamHyper(self.learning_rate, self.beta1, self.beta2, self.epsilon)

    def _initialize(self, n_features):
        check_probability(self.dropout_rate, "dropout_rate")
        check_int(self.batch_size, "batch_size", minimum=2)
        self.rng_ = check_random_state(self.random_state)
        self.params_ = init_params(n_features, self.n_kpis, tuple(self.hidden_sizes),
                                   self.dropout_rate, self.rng_)
        self.opt_state_ = adam_init(self.params_)
        self.buffer_ = ReplayBuffer(self.buffer_capacity, n_features, self.n_kpis)
        self.n_features_in_ = n_features
        self.n_updates_ = 0
        return self

    def initialize(self, n_features):
        """Allocate fresh network, optimizer state and buffer."""
        return self._initialize(check_int(n_features, "n_features", minimum=1))

    def _validate_X(self, X):
        X = check_array(X, dtype=np.float64, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"X has {X.shape[1]} features, "
                                f"agent was built for {self.n_features_in_}")
        return X

    def sample_demand(self, x):
        """Thompson-sampled demand for a single feature vector."""
        check_is_fitted(self, "params_")
        x = self._validate_X(np.reshape(x, (1, -1)))[0]
        w, mask_seed = thompson_sample_demand(self.params_, x, self.rng_)
        return self._to_bidding(w), mask_seed

    def predict(self, X):
        """Inference-mode demand vectors (bidding units), one row per sample."""
        return self._to_bidding(self.decision_function(X))

    def decision_function(self, X):
        """Raw network output: the demand in the units of ``perf_norm``."""
        check_is_fitted(self, "params_")
        return forward(self.params_, self._validate_X(X))

    def predict_proba(self, X, V):
        """Columns ``[P(reject), P(adopt)]`` under the inference-mode network."""
        p = predict_adoption(self.decision_function(X), np.asarray(V, dtype=np.float64),
                             float(self.params_.bias))
        return np.column_stack([1.0 - p, p])

    def partial_fit(self, X, V, y):
        """Store new ``(features, perf_norm, label)`` rows, then train.

        ``V`` must already be normalised (see ``PerformanceNormalizer``).
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if not hasattr(self, "params_"):
            self._initialize(X.shape[1])
        X = self._validate_X(X)
        V = check_array(np.atleast_2d(V), dtype=np.float64)
        y = np.asarray(y).ravel()
        if V.shape != (X.shape[0], self.n_kpis) or y.shape != (X.shape[0],):
            raise ContractError("X, V and y disagree in length")
        for x, v, label in zip(X, V, y):
            self.buffer_.add(TrainingExample(x, v, int(label)))
        if self.n_updates_ == 0 and self.buffer_.can_sample(self.batch_size):
            self._warm_start_bias()
        for _ in range(self.train_steps_per_update):
            out = train_step(self.buffer_, self.params_, self.opt_state_, self.rng_,
                             self._hyper(), self.batch_size)
            if out is None:
                break
            self.params_, self.opt_state_ = out
            self.n_updates_ += 1
        return self

    def _warm_start_bias(self):
        """Set the logit bias so the first balanced batch starts at p = 0.5 on average.

        Without this the network, not the bias, absorbs the initial
        miscalibration by collapsing its demand onto the smallest KPI.
        """
        logits = []
        for pool in (self.buffer_.positives, self.buffer_.negatives):
            w = forward(self.params_, pool.X[:pool.size])
            logits.append(np.mean((w * pool.V[:pool.size]).sum(axis=1)))
        tensors = self.params_.tensors()
        tensors["bias"] = np.array(-0.5 * (logits[0] + logits[1]))
        self.params_ = self.params_.replace(tensors)

    def fit(self, X, V, y, n_steps=200):
        """Reset, load the replay buffer with ``(X, V, y)`` and run ``n_steps`` updates."""
        X = check_array(X, dtype=np.float64)
        self._initialize(X.shape[1])
        steps, self.train_steps_per_update = self.train_steps_per_update, 0
        try:
            self.partial_fit(X, V, y)
        finally:
            self.train_steps_per_update = steps
        if self.buffer_.can_sample(self.batch_size):
            self._warm_start_bias()
        for _ in range(n_steps):
            out = train_step(self.buffer_, self.params_, self.opt_state_, self.rng_,
                             self._hyper(), self.batch_size)
            if out is None:
                break
            self.params_, self.opt_state_ = out
            self.n_updates_ += 1
        return self


class RandomDemandAgent(BaseEstimator):
    """Baseline that ignores its input and recommends a uniform simplex draw.

    With ``kpi_scale`` the draw is uniform over budget-normalised demands,
    the same action space a ``DemandBanditAgent`` with that scale uses.
    """

    def __init__(self, n_kpis=N_KPIS, kpi_scale=None, random_state=None):
        self.n_kpis = n_kpis
        self.kpi_scale = kpi_scale
        self.random_state = random_state

    def _draw(self, size=None):
        w = self.rng_.dirichlet(np.ones(self.n_kpis), size=size)
        return w if self.kpi_scale is None else to_raw_demand(w, self.kpi_scale)

    def initialize(self, n_features):
        self.rng_ = check_random_state(self.random_state)
        self.n_features_in_ = n_features
        return self

    def sample_demand(self, x):
        check_is_fitted(self, "rng_")
        return self._draw(), None

    def predict(self, X):
        check_is_fitted(self, "rng_")
        X = check_array(X)
        return self._draw(X.shape[0])

    def fit(self, X, V=None, y=None):
        return self.initialize(check_array(X).shape[1])

    def partial_fit(self, X, V, y):
        return self
