import numpy as np
import pytest
from scipy.special import expit
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from demandbandit.agent import (
    DemandBanditAgent,
    PerformanceNormalizer,
    RandomDemandAgent,
    ReplayBuffer,
    TrainingExample,
    build_features,
    feature_dim,
    pooled_history,
    replay_demand,
    thompson_sample_demand,
    train_step,
)
from demandbandit.env import DemandBasis, UnitObservation, kpi_scale, to_raw_demand
from demandbandit.exceptions import ConfigError, ContractError
from demandbandit.network import adam_init, init_params


def observation(budget=500.0):
    a = DemandBasis.random(seed=0).matrix_a
    return UnitObservation(0, a, np.array([0.2, 0.5, 0.3]), budget)


def fill(buffer, n_pos, n_neg, d=16, seed=0):
    rng = np.random.default_rng(seed)
    for label, count in ((1, n_pos), (0, n_neg)):
        for _ in range(count):
            buffer.add(TrainingExample(rng.normal(size=d), rng.random(3), label))


def test_feature_layout():
    assert feature_dim() == 16
    x = build_features(observation(), np.zeros(3), 500.0)
    assert x.shape == (16,)
    np.testing.assert_array_equal(x[9:12], [0.2, 0.5, 0.3])
    np.testing.assert_array_equal(x[12:15], 0.0)
    assert x[15] == 1.0


def test_ablation_zeroes_demand_segments():
    x = build_features(observation(), np.array([0.1, 0.2, 0.7]), 250.0, ablate=True)
    np.testing.assert_array_equal(x[:12], 0.0)
    np.testing.assert_array_equal(x[12:15], [0.1, 0.2, 0.7])
    assert x[15] == 2.0


def test_feature_dimension_mismatch():
    with pytest.raises(ContractError):
        build_features(observation(), np.zeros(2), 500.0)


HISTORY = [(np.array([1.0, 0, 0]), True), (np.array([0, 1.0, 0]), False)]


@pytest.mark.parametrize("mode,expected", [("adopted-only", [1, 0, 0]),
                                           ("all", [0.5, 0.5, 0])])
def test_pooled_history(mode, expected):
    np.testing.assert_array_equal(pooled_history(HISTORY, mode), expected)


def test_pooled_history_empty_and_bad_mode():
    np.testing.assert_array_equal(pooled_history([]), 0.0)
    with pytest.raises(ConfigError):
        pooled_history(HISTORY, "rejected")


def test_performance_normalizer(default_log):
    norm = PerformanceNormalizer(default_log)
    whole = default_log.kpi_values.sum(axis=0)
    np.testing.assert_allclose(norm(whole, default_log.total_cost), 1.0, rtol=1e-12)


def test_buffer_routes_by_label_and_is_fifo():
    buf = ReplayBuffer(4, 16)
    fill(buf, 6, 2)
    assert buf.positives.size == 4 and buf.negatives.size == 2 and len(buf) == 6


@pytest.mark.parametrize("example", [
    TrainingExample(np.zeros(16), np.array([1.0, -1.0, 0]), 1),
    TrainingExample(np.zeros(16), np.array([1.0, np.nan, 0]), 1),
    TrainingExample(np.zeros(16), np.ones(3), 2),
])
def test_buffer_rejects_bad_examples(example):
    with pytest.raises(ContractError):
        ReplayBuffer(4, 16).add(example)


def test_balanced_sample():
    buf = ReplayBuffer(100, 16)
    fill(buf, 20, 80)
    X, V, y = buf.sample_balanced(np.random.default_rng(0), 32)
    assert X.shape == (32, 16) and V.shape == (32, 3)
    assert y.sum() == 16


def _net(rate=0.4, seed=0):
    return init_params(16, 3, (64, 64), rate, np.random.default_rng(seed))


def test_train_step_skips_empty_buffer():
    params = _net()
    assert train_step(ReplayBuffer(10, 16), params, adam_init(params),
                      np.random.default_rng(0)) is None


def test_train_step_waits_for_half_batch_of_positives():
    params = _net()
    buf = ReplayBuffer(200, 16)
    fill(buf, 1, 100)
    state = adam_init(params)
    rng = np.random.default_rng(0)
    for extra in range(15):
        assert train_step(buf, params, state, rng, batch_size=32) is None
        fill(buf, 1, 0, seed=extra + 1)
    assert buf.positives.size == 16
    new, new_state = train_step(buf, params, state, rng, batch_size=32)
    assert new_state["t"] == 1 and state["t"] == 0
    assert not np.array_equal(new.W1, params.W1)


def test_train_step_trajectory_is_deterministic():
    def run():
        params = _net()
        state = adam_init(params)
        buf = ReplayBuffer(100, 16)
        fill(buf, 40, 40)
        rng = np.random.default_rng(11)
        for _ in range(5):
            params, state = train_step(buf, params, state, rng)
        return params

    a, b = run(), run()
    for k, v in a.tensors().items():
        assert v.tobytes() == b.tensors()[k].tobytes()


def test_thompson_without_dropout_is_greedy():
    params = _net(rate=0.0)
    rng = np.random.default_rng(0)
    x = np.ones(16)
    outs = [thompson_sample_demand(params, x, rng)[0] for _ in range(20)]
    assert all(np.array_equal(o, outs[0]) for o in outs)


def test_thompson_reproducible_and_replayable():
    params = _net()
    x = np.linspace(-1, 1, 16)
    w1, s1 = thompson_sample_demand(params, x, np.random.default_rng(3))
    w2, s2 = thompson_sample_demand(params, x, np.random.default_rng(3))
    assert s1 == s2
    np.testing.assert_array_equal(w1, w2)
    np.testing.assert_array_equal(replay_demand(params, x, s1), w1)


def test_thompson_has_spread():
    params = _net()
    rng = np.random.default_rng(0)
    x = np.linspace(-1, 1, 16)
    W = np.array([thompson_sample_demand(params, x, rng)[0] for _ in range(1000)])
    assert np.max(W.var(axis=0, ddof=1)) > 0


def test_sklearn_params_and_clone():
    agent = DemandBanditAgent(dropout_rate=0.2, batch_size=16, random_state=3)
    params = agent.get_params()
    assert params["dropout_rate"] == 0.2 and params["batch_size"] == 16
    twin = clone(agent)
    assert twin.get_params() == params and not hasattr(twin, "params_")
    agent.set_params(dropout_rate=0.6)
    assert agent.dropout_rate == 0.6


def test_unfitted_agent_refuses_to_predict():
    with pytest.raises(NotFittedError):
        DemandBanditAgent().predict(np.zeros((1, 16)))


def _synthetic(n=1200, seed=0):
    # adoption driven by the GMV component only
    rng = np.random.default_rng(seed)
    X = np.tile(np.linspace(0, 1, 16), (n, 1))
    V = rng.gamma(2.0, 1.0, size=(n, 3))
    y = (rng.random(n) < expit(2.0 * V[:, 2] - 4.0)).astype(int)
    return X, V, y


def test_fit_learns_the_driving_kpi():
    X, V, y = _synthetic()
    agent = DemandBanditAgent(dropout_rate=0.0, learning_rate=1e-2, random_state=0)
    agent.fit(X, V, y, n_steps=300)
    w = agent.decision_function(X[:1])[0]
    assert np.argmax(w) == 2
    proba = agent.predict_proba(X[:5], V[:5])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)


def test_partial_fit_counts_updates_and_wrong_width():
    X, V, y = _synthetic(200)
    agent = DemandBanditAgent(random_state=0)
    agent.partial_fit(X[:10], V[:10], y[:10])
    assert agent.n_features_in_ == 16
    agent.partial_fit(X, V, y)
    assert agent.n_updates_ >= 1
    with pytest.raises(ContractError):
        agent.partial_fit(np.zeros((1, 15)), V[:1], y[:1])


def test_bias_warm_start_centres_first_batch():
    X, V, y = _synthetic(400)
    agent = DemandBanditAgent(train_steps_per_update=0, random_state=0)
    agent.partial_fit(X, V, y)
    assert agent.params_.bias != 0.0
    p = agent.predict_proba(X, V)[:, 1]
    mean_pos, mean_neg = p[y == 1].mean(), p[y == 0].mean()
    assert mean_neg < 0.5 < mean_pos


def test_bidding_units_follow_kpi_scale(small_log):
    scale = kpi_scale(small_log)
    agent = DemandBanditAgent(kpi_scale=scale, random_state=1).initialize(16)
    x = np.ones((1, 16))
    np.testing.assert_allclose(agent.predict(x), to_raw_demand(agent.decision_function(x),
                                                               scale))


def test_same_seed_same_samples():
    a = DemandBanditAgent(random_state=4).initialize(16)
    b = DemandBanditAgent(random_state=4).initialize(16)
    x = np.ones(16)
    for _ in range(5):
        np.testing.assert_array_equal(a.sample_demand(x)[0], b.sample_demand(x)[0])


def test_random_agent(small_log):
    agent = RandomDemandAgent(kpi_scale=kpi_scale(small_log), random_state=0).fit(
        np.zeros((1, 16)))
    W = agent.predict(np.zeros((100, 16)))
    np.testing.assert_allclose(W.sum(axis=1), 1.0)
    assert np.all(W >= 0)
    w, seed = agent.sample_demand(np.zeros(16))
    assert seed is None and w.shape == (3,)
    assert clone(agent).get_params()["random_state"] == 0
