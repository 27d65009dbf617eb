"""Demand network: a two-hidden-layer ReLU MLP with a softmax head.

The network maps a feature vector ``x`` to a demand vector ``w`` on the
simplex. Adoption is modelled as ``sigmoid(w . v + b)`` where ``v`` is the
normalised performance of the strategy bid with ``w`` and ``b`` a trainable
logit bias. ``v`` is an input constant: no gradient flows into the bidding
oracle. Everything runs in float64.

Dropout is inverted (kept units are scaled by ``1 / (1 - rate)``) and sits
after each hidden ReLU. A sampled dropout mask is one draw of network
parameters for Thompson sampling.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._validation import check_probability
from .exceptions import ContractError

PROB_CLAMP = 1e-12
TENSOR_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "bias")


@dataclass(eq=False)
class NetworkParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    bias: np.ndarray
    dropout_rate: float = 0.0

    def __post_init__(self):
        check_probability(self.dropout_rate, "dropout_rate")
        d, h1 = self.W1.shape
        h2 = self.W2.shape[1]
        n = self.W3.shape[1]
        expected = {"b1": (h1,), "W2": (h1, h2), "b2": (h2,), "W3": (h2, n),
                    "b3": (n,), "bias": ()}
        for name, shape in expected.items():
            if np.shape(getattr(self, name)) != shape:
                raise ContractError(f"{name} has shape {np.shape(getattr(self, name))}, "
                                    f"expected {shape}")

    @property
    def n_features(self):
        return self.W1.shape[0]

    @property
    def n_outputs(self):
        return self.W3.shape[1]

    @property
    def hidden_sizes(self):
        return (self.W1.shape[1], self.W2.shape[1])

    def tensors(self):
        return {name: getattr(self, name) for name in TENSOR_NAMES}

    def replace(self, tensors):
        return NetworkParams(**tensors, dropout_rate=self.dropout_rate)

    def copy(self):
        return self.replace({k: v.copy() for k, v in self.tensors().items()})


def init_params(n_features, n_outputs, hidden_sizes=(64, 64), dropout_rate=0.0, rng=None):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and layer biases."""
    rng = np.random.default_rng(rng)
    sizes = (n_features, *hidden_sizes, n_outputs)
    tensors = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        bound = 1.0 / np.sqrt(fan_in)
        tensors[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        tensors[f"b{i}"] = rng.uniform(-bound, bound, size=fan_out)
    tensors["bias"] = np.array(0.0)
    return NetworkParams(**tensors, dropout_rate=dropout_rate)


@dataclass(frozen=True, eq=False)
class DropoutMask:
    """Per-hidden-layer masks with entries in ``{0, scale}``.

    ``layers[i]`` has shape ``(h_i,)`` for a single forward pass or
    ``(N, h_i)`` for a batch with one mask per example.
    """

    layers: tuple
    scale: float


def sample_mask(params, rng, n=None):
    rate = params.dropout_rate
    scale = 1.0 / (1.0 - rate)
    layers = []
    for h in params.hidden_sizes:
        shape = (h,) if n is None else (n, h)
        if rate == 0.0:
            layers.append(np.ones(shape))
        else:
            layers.append((rng.random(shape) >= rate) * scale)
    return DropoutMask(tuple(layers), scale)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(params, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != params.n_features:
        raise ContractError(f"expected {params.n_features} features, got {X.shape[-1]}")
    return X


def _forward_cache(params, X, mask):
    a1 = X @ params.W1 + params.b1
    h1 = np.maximum(a1, 0.0)
    if mask is not None:
        h1 = h1 * mask.layers[0]
    a2 = h1 @ params.W2 + params.b2
    h2 = np.maximum(a2, 0.0)
    if mask is not None:
        h2 = h2 * mask.layers[1]
    w = softmax(h2 @ params.W3 + params.b3)
    return {"X": X, "a1": a1, "h1": h1, "a2": a2, "h2": h2, "w": w}


def forward(params, x, mask=None):
    """Demand vector(s) for ``x``; ``mask=None`` is inference mode."""
    x = _check_input(params, x)
    if mask is not None:
        shapes = tuple(np.shape(m)[-1] for m in mask.layers)
        if shapes != params.hidden_sizes:
            raise ContractError(f"mask widths {shapes} do not match {params.hidden_sizes}")
    return _forward_cache(params, x, mask)["w"]


def predict_adoption(w, perf_norm, bias=0.0):
    """``sigmoid(w . perf_norm + bias)``, row-wise for 2-d input."""
    w = np.asarray(w, dtype=np.float64)
    perf_norm = np.asarray(perf_norm, dtype=np.float64)
    if w.shape != perf_norm.shape:
        raise ContractError(f"shape mismatch: w {w.shape} vs perf_norm {perf_norm.shape}")
    return expit((w * perf_norm).sum(axis=-1) + bias)


def _batch(params, X, V, y):
    X = _check_input(params, X)
    V = np.asarray(V, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractError("batch must be a nonempty 2-d array")
    if V.shape != (X.shape[0], params.n_outputs) or y.shape != (X.shape[0],):
        raise ContractError(f"inconsistent batch shapes X{X.shape} V{V.shape} y{y.shape}")
    return X, V, y


def _bce(p, y):
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))


def loss(params, X, V, y, masks=None):
    """Mean binary cross-entropy of the adoption head over a batch."""
    X, V, y = _batch(params, X, V, y)
    w = _forward_cache(params, X, masks)["w"]
    return float(_bce(predict_adoption(w, V, params.bias), y))


def backward(params, X, V, y, masks=None):
    """Loss and exact gradients (dict keyed like ``NetworkParams.tensors``).

    The probability clamp inside the log has zero slope outside
    ``[1e-12, 1 - 1e-12]``, so saturated examples contribute no gradient.
    """
    X, V, y = _batch(params, X, V, y)
    c = _forward_cache(params, X, masks)
    w = c["w"]
    p = predict_adoption(w, V, params.bias)
    n = X.shape[0]
    inside = (p >= PROB_CLAMP) & (p <= 1.0 - PROB_CLAMP)
    d_logit = np.where(inside, p - y, 0.0) / n

    d_w = d_logit[:, None] * V
    d_z = w * (d_w - (d_w * w).sum(axis=1, keepdims=True))
    grads = {"bias": np.array(d_logit.sum()), "W3": c["h2"].T @ d_z, "b3": d_z.sum(axis=0)}
    d_h2 = d_z @ params.W3.T
    if masks is not None:
        d_h2 = d_h2 * masks.layers[1]
    d_a2 = d_h2 * (c["a2"] > 0)
    grads["W2"] = c["h1"].T @ d_a2
    grads["b2"] = d_a2.sum(axis=0)
    d_h1 = d_a2 @ params.W2.T
    if masks is not None:
        d_h1 = d_h1 * masks.layers[0]
    d_a1 = d_h1 * (c["a1"] > 0)
    grads["W1"] = X.T @ d_a1
    grads["b1"] = d_a1.sum(axis=0)
    return float(_bce(p, y)), grads


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params):
    zeros = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.tensors().items()}
    return {"t": 0, "m": zeros, "v": {k: z.copy() for k, z in zeros.items()}}


def adam_step(params, grads, state, hyper=AdamHyper()):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    t = state["t"] + 1
    b1, b2 = hyper.beta1, hyper.beta2
    new_tensors, m_new, v_new = {}, {}, {}
    for name, value in params.tensors().items():
        g = grads[name]
        if np.shape(g) != np.shape(value) or np.shape(state["m"][name]) != np.shape(value):
            raise ContractError(f"optimizer state/gradient shape mismatch for {name}")
        m = b1 * state["m"][name] + (1.0 - b1) * g
        v = b2 * state["v"][name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_tensors[name] = value - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
        m_new[name], v_new[name] = m, v
    return params.replace(new_tensors), {"t": t, "m": m_new, "v": v_new}
