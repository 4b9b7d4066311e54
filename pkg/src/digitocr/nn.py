"""Fully connected digit classifier trained with Adam.

The default network is 784 -> 128 -> 10 with ReLU hidden units, a softmax
output and no bias terms. All arithmetic is float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ACTIVATIONS",
    "Model",
    "AdamState",
    "TrainConfig",
    "Gradients",
    "EpochMetrics",
    "ModelFormatError",
    "BadMagicError",
    "TruncatedModelError",
    "ModelShapeError",
    "relu",
    "sigmoid",
    "tanh_act",
    "softmax",
    "init_model",
    "forward",
    "forward_batch",
    "loss_cross_entropy",
    "backward",
    "backward_batch",
    "adam_step",
    "train",
    "evaluate",
    "predict",
    "predict_proba",
    "save_model",
    "load_model",
]


def relu(x):
    return np.maximum(0.0, np.asarray(x, dtype=np.float64))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh_act(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def softmax(x):
    """Softmax over the last axis, shifted by the max for stability."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _relu_grad(z, a):
    return (z > 0).astype(np.float64)


def _sigmoid_grad(z, a):
    return a * (1.0 - a)


def _tanh_grad(z, a):
    return 1.0 - a * a


# name -> (function, derivative given (pre, post), file code)
ACTIVATIONS: dict[str, tuple[Callable, Callable, int]] = {
    "relu": (relu, _relu_grad, 0),
    "sigmoid": (sigmoid, _sigmoid_grad, 1),
    "tanh": (tanh_act, _tanh_grad, 2),
}
_CODE_TO_ACT = {code: name for name, (_, _, code) in ACTIVATIONS.items()}


@dataclass
class Model:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]                 # (fan_in, fan_out) per transition
    biases: list[np.ndarray] | None = None    # (fan_out,) per transition
    hidden_activation: str = "relu"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"bad layer dims {self.layer_dims}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        if len(self.weights) != len(self.layer_dims) - 1:
            raise ValueError("one weight matrix per layer transition is required")
        for i, w in enumerate(self.weights):
            if w.shape != (self.layer_dims[i], self.layer_dims[i + 1]):
                raise ValueError(f"weight {i} has shape {w.shape}")
        if self.biases is not None:
            if len(self.biases) != len(self.weights):
                raise ValueError("one bias vector per layer transition is required")
            for i, b in enumerate(self.biases):
                if b.shape != (self.layer_dims[i + 1],):
                    raise ValueError(f"bias {i} has shape {b.shape}")

    @property
    def params(self) -> list[np.ndarray]:
        return list(self.weights) + (list(self.biases) if self.biases is not None else [])

    def with_params(self, params: Sequence[np.ndarray]) -> "Model":
        n = len(self.weights)
        biases = list(params[n:]) if self.biases is not None else None
        return replace(self, weights=list(params[:n]), biases=biases)

    def copy(self) -> "Model":
        return self.with_params([p.copy() for p in self.params])


def init_model(layer_dims: Sequence[int] = (784, 128, 10), seed: int = 42,
               hidden_activation: str = "relu", use_bias: bool = False) -> Model:
    """Glorot-uniform weights from a seeded generator; biases start at zero."""
    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
    biases = [np.zeros(d) for d in layer_dims[1:]] if use_bias else None
    return Model(tuple(layer_dims), weights, biases, hidden_activation)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray] | None = None

    @property
    def tensors(self) -> list[np.ndarray]:
        return list(self.weights) + (list(self.biases) if self.biases is not None else [])


def forward_batch(model: Model, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Class probabilities for each row of ``x`` (n, fan_in).

    The cache keeps the input, every pre-activation and every post-activation.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ValueError(f"expected inputs of width {model.layer_dims[0]}, got shape {x.shape}")
    act = ACTIVATIONS[model.hidden_activation][0]
    a = x
    pre, post = [], [x]
    last = len(model.weights) - 1
    for i, w in enumerate(model.weights):
        z = a @ w
        if model.biases is not None:
            z = z + model.biases[i]
        a = softmax(z) if i == last else act(z)
        pre.append(z)
        post.append(a)
    return a, {"pre": pre, "post": post}


def forward(model: Model, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Probabilities for one input (a flat vector or a 28x28 glyph)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.layer_dims[0]:
        raise ValueError(f"expected {model.layer_dims[0]} inputs, got {x.shape[0]}")
    probs, cache = forward_batch(model, x[None, :])
    return probs[0], cache


def loss_cross_entropy(probs: np.ndarray, label) -> float:
    """-ln p[label], with p floored at 1e-15. Batched inputs give the mean."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        return float(-np.log(max(probs[int(label)], 1e-15)))
    labels = np.asarray(label)
    picked = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(picked, 1e-15))))


def backward_batch(model: Model, cache: dict, labels: np.ndarray) -> Gradients:
    """Gradients of the mean cross-entropy over the batch in ``cache``."""
    labels = np.asarray(labels).reshape(-1)
    post, pre = cache["post"], cache["pre"]
    n = len(labels)
    delta = post[-1].copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    dact = ACTIVATIONS[model.hidden_activation][1]
    gw: list[np.ndarray] = [None] * len(model.weights)
    gb: list[np.ndarray] = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = post[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * dact(pre[i - 1], post[i])
    return Gradients(gw, gb if model.biases is not None else None)


def backward(model: Model, cache: dict, label: int) -> Gradients:
    """Exact gradients of ``loss_cross_entropy(forward(...), label)``."""
    return backward_batch(model, cache, np.array([label]))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must line up")
    t = state.t + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, replace(state, m=new_m, v=new_v, t=t)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.002
    epochs: int = 10
    batch_size: int = 32
    seed: int = 42

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float

    def __str__(self) -> str:
        return f"epoch {self.epoch} loss {self.loss:.4f} acc {self.accuracy:.4f}"


def _flat(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    return images.reshape(len(images), -1)


def train(model: Model, data, cfg: TrainConfig = TrainConfig(),
          on_epoch: Callable[[EpochMetrics], None] | None = None) -> tuple[Model, list[EpochMetrics]]:
    """Mini-batch Adam training on a dataset with ``images`` and ``labels``.

    Each epoch visits a seeded permutation of the data; loss and accuracy
    are averaged over the predictions made just before each update.
    """
    x = _flat(data.images)
    y = np.asarray(data.labels, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    params = [p.copy() for p in model.params]
    state = AdamState.zeros_like(params)
    current = model.with_params(params)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(y))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            probs, cache = forward_batch(current, x[idx])
            loss_sum += loss_cross_entropy(probs, y[idx]) * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == y[idx]))
            grads = backward_batch(current, cache, y[idx])
            params, state = adam_step(params, grads.tensors, state, cfg.learning_rate)
            current = current.with_params(params)
        m = EpochMetrics(epoch, loss_sum / len(y), correct / len(y))
        history.append(m)
        if on_epoch:
            on_epoch(m)
    return current, history


def predict_proba(model: Model, images: np.ndarray, chunk: int = 4096) -> np.ndarray:
    x = _flat(images)
    return np.concatenate([forward_batch(model, x[i : i + chunk])[0]
                           for i in range(0, len(x), chunk)]) if len(x) else np.zeros((0, model.layer_dims[-1]))


def evaluate(model: Model, data) -> tuple[float, np.ndarray]:
    """Argmax accuracy and a confusion matrix indexed [true][predicted]."""
    y = np.asarray(data.labels, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = np.argmax(predict_proba(model, data.images), axis=1)
    k = model.layer_dims[-1]
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    return float(np.mean(pred == y)), confusion


def predict(model: Model, glyph: np.ndarray) -> tuple[int, np.ndarray]:
    probs, _ = forward(model, glyph)
    return int(np.argmax(probs)), probs


MAGIC = b"HDRNN001"


class ModelFormatError(ValueError):
    pass


class BadMagicError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class ModelShapeError(ModelFormatError):
    pass


def save_model(model: Model) -> bytes:
    dims = model.layer_dims
    head = MAGIC + struct.pack(f"<I{len(dims)}I", len(dims), *dims)
    head += struct.pack("<BB", int(model.biases is not None), ACTIVATIONS[model.hidden_activation][2])
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params)
    return head + body


def load_model(data: bytes) -> Model:
    if data[:8] != MAGIC:
        raise BadMagicError(f"bad model magic {data[:8]!r}")
    pos = 8

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedModelError(f"model file truncated while reading {what}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4, "layer count"))
    if count < 2:
        raise ModelShapeError(f"model needs at least 2 layers, header says {count}")
    dims = struct.unpack(f"<{count}I", take(4 * count, "layer dims"))
    if min(dims) < 1:
        raise ModelShapeError(f"zero-width layer in {dims}")
    has_bias, code = struct.unpack("<BB", take(2, "flags"))
    if has_bias not in (0, 1):
        raise ModelShapeError(f"bias flag must be 0 or 1, got {has_bias}")
    if code not in _CODE_TO_ACT:
        raise ModelShapeError(f"unknown activation code {code}")
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        raw = take(8 * fan_in * fan_out, "weights")
        weights.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(fan_in, fan_out))
    biases = None
    if has_bias:
        biases = [np.frombuffer(take(8 * d, "biases"), dtype="<f8").astype(np.float64) for d in dims[1:]]
    if pos != len(data):
        raise ModelShapeError(f"{len(data) - pos} trailing bytes after the declared tensors")
    return Model(tuple(dims), weights, biases, _CODE_TO_ACT[code])
