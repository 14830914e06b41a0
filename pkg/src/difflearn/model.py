"""Multilayer perceptron on flat parameter vectors.

The protocol treats a model as a single vector w of length M; this module
owns the mapping between that vector and the layer matrices, plus forward,
loss, analytic gradient, SGD step, and accuracy evaluation. ReLU hidden
activations, softmax cross-entropy output, all float64.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .errors import DimensionMismatchError, NonFiniteValueError


@dataclass(frozen=True)
class MlpSpec:
    """Architecture plus the seed its initial parameters are drawn from."""

    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 64)
    num_classes: int = 10
    init_seed: int = 0

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer dims must be positive, got {dims}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.num_classes)

    @property
    def param_count(self) -> int:
        dims = self.layer_dims
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


def _check_params(spec: MlpSpec, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (spec.param_count,):
        raise DimensionMismatchError(
            f"parameter vector has shape {w.shape}, spec needs ({spec.param_count},)"
        )
    return w


def unflatten(spec: MlpSpec, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer (weights, bias) views, in order."""
    w = _check_params(spec, w)
    dims = spec.layer_dims
    layers = []
    offset = 0
    for fan_in, fan_out in zip(dims, dims[1:]):
        weights = w[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = w[offset : offset + fan_out]
        offset += fan_out
        layers.append((weights, bias))
    return layers


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])


def init_params(spec: MlpSpec) -> np.ndarray:
    """Draw weights from U(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases start at 0."""
    rng = np.random.default_rng(spec.init_seed)
    dims = spec.layer_dims
    parts = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def _forward(spec: MlpSpec, w: np.ndarray, features: np.ndarray):
    """Return pre-activations, activations and logits for a feature matrix."""
    if features.ndim != 2 or features.shape[1] != spec.input_dim:
        raise DimensionMismatchError(
            f"features have shape {features.shape}, spec needs (n, {spec.input_dim})"
        )
    layers = unflatten(spec, w)
    activations = [features]
    pre = []
    for i, (weights, bias) in enumerate(layers):
        z = activations[-1] @ weights + bias
        pre.append(z)
        if i < len(layers) - 1:
            activations.append(np.maximum(z, 0.0))
    return layers, pre, activations


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def predict_proba(spec: MlpSpec, w: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Softmax class probabilities, one row per sample."""
    _, pre, _ = _forward(spec, _check_params(spec, w), np.asarray(features, dtype=np.float64))
    return _softmax(pre[-1])


def loss_and_gradient(
    spec: MlpSpec, w: np.ndarray, features: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its exact gradient in w."""
    w = _check_params(spec, w)
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]
    if n == 0:
        raise ValueError("batch must be non-empty")
    if labels.shape != (n,):
        raise DimensionMismatchError(f"{n} feature rows but labels shape {labels.shape}")
    layers, pre, activations = _forward(spec, w, features)
    probs = _softmax(pre[-1])
    # Clip only inside the log; the gradient uses the exact probabilities.
    loss = float(-np.mean(np.log(np.clip(probs[np.arange(n), labels], 1e-300, None))))

    dz = probs
    dz[np.arange(n), labels] -= 1.0
    dz /= n
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    for i in range(len(layers) - 1, -1, -1):
        weights, _ = layers[i]
        grads.append((activations[i].T @ dz, dz.sum(axis=0)))
        if i > 0:
            dz = (dz @ weights.T) * (pre[i - 1] > 0)
    grad = flatten(reversed(grads))
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NonFiniteValueError("loss or gradient is not finite")
    return loss, grad


def sgd_step(w: np.ndarray, grad: np.ndarray, mu: float) -> np.ndarray:
    """One plain gradient step w - mu*grad (mu = 0 is the identity)."""
    w = np.asarray(w, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if w.shape != grad.shape:
        raise DimensionMismatchError(f"w shape {w.shape} vs grad shape {grad.shape}")
    if mu < 0:
        raise ValueError(f"step size must be >= 0, got {mu}")
    return w - mu * grad


def mean_loss(spec: MlpSpec, w: np.ndarray, dataset: LabeledDataset) -> float:
    """Mean cross-entropy of w over a whole dataset (no gradient)."""
    probs = predict_proba(spec, w, dataset.features)
    picked = probs[np.arange(len(dataset)), dataset.labels]
    return float(-np.mean(np.log(np.clip(picked, 1e-300, None))))


def predict_accuracy(spec: MlpSpec, w: np.ndarray, test: LabeledDataset) -> float:
    """Fraction of correct argmax predictions; ties go to the lowest class id."""
    _, pre, _ = _forward(spec, _check_params(spec, w), test.features)
    predictions = np.argmax(pre[-1], axis=1)
    return float(np.mean(predictions == test.labels))


# -- serialization -------------------------------------------------------------

_LENGTH = struct.Struct("<Q")


def params_to_bytes(w: np.ndarray) -> bytes:
    """Length-prefixed little-endian float64 encoding of one vector."""
    w = np.ascontiguousarray(w, dtype="<f8")
    return _LENGTH.pack(w.shape[0]) + w.tobytes()


def params_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one length-prefixed vector; returns (vector, next offset)."""
    (length,) = _LENGTH.unpack_from(buf, offset)
    start = offset + _LENGTH.size
    end = start + 8 * length
    if end > len(buf):
        raise ValueError(f"buffer ends at {len(buf)}, vector needs {end} bytes")
    return np.frombuffer(buf[start:end], dtype="<f8").copy(), end
