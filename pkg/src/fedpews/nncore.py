"""Dense ReLU network over a flat float64 parameter vector.

Layout: for each layer, the weight matrix (out_dim x in_dim, row-major)
followed by the bias vector. Hidden-neuron masks are applied to
post-ReLU activations; the output layer is never masked.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from fedpews.rng import stream


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layers do not chain: {a.out_dim} -> {b.in_dim}")

    @classmethod
    def from_dims(cls, dims) -> "ModelSpec":
        """``from_dims([5, 32, 4])`` builds 5->32->4."""
        dims = list(dims)
        return cls(tuple(LayerSpec(i, o) for i, o in zip(dims, dims[1:])))

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def n_classes(self) -> int:
        return self.layers[-1].out_dim

    @cached_property
    def d(self) -> int:
        return sum(l.in_dim * l.out_dim + l.out_dim for l in self.layers)

    @cached_property
    def h(self) -> int:
        return sum(l.out_dim for l in self.layers[:-1])

    @cached_property
    def offsets(self) -> tuple[tuple[int, int, int], ...]:
        """(weight_start, bias_start, end) per layer."""
        out, pos = [], 0
        for l in self.layers:
            w_end = pos + l.in_dim * l.out_dim
            out.append((pos, w_end, w_end + l.out_dim))
            pos = w_end + l.out_dim
        return tuple(out)

    @cached_property
    def hidden_slices(self) -> tuple[slice, ...]:
        """Slice of the length-h neuron mask belonging to each hidden layer."""
        out, pos = [], 0
        for l in self.layers[:-1]:
            out.append(slice(pos, pos + l.out_dim))
            pos += l.out_dim
        return tuple(out)

    def unpack(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into ``params``; writes through."""
        if params.shape != (self.d,):
            raise ValueError(f"expected {self.d} params, got shape {params.shape}")
        return [
            (params[w0:b0].reshape(l.out_dim, l.in_dim), params[b0:end])
            for l, (w0, b0, end) in zip(self.layers, self.offsets)
        ]


# Architecture used for the synthetic dataset: 5 -> 32 -> 64 -> 128 -> 32 -> 4.
SYNTHETIC_DIMS = (5, 32, 64, 128, 32, 4)


def synthetic_spec() -> ModelSpec:
    return ModelSpec.from_dims(SYNTHETIC_DIMS)


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list[np.ndarray]        # W a + b, per layer
    relu: list[np.ndarray]       # ReLU(pre) before masking, hidden layers only
    acts: list[np.ndarray]       # relu * mask, hidden layers only
    logits: np.ndarray


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = stream(seed, "init")
    params = np.zeros(spec.d)
    for l, (W, _) in zip(spec.layers, spec.unpack(params)):
        bound = 1.0 / np.sqrt(l.in_dim)
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return params


def _check_mask(spec: ModelSpec, neuron_mask) -> np.ndarray:
    if neuron_mask is None:
        return np.ones(spec.h)
    m = np.asarray(neuron_mask, dtype=np.float64)
    if m.shape != (spec.h,):
        raise ValueError(f"neuron mask must have length {spec.h}, got shape {m.shape}")
    return m


def forward(spec: ModelSpec, params: np.ndarray, neuron_mask, x: np.ndarray) -> ForwardTrace:
    """Masked forward pass. ``neuron_mask=None`` means all hidden neurons active."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"batch must be (n, {spec.input_dim}), got {x.shape}")
    m = _check_mask(spec, neuron_mask)
    layers = spec.unpack(params)
    pre, relu, acts = [], [], []
    a = x
    for i, (W, b) in enumerate(layers[:-1]):
        z = a @ W.T + b
        r = np.maximum(z, 0.0)
        a = r * m[spec.hidden_slices[i]]
        pre.append(z)
        relu.append(r)
        acts.append(a)
    W, b = layers[-1]
    logits = a @ W.T + b
    pre.append(logits)
    return ForwardTrace(x, pre, relu, acts, logits)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels) -> float:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise ValueError("one label per row required")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return float(-_log_softmax(logits)[np.arange(n), labels].mean())


def backward(spec: ModelSpec, params: np.ndarray, neuron_mask, trace: ForwardTrace, labels):
    """Gradients of mean cross-entropy for the batch in ``trace``.

    Returns ``(grad_x, grad_mask)``. ``grad_mask`` is the derivative w.r.t.
    each hidden-neuron mask entry treated as a real multiplier.
    """
    m = _check_mask(spec, neuron_mask)
    labels = np.asarray(labels)
    n = trace.logits.shape[0]
    layers = spec.unpack(params)
    grad_x = np.zeros(spec.d)
    grads = spec.unpack(grad_x)
    grad_mask = np.zeros(spec.h)

    probs = np.exp(_log_softmax(trace.logits))
    probs[np.arange(n), labels] -= 1.0
    dz = probs / n
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        gW, gb = grads[i]
        a_prev = trace.acts[i - 1] if i > 0 else trace.inputs
        gW[...] = dz.T @ a_prev
        gb[...] = dz.sum(axis=0)
        if i == 0:
            break
        da = dz @ W
        sl = spec.hidden_slices[i - 1]
        grad_mask[sl] = (da * trace.relu[i - 1]).sum(axis=0)
        dz = da * m[sl] * (trace.pre[i - 1] > 0)
    return grad_x, grad_mask


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    return params - lr * grad


def evaluate(spec: ModelSpec, params: np.ndarray, neuron_mask, features, labels) -> tuple[float, float]:
    """(accuracy in [0, 1], mean cross-entropy). Ties in argmax go to the lowest class."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logits = forward(spec, params, neuron_mask, features).logits
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    return acc, cross_entropy(logits, labels)
