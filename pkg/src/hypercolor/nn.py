"""Dense MLPs whose weights live in a single flat vector.

A hypernetwork emits those vectors, so the layout is fixed and simple: for
each layer, the ``(d_in, d_out)`` weight matrix in row-major order followed by
its ``d_out`` biases. ``forward`` computes ``act(x @ W + b)`` layer by layer.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


class ShapeMismatch(ValueError):
    """Raised when arrays do not have the shape a network expects."""


@dataclass(frozen=True)
class MLPSpec:
    layer_widths: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        acts = tuple(self.activations)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", acts)
        if len(widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if len(acts) != len(widths) - 1:
            raise ValueError(
                f"need {len(widths) - 1} activations for widths {widths}, got {len(acts)}"
            )
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}; choose from {ACTIVATIONS}")

    @classmethod
    def build(cls, widths, hidden="relu", output="identity"):
        """Spec with ``hidden`` activations everywhere except the last layer."""
        widths = tuple(widths)
        acts = (hidden,) * (len(widths) - 2) + (output,)
        return cls(widths, acts)

    @property
    def d_in(self):
        return self.layer_widths[0]

    @property
    def d_out(self):
        return self.layer_widths[-1]

    @property
    def n_layers(self):
        return len(self.activations)

    @property
    def param_count(self):
        w = self.layer_widths
        return sum((w[i] + 1) * w[i + 1] for i in range(len(w) - 1))

    def layer_slices(self):
        """Yield ``(weight_slice, (d_in, d_out), bias_slice)`` per layer."""
        offset = 0
        w = self.layer_widths
        for i in range(len(w) - 1):
            n_w = w[i] * w[i + 1]
            yield slice(offset, offset + n_w), (w[i], w[i + 1]), slice(offset + n_w, offset + n_w + w[i + 1])
            offset += n_w + w[i + 1]

    def to_dict(self):
        return {"layer_widths": list(self.layer_widths), "activations": list(self.activations)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_widths"]), tuple(d["activations"]))

    @property
    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:16]


def param_count(spec: MLPSpec) -> int:
    return spec.param_count


@dataclass
class FlatWeights:
    values: np.ndarray
    spec_hash: str
    spec: MLPSpec | None = field(default=None, repr=False, compare=False)

    @classmethod
    def bind(cls, spec: MLPSpec, values) -> "FlatWeights":
        values = np.asarray(values)
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float64)
        values = np.ascontiguousarray(values.reshape(-1))
        if values.size != spec.param_count:
            raise ShapeMismatch(
                f"spec {spec.layer_widths} needs {spec.param_count} parameters, got {values.size}"
            )
        return cls(values, spec.hash, spec)

    def check(self, spec: MLPSpec):
        if self.spec_hash != spec.hash:
            raise ShapeMismatch(f"weights are bound to spec {self.spec_hash}, not {spec.hash}")
        if self.values.size != spec.param_count:
            raise ShapeMismatch(
                f"spec {spec.layer_widths} needs {spec.param_count} parameters, got {self.values.size}"
            )
        bad = np.flatnonzero(~np.isfinite(self.values))
        if bad.size:
            raise ValueError(f"non-finite weight at index {int(bad[0])}")

    def copy(self):
        return FlatWeights(self.values.copy(), self.spec_hash, self.spec)

    def __len__(self):
        return self.values.size


def unflatten(spec: MLPSpec, values):
    """Split a flat vector into ``[(W, b), ...]`` views."""
    return [(values[ws].reshape(shape), values[bs]) for ws, shape, bs in spec.layer_slices()]


def flatten(spec: MLPSpec, layers) -> np.ndarray:
    out = np.empty(spec.param_count, dtype=np.result_type(*[w for w, _ in layers]))
    for (ws, _, bs), (w, b) in zip(spec.layer_slices(), layers):
        out[ws] = np.asarray(w).reshape(-1)
        out[bs] = b
    return out


def init_weights(spec: MLPSpec, rng, dtype=np.float64) -> FlatWeights:
    """He-uniform weights for ReLU layers, Glorot-uniform otherwise; zero biases."""
    values = np.zeros(spec.param_count, dtype=dtype)
    for (ws, (fan_in, fan_out), _), act in zip(spec.layer_slices(), spec.activations):
        if act == "relu":
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        values[ws] = rng.uniform(-limit, limit, size=fan_in * fan_out)
    return FlatWeights(values, spec.hash, spec)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(name, pre):
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "tanh":
        return np.tanh(pre)
    if name == "sigmoid":
        return _sigmoid(pre)
    return pre


def _activation_grad(name, pre, out, up):
    if name == "relu":
        return up * (pre > 0)
    if name == "tanh":
        return up * (1.0 - out * out)
    if name == "sigmoid":
        return up * (out * (1.0 - out))
    return up


@dataclass
class GradTape:
    """Everything ``backward`` needs from one forward pass."""

    spec: MLPSpec
    weights: FlatWeights
    inputs: np.ndarray
    layer_inputs: list = field(default_factory=list)
    pre_activations: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.outputs[-1]

    def replay(self) -> np.ndarray:
        return forward(self.spec, self.weights, self.inputs)


def _prepare(spec, weights, inputs):
    weights.check(spec)
    x = np.asarray(inputs)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.d_in:
        raise ShapeMismatch(f"expected inputs of shape (B, {spec.d_in}), got {np.shape(inputs)}")
    return np.ascontiguousarray(x, dtype=weights.values.dtype)


def forward_with_tape(spec: MLPSpec, weights: FlatWeights, inputs) -> tuple[np.ndarray, GradTape]:
    x = _prepare(spec, weights, inputs)
    tape = GradTape(spec, weights, x)
    h = x
    for (w, b), act in zip(unflatten(spec, weights.values), spec.activations):
        pre = kernels.dense_forward(h, w, b)
        out = _activate(act, pre)
        tape.layer_inputs.append(h)
        tape.pre_activations.append(pre)
        tape.outputs.append(out)
        h = out
    return h, tape


def forward(spec: MLPSpec, weights: FlatWeights, inputs) -> np.ndarray:
    """Evaluate the network on a ``(B, d_in)`` batch."""
    return forward_with_tape(spec, weights, inputs)[0]


def backward(tape: GradTape, upstream) -> tuple[FlatWeights, np.ndarray]:
    """Gradients of ``sum(upstream * output)`` wrt the flat weights and the inputs."""
    spec = tape.spec
    up = np.asarray(upstream, dtype=tape.output.dtype)
    if up.shape != tape.output.shape:
        raise ShapeMismatch(f"upstream has shape {up.shape}, tape output is {tape.output.shape}")
    grads = np.zeros(spec.param_count, dtype=tape.output.dtype)
    layers = unflatten(spec, tape.weights.values)
    slices = list(spec.layer_slices())
    g = np.ascontiguousarray(up)
    for i in reversed(range(spec.n_layers)):
        g = _activation_grad(spec.activations[i], tape.pre_activations[i], tape.outputs[i], g)
        gx, gw, gb = kernels.dense_backward(tape.layer_inputs[i], layers[i][0], np.ascontiguousarray(g))
        ws, _, bs = slices[i]
        grads[ws] = gw.reshape(-1)
        grads[bs] = gb
        g = gx
    return FlatWeights(grads, spec.hash, spec), g


def numeric_gradient(fn, x, eps=1e-5):
    """Central differences of scalar ``fn`` at ``x``; ``x`` is restored afterwards."""
    x = np.asarray(x)
    grad = np.zeros(x.size)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = fn()
        flat[i] = orig - eps
        f_minus = fn()
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad.reshape(x.shape)


def max_relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))))


def _probe(shape):
    # fixed projection turning the network output into a scalar loss
    return np.random.default_rng(20230).standard_normal(shape)


def grad_check(spec: MLPSpec, weights: FlatWeights, inputs, eps=1e-5) -> float:
    """Worst relative error between backprop and central differences.

    The scalar loss is a fixed random projection of the outputs; both weight
    and input gradients are checked.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    w = FlatWeights(np.array(weights.values, dtype=np.float64), weights.spec_hash, spec)
    x = np.array(_prepare(spec, w, inputs), dtype=np.float64)
    out, tape = forward_with_tape(spec, w, x)
    probe = _probe(out.shape)
    gw, gx = backward(tape, probe)

    def loss():
        return float(np.sum(forward(spec, w, x) * probe))

    num_w = numeric_gradient(loss, w.values, eps)
    num_x = numeric_gradient(loss, x, eps)
    return max(max_relative_error(gw.values, num_w), max_relative_error(gx, num_x))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, values):
        return cls(np.zeros_like(values), np.zeros_like(values), 0)


def adam_step(params: FlatWeights, grads: FlatWeights, state: AdamState | None = None,
              lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> tuple[FlatWeights, AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    p = params.values
    g = np.asarray(grads.values if isinstance(grads, FlatWeights) else grads)
    if g.shape != p.shape:
        raise ShapeMismatch(f"gradient shape {g.shape} does not match parameters {p.shape}")
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise FloatingPointError(f"non-finite gradient at parameter index {int(bad[0])}")
    if state is None:
        state = AdamState.zeros_like(p)
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return FlatWeights(new.astype(p.dtype, copy=False), params.spec_hash, params.spec), AdamState(m, v, t)
