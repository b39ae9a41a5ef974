"""Small dense-network engine: forward/backward passes, Adam, loss primitives.

Weights are stored ``(out, in)`` per layer, inputs are rows. ``forward``
accepts a single vector or a ``(batch, in)`` matrix.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ShapeError, TrainingError, UsageError

ACTIVATIONS = ("rectifier", "sigmoid", "identity")
CHECKPOINT_VERSION = 1
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "rectifier"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ShapeError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class DenseNet:
    layers: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        for k, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {k} outputs {a.out_dim} but layer {k + 1} expects {b.in_dim}")
        for k, (spec, w, b) in enumerate(zip(self.layers, self.weights, self.biases)):
            if w.shape != (spec.out_dim, spec.in_dim) or b.shape != (spec.out_dim,):
                raise ShapeError(f"layer {k} weights {w.shape}/{b.shape} do not match {spec}")

    @classmethod
    def build(cls, dims, activations, rng=None, zero=False):
        """Network with ``len(dims) - 1`` layers.

        Glorot-uniform initialisation from ``rng`` unless ``zero`` is set.
        Biases start at zero.
        """
        if len(activations) != len(dims) - 1:
            raise ShapeError("need one activation per layer")
        layers = [LayerSpec(i, o, a) for i, o, a in zip(dims[:-1], dims[1:], activations)]
        weights, biases = [], []
        for spec in layers:
            if zero:
                w = np.zeros((spec.out_dim, spec.in_dim))
            else:
                limit = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
                w = rng.uniform(-limit, limit, size=(spec.out_dim, spec.in_dim))
            weights.append(w)
            biases.append(np.zeros(spec.out_dim))
        return cls(layers, weights, biases)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def copy(self):
        return DenseNet(list(self.layers), [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameters(self):
        return self.weights + self.biases

    def __call__(self, x):
        return forward(self, x)[0]


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # per-layer input, 2-D
    outputs: list[np.ndarray]  # per-layer post-activation, 2-D
    squeeze: bool


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray | None = None  # dL/dx, same shape as the forward input

    @classmethod
    def zeros_like(cls, net: DenseNet):
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def add_(self, other: "Gradients"):
        for a, b in zip(self.weights, other.weights):
            a += b
        for a, b in zip(self.biases, other.biases):
            a += b
        return self

    def scale_(self, factor):
        for a in self.weights + self.biases:
            a *= factor
        return self

    def flat(self):
        return np.concatenate([a.ravel() for a in self.weights + self.biases])


def _activate(z, activation):
    if activation == "rectifier":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return expit(z)
    return z


def forward(net: DenseNet, x):
    """Returns ``(output, cache)``; output keeps the rank of ``x``."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != net.in_dim:
        raise ShapeError(f"expected input of width {net.in_dim}, got shape {x.shape}")
    inputs, outputs = [], []
    for spec, w, b in zip(net.layers, net.weights, net.biases):
        inputs.append(h)
        h = _activate(h @ w.T + b, spec.activation)
        outputs.append(h)
    cache = ForwardCache(inputs, outputs, squeeze)
    return (h[0] if squeeze else h), cache


def backward(net: DenseNet, cache: ForwardCache | None, loss_grad) -> Gradients:
    """Reverse pass for the forward call that produced ``cache``.

    ``loss_grad`` is dL/d(output) with the same shape as the output.
    Parameter gradients are summed over the batch.
    """
    if cache is None:
        raise UsageError("backward needs the cache returned by forward")
    if len(cache.inputs) != len(net.layers):
        raise UsageError("cache does not belong to this network")
    g = np.asarray(loss_grad, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.outputs[-1].shape:
        raise ShapeError(f"loss gradient shape {g.shape} does not match output {cache.outputs[-1].shape}")
    n = len(net.layers)
    dw, db = [None] * n, [None] * n
    for k in range(n - 1, -1, -1):
        act = net.layers[k].activation
        out = cache.outputs[k]
        if act == "rectifier":
            g = g * (out > 0)
        elif act == "sigmoid":
            g = g * out * (1.0 - out)
        dw[k] = g.T @ cache.inputs[k]
        db[k] = g.sum(axis=0)
        g = g @ net.weights[k]
    return Gradients(dw, db, g[0] if cache.squeeze else g)


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_net(cls, net: DenseNet, lr=0.0005, beta1=0.9, beta2=0.999, eps=1e-8):
        z = lambda arrs: [np.zeros_like(a) for a in arrs]  # noqa: E731
        return cls(z(net.weights), z(net.weights), z(net.biases), z(net.biases), lr, beta1, beta2, eps)


def adam_step(net: DenseNet, grads: Gradients, state: AdamState):
    """One bias-corrected Adam update, applied in place. Returns ``(net, state)``."""
    if len(grads.weights) != len(net.weights):
        raise ShapeError("gradients do not match network depth")
    for k, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if gw.shape != net.weights[k].shape or gb.shape != net.biases[k].shape:
            raise ShapeError(f"gradient shape mismatch at layer {k}")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise TrainingError(f"non-finite gradient in layer {k}", layer=k)
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for params, moments1, moments2, gs in (
        (net.weights, state.m_w, state.v_w, grads.weights),
        (net.biases, state.m_b, state.v_b, grads.biases),
    ):
        for p, m, v, g in zip(params, moments1, moments2, gs):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


def cross_entropy(pred, target):
    """``-sum(y * log(p))`` with probabilities clamped to [1e-12, 1 - 1e-12].

    Works on single vectors or row batches (losses summed). Returns
    ``(loss, dloss/dpred)``.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    p = np.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(-(target * np.log(p)).sum())
    grad = np.where((pred > PROB_CLAMP) & (pred < 1.0 - PROB_CLAMP), -target / p, 0.0)
    return loss, grad


def binary_cross_entropy(pred, target):
    """Summed BCE for independent probabilities. Returns ``(loss, dloss/dpred)``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    p = np.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(-(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)).sum())
    inside = (pred > PROB_CLAMP) & (pred < 1.0 - PROB_CLAMP)
    grad = np.where(inside, -target / p + (1.0 - target) / (1.0 - p), 0.0)
    return loss, grad


def normalize_scores(scores):
    """Rescale non-negative output scores to sum to one along the last axis."""
    scores = np.asarray(scores, dtype=float)
    total = scores.sum(axis=-1, keepdims=True)
    return scores / np.maximum(total, PROB_CLAMP)


def classification_loss(scores, target):
    """Per-output binary cross-entropy of sigmoid class scores.

    The ``-y log s`` term of every true class plus ``-(1 - y) log(1 - s)`` for
    the others; without the second term a saturated wrong output would get
    no gradient. Returns ``(loss, dloss/dscores)``.
    """
    return binary_cross_entropy(scores, target)


def save_net(path, net: DenseNet, metadata: dict | None = None):
    np.savez(path, **net_arrays(net), metadata=json.dumps(metadata or {}, sort_keys=True))


def net_arrays(net: DenseNet, prefix=""):
    arrays = {
        f"{prefix}format_version": np.array(CHECKPOINT_VERSION),
        f"{prefix}dims": np.array([net.in_dim] + [s.out_dim for s in net.layers]),
        f"{prefix}activations": np.array([s.activation for s in net.layers]),
    }
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"{prefix}W{k}"] = w
        arrays[f"{prefix}b{k}"] = b
    return arrays


def net_from_arrays(arrays, prefix="") -> DenseNet:
    version = int(arrays[f"{prefix}format_version"])
    if version != CHECKPOINT_VERSION:
        raise UsageError(f"unsupported checkpoint version {version}")
    dims = [int(d) for d in arrays[f"{prefix}dims"]]
    acts = [str(a) for a in arrays[f"{prefix}activations"]]
    layers = [LayerSpec(i, o, a) for i, o, a in zip(dims[:-1], dims[1:], acts)]
    weights = [np.array(arrays[f"{prefix}W{k}"]) for k in range(len(layers))]
    biases = [np.array(arrays[f"{prefix}b{k}"]) for k in range(len(layers))]
    return DenseNet(layers, weights, biases)


def load_net(path):
    """Returns ``(net, metadata)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        return net_from_arrays(data), json.loads(str(data["metadata"]))
