"""Small feed-forward networks with manual backpropagation.

Layers apply activation(x @ W^T + b + adapter_branch(x)); heads are
affine maps selected by name.  The backward pass produces gradients for
exactly the trainable tensor set implied by the per-layer adapters plus
the active head, so frozen tensors can never drift.  Everything is
float64 and deterministic under seeds.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .adapters import (
    FullFineTune,
    Frozen,
    LoraAdapter,
    PlateAdapter,
    adapter_forward,
    adapter_grad,
    adapter_input_grad,
    effective_weight,
)
from .errors import ContractViolationError, NumericalError, TrainingError
from .numerics import SeededRng
from . import checkpoint as ckpt

__all__ = [
    "Layer",
    "Head",
    "Mlp",
    "TrainConfig",
    "ModelLayout",
    "ParamVector",
    "init_mlp",
    "forward",
    "loss_and_grad",
    "backward",
    "AdamState",
    "optimizer_step",
    "train",
    "trainable_entries",
    "params_to_vector",
    "vector_to_params",
    "set_params",
    "mean_loss",
    "accuracy",
    "save_model",
    "load_model",
]

_ACTIVATIONS = ("relu", "tanh", "identity")

# child tags for seed splitting
_TAG_SHUFFLE = 0


@dataclass
class Layer:
    weight: np.ndarray  # (d_out, d_in)
    bias: np.ndarray    # (d_out,)
    activation: str


@dataclass
class Head:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class Mlp:
    layers: list
    heads: dict

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    optimizer: str = "adam"       # "adam" | "adamw"
    weight_decay: float = 0.0
    loss: str = "softmax_cross_entropy"  # "mse" | "softmax_cross_entropy"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ContractViolationError("train config needs positive hyperparameters")
        if self.optimizer not in ("adam", "adamw"):
            raise ContractViolationError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("mse", "softmax_cross_entropy"):
            raise ContractViolationError(f"unknown loss {self.loss!r}")


def init_mlp(input_dim: int, hidden: list, activation: str, heads: dict, seed: int = 0) -> Mlp:
    """Gaussian 1/sqrt(fan_in) weights, zero biases; heads likewise."""
    if activation not in _ACTIVATIONS:
        raise ContractViolationError(f"unknown activation {activation!r}")
    gen = SeededRng(seed).generator()
    layers = []
    d_prev = input_dim
    for width in hidden:
        w = gen.standard_normal((width, d_prev)) / np.sqrt(d_prev)
        layers.append(Layer(weight=w, bias=np.zeros(width), activation=activation))
        d_prev = width
    head_map = {}
    for name in sorted(heads):
        w = gen.standard_normal((heads[name], d_prev)) / np.sqrt(d_prev)
        head_map[name] = Head(weight=w, bias=np.zeros(heads[name]))
    return Mlp(layers=layers, heads=head_map)


def init_head(model: Mlp, name: str, classes: int, seed: int = 0) -> None:
    """(Re)initialize one head in place, Gaussian 1/sqrt(fan_in)."""
    d = model.layers[-1].weight.shape[0] if model.layers else model.input_dim
    gen = SeededRng(seed).generator()
    model.heads[name] = Head(weight=gen.standard_normal((classes, d)) / np.sqrt(d), bias=np.zeros(classes))


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_slope(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - h * h
    return np.ones_like(z)


def forward(model: Mlp, adapters, x, head_name: str | None):
    """Run the network; returns (outputs, cache) for the backward pass.

    ``adapters`` is a per-layer sequence or None; ``head_name`` None
    returns the last hidden activation as the output.
    """
    x = np.asarray(x, dtype=np.float64)
    if adapters is None:
        adapters = [Frozen()] * len(model.layers)
    if len(adapters) != len(model.layers):
        raise ContractViolationError("one adapter per layer required")
    inputs = []
    pre = []
    h = x
    for idx, (layer, adapter) in enumerate(zip(model.layers, adapters)):
        inputs.append(h)
        z = h @ layer.weight.T + layer.bias
        branch = adapter_forward(adapter, h)
        if branch is not None:
            z = z + branch
        if not np.isfinite(z).all():
            raise NumericalError(f"non-finite pre-activation at layer {idx}")
        h = _apply_activation(layer.activation, z)
        pre.append(z)
    cache = {"inputs": inputs, "pre": pre, "hidden": h, "head": head_name}
    if head_name is None:
        return h, cache
    if head_name not in model.heads:
        raise ContractViolationError(f"unknown head {head_name!r}")
    head = model.heads[head_name]
    out = h @ head.weight.T + head.bias
    if not np.isfinite(out).all():
        raise NumericalError(f"non-finite output at head {head_name!r}")
    return out, cache


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(outputs, targets, loss: str):
    """Scalar loss and its gradient w.r.t. the outputs.

    mse: per-sample squared error summed over output dims, averaged
    over the batch (gradient 2(f - y)/n).  softmax_cross_entropy:
    mean negative log-likelihood over integer labels.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    n = outputs.shape[0]
    if loss == "mse":
        targets = np.asarray(targets, dtype=np.float64).reshape(outputs.shape)
        diff = outputs - targets
        return float(np.sum(diff * diff) / n), 2.0 * diff / n
    if loss == "softmax_cross_entropy":
        labels = np.asarray(targets)
        if labels.ndim != 1 or labels.shape[0] != n:
            raise ContractViolationError("labels must be a 1-D class-index sequence")
        if labels.min() < 0 or labels.max() >= outputs.shape[1]:
            raise ContractViolationError(
                f"label {int(labels.max())} out of range for {outputs.shape[1]} classes"
            )
        logp = _log_softmax(outputs)
        value = float(-logp[np.arange(n), labels].mean())
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return value, grad / n
    raise ContractViolationError(f"unknown loss {loss!r}")


def backward(model: Mlp, adapters, cache, out_grad) -> dict:
    """Chain rule through head, activations and adapter branches.

    Returns gradients keyed like ``layers.0.weight`` /
    ``layers.0.adapter.core`` / ``heads.task1.bias``; only trainable
    tensors appear.
    """
    if adapters is None:
        adapters = [Frozen()] * len(model.layers)
    grads = {}
    g = np.asarray(out_grad, dtype=np.float64)
    head_name = cache["head"]
    if head_name is not None:
        head = model.heads[head_name]
        grads[f"heads.{head_name}.weight"] = g.T @ cache["hidden"]
        grads[f"heads.{head_name}.bias"] = g.sum(axis=0)
        g = g @ head.weight
    h = cache["hidden"]
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        adapter = adapters[idx]
        z = cache["pre"][idx]
        x = cache["inputs"][idx]
        gz = g * _activation_slope(layer.activation, z, h)
        for name, grad in adapter_grad(adapter, x, gz).items():
            grads[f"layers.{idx}.{'weight' if name == 'weight' else 'adapter.' + name}"] = grad
        if isinstance(adapter, FullFineTune):
            grads[f"layers.{idx}.bias"] = gz.sum(axis=0)
        g = gz @ layer.weight
        branch = adapter_input_grad(adapter, gz)
        if branch is not None:
            g = g + branch
        h = x
    return grads


def trainable_entries(model: Mlp, adapters, head_name: str | None) -> list:
    """Ordered (key, array) pairs for every tensor that trains."""
    if adapters is None:
        adapters = [Frozen()] * len(model.layers)
    entries = []
    for idx, (layer, adapter) in enumerate(zip(model.layers, adapters)):
        if isinstance(adapter, FullFineTune):
            entries.append((f"layers.{idx}.weight", layer.weight))
            entries.append((f"layers.{idx}.bias", layer.bias))
        elif isinstance(adapter, PlateAdapter):
            entries.append((f"layers.{idx}.adapter.core", adapter.core))
        elif isinstance(adapter, LoraAdapter):
            entries.append((f"layers.{idx}.adapter.down", adapter.down))
            entries.append((f"layers.{idx}.adapter.up", adapter.up))
        elif not isinstance(adapter, Frozen):
            raise ContractViolationError(f"unknown adapter kind {type(adapter).__name__}")
    if head_name is not None:
        head = model.heads[head_name]
        entries.append((f"heads.{head_name}.weight", head.weight))
        entries.append((f"heads.{head_name}.bias", head.bias))
    return entries


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def optimizer_step(state: AdamState, entries, grads: dict, config: TrainConfig) -> None:
    """One Adam/AdamW step over the trainable entries, in place.

    beta1=0.9, beta2=0.999, eps=1e-8, bias-corrected; adamw applies
    decoupled decay to the trainable tensors only.
    """
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    state.t += 1
    correction1 = 1.0 - beta1**state.t
    correction2 = 1.0 - beta2**state.t
    for key, param in entries:
        g = grads.get(key)
        if g is None:
            raise ContractViolationError(f"missing gradient for trainable tensor {key}")
        if key not in state.m:
            state.m[key] = np.zeros_like(param)
            state.v[key] = np.zeros_like(param)
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if config.optimizer == "adamw" and config.weight_decay > 0.0:
            param -= config.learning_rate * config.weight_decay * param
        step = (m / correction1) / (np.sqrt(v / correction2) + eps)
        param -= config.learning_rate * step


def train(model: Mlp, adapters, inputs, targets, head_name: str, config: TrainConfig):
    """Mini-batch training with seeded per-epoch shuffling.

    Returns (model, per-epoch mean training loss).  A non-finite loss
    aborts with :class:`TrainingError` carrying the curve so far; the
    model keeps the parameters of the last finished step.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise ContractViolationError("training set is empty")
    entries = trainable_entries(model, adapters, head_name)
    state = AdamState()
    shuffle_gen = SeededRng(config.seed).child(_TAG_SHUFFLE).generator()
    curve = []
    n = inputs.shape[0]
    for epoch in range(config.epochs):
        order = shuffle_gen.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = inputs[idx]
            yb = targets[idx]
            out, cache = forward(model, adapters, xb, head_name)
            value, out_grad = loss_and_grad(out, yb, config.loss)
            if not np.isfinite(value):
                raise TrainingError(
                    f"loss diverged at epoch {epoch}", loss_curve=curve, epoch=epoch
                )
            grads = backward(model, adapters, cache, out_grad)
            optimizer_step(state, entries, grads, config)
            epoch_loss += value
            batches += 1
        curve.append(epoch_loss / max(batches, 1))
    return model, curve


# ---------------------------------------------------------------------------
# flat parameter vectors


@dataclass(frozen=True)
class ModelLayout:
    """Structure of a model minus its values; defines the flat order.

    Layers come first (weight then bias, layer-major), then heads in
    sorted-name order (weight then bias).
    """

    layer_shapes: tuple   # ((d_out, d_in), ...)
    activations: tuple
    head_shapes: tuple    # ((name, (classes, d)), ...) sorted by name

    @classmethod
    def of(cls, model: Mlp) -> "ModelLayout":
        return cls(
            layer_shapes=tuple(l.weight.shape for l in model.layers),
            activations=tuple(l.activation for l in model.layers),
            head_shapes=tuple((n, model.heads[n].weight.shape) for n in sorted(model.heads)),
        )

    def keys_and_shapes(self) -> list:
        out = []
        for idx, shape in enumerate(self.layer_shapes):
            out.append((f"layers.{idx}.weight", shape))
            out.append((f"layers.{idx}.bias", (shape[0],)))
        for name, shape in self.head_shapes:
            out.append((f"heads.{name}.weight", shape))
            out.append((f"heads.{name}.bias", (shape[0],)))
        return out

    def slices(self) -> dict:
        table = {}
        offset = 0
        for key, shape in self.keys_and_shapes():
            size = int(np.prod(shape))
            table[key] = (offset, offset + size, shape)
            offset += size
        return table

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.keys_and_shapes())


@dataclass
class ParamVector:
    data: np.ndarray
    layout: ModelLayout


def params_to_vector(model: Mlp) -> ParamVector:
    layout = ModelLayout.of(model)
    parts = []
    for idx in range(len(model.layers)):
        parts.append(model.layers[idx].weight.ravel())
        parts.append(model.layers[idx].bias.ravel())
    for name, _ in layout.head_shapes:
        parts.append(model.heads[name].weight.ravel())
        parts.append(model.heads[name].bias.ravel())
    return ParamVector(data=np.concatenate(parts) if parts else np.zeros(0), layout=layout)


def vector_to_params(pv: ParamVector) -> Mlp:
    layout = pv.layout
    if pv.data.size != layout.size:
        raise ContractViolationError(
            f"vector length {pv.data.size} does not match layout size {layout.size}"
        )
    table = layout.slices()
    layers = []
    for idx, shape in enumerate(layout.layer_shapes):
        ws, we, _ = table[f"layers.{idx}.weight"]
        bs, be, _ = table[f"layers.{idx}.bias"]
        layers.append(
            Layer(
                weight=pv.data[ws:we].reshape(shape).copy(),
                bias=pv.data[bs:be].copy(),
                activation=layout.activations[idx],
            )
        )
    heads = {}
    for name, shape in layout.head_shapes:
        ws, we, _ = table[f"heads.{name}.weight"]
        bs, be, _ = table[f"heads.{name}.bias"]
        heads[name] = Head(weight=pv.data[ws:we].reshape(shape).copy(), bias=pv.data[bs:be].copy())
    return Mlp(layers=layers, heads=heads)


def set_params(model: Mlp, data: np.ndarray) -> Mlp:
    """Write a flat vector into an existing model, in place."""
    layout = ModelLayout.of(model)
    if data.size != layout.size:
        raise ContractViolationError("vector does not match the model layout")
    table = layout.slices()
    for idx in range(len(model.layers)):
        ws, we, shape = table[f"layers.{idx}.weight"]
        bs, be, _ = table[f"layers.{idx}.bias"]
        model.layers[idx].weight[...] = data[ws:we].reshape(shape)
        model.layers[idx].bias[...] = data[bs:be]
    for name, _ in layout.head_shapes:
        ws, we, shape = table[f"heads.{name}.weight"]
        bs, be, _ = table[f"heads.{name}.bias"]
        model.heads[name].weight[...] = data[ws:we].reshape(shape)
        model.heads[name].bias[...] = data[bs:be]
    return model


def merged_copy(model: Mlp, adapters) -> Mlp:
    """Copy of the model with adapter branches folded into the weights."""
    out = model.copy()
    if adapters is not None:
        for idx, adapter in enumerate(adapters):
            out.layers[idx].weight = effective_weight(model.layers[idx].weight, adapter)
    return out


# ---------------------------------------------------------------------------
# evaluation helpers


def mean_loss(model: Mlp, x, y, head_name: str | None, loss: str) -> float:
    out, _ = forward(model, None, x, head_name)
    value, _ = loss_and_grad(out, y, loss)
    return value


def accuracy(model: Mlp, x, labels, head_name: str) -> float:
    out, _ = forward(model, None, x, head_name)
    return float((out.argmax(axis=1) == np.asarray(labels)).mean())


# ---------------------------------------------------------------------------
# persistence (same manifest + raw format as adapters)


def save_model(directory: str, model: Mlp) -> None:
    layout = ModelLayout.of(model)
    tensors = {}
    for idx in range(len(model.layers)):
        tensors[f"layers.{idx}.weight"] = model.layers[idx].weight
        tensors[f"layers.{idx}.bias"] = model.layers[idx].bias
    for name, _ in layout.head_shapes:
        tensors[f"heads.{name}.weight"] = model.heads[name].weight
        tensors[f"heads.{name}.bias"] = model.heads[name].bias
    ckpt.save_checkpoint(
        directory,
        tensors=tensors,
        metadata={
            "kind": "mlp",
            "activations": list(layout.activations),
            "heads": [name for name, _ in layout.head_shapes],
        },
    )


def load_model(directory: str) -> Mlp:
    tensors, meta = ckpt.load_checkpoint(directory)
    if meta.get("kind") != "mlp":
        raise ContractViolationError(f"not a model checkpoint: {directory}")
    activations = meta["activations"]
    layers = []
    for idx, act in enumerate(activations):
        layers.append(
            Layer(
                weight=tensors[f"layers.{idx}.weight"].copy(),
                bias=tensors[f"layers.{idx}.bias"].copy(),
                activation=act,
            )
        )
    heads = {}
    for name in meta["heads"]:
        heads[name] = Head(
            weight=tensors[f"heads.{name}.weight"].copy(),
            bias=tensors[f"heads.{name}.bias"].copy(),
        )
    return Mlp(layers=layers, heads=heads)
