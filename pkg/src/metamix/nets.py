"""Small dense/conv classifiers as pure functions of their parameter dict.

Models are deliberately functional: ``forward`` takes an optional parameter
mapping so a simulated update (new parameter tensors, same architecture) can
be evaluated without touching the real model. That is the hook the one-step
meta gradient hangs off.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import engine as eng
from .engine import ShapeError, Tensor


@dataclass(frozen=True)
class Dense:
    width: int
    activation: str | None = None


@dataclass(frozen=True)
class Conv:
    kernel: int
    channels: int
    activation: str | None = "relu"


ACTIVATIONS = {
    "tanh": eng.tanh,
    "relu": eng.relu,
    "softplus": eng.softplus,
    "sigmoid": eng.sigmoid,
}


@dataclass(frozen=True)
class Architecture:
    """Layer stack over a fixed input shape: (d,) for vectors, (h, w, c) for images.

    Conv layers must precede dense layers; the first dense layer flattens.
    """

    input_shape: tuple[int, ...]
    layers: tuple[Dense | Conv, ...]

    def __post_init__(self):
        if len(self.input_shape) not in (1, 3):
            raise ShapeError(f"input_shape must be (d,) or (h, w, c), got {self.input_shape}")
        if not self.layers or not isinstance(self.layers[-1], Dense):
            raise ShapeError("architecture must end with a Dense layer")
        seen_dense = False
        for layer in self.layers:
            if isinstance(layer, Dense):
                seen_dense = True
            elif seen_dense:
                raise ShapeError("conv layers cannot follow dense layers")
            if isinstance(layer, Conv) and len(self.input_shape) != 3:
                raise ShapeError("conv layers need an image input shape")
            act = layer.activation
            if act is not None and act not in ACTIVATIONS:
                raise ShapeError(f"unknown activation '{act}'")

    @property
    def n_classes(self) -> int:
        return self.layers[-1].width


def mlp(in_dim: int, hidden: Sequence[int], classes: int,
        activation: str = "tanh") -> Architecture:
    layers = tuple(Dense(h, activation) for h in hidden) + (Dense(classes),)
    return Architecture((in_dim,), layers)


def cnn3(input_hw: tuple[int, int] = (28, 28), in_channels: int = 1,
         classes: int = 10) -> Architecture:
    """The canonical small image net: conv3x3x16, conv3x3x32, dense head."""
    return Architecture(input_hw + (in_channels,),
                        (Conv(3, 16), Conv(3, 32), Dense(classes)))


@dataclass
class ModelState:
    arch: Architecture
    params: dict[str, Tensor]
    momentum: dict[str, np.ndarray] = field(default_factory=dict)

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


def _layer_shapes(arch: Architecture):
    """Yield (name, weight_shape, bias_shape, fan_in) per layer."""
    shape = arch.input_shape
    for i, layer in enumerate(arch.layers):
        name = f"layer{i}"
        if isinstance(layer, Conv):
            k, cout = layer.kernel, layer.channels
            cin = shape[2]
            yield name, (k, k, cin, cout), (cout,), k * k * cin
            shape = (shape[0], shape[1], cout)
        else:
            fan_in = int(np.prod(shape))
            yield name, (fan_in, layer.width), (layer.width,), fan_in
            shape = (layer.width,)


def build_model(arch: Architecture, rng: np.random.Generator) -> ModelState:
    """Fresh parameters: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    params: dict[str, Tensor] = {}
    momentum: dict[str, np.ndarray] = {}
    for name, w_shape, b_shape, fan_in in _layer_shapes(arch):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, size=w_shape),
                                     requires_grad=True)
        params[f"{name}.b"] = Tensor(np.zeros(b_shape), requires_grad=True)
        momentum[f"{name}.w"] = np.zeros(w_shape)
        momentum[f"{name}.b"] = np.zeros(b_shape)
    return ModelState(arch, params, momentum)


def forward(model: ModelState, x, params: Mapping[str, Tensor] | None = None) -> Tensor:
    """Logits for a batch. ``params`` overrides the model's own parameters,
    which is how simulated (post-inner-step) weights are evaluated."""
    p = model.params if params is None else params
    h = eng.as_tensor(x)
    expected = model.arch.input_shape
    if h.shape[1:] != expected:
        raise ShapeError(f"forward: batch shape {h.shape} does not match input {expected}")
    for i, layer in enumerate(model.arch.layers):
        name = f"layer{i}"
        if isinstance(layer, Conv):
            h = eng.conv2d(h, p[f"{name}.w"])
            h = eng.bias_add(h, p[f"{name}.b"])
        else:
            if h.ndim > 2:
                h = eng.reshape(h, (h.shape[0], -1))
            h = eng.bias_add(eng.matmul(h, p[f"{name}.w"]), p[f"{name}.b"])
        if layer.activation is not None:
            h = ACTIVATIONS[layer.activation](h)
    return h


def clone_for_meta(model: ModelState) -> ModelState:
    """Deep-copied parameter leaves, zero momentum: the simulated inner update
    is plain gradient descent and must not disturb the real optimizer state."""
    params = {name: Tensor(p.data.copy(), requires_grad=True)
              for name, p in model.params.items()}
    momentum = {name: np.zeros_like(m) for name, m in model.momentum.items()}
    return ModelState(model.arch, params, momentum)


def param_gradients(loss: Tensor, model: ModelState,
                    create_graph: bool = False) -> dict[str, Tensor]:
    names = list(model.params)
    grads = eng.backward(loss, [model.params[n] for n in names], create_graph)
    return dict(zip(names, grads))


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    cosine_anneal: bool = False
    horizon: int = 0  # annealing length in epochs; required when cosine_anneal

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.cosine_anneal and self.horizon < 1:
            raise ValueError("cosine_anneal requires a positive horizon")

    def lr_at(self, epoch: int) -> float:
        if not self.cosine_anneal:
            return self.learning_rate
        t = min(max(epoch, 0), self.horizon)
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * t / self.horizon))


def sgd_step(model: ModelState, grads: Mapping[str, Tensor | np.ndarray],
             config: OptimizerConfig, lr: float | None = None) -> None:
    """In-place heavy-ball update. Weight decay folds into the gradient before
    the momentum buffer: m <- mu*m + (g + wd*theta); theta <- theta - lr*m."""
    step_lr = config.learning_rate if lr is None else lr
    for name, p in model.params.items():
        if name not in grads:
            raise KeyError(f"sgd_step: missing gradient for parameter '{name}'")
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(f"sgd_step: gradient shape {g.shape} vs parameter "
                             f"{p.data.shape} for '{name}'")
        m = model.momentum[name]
        m *= config.momentum
        m += g + config.weight_decay * p.data
        p.data = p.data - step_lr * m  # fresh array; retained graphs keep old leaves


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy against (possibly mixed) label distributions."""
    labels = eng.as_tensor(labels)
    if logits.shape != labels.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    ls = eng.log_softmax(logits)
    return eng.scale(eng.sum_reduce(eng.mul(labels, ls)), -1.0 / logits.shape[0])


def predict(model: ModelState, x, batch: int = 512) -> np.ndarray:
    """Argmax class per row, evaluated without recording a graph."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(len(x), dtype=np.int64)
    with eng.no_grad():
        for lo in range(0, len(x), batch):
            logits = forward(model, x[lo:lo + batch]).data
            out[lo:lo + batch] = logits.argmax(axis=1)
    return out


def error_rate(model: ModelState, x, y: np.ndarray) -> float:
    if len(x) == 0:
        return float("nan")
    return float(np.mean(predict(model, x) != np.asarray(y)))


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels out of range for {classes} classes")
    return np.eye(classes, dtype=np.float64)[labels]


# ---------------------------------------------------------------------------
# checkpoints


def _arch_to_json(arch: Architecture) -> str:
    layers = []
    for layer in arch.layers:
        if isinstance(layer, Conv):
            layers.append({"kind": "conv", "kernel": layer.kernel,
                           "channels": layer.channels, "activation": layer.activation})
        else:
            layers.append({"kind": "dense", "width": layer.width,
                           "activation": layer.activation})
    return json.dumps({"input_shape": list(arch.input_shape), "layers": layers})


def _arch_from_json(text: str) -> Architecture:
    spec = json.loads(text)
    layers = []
    for entry in spec["layers"]:
        if entry["kind"] == "conv":
            layers.append(Conv(entry["kernel"], entry["channels"], entry["activation"]))
        else:
            layers.append(Dense(entry["width"], entry["activation"]))
    return Architecture(tuple(spec["input_shape"]), tuple(layers))


def save_model(model: ModelState, path) -> None:
    """npz checkpoint; float64 arrays round-trip bit-exactly."""
    payload = {"__arch__": np.array(_arch_to_json(model.arch))}
    for name, p in model.params.items():
        payload[f"p:{name}"] = p.data
    for name, m in model.momentum.items():
        payload[f"m:{name}"] = m
    np.savez(path, **payload)


def load_model(path) -> ModelState:
    with np.load(path, allow_pickle=False) as blob:
        arch = _arch_from_json(str(blob["__arch__"]))
        params = {key[2:]: Tensor(blob[key], requires_grad=True)
                  for key in blob.files if key.startswith("p:")}
        momentum = {key[2:]: np.array(blob[key])
                    for key in blob.files if key.startswith("m:")}
    return ModelState(arch, params, momentum)
