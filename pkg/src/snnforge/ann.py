"""Source ANN: layer graph, forward/backward passes and SGD training."""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from snnforge.activation import (
    LAMBDA_INIT,
    QuantActParams,
    act_backward,
    nq_forward,
    qcfs_forward,
)
from snnforge.errors import ShapeMismatch
from snnforge.tensor import (
    DTYPE,
    RandomSource,
    avgpool2d,
    avgpool2d_backward,
    conv2d,
    conv2d_backward,
    permutation,
)

LAYER_KINDS = ("dense", "conv2d", "avgpool", "flatten", "activation")
PARAM_KINDS = ("dense", "conv2d")


@dataclass
class LayerSpec:
    """One node of the layer graph.

    Dense weights are (out, in); conv kernels are (F, C, Kh, Kw). ``size`` is the
    avgpool window; ``act`` is set only on activation layers.
    """

    kind: str
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: int = 1
    pad: int = 0
    size: int = 2
    act: QuantActParams | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "activation" and self.act is None:
            self.act = QuantActParams()
        if self.kind in PARAM_KINDS:
            ndim = 2 if self.kind == "dense" else 4
            if self.weight is None or np.ndim(self.weight) != ndim:
                raise ValueError(f"{self.kind} layer needs a {ndim}-D weight")
            if self.bias is not None and np.shape(self.bias) != (np.shape(self.weight)[0],):
                raise ValueError(f"bias shape {np.shape(self.bias)} does not match {np.shape(self.weight)[0]} outputs")
        if self.stride < 1 or self.pad < 0 or self.size < 1:
            raise ValueError("stride and size must be >= 1, pad >= 0")


@dataclass
class NetworkDef:
    layers: list[LayerSpec]
    input_shape: tuple[int, ...]
    class_count: int
    dataset: str = ""
    arch: str = ""

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        validate_network(self)

    @property
    def activation_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind == "activation"]

    @property
    def act_params(self) -> list[QuantActParams]:
        return [self.layers[i].act for i in self.activation_indices]

    def copy(self) -> "NetworkDef":
        return copy.deepcopy(self)


def layer_output_shape(layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-sample output shape of ``layer`` for per-sample input ``shape``."""
    kind = layer.kind
    if kind == "dense":
        if len(shape) != 1 or layer.weight.shape[1] != shape[0]:
            raise ShapeMismatch(f"dense weight {layer.weight.shape} cannot take input {shape}")
        return (layer.weight.shape[0],)
    if kind == "conv2d":
        f, c, kh, kw = layer.weight.shape
        if len(shape) != 3 or shape[0] != c:
            raise ShapeMismatch(f"conv kernel {layer.weight.shape} cannot take input {shape}")
        h = (shape[1] + 2 * layer.pad - kh) // layer.stride + 1
        w = (shape[2] + 2 * layer.pad - kw) // layer.stride + 1
        if h < 1 or w < 1:
            raise ShapeMismatch(f"conv output would be empty for input {shape}")
        return (f, h, w)
    if kind == "avgpool":
        if len(shape) != 3 or shape[1] % layer.size or shape[2] % layer.size:
            raise ShapeMismatch(f"avgpool {layer.size} cannot take input {shape}")
        return (shape[0], shape[1] // layer.size, shape[2] // layer.size)
    if kind == "flatten":
        return (int(np.prod(shape)),)
    return shape


def validate_network(net: NetworkDef) -> None:
    """Check shape composition and the activation placement rule."""
    shape = net.input_shape
    for layer in net.layers:
        shape = layer_output_shape(layer, shape)
    if shape != (net.class_count,):
        raise ShapeMismatch(f"network emits {shape}, expected ({net.class_count},)")
    param_idx = [i for i, layer in enumerate(net.layers) if layer.kind in PARAM_KINDS]
    if not param_idx:
        raise ValueError("network has no parameterized layer")
    bounds = param_idx + [len(net.layers)]
    for n, (start, stop) in enumerate(zip(bounds[:-1], bounds[1:])):
        acts = sum(1 for layer in net.layers[start + 1 : stop] if layer.kind == "activation")
        last = n == len(param_idx) - 1
        if last and acts:
            raise ValueError("output layer must emit raw logits (no activation)")
        if not last and acts != 1:
            raise ValueError(f"layer {start} must be followed by exactly one activation, found {acts}")
    if any(layer.kind == "activation" for layer in net.layers[: param_idx[0]]):
        raise ValueError("activation before the first parameterized layer")


def linear_forward(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    """Apply a non-activation layer to a batch (N, ...)."""
    kind = layer.kind
    if kind == "dense":
        out = x @ layer.weight.T
        if layer.bias is not None:
            out = out + layer.bias
        return out
    if kind == "conv2d":
        return conv2d(x, layer.weight, layer.stride, layer.pad, layer.bias)
    if kind == "avgpool":
        return avgpool2d(x, layer.size)
    if kind == "flatten":
        return x.reshape(x.shape[0], -1)
    raise ValueError(f"{kind} is not a linear layer")


class ForwardTrace(NamedTuple):
    logits: np.ndarray
    acts: list[np.ndarray]  # post-activation a^l per activation layer
    pre: list[np.ndarray]  # pre-activation z^l per activation layer
    inputs: list[np.ndarray]  # input to every layer, for backward


def _batched(net: NetworkDef, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=DTYPE)
    if x.shape == net.input_shape:
        return x[None], True
    if x.shape[1:] != net.input_shape:
        raise ShapeMismatch(f"input {x.shape} does not match network input {net.input_shape}")
    return x, False


def ann_trace(net: NetworkDef, x: np.ndarray, mode: str = "eval", rs: RandomSource | None = None) -> ForwardTrace:
    """Forward pass that keeps everything needed for backward and analysis.

    In ``train`` mode activations are NQ (noise intensity ``delta``); in
    ``eval`` mode they are noise-free QCFS.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and rs is None:
        raise ValueError("train mode needs a RandomSource")
    h, single = _batched(net, x)
    acts, pre, inputs = [], [], []
    for layer in net.layers:
        inputs.append(h)
        if layer.kind == "activation":
            pre.append(h)
            h = nq_forward(h, layer.act, rs) if mode == "train" else qcfs_forward(h, layer.act)
            acts.append(h)
        else:
            h = linear_forward(layer, h)
    if single:
        return ForwardTrace(h[0], [a[0] for a in acts], [z[0] for z in pre], inputs)
    return ForwardTrace(h, acts, pre, inputs)


def ann_forward(net: NetworkDef, x: np.ndarray, mode: str = "eval", rs: RandomSource | None = None):
    """Return ``(logits, layer_outputs)``; ``layer_outputs`` are the a^l tensors."""
    trace = ann_trace(net, x, mode, rs)
    return trace.logits, trace.acts


def ann_backward(net: NetworkDef, trace: ForwardTrace, grad_logits: np.ndarray) -> dict:
    """Gradients keyed by ``(layer_index, name)``; ``name`` in weight/bias/lam."""
    grads = {}
    g = np.asarray(grad_logits, dtype=DTYPE)
    if g.ndim == 1:
        g = g[None]
    for i in range(len(net.layers) - 1, -1, -1):
        layer, x = net.layers[i], trace.inputs[i]
        if layer.kind == "dense":
            grads[(i, "weight")] = g.T @ x
            if layer.bias is not None:
                grads[(i, "bias")] = g.sum(axis=0)
            g = g @ layer.weight
        elif layer.kind == "conv2d":
            g, gk, gb = conv2d_backward(x, layer.weight, g, layer.stride, layer.pad)
            grads[(i, "weight")] = gk
            if layer.bias is not None:
                grads[(i, "bias")] = gb
        elif layer.kind == "avgpool":
            g = avgpool2d_backward(g, layer.size)
        elif layer.kind == "flatten":
            g = g.reshape(x.shape)
        else:
            g, glam = act_backward(x, layer.act, g)
            grads[(i, "lam")] = glam
    return grads


def cross_entropy_loss(logits: np.ndarray, label) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy, averaged over the batch when ``logits`` is 2-D."""
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    if single:
        logits = logits[None]
        label = np.array([label])
    label = np.asarray(label, dtype=np.int64)
    n, k = logits.shape
    if np.any(label < 0) or np.any(label >= k):
        raise ValueError(f"label out of range for {k} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), label].mean()
    grad = np.exp(logp)
    grad[np.arange(n), label] -= 1.0
    grad /= n
    grad = grad.astype(DTYPE)
    return float(loss), grad[0] if single else grad


@dataclass
class TrainConfig:
    """SGD hyperparameters. ``lam`` is excluded from weight decay."""

    lr0: float = 0.1
    epochs: int = 30
    weight_decay: float = 5e-4
    momentum: float = 0.9
    batch_size: int = 64
    L: int = 4
    tau: int | None = None  # None means tau = L
    seed: int = 0
    val_fraction: float = 0.05
    lambda_init: float = LAMBDA_INIT

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5)")
        if self.batch_size < 1 or self.L < 1:
            raise ValueError("batch_size and L must be >= 1")
        if self.tau is None:
            self.tau = self.L
        if self.tau < 1:
            raise ValueError("tau must be >= 1")


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


def sgd_step(net: NetworkDef, grads: dict, lr: float, momentum: float = 0.0, weight_decay: float = 0.0, state: dict | None = None) -> NetworkDef:
    """In-place SGD with momentum; L2 is added to the gradient (not to ``lam``).

    ``buf = momentum*buf + g + wd*w``; ``w -= lr*buf``. ``state`` carries the
    momentum buffers between calls. ``lam`` is clamped at LAMBDA_MIN.
    """
    state = {} if state is None else state
    for (i, name), g in grads.items():
        layer = net.layers[i]
        if name == "lam":
            d = g
            if momentum:
                d = state[(i, name)] = momentum * state.get((i, name), 0.0) + g
            layer.act.set_lambda(np.float32(layer.act.lam) - np.float32(lr * d))
            continue
        w = getattr(layer, name)
        d = g + DTYPE(weight_decay) * w if weight_decay else g
        if momentum:
            buf = state.get((i, name))
            d = d if buf is None else DTYPE(momentum) * buf + d
            state[(i, name)] = d
        w -= DTYPE(lr) * d
    return net


def _kaiming_uniform(rs: RandomSource, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rs.generator.uniform(-bound, bound, size=shape).astype(DTYPE)


def build_network(
    arch: str,
    input_shape: tuple[int, ...],
    class_count: int,
    L: int = 4,
    seed: int = 0,
    lambda_init: float = LAMBDA_INIT,
) -> NetworkDef:
    """Build a network from an architecture string.

    ``mlp-64-64``: dense hidden layers. ``cnn-8-16-f32``: each bare integer is a
    3x3 conv (pad 1) + activation + 2x2 avgpool, each ``fN`` a dense hidden layer.
    Every net ends with a dense layer emitting ``class_count`` logits.
    """
    tokens = arch.split("-")
    family, rest = tokens[0], tokens[1:]
    if family not in ("mlp", "cnn"):
        raise ValueError(f"unknown architecture family {family!r}")
    rs = RandomSource(seed).derive("init", arch)
    layers: list[LayerSpec] = []
    shape = tuple(input_shape)

    def act():
        return LayerSpec("activation", act=QuantActParams(lam=lambda_init, L=L))

    def dense(out):
        nonlocal shape
        if len(shape) != 1:
            layers.append(LayerSpec("flatten"))
            shape = (int(np.prod(shape)),)
        layers.append(LayerSpec("dense", _kaiming_uniform(rs, (out, shape[0]), shape[0]), np.zeros(out, DTYPE)))
        shape = (out,)

    for tok in rest:
        if family == "mlp" and re.fullmatch(r"\d+", tok):
            dense(int(tok))
            layers.append(act())
        elif family == "cnn" and re.fullmatch(r"\d+", tok):
            if len(shape) != 3:
                raise ValueError("conv stage after a dense layer")
            f, c = int(tok), shape[0]
            layers.append(LayerSpec("conv2d", _kaiming_uniform(rs, (f, c, 3, 3), c * 9), np.zeros(f, DTYPE), pad=1))
            layers.append(act())
            shape = (f, shape[1], shape[2])
            if shape[1] % 2 == 0 and shape[2] % 2 == 0:
                layers.append(LayerSpec("avgpool", size=2))
                shape = (f, shape[1] // 2, shape[2] // 2)
        elif family == "cnn" and re.fullmatch(r"f\d+", tok):
            dense(int(tok[1:]))
            layers.append(act())
        else:
            raise ValueError(f"bad architecture token {tok!r} in {arch!r}")
    dense(class_count)
    return NetworkDef(layers, tuple(input_shape), class_count, arch=arch)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate_ann(net: NetworkDef, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    """Eval-mode (noise-free) accuracy."""
    correct = 0
    for start in range(0, len(x), batch_size):
        logits, _ = ann_forward(net, x[start : start + batch_size], "eval")
        correct += int(np.sum(np.argmax(logits, axis=1) == y[start : start + batch_size]))
    return correct / len(x)


def train_epoch(
    net: NetworkDef,
    dataset,
    cfg: TrainConfig,
    epoch: int,
    rs: RandomSource,
    opt_state: dict | None = None,
    lr: float | None = None,
):
    """One shuffled pass over ``dataset`` with NQ activations.

    The shuffle order and the noise of batch ``b`` come from substreams of
    ``rs`` keyed by ``epoch`` (and ``b``), so reruns are bit-identical.
    Returns ``(net, mean_train_loss, train_accuracy)``.
    """
    x, y = dataset.x, dataset.y
    if len(x) == 0:
        raise ValueError("empty dataset")
    lr = cosine_lr(epoch, cfg) if lr is None else lr
    order = permutation(rs.derive("shuffle", epoch), len(x))
    opt_state = {} if opt_state is None else opt_state
    total_loss, correct = 0.0, 0
    for b, start in enumerate(range(0, len(x), cfg.batch_size)):
        idx = order[start : start + cfg.batch_size]
        trace = ann_trace(net, x[idx], "train", rs.derive("noise", epoch, b))
        loss, grad = cross_entropy_loss(trace.logits, y[idx])
        total_loss += loss * len(idx)
        correct += int(np.sum(np.argmax(trace.logits, axis=1) == y[idx]))
        grads = ann_backward(net, trace, grad)
        sgd_step(net, grads, lr, cfg.momentum, cfg.weight_decay, opt_state)
    return net, total_loss / len(x), correct / len(x)
