"""Tiny trainable image-to-image models (denoiser, super-resolver, deblurrer).

A model is a stack of 3x3 convolutions and ReLUs on the input scaled to
``[0, 1]``, closed by a skip connection back to the pixel-scale input:

* ``global_residual_noise_predict``: ``out = x - 255 * stack(x / 255)`` (DnCNN style)
* ``residual_add_input``:            ``out = x + 255 * stack(x / 255)``

Outputs are never clamped here; metrics clamp explicitly.
"""

from __future__ import annotations

import copy
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .tensor import (
    PIXEL_MAX,
    ShapeError,
    as_tensor,
    conv2d_backward,
    conv2d_forward,
    make_rng,
    relu_backward,
    relu_forward,
)

log = logging.getLogger(__name__)

CONV3X3 = "conv3x3"
RELU = "relu"
RESIDUAL_ADD_INPUT = "residual_add_input"
GLOBAL_RESIDUAL_NOISE_PREDICT = "global_residual_noise_predict"
SKIP_KINDS = (RESIDUAL_ADD_INPUT, GLOBAL_RESIDUAL_NOISE_PREDICT)

TASK_NAMES = ("denoise", "super_resolve", "deblur")


@dataclass(frozen=True)
class Task:
    """Degradation the model learns to invert.

    ``sigma`` is the denoising noise std (pixels), ``scale`` the
    super-resolution factor and ``blur_sigma``/``blur_size`` the known
    Gaussian PSF of the deblurring task.  ``blur_noise`` is additive noise
    on blurred inputs.
    """

    name: str
    sigma: float = 15.0
    scale: int = 2
    blur_sigma: float = 1.5
    blur_size: int = 7
    blur_noise: float = 0.0

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise ValueError(f"unknown task {self.name!r}; expected one of {TASK_NAMES}")

    @property
    def skip_kind(self) -> str:
        return GLOBAL_RESIDUAL_NOISE_PREDICT if self.name == "denoise" else RESIDUAL_ADD_INPUT


@dataclass
class Layer:
    kind: str
    cin: int
    cout: int
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None

    @property
    def has_params(self) -> bool:
        return self.kind == CONV3X3


@dataclass
class ForwardTrace:
    """Post-ReLU activations (one per ReLU, stack order) and the model output."""

    activations: list[np.ndarray]
    output: np.ndarray
    # per-layer inputs kept for the reverse pass
    layer_inputs: list[np.ndarray] = field(default_factory=list, repr=False)
    batched: bool = True


def validate_layers(layers: list[Layer], channels: int) -> None:
    if not layers or layers[-1].kind not in SKIP_KINDS:
        raise ValueError("layer stack must end with a skip-connection layer")
    c = channels
    for i, layer in enumerate(layers):
        if layer.kind not in (CONV3X3, RELU, *SKIP_KINDS):
            raise ValueError(f"layer {i}: unknown kind {layer.kind!r}")
        if layer.kind in SKIP_KINDS and i != len(layers) - 1:
            raise ValueError(f"layer {i}: skip connection must be the final layer")
        if layer.cin != c:
            raise ValueError(f"layer {i} ({layer.kind}) expects {layer.cin} channels, receives {c}")
        if layer.kind == CONV3X3:
            if layer.weight is None or layer.weight.shape != (3, 3, layer.cin, layer.cout):
                raise ValueError(f"layer {i}: conv weight must have shape (3, 3, {layer.cin}, {layer.cout})")
            if layer.bias is None or layer.bias.shape != (layer.cout,):
                raise ValueError(f"layer {i}: conv bias must have shape ({layer.cout},)")
        elif layer.cin != layer.cout:
            raise ValueError(f"layer {i} ({layer.kind}) cannot change channel count")
        c = layer.cout
    if c != channels:
        raise ValueError(f"stack produces {c} channels, task needs {channels}")


@dataclass
class ImageToImageModel:
    task: Task
    layers: list[Layer]
    channels: int = 1

    def __post_init__(self):
        validate_layers(self.layers, self.channels)

    @property
    def conv_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.kind == CONV3X3]

    @property
    def num_relus(self) -> int:
        return sum(l.kind == RELU for l in self.layers)

    def copy(self) -> ImageToImageModel:
        return copy.deepcopy(self)

    def _batch(self, x) -> tuple[np.ndarray, bool]:
        x = as_tensor(x)
        batched = x.ndim == 4
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[-1] != self.channels:
            raise ShapeError(
                f"model expects [H,W,{self.channels}] or [N,H,W,{self.channels}] input, got shape {x.shape}"
            )
        return x, batched

    def forward_traced(self, x) -> ForwardTrace:
        x, batched = self._batch(x)
        h = x / PIXEL_MAX
        inputs, acts = [], []
        out = None
        for layer in self.layers:
            inputs.append(h)
            if layer.kind == CONV3X3:
                h = conv2d_forward(h, layer.weight, layer.bias)
            elif layer.kind == RELU:
                h = relu_forward(h)
                acts.append(h)
            elif layer.kind == RESIDUAL_ADD_INPUT:
                out = x + PIXEL_MAX * h
            else:
                out = x - PIXEL_MAX * h
        if not batched:
            out = out[0]
            acts = [a[0] for a in acts]
        return ForwardTrace(activations=acts, output=out, layer_inputs=inputs, batched=batched)

    def forward(self, x) -> np.ndarray:
        return self.forward_traced(x).output

    __call__ = forward

    def backward(self, trace: ForwardTrace, grad_output=None, grad_activations=None,
                 need_param_grads: bool = False):
        """Reverse pass through a recorded trace.

        ``grad_output`` is dL/d(output); ``grad_activations`` optionally adds
        dL/d(activation) for each ReLU output (entries may be None).  Returns
        ``(grad_input, param_grads)`` where ``param_grads`` lists
        ``(grad_weight, grad_bias)`` per conv layer, or None.
        """
        inputs = trace.layer_inputs
        x_scaled = inputs[0]
        shape = x_scaled.shape

        def batch(g):
            g = as_tensor(g)
            g = g if trace.batched else g[None]
            if g.shape != shape:
                raise ShapeError(f"gradient shape {g.shape} does not match model output {shape}")
            return g

        grad_out = batch(grad_output) if grad_output is not None else np.zeros(shape)
        sign = 1.0 if self.layers[-1].kind == RESIDUAL_ADD_INPUT else -1.0
        grad_x = grad_out.copy()
        g = sign * PIXEL_MAX * grad_out
        relu_idx = self.num_relus
        param_grads = []
        for i in range(len(self.layers) - 2, -1, -1):
            layer = self.layers[i]
            if layer.kind == RELU:
                relu_idx -= 1
                if grad_activations is not None and grad_activations[relu_idx] is not None:
                    ga = as_tensor(grad_activations[relu_idx])
                    g = g + (ga if trace.batched else ga[None])
                g = relu_backward(inputs[i], g)
            else:
                g_in, gw, gb = conv2d_backward(inputs[i], layer.weight, g)
                if need_param_grads:
                    param_grads.append((gw, gb))
                g = g_in
        grad_x += g / PIXEL_MAX
        param_grads.reverse()
        if not trace.batched:
            grad_x = grad_x[0]
        return grad_x, (param_grads if need_param_grads else None)

    def input_gradient(self, x, loss_grad_at_output) -> np.ndarray:
        """d(sum(output * loss_grad_at_output)) / dx."""
        return self.backward(self.forward_traced(x), loss_grad_at_output)[0]

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.conv_layers:
            params.extend([layer.weight, layer.bias])
        return params


def build_model(task: Task | str, depth: int = 6, width: int = 16, seed: int = 0,
                channels: int = 1) -> ImageToImageModel:
    """Conv-ReLU stack with ``depth`` convolutions and a task-specific skip.

    Weights are He-normal from the seeded generator, biases zero.
    """
    if isinstance(task, str):
        task = Task(task)
    if depth < 2:
        raise ValueError(f"depth must be at least 2, got {depth}")
    if width < 4:
        raise ValueError(f"width must be at least 4, got {width}")
    rng = make_rng(seed)
    dims = [channels] + [width] * (depth - 1) + [channels]
    layers = []
    for i in range(depth):
        cin, cout = dims[i], dims[i + 1]
        w = rng.standard_normal((3, 3, cin, cout)) * math.sqrt(2.0 / (9 * cin))
        layers.append(Layer(CONV3X3, cin, cout, w, np.zeros(cout)))
        if i < depth - 1:
            layers.append(Layer(RELU, cout, cout))
    layers.append(Layer(task.skip_kind, channels, channels))
    return ImageToImageModel(task=task, layers=layers, channels=channels)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainingResult:
    model: ImageToImageModel
    epoch_losses: list[float]
    batch_losses: list[float]


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.lr:
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# hook(model, degraded_batch, clean_batch) -> degraded_batch, used by adversarial training
BatchHook = Callable[[ImageToImageModel, np.ndarray, np.ndarray], np.ndarray]


def train(model: ImageToImageModel, degraded: np.ndarray, clean: np.ndarray, epochs: int,
          seed: int = 0, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
          eps: float = 1e-8, batch_size: int = 16,
          batch_hook: BatchHook | None = None) -> TrainingResult:
    """Adam on the mean squared error (in [0, 1] units) of ``model(degraded)`` vs ``clean``.

    The input model is left untouched; a trained copy is returned.
    """
    degraded = as_tensor(degraded)
    clean = as_tensor(clean)
    if degraded.shape != clean.shape or degraded.ndim != 4:
        raise ShapeError(f"training pairs must be matching [N,H,W,C] arrays, got {degraded.shape} and {clean.shape}")
    model = model.copy()
    rng = make_rng(seed)
    opt = Adam(lr, beta1, beta2, eps)
    n = degraded.shape[0]
    epoch_losses, batch_losses = [], []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = degraded[idx], clean[idx]
            if batch_hook is not None:
                xb = batch_hook(model, xb, yb)
            trace = model.forward_traced(xb)
            resid = (trace.output - yb) / PIXEL_MAX
            loss = float(np.mean(resid ** 2))
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch}, batch starting at sample {start}; try a smaller learning rate"
                )
            grad_out = 2.0 * resid / (resid.size * PIXEL_MAX)
            _, pgrads = model.backward(trace, grad_out, need_param_grads=True)
            grads = [g for pair in pgrads for g in pair]
            opt.step(model.parameters(), grads)
            batch_losses.append(loss)
            total += loss * len(idx)
        epoch_losses.append(total / n)
        log.info("epoch %d/%d loss %.6g", epoch + 1, epochs, epoch_losses[-1])
    return TrainingResult(model, epoch_losses, batch_losses)


# ---------------------------------------------------------------------------
# weight files: "I2IW", u32 version, u32 layer count, u32 task code, then per
# layer u8 kind tag, four u32 dims (ky, kx, cin, cout; zero for parameterless
# layers), f64 kernel payload in [ky,kx,cin,cout] order, cout f64 biases.
# All little-endian.

MAGIC = b"I2IW"
VERSION = 1
HEADER = struct.Struct("<4sIII")
LAYER_HEADER = struct.Struct("<BIIII")
KIND_TAGS = {CONV3X3: 1, RELU: 2, RESIDUAL_ADD_INPUT: 3, GLOBAL_RESIDUAL_NOISE_PREDICT: 4}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


class WeightFileError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def weight_file_size(model: ImageToImageModel) -> int:
    size = HEADER.size
    for layer in model.layers:
        size += LAYER_HEADER.size
        if layer.has_params:
            size += 8 * (layer.weight.size + layer.bias.size)
    return size


def save_weights(model: ImageToImageModel, path) -> None:
    parts = [HEADER.pack(MAGIC, VERSION, len(model.layers), TASK_NAMES.index(model.task.name))]
    for layer in model.layers:
        if layer.has_params:
            ky, kx, cin, cout = layer.weight.shape
            parts.append(LAYER_HEADER.pack(KIND_TAGS[layer.kind], ky, kx, cin, cout))
            parts.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
        else:
            parts.append(LAYER_HEADER.pack(KIND_TAGS[layer.kind], 0, 0, 0, 0))
    Path(path).write_bytes(b"".join(parts))


def load_weights(path, task: Task | None = None) -> ImageToImageModel:
    """Read a weight file; ``task`` overrides the task parameters (the file stores only its kind)."""
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise WeightFileError("truncated header", len(data))
    magic, version, count, task_code = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise WeightFileError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise WeightFileError(f"unsupported version {version}", 4)
    if task_code >= len(TASK_NAMES):
        raise WeightFileError(f"unknown task code {task_code}", 12)
    if task is None:
        task = Task(TASK_NAMES[task_code])
    elif task.name != TASK_NAMES[task_code]:
        raise WeightFileError(f"file holds a {TASK_NAMES[task_code]} model, not {task.name}", 12)
    offset = HEADER.size
    layers = []
    channels = None
    for _ in range(count):
        if offset + LAYER_HEADER.size > len(data):
            raise WeightFileError("truncated layer header", offset)
        tag, ky, kx, cin, cout = LAYER_HEADER.unpack_from(data, offset)
        if tag not in TAG_KINDS:
            raise WeightFileError(f"unknown layer kind tag {tag}", offset)
        offset += LAYER_HEADER.size
        kind = TAG_KINDS[tag]
        if kind == CONV3X3:
            nw = ky * kx * cin * cout
            end = offset + 8 * (nw + cout)
            if end > len(data):
                raise WeightFileError("truncated layer payload", offset)
            w = np.frombuffer(data, "<f8", nw, offset).reshape(ky, kx, cin, cout).astype(np.float64)
            b = np.frombuffer(data, "<f8", cout, offset + 8 * nw).astype(np.float64)
            layers.append(Layer(kind, cin, cout, w, b))
            channels = cin if channels is None else channels
            offset = end
        else:
            c = layers[-1].cout if layers else 1
            layers.append(Layer(kind, c, c))
    if offset != len(data):
        raise WeightFileError(f"{len(data) - offset} trailing bytes", offset)
    try:
        return ImageToImageModel(task=task, layers=layers, channels=channels or 1)
    except ValueError as exc:
        raise WeightFileError(f"invalid layer stack: {exc}", HEADER.size) from exc
