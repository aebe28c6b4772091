"""Wide residual denoising CNN: conv/BN/ReLU stack with an input-to-output skip."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    SizeMismatchError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .tensor_core import (
    DTYPE,
    BnCache,
    BnParams,
    ConvParams,
    bn_backward,
    bn_forward_infer,
    bn_forward_train,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
)

CHECKPOINT_MAGIC = b"ASLD"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    num_layers: int = 5
    filters: int = 128
    kernel: int = 7
    in_channels: int = 1
    bn_layers: frozenset = frozenset({1, 2, 3, 4})  # 1-based layer indices

    def __post_init__(self):
        object.__setattr__(self, "bn_layers", frozenset(int(i) for i in self.bn_layers))
        if self.num_layers < 2:
            raise ValueError(f"ModelSpec.num_layers must be >= 2, got {self.num_layers}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"ModelSpec.kernel must be a positive odd integer, got {self.kernel}")
        if self.filters < 1:
            raise ValueError(f"ModelSpec.filters must be >= 1, got {self.filters}")
        if self.in_channels < 1:
            raise ValueError(f"ModelSpec.in_channels must be >= 1, got {self.in_channels}")
        bad = [i for i in self.bn_layers if not 1 <= i < self.num_layers]
        if bad:
            raise ValueError(
                f"ModelSpec.bn_layers entries must lie in 1..{self.num_layers - 1} "
                f"(the last layer never has BN), got {sorted(bad)}"
            )

    @property
    def pad(self) -> int:
        return (self.kernel - 1) // 2

    def channels(self, layer: int) -> tuple[int, int]:
        """(in, out) channels of 1-based ``layer``."""
        c_in = self.in_channels if layer == 1 else self.filters
        c_out = self.in_channels if layer == self.num_layers else self.filters
        return c_in, c_out


@dataclass
class Layer:
    conv: ConvParams
    bn: BnParams | None = None


@dataclass
class ModelParams:
    spec: ModelSpec
    layers: list[Layer]

    def trainable(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order: per layer weights, bias[, scale, shift]."""
        out = []
        for layer in self.layers:
            out += [layer.conv.weights, layer.conv.bias]
            if layer.bn is not None:
                out += [layer.bn.scale, layer.bn.shift]
        return out

    def with_trainable(self, arrays) -> "ModelParams":
        it = iter(arrays)
        layers = []
        for layer in self.layers:
            conv = ConvParams(next(it), next(it))
            bn = None
            if layer.bn is not None:
                bn = BnParams(
                    next(it), next(it), layer.bn.running_mean, layer.bn.running_var,
                    layer.bn.momentum, layer.bn.eps,
                )
            layers.append(Layer(conv, bn))
        return ModelParams(self.spec, layers)

    def with_running_stats(self, stats) -> "ModelParams":
        """Replace BN running statistics; ``stats`` maps layer index (0-based) to (mean, var)."""
        layers = []
        for i, layer in enumerate(self.layers):
            bn = layer.bn
            if bn is not None and i in stats:
                mean, var = stats[i]
                bn = BnParams(bn.scale, bn.shift, mean, var, bn.momentum, bn.eps)
            layers.append(Layer(layer.conv, bn))
        return ModelParams(self.spec, layers)

    def num_parameters(self) -> int:
        return sum(a.size for a in self.trainable())

    def astype_storage(self) -> "ModelParams":
        """Copy with every stored array rounded through float32."""
        def q(a):
            return None if a is None else a.astype(np.float32).astype(DTYPE)
        layers = []
        for layer in self.layers:
            bn = layer.bn
            if bn is not None:
                bn = BnParams(q(bn.scale), q(bn.shift), q(bn.running_mean), q(bn.running_var),
                              bn.momentum, bn.eps)
            layers.append(Layer(ConvParams(q(layer.conv.weights), q(layer.conv.bias)), bn))
        return ModelParams(self.spec, layers)


@dataclass
class ForwardCache:
    y: np.ndarray
    conv_inputs: list = field(default_factory=list)
    bn_caches: list = field(default_factory=list)
    relu_masks: list = field(default_factory=list)
    running_stats: dict = field(default_factory=dict)
    consumed: bool = False


def build_model(spec: ModelSpec, seed: int, bn_momentum: float = 0.1, bn_eps: float = 1e-5) -> ModelParams:
    """He-initialised parameters; biases zero, BN scale 1 / shift 0, running stats (0, 1)."""
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(1, spec.num_layers + 1):
        c_in, c_out = spec.channels(i)
        std = np.sqrt(2.0 / (c_in * spec.kernel ** 2))
        w = rng.standard_normal((c_out, c_in, spec.kernel, spec.kernel)) * std
        conv = ConvParams(w, np.zeros(c_out, DTYPE))
        bn = BnParams.identity(c_out, bn_momentum, bn_eps) if i in spec.bn_layers else None
        layers.append(Layer(conv, bn))
    return ModelParams(spec, layers)


def zero_model(spec: ModelSpec) -> ModelParams:
    """All conv weights and biases zero, so the network is the identity map."""
    return zero_convs(build_model(spec, seed=0))


def zero_convs(params: ModelParams) -> ModelParams:
    layers = []
    for layer in params.layers:
        conv = ConvParams(np.zeros_like(layer.conv.weights), np.zeros_like(layer.conv.bias))
        layers.append(Layer(conv, layer.bn))
    return ModelParams(params.spec, layers)


def forward(params: ModelParams, y: np.ndarray, mode: str = "infer"):
    """Run the network on ``y`` [N, C, H, W].

    Returns ``(t_y, y_hat, cache)`` with ``y_hat = y + t_y``; ``cache`` is
    ``None`` in inference mode.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    spec = params.spec
    y = np.asarray(y, DTYPE)
    if y.ndim != 4 or y.shape[1] != spec.in_channels:
        raise ValueError(f"model expects [N,{spec.in_channels},H,W] input, got shape {y.shape}")
    train = mode == "train"
    cache = ForwardCache(y) if train else None
    h = y
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        if train:
            cache.conv_inputs.append(h)
        h = conv2d_forward(h, layer.conv, spec.pad)
        if layer.bn is not None:
            if train:
                h, bn_cache, stats = bn_forward_train(h, layer.bn)
                cache.running_stats[i] = stats
            else:
                h, bn_cache = bn_forward_infer(h, layer.bn), None
        else:
            bn_cache = None
        mask = None
        if i != last:
            h, mask = relu_forward(h)
        if train:
            cache.bn_caches.append(bn_cache)
            cache.relu_masks.append(mask)
    t_y = h
    return t_y, y + t_y, cache


def backward(params: ModelParams, cache: ForwardCache, grad_y_hat: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients in :meth:`ModelParams.trainable` order."""
    if cache is None or not isinstance(cache, ForwardCache):
        raise ValueError("backward needs the cache from a train-mode forward pass")
    if cache.consumed:
        raise ValueError("forward cache was already consumed by a previous backward call")
    if len(cache.conv_inputs) != len(params.layers):
        raise ValueError("forward cache does not match the model's layer count")
    if grad_y_hat.shape != cache.y.shape:
        raise ValueError(f"grad shape {grad_y_hat.shape} does not match network input {cache.y.shape}")
    cache.consumed = True
    pad = params.spec.pad
    g = grad_y_hat  # the skip path carries no parameters
    per_layer = []
    for i in reversed(range(len(params.layers))):
        layer = params.layers[i]
        if cache.relu_masks[i] is not None:
            g = relu_backward(g, cache.relu_masks[i])
        bn_grads = []
        if layer.bn is not None:
            g, g_scale, g_shift = bn_backward(g, cache.bn_caches[i], layer.bn)
            bn_grads = [g_scale, g_shift]
        g, g_w, g_b = conv2d_backward(g, cache.conv_inputs[i], layer.conv, pad)
        if layer.bn is not None:
            # BN cancels any per-channel constant: this gradient is identically zero.
            g_b = np.zeros_like(g_b)
        per_layer.append([g_w, g_b] + bn_grads)
    return [a for grads in reversed(per_layer) for a in grads]


def denoise_slice(params: ModelParams, slice: np.ndarray) -> np.ndarray:
    """Inference-mode forward pass on a [1, 1, H, W] slice; returns ``y + T(y)``."""
    return forward(params, slice, "infer")[1]


def denoise_volume(params: ModelParams, volume: np.ndarray) -> np.ndarray:
    """Apply :func:`denoise_slice` to every axial (last-axis) slice of a 3-D volume."""
    out = np.empty(volume.shape, DTYPE)
    for z in range(volume.shape[2]):
        out[:, :, z] = denoise_slice(params, volume[None, None, :, :, z])[0, 0]
    return out


# ------------------------------------------------------------------ checkpoint


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: ModelParams
    step: int = 0
    seed: int = 0
    fingerprint: str | None = None


def _layer_arrays(layer: Layer) -> list[np.ndarray]:
    arrays = [layer.conv.weights, layer.conv.bias]
    if layer.bn is not None:
        arrays += [layer.bn.scale, layer.bn.shift, layer.bn.running_mean, layer.bn.running_var]
    return arrays


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    spec = ckpt.spec
    mask = sum(1 << (i - 1) for i in spec.bn_layers)
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<5I", spec.num_layers, spec.filters, spec.kernel, spec.in_channels, mask),
    ]
    for layer in ckpt.params.layers:
        for a in _layer_arrays(layer):
            parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    parts.append(struct.pack("<QQ", ckpt.step, ckpt.seed))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, bn_momentum: float = 0.1, bn_eps: float = 1e-5) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 28:
        raise TruncatedFileError(f"{path}: checkpoint header truncated ({len(raw)} bytes)")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version}")
    num_layers, filters, kernel, in_channels, mask = struct.unpack_from("<5I", raw, 8)
    bn_layers = {i for i in range(1, 33) if mask >> (i - 1) & 1}
    try:
        spec = ModelSpec(num_layers, filters, kernel, in_channels, frozenset(bn_layers))
    except ValueError as exc:
        raise SizeMismatchError(f"{path}: inconsistent model spec in header: {exc}") from None

    template = build_model(spec, 0, bn_momentum, bn_eps)
    shapes = [[a.shape for a in _layer_arrays(layer)] for layer in template.layers]
    n_floats = sum(int(np.prod(s)) for layer in shapes for s in layer)
    expected = 28 + 4 * n_floats + 16
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: truncated payload, {len(raw)} of {expected} bytes")
    if len(raw) > expected:
        raise SizeMismatchError(f"{path}: {len(raw) - expected} unexpected trailing bytes")

    offset = 28
    layers = []
    for layer_shapes, tmpl in zip(shapes, template.layers):
        arrays = []
        for shape in layer_shapes:
            count = int(np.prod(shape))
            a = np.frombuffer(raw, "<f4", count, offset).astype(DTYPE).reshape(shape)
            offset += 4 * count
            arrays.append(a)
        conv = ConvParams(arrays[0], arrays[1])
        bn = None
        if tmpl.bn is not None:
            if np.any(arrays[5] < 0):
                raise SizeMismatchError(f"{path}: negative BN running variance")
            bn = BnParams(*arrays[2:6], momentum=bn_momentum, eps=bn_eps)
        layers.append(Layer(conv, bn))
    step, seed = struct.unpack_from("<QQ", raw, offset)
    return Checkpoint(spec, ModelParams(spec, layers), step, seed)
