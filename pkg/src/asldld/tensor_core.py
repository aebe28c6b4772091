"""Hand-derived forward/backward primitives for the denoising network.

Tensors are plain float64 ``numpy.ndarray`` objects in NCHW layout. Every
function here is pure: inputs are never modified, and batch-norm returns its
updated running statistics instead of mutating the parameter object.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


@dataclass
class ConvParams:
    weights: np.ndarray  # [out, in, kh, kw]
    bias: np.ndarray  # [out]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]


@dataclass
class BnParams:
    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    momentum: float = 0.1
    eps: float = 1e-5

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"BnParams.eps must be positive, got {self.eps}")
        if not 0 < self.momentum <= 1:
            raise ValueError(f"BnParams.momentum must lie in (0, 1], got {self.momentum}")
        if self.running_var is not None and np.any(self.running_var < 0):
            raise ValueError("BnParams.running_var must be non-negative")

    @classmethod
    def identity(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> "BnParams":
        return cls(
            scale=np.ones(channels, DTYPE),
            shift=np.zeros(channels, DTYPE),
            running_mean=np.zeros(channels, DTYPE),
            running_var=np.ones(channels, DTYPE),
            momentum=momentum,
            eps=eps,
        )


@dataclass
class BnCache:
    x_hat: np.ndarray
    inv_std: np.ndarray  # [C]
    shape: tuple


@dataclass
class LossTerms:
    data_term: float
    prior_term: float
    alpha: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.data_term + self.alpha * self.prior_term


# ---------------------------------------------------------------- convolution


def _check_conv(input: np.ndarray, params: ConvParams, pad: int) -> None:
    w = params.weights
    if input.ndim != 4:
        raise ValueError(f"conv2d expects a 4-D [N,C,H,W] input, got shape {input.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError(f"conv2d weights must be [O,C,k,k], got shape {w.shape}")
    if input.shape[1] != w.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input shape {input.shape} vs weight shape {w.shape}"
        )
    if params.bias.shape != (w.shape[0],):
        raise ValueError(f"conv2d bias shape {params.bias.shape} does not match weights {w.shape}")
    k = w.shape[2]
    if k % 2 == 0:
        raise ValueError(f"conv2d kernel size must be odd for same padding, got {k}")
    if pad != (k - 1) // 2:
        raise ValueError(f"conv2d pad must be {(k - 1) // 2} for kernel {k}, got {pad}")


def _im2col(input: np.ndarray, k: int, pad: int) -> np.ndarray:
    """Rows are output pixels (n, i, j); columns are (u, v, c) taps."""
    n, c, h, w = input.shape
    padded = np.zeros((n, h + 2 * pad, w + 2 * pad, c), DTYPE)
    padded[:, pad:pad + h, pad:pad + w, :] = input.transpose(0, 2, 3, 1)
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))  # n,h,w,c,k,k
    return windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, k * k * c)


def _weight_matrix(weights: np.ndarray) -> np.ndarray:
    o = weights.shape[0]
    return weights.transpose(0, 2, 3, 1).reshape(o, -1)


def _conv(input: np.ndarray, weights: np.ndarray, bias: np.ndarray | None, pad: int) -> np.ndarray:
    n, _, h, w = input.shape
    o, _, k, _ = weights.shape
    out = _im2col(input, k, pad) @ _weight_matrix(weights).T
    if bias is not None:
        out += bias
    return np.ascontiguousarray(out.reshape(n, h, w, o).transpose(0, 3, 1, 2))


def conv2d_forward(input: np.ndarray, params: ConvParams, pad: int) -> np.ndarray:
    """Same-size 2-D cross-correlation with zero padding, plus bias."""
    _check_conv(input, params, pad)
    return _conv(np.asarray(input, DTYPE), params.weights, params.bias, pad)


def conv2d_backward(grad_out, cached_input, params: ConvParams, pad: int):
    """Exact adjoint of :func:`conv2d_forward`.

    Returns ``(grad_input, grad_weights, grad_bias)``.
    """
    _check_conv(cached_input, params, pad)
    n, c, h, w = cached_input.shape
    o, _, k, _ = params.weights.shape
    if grad_out.shape != (n, o, h, w):
        raise ValueError(
            f"conv2d_backward grad_out shape {grad_out.shape} does not match "
            f"forward output shape {(n, o, h, w)}"
        )
    g = grad_out.transpose(0, 2, 3, 1).reshape(n * h * w, o)
    grad_bias = g.sum(axis=0)
    gw = g.T @ _im2col(cached_input, k, pad)  # [o, (u, v, c)]
    grad_weights = gw.reshape(o, k, k, c).transpose(0, 3, 1, 2)
    # Adjoint of same-padded correlation: correlate with the flipped, transposed kernel.
    flipped = params.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    grad_input = _conv(grad_out, flipped, None, k - 1 - pad)
    return grad_input, np.ascontiguousarray(grad_weights), grad_bias


# ----------------------------------------------------------------------- ReLU


def relu_forward(input: np.ndarray):
    mask = input > 0
    return np.where(mask, input, 0.0), mask


def relu_backward(grad_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if grad_out.shape != mask.shape:
        raise ValueError(f"relu_backward shape mismatch: grad {grad_out.shape} vs mask {mask.shape}")
    return np.where(mask, grad_out, 0.0)


# ---------------------------------------------------------- batch normalization


def _bn_check(input: np.ndarray, params: BnParams) -> None:
    if input.ndim != 4:
        raise ValueError(f"batch norm expects [N,C,H,W], got shape {input.shape}")
    if input.shape[1] != params.scale.shape[0]:
        raise ValueError(
            f"batch norm channel mismatch: input shape {input.shape} vs {params.scale.shape[0]} channels"
        )


def bn_forward_train(input: np.ndarray, params: BnParams):
    """Training-mode batch norm.

    Returns ``(output, cache, (running_mean, running_var))`` where the running
    statistics are the updated values; ``params`` is left untouched.
    """
    _bn_check(input, params)
    n, c, h, w = input.shape
    if n * h * w < 2:
        raise ValueError(f"batch norm needs at least 2 elements per channel, got input shape {input.shape}")
    mean = input.mean(axis=(0, 2, 3))
    centered = input - mean[None, :, None, None]
    var = np.mean(centered * centered, axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + params.eps)
    x_hat = centered * inv_std[None, :, None, None]
    out = x_hat * params.scale[None, :, None, None] + params.shift[None, :, None, None]

    m = params.momentum
    rm = np.zeros(c) if params.running_mean is None else params.running_mean
    rv = np.ones(c) if params.running_var is None else params.running_var
    running = ((1 - m) * rm + m * mean, (1 - m) * rv + m * var)
    return out, BnCache(x_hat, inv_std, input.shape), running


def bn_forward_infer(input: np.ndarray, params: BnParams) -> np.ndarray:
    _bn_check(input, params)
    if params.running_mean is None or params.running_var is None:
        raise ValueError("batch norm running statistics are not initialized")
    a = params.scale / np.sqrt(params.running_var + params.eps)
    b = params.shift - params.running_mean * a
    return input * a[None, :, None, None] + b[None, :, None, None]


def bn_backward(grad_out: np.ndarray, cache: BnCache, params: BnParams):
    """Returns ``(grad_input, grad_scale, grad_shift)``."""
    if grad_out.shape != cache.shape:
        raise ValueError(f"bn_backward grad shape {grad_out.shape} does not match cache {cache.shape}")
    if params.scale.shape[0] != cache.shape[1]:
        raise ValueError("bn_backward parameter channels do not match cache")
    m = cache.shape[0] * cache.shape[2] * cache.shape[3]
    x_hat = cache.x_hat
    grad_shift = grad_out.sum(axis=(0, 2, 3))
    grad_scale = (grad_out * x_hat).sum(axis=(0, 2, 3))
    coef = (params.scale * cache.inv_std / m)[None, :, None, None]
    grad_input = coef * (
        m * grad_out
        - grad_shift[None, :, None, None]
        - x_hat * grad_scale[None, :, None, None]
    )
    return grad_input, grad_scale, grad_shift


# ----------------------------------------------------------------------- loss


def _loss_check(y, t_y, x, gamma_scaled, alpha):
    shapes = {a.shape for a in (y, t_y, x, gamma_scaled)}
    if len(shapes) != 1:
        raise ValueError(f"loss tensors must share one shape, got {sorted(shapes)}")
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    if y.ndim == 0:
        raise ValueError("loss tensors need a leading batch axis")


def loss_forward(y, t_y, x, gamma_scaled, alpha: float) -> LossTerms:
    """Residual reconstruction loss with a grey-matter prior on the output.

    Both terms are ``1/(2N) * sum ||.||^2`` over the batch, applied to the
    denoised output ``y + t_y``.
    """
    _loss_check(y, t_y, x, gamma_scaled, alpha)
    n = y.shape[0]
    y_hat = y + t_y
    r_data = y_hat - x
    r_prior = y_hat - gamma_scaled
    data = float(np.sum(r_data * r_data)) / (2 * n)
    prior = float(np.sum(r_prior * r_prior)) / (2 * n)
    return LossTerms(data, prior, float(alpha))


def loss_backward(y, t_y, x, gamma_scaled, alpha: float) -> np.ndarray:
    """Gradient of ``loss_forward(...).total`` with respect to ``t_y``."""
    _loss_check(y, t_y, x, gamma_scaled, alpha)
    n = y.shape[0]
    y_hat = y + t_y
    grad = (y_hat - x) / n
    if alpha:
        grad = grad + (alpha / n) * (y_hat - gamma_scaled)
    return grad


# ------------------------------------------------------------------ gradcheck


def gradcheck(
    f: Callable[..., float],
    tensors: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    h: float = 1e-5,
    max_probes: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic gradients and central differences.

    ``f(*tensors)`` must return a scalar. When ``max_probes`` is given, that
    many coordinates are drawn at random across all tensors; otherwise every
    coordinate is probed.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h must lie in [1e-7, 1e-3], got {h}")
    if len(tensors) != len(analytic):
        raise ValueError("need one analytic gradient per tensor")
    work = [np.array(t, dtype=DTYPE, copy=True) for t in tensors]
    for t, g in zip(work, analytic):
        if t.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match tensor shape {t.shape}")

    coords = [(i, j) for i, t in enumerate(work) for j in range(t.size)]
    if max_probes is not None and max_probes < len(coords):
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max_probes, replace=False)
        coords = [coords[p] for p in sorted(pick)]

    worst = 0.0
    for i, j in coords:
        flat = work[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        f_plus = f(*work)
        flat[j] = orig - h
        f_minus = f(*work)
        flat[j] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"non-finite function value while probing tensor {i} index {j}")
        numeric = (f_plus - f_minus) / (2 * h)
        exact = float(np.asarray(analytic[i]).reshape(-1)[j])
        denom = max(abs(exact), abs(numeric), 1e-12)
        worst = max(worst, abs(exact - numeric) / denom)
    return worst
