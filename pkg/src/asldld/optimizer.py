"""ADAM with coupled L2 weight decay, global-norm clipping, and the epoch loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDivergedError
from .model import ModelParams, backward, forward
from .tensor_core import loss_backward, loss_forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    clip_norm: float = 0.1

    def __post_init__(self):
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1
    batch_size: int = 64
    epochs: int = 1
    seed: int = 0
    opt: OptConfig = field(default_factory=OptConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


@dataclass
class EpochStats:
    data_term: float
    prior_term: float
    total: float
    batches: int


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_gradients(grads, clip_norm: float):
    """Scale all gradients jointly so their global L2 norm is at most ``clip_norm``.

    Returns ``(grads, applied_scale)``.
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient passed to clip_gradients")
    norm = global_norm(grads)
    if norm <= clip_norm:
        return list(grads), 1.0
    scale = clip_norm / norm
    return [g * scale for g in grads], scale


def adam_step(params, grads, state: AdamState, cfg: OptConfig):
    """One bias-corrected ADAM update on a list of arrays.

    Gradients are used as given: decay and clipping happen in the caller.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must have equal length")
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ValueError(f"shape mismatch in adam_step: param {p.shape}, grad {np.shape(g)}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        new_p.append(p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


def train_step(params: ModelParams, state: AdamState, y, x, gamma, cfg: TrainConfig):
    """Forward, loss, backward, decay, clip and ADAM on one mini-batch."""
    t_y, _, cache = forward(params, y, "train")
    terms = loss_forward(y, t_y, x, gamma, cfg.alpha)
    if not np.isfinite(terms.total):
        return params, state, terms
    grads = backward(params, cache, loss_backward(y, t_y, x, gamma, cfg.alpha))
    params = params.with_running_stats(cache.running_stats)
    arrays = params.trainable()
    wd = cfg.opt.weight_decay
    if wd:
        grads = [g + wd * p for g, p in zip(grads, arrays)]
    grads, _ = clip_gradients(grads, cfg.opt.clip_norm)
    arrays, state = adam_step(arrays, grads, state, cfg.opt)
    return params.with_trainable(arrays), state, terms


def train_epoch(params: ModelParams, state: AdamState, patches, cfg: TrainConfig, rng: np.random.Generator):
    """One shuffled pass over ``patches`` in mini-batches (last partial batch kept).

    ``patches`` needs ``len()`` and ``take(indices) -> (inputs, targets, gm)``
    returning [k, H, W] arrays; a :class:`~asldld.data.PatchSet` qualifies.
    """
    n = len(patches)
    if n == 0:
        raise ValueError("train_epoch needs a non-empty patch set")
    order = rng.permutation(n)
    sums = np.zeros(3)
    batches = 0
    for b, start in enumerate(range(0, n, cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        y, x, gamma = (a[:, None, :, :] for a in patches.take(idx))
        params, state, terms = train_step(params, state, y, x, gamma, cfg)
        if not np.isfinite(terms.total):
            raise TrainingDivergedError(f"non-finite loss {terms.total} at batch {b}")
        sums += len(idx) * np.array([terms.data_term, terms.prior_term, terms.total])
        batches += 1
    data, prior, total = sums / n
    log.debug("epoch done: data=%.4g prior=%.4g total=%.4g", data, prior, total)
    return params, state, EpochStats(float(data), float(prior), float(total), batches)
