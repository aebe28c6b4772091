"""Finite-difference verification of every hand-written backward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, backward, build_model, forward
from .tensor_core import (
    BnParams,
    ConvParams,
    bn_backward,
    bn_forward_train,
    conv2d_backward,
    conv2d_forward,
    gradcheck,
    loss_backward,
    loss_forward,
    relu_backward,
    relu_forward,
)

TOLERANCE = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<12} max_rel_err={self.max_rel_error:.3e} (tol {self.tolerance:.0e})"


def _maybe_corrupt(grads, inject_bug):
    if inject_bug:
        grads = list(grads)
        grads[0] = grads[0] * 1.01
    return grads


def check_conv(seed=7, inject_bug=False, max_probes=None) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 2, 6, 6))
    params = ConvParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3))
    g = rng.standard_normal((1, 3, 6, 6))

    def f(x, w, b):
        return float(np.sum(conv2d_forward(x, ConvParams(w, b), 1) * g))

    grads = _maybe_corrupt(conv2d_backward(g, x, params, 1), inject_bug)
    err = gradcheck(f, [x, params.weights, params.bias], grads, 1e-5, max_probes, seed)
    return CheckResult("conv2d", err)


def check_relu(seed=3, inject_bug=False, max_probes=None) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 4, 4))
    x = np.where(np.abs(x) < 1e-3, 0.5, x)  # keep probes off the kink
    g = rng.standard_normal(x.shape)
    _, mask = relu_forward(x)
    grads = _maybe_corrupt([relu_backward(g, mask)], inject_bug)
    err = gradcheck(lambda x: float(np.sum(relu_forward(x)[0] * g)), [x], grads, 1e-5, max_probes, seed)
    return CheckResult("relu", err)


def check_batchnorm(seed=11, inject_bug=False, max_probes=None) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 2, 3, 3)) * 2 + 1
    bn = BnParams(rng.standard_normal(2), rng.standard_normal(2))
    g = rng.standard_normal(x.shape)

    def f(x, scale, shift):
        out, _, _ = bn_forward_train(x, BnParams(scale, shift))
        return float(np.sum(out * g))

    _, cache, _ = bn_forward_train(x, bn)
    grads = _maybe_corrupt(bn_backward(g, cache, bn), inject_bug)
    err = gradcheck(f, [x, bn.scale, bn.shift], grads, 1e-5, max_probes, seed)
    return CheckResult("batchnorm", err)


def check_loss(seed=5, inject_bug=False, max_probes=None, alpha=0.1) -> CheckResult:
    rng = np.random.default_rng(seed)
    y, t_y, x, gamma = (rng.standard_normal((3, 1, 4, 4)) for _ in range(4))
    grads = _maybe_corrupt([loss_backward(y, t_y, x, gamma, alpha)], inject_bug)
    err = gradcheck(lambda t: loss_forward(y, t, x, gamma, alpha).total, [t_y], grads,
                    1e-5, max_probes, seed)
    return CheckResult("loss", err)


def check_model(seed=1, inject_bug=False, max_probes=None, alpha=0.1) -> CheckResult:
    """Whole network (3 layers, 4 filters, 8x8) plus composite loss."""
    spec = ModelSpec(num_layers=3, filters=4, kernel=7, bn_layers=frozenset({1, 2}))
    params = build_model(spec, seed)
    rng = np.random.default_rng(seed)
    y, x, gamma = (rng.standard_normal((2, 1, 8, 8)) for _ in range(3))

    def f(*arrays):
        t_y, _, _ = forward(params.with_trainable(arrays), y, "train")
        return loss_forward(y, t_y, x, gamma, alpha).total

    t_y, _, cache = forward(params, y, "train")
    grads = backward(params, cache, loss_backward(y, t_y, x, gamma, alpha))
    grads = _maybe_corrupt(grads, inject_bug)
    arrays = params.trainable()

    # Conv biases feeding BN have an identically zero gradient; a relative error
    # is meaningless there, so require exact zeros and roundoff-level differences.
    inert = set(inert_bias_positions(params))
    for i in inert:
        if np.any(grads[i] != 0):
            return CheckResult("model", float("inf"))
        for j in range(arrays[i].size):
            probe = [a.copy() for a in arrays]
            probe[i].flat[j] += 1e-5
            f_plus = f(*probe)
            probe[i].flat[j] -= 2e-5
            if abs(f_plus - f(*probe)) / 2e-5 > 1e-7:
                return CheckResult("model", float("inf"))

    live = [k for k in range(len(arrays)) if k not in inert]

    def f_live(*live_arrays):
        full = list(arrays)
        for k, a in zip(live, live_arrays):
            full[k] = a
        return f(*full)

    err = gradcheck(f_live, [arrays[k] for k in live], [grads[k] for k in live],
                    1e-5, max_probes, seed)
    return CheckResult("model", err)


def inert_bias_positions(params) -> list[int]:
    """Indices into ``params.trainable()`` of conv biases followed by batch norm."""
    out, k = [], 0
    for layer in params.layers:
        if layer.bn is not None:
            out.append(k + 1)
            k += 4
        else:
            k += 2
    return out


ALL_CHECKS = (check_conv, check_relu, check_batchnorm, check_loss, check_model)


def run_all(inject_bug: bool = False) -> list[CheckResult]:
    # with inject_bug, corrupt the conv check only; the report must still flag it
    return [chk(inject_bug=inject_bug and chk is check_conv) for chk in ALL_CHECKS]
