"""Finite-difference verification of layer backward passes.

Checks run in float64: the probe loss is sum(forward(x) * R) for a fixed random
R, whose analytic input/parameter gradients are compared against central
differences.
"""

from __future__ import annotations

import numpy as np


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float((np.abs(analytic - numeric) / scale).max())


def grad_check(layer, input_shape, rng=None, epsilon=1e-4, input_fn=None) -> float:
    """Return the worst relative error across input and parameter gradients."""
    rng = rng or np.random.default_rng(0)
    if input_fn is not None:
        x = np.asarray(input_fn(rng, input_shape), dtype=np.float64)
    else:
        x = rng.standard_normal(input_shape)
    probe = rng.standard_normal(layer.forward(x, training=True).shape)

    def loss_at(x_val):
        return float((layer.forward(x_val, training=True) * probe).sum())

    layer.forward(x, training=True)
    grad_x = layer.backward(probe.copy())
    param_grads = {name: grad.copy() for name, grad in layer.gradients().items()}

    worst = 0.0
    numeric_x = np.zeros_like(x)
    flat_x = x.reshape(-1)
    num_flat = numeric_x.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + epsilon
        hi = loss_at(x)
        flat_x[i] = orig - epsilon
        lo = loss_at(x)
        flat_x[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * epsilon)
    worst = max(worst, _relative_error(grad_x, numeric_x))

    for name, param in layer.parameters().items():
        flat = param.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = loss_at(x)
            flat[i] = orig - epsilon
            lo = loss_at(x)
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * epsilon)
        worst = max(worst, _relative_error(param_grads[name].reshape(-1), numeric))
    return worst
