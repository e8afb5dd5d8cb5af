"""Adam with bias correction, updating parameter arrays in place."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch


class Adam:
    def __init__(self, learning_rate=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment: dict[str, np.ndarray] = {}
        self.second_moment: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        if set(params) != set(grads):
            raise ShapeMismatch("parameter and gradient names differ")
        self.step_count += 1
        correct1 = 1.0 - self.beta1**self.step_count
        correct2 = 1.0 - self.beta2**self.step_count
        for name, param in params.items():
            grad = grads[name]
            if grad.shape != param.shape:
                raise ShapeMismatch(f"gradient shape {grad.shape} != param shape {param.shape} for {name}")
            m = self.first_moment.setdefault(name, np.zeros_like(param))
            v = self.second_moment.setdefault(name, np.zeros_like(param))
            if m.shape != param.shape:
                raise ShapeMismatch(f"stale optimizer state for {name}")
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= self.learning_rate * (m / correct1) / (np.sqrt(v / correct2) + self.epsilon)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: Adam) -> Adam:
    state.step(params, grads)
    return state
