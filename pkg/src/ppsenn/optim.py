"""Adam parameter updates and a finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor, backward


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState) -> AdamState:
    """Apply one bias-corrected Adam update in place and advance the state."""
    if state.lr <= 0:
        raise ValueError("adam_step: lr must be positive")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.values) for p in params]
        state.second_moment = [np.zeros_like(p.values) for p in params]
    if len(grads) != len(params):
        raise ShapeError("adam_step: params and grads length mismatch")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        g = np.zeros_like(p.values) if g is None else np.asarray(g)
        if g.shape != p.values.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.values.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.values -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


class Adam:
    """Stateful wrapper reading gradients from the parameters themselves."""

    def __init__(self, params, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)


def gradient_check(fn, params, epsilon: float = 1e-5) -> float:
    """Compare analytic gradients of a scalar-valued graph against central differences.

    `fn` rebuilds the graph from the current parameter values and returns the
    scalar output tensor. Returns the maximum over all parameter entries of
    |analytic - numeric| / max(1, |analytic|).
    """
    if not (0.0 < epsilon <= 1e-2):
        raise ValueError("gradient_check: epsilon must lie in (0, 1e-2]")
    params = list(params)
    for p in params:
        p.zero_grad()
    out = fn()
    backward(out)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = fn().item()
            flat[i] = orig - epsilon
            f_minus = fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = ga.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a))
            if err > worst:
                worst = err
    return worst
