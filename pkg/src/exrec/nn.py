"""Dense linear-algebra kernel: activations, cross-entropy, Adam, gradient checking.

Everything operates on float64 numpy arrays. The model graph is small and
fixed, so the backward pass lives next to the forward pass in ``model``;
this module holds the shared numeric primitives and their contracts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericError, ShapeError

LOG_FLOOR = 1e-12

Params = dict[str, np.ndarray]


def require_finite(name: str, value: np.ndarray | float) -> None:
    """Raise NumericError unless every entry of `value` is finite."""
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite values in {name}")


def linear(weight: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Matrix-vector product `weight @ vec` with an explicit shape check."""
    if weight.ndim != 2 or vec.ndim != 1 or weight.shape[1] != vec.shape[0]:
        raise ShapeError(
            f"linear: weight shape {weight.shape} incompatible with vector shape {vec.shape}"
        )
    return weight @ vec


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-stable softmax; strictly positive output summing to 1 along `axis`."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] == 0:
        raise ShapeError("softmax: empty input")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_out: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vector-Jacobian product for softmax: p * (g - sum(g * p))."""
    inner = np.sum(grad_out * probs, axis=axis, keepdims=True)
    return probs * (grad_out - inner)


def cross_entropy(probs: np.ndarray, target: int) -> float:
    """-log(probs[target] + floor); the floor keeps the loss finite at p == 0."""
    if probs.ndim != 1:
        raise ShapeError(f"cross_entropy: expected a vector, got shape {probs.shape}")
    n = probs.shape[0]
    if not (0 <= target < n):
        raise IndexError(f"cross_entropy: target {target} out of range for {n} classes")
    return float(-np.log(probs[target] + LOG_FLOOR))


def glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


@dataclass
class AdamState:
    """Per-parameter moment accumulators for the Adam optimizer."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Params, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        state.m = {k: np.zeros_like(w) for k, w in params.items()}
        state.v = {k: np.zeros_like(w) for k, w in params.items()}
        return state


def adam_step(params: Params, grads: Params, state: AdamState) -> Params:
    """One bias-corrected Adam update. Mutates `state`, returns new parameter arrays."""
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"adam_step: gradient for unknown parameter '{name}'")
        if g.shape != params[name].shape:
            raise ShapeError(
                f"adam_step: gradient shape {g.shape} != parameter shape "
                f"{params[name].shape} for '{name}'"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adam_step: non-finite gradient for '{name}'")
    state.t += 1
    t = state.t
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    updated: Params = {}
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            updated[name] = w.copy()
            continue
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        updated[name] = w - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_param: str
    worst_index: tuple
    analytic: float
    numeric: float

    def __repr__(self) -> str:  # keeps failure output readable
        return (
            f"GradCheckResult(max_rel_err={self.max_rel_err:.3e}, "
            f"worst={self.worst_param}{list(self.worst_index)}, "
            f"analytic={self.analytic:.6e}, numeric={self.numeric:.6e})"
        )


def grad_check(loss_fn: Callable[[Params], float], params: Params,
               analytic: Params, step: float = 1e-5) -> GradCheckResult:
    """Compare analytic gradients against central finite differences.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-6); the
    denominator floor keeps coordinates where both gradients vanish from
    registering spurious error. Returns the worst coordinate found.
    """
    base = float(loss_fn(params))
    if not np.isfinite(base):
        raise NumericError("grad_check: loss is non-finite at the given parameters")
    worst = GradCheckResult(0.0, "", (), 0.0, 0.0)
    for name, w in params.items():
        a_grad = analytic[name]
        for idx in np.ndindex(*w.shape):
            perturbed = dict(params)
            wp = w.copy()
            wp[idx] = w[idx] + step
            perturbed[name] = wp
            up = float(loss_fn(perturbed))
            wp = w.copy()
            wp[idx] = w[idx] - step
            perturbed[name] = wp
            down = float(loss_fn(perturbed))
            numeric = (up - down) / (2.0 * step)
            a = float(a_grad[idx])
            denom = max(abs(a), abs(numeric), 1e-6)
            rel = abs(a - numeric) / denom
            if rel > worst.max_rel_err:
                worst = GradCheckResult(rel, name, idx, a, numeric)
    return worst
