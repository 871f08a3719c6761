"""Dense primitives with hand-written backward passes, Adam, and a gradient checker.

Everything runs in float64. Forward functions return plain arrays; the
matching ``*_backward`` functions take the upstream gradient plus whatever
the forward needed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check.

    >>> matmul(np.array([[1., 2.], [3., 4.]]), np.array([[0.], [1.]])).tolist()
    [[2.0], [4.0]]
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: x {x.shape} incompatible with w {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"affine: bias {b.shape} does not match w {w.shape}")
    return x @ w + b


def affine_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Return ``(dx, dw, db)`` for ``out = x @ w + b``."""
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(x > 0.0, grad, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over the batch.

    Returns ``(loss, probs, grad_logits)``; the gradient already carries the
    ``1 / batch_size`` factor.
    """
    logits = as_matrix(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, d = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch of {n}")
    if n and (labels.min() < 0 or labels.max() >= d):
        raise ValueError(f"label out of range [0, {d}): {labels.tolist()}")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    probs = np.exp(log_probs)
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean()) if n else 0.0
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    if n:
        grad /= n
    return loss, probs, grad


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: kept units are scaled by ``1 / (1 - rate)``."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


@dataclass
class OptimizerState:
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float = 5e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> OptimizerState:
    """Bias-corrected Adam update, applied to ``params`` in place.

    Parameters with no entry in ``grads`` are left untouched.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: grad {g.shape} vs param {params[name].shape}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in sorted(grads):
        g = grads[name]
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            v = np.zeros_like(params[name])
        elif m.shape != g.shape:
            raise ShapeError(f"{name}: optimizer moment {m.shape} vs grad {g.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def numeric_gradient(loss_fn: Callable[[], float], array: np.ndarray, epsilon: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn`` with respect to ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        up = loss_fn()
        flat[i] = orig - epsilon
        down = loss_fn()
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(f"non-finite loss when perturbing coordinate {i}")
        gflat[i] = (up - down) / (2.0 * epsilon)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_difference_check(
    loss_fn: Callable[[], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between ``analytic`` and central differences.

    ``loss_fn`` takes no arguments and must read the arrays in ``params``,
    which are perturbed in place and restored afterwards. Relative error per
    coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    worst = 0.0
    for name in sorted(analytic):
        try:
            numeric = numeric_gradient(loss_fn, params[name], epsilon)
        except FloatingPointError as exc:
            raise FloatingPointError(f"{name}: {exc}") from None
        worst = max(worst, relative_error(np.asarray(analytic[name]), numeric))
    return worst
