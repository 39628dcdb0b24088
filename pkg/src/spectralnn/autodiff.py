"""Layer contract with hand-derived gradients and a finite-difference checker.

Tensors are plain float64 ``numpy.ndarray`` values, at most 4-D in
(batch, channel, height, width) order. There is no taping or graph: every
layer caches what its own backward pass needs, and backward returns the
gradient with respect to the layer input while accumulating parameter
gradients in place. Parameter gradients are only cleared by the optimizer
step (or ``zero_grad``), so gradients accumulate across backward calls.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation


class Param:
    """A trainable array with an accumulating gradient buffer."""

    __slots__ = ("value", "grad", "frozen")

    def __init__(self, value: np.ndarray, frozen: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.frozen = frozen

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


class Layer:
    """Base class: forward caches, backward returns grad_in and accumulates
    parameter grads. One instance serves one thread at a time."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Param]:
        return []

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params())

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()


def _as_stack(x: np.ndarray) -> np.ndarray:
    if x.ndim < 2:
        raise ValueError(f"expected at least a 2-D array, got shape {x.shape}")
    return x


def lmul(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """w @ x over the trailing two axes of x, as one large matrix product."""
    out = np.tensordot(x, w, axes=([x.ndim - 2], [1]))
    return np.ascontiguousarray(np.swapaxes(out, -1, -2))


def rmul_t(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x @ w.T over the trailing two axes of x, as one large matrix product."""
    return np.tensordot(x, w, axes=([x.ndim - 1], [1]))


def rmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x @ w over the trailing two axes of x, as one large matrix product."""
    return np.tensordot(x, w, axes=([x.ndim - 1], [0]))


def sum_abt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum over leading axes of a @ b.T for stacked (..., P, M) x (..., Q, M)."""
    lead = list(range(a.ndim - 2))
    return np.tensordot(a, b, axes=(lead + [a.ndim - 1], lead + [b.ndim - 1]))


def sum_atb(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum over leading axes of a.T @ b for stacked (..., K, P) x (..., K, M)."""
    lead = list(range(a.ndim - 2))
    return np.tensordot(a, b, axes=(lead + [a.ndim - 2], lead + [b.ndim - 2]))


def two_sided_forward(x: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """w1 @ x @ w2.T over the trailing two axes of ``x``.

    Computed as the two-step product (left multiply, then right multiply by
    the transpose) over any leading batch/channel axes. Stacked inputs go
    through tensordot so each side is a single large matrix product rather
    than many tiny ones.
    """
    _as_stack(x)
    n, m = x.shape[-2:]
    if w1.shape[1] != n or w2.shape[1] != m:
        raise ValueError(
            f"weights {w1.shape}x{w2.shape} incompatible with input {x.shape}"
        )
    if x.ndim == 2:
        return (w1 @ x) @ w2.T
    return lmul(w1, rmul_t(x, w2))


def two_sided_backward(
    grad_out: np.ndarray, x: np.ndarray, w1: np.ndarray, w2: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of ``w1 @ x @ w2.T`` for grad_out of the output's shape.

    Returns (grad_x, grad_w1, grad_w2); weight gradients are summed over
    any leading axes of ``x``.
    """
    _as_stack(x)
    k, l = w1.shape[0], w2.shape[0]
    if grad_out.shape[-2:] != (k, l) or grad_out.shape[:-2] != x.shape[:-2]:
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match output of "
            f"{w1.shape} @ {x.shape} @ {w2.shape}.T"
        )
    if x.ndim == 2:
        grad_x = w1.T @ grad_out @ w2
        grad_w1 = grad_out @ w2 @ x.T
        grad_w2 = grad_out.T @ w1 @ x
        return grad_x, grad_w1, grad_w2
    g_right = rmul_t(grad_out, w2.T)  # (..., K, M): grad_out @ w2
    grad_x = lmul(w1.T, g_right)
    grad_w1 = sum_abt(g_right, x)
    grad_w2 = sum_atb(grad_out, lmul(w1, x))
    return grad_x, grad_w1, grad_w2


def matmul_transform_forward(
    x: np.ndarray, w1: np.ndarray, w2: np.ndarray
) -> np.ndarray:
    """Two-sided linear map W1 @ x @ W2.T of a single N x M matrix."""
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D input, got shape {x.shape}")
    return two_sided_forward(x, w1, w2)


def matmul_transform_backward(
    grad_out: np.ndarray, x: np.ndarray, w1: np.ndarray, w2: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the two-sided map for a 2-D input:

        grad_x  = W1.T @ grad_out @ W2
        grad_W1 = grad_out @ W2 @ x.T
        grad_W2 = grad_out.T @ W1 @ x
    """
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D input, got shape {x.shape}")
    return two_sided_backward(grad_out, x, w1, w2)


def finite_difference_check(
    layer: Layer, x: np.ndarray, epsilon: float = 1e-6
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    A fixed scalar loss sum(c * layer(x)) with deterministic pseudo-random
    coefficients ``c`` is differentiated with respect to every input entry
    and every parameter entry. The relative error denominator is
    max(|analytic|, |numeric|, 1e-8). Raises :class:`ContractViolation` if
    the layer is not deterministic.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.asarray(x, dtype=np.float64)
    out0 = layer.forward(x)
    if not np.array_equal(out0, layer.forward(x)):
        raise ContractViolation("layer produced different outputs for identical inputs")

    coeff = np.random.default_rng(0xC0FFEE).standard_normal(out0.shape)

    def loss_at(inp: np.ndarray) -> float:
        return float(np.sum(coeff * layer.forward(inp)))

    layer.zero_grad()
    layer.forward(x)
    grad_in = layer.backward(coeff.copy())

    worst = 0.0

    def compare(analytic: float, numeric: float) -> None:
        nonlocal worst
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)

    flat_x = x.reshape(-1)
    flat_gin = grad_in.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + epsilon
        plus = loss_at(x)
        flat_x[i] = orig - epsilon
        minus = loss_at(x)
        flat_x[i] = orig
        compare(flat_gin[i], (plus - minus) / (2 * epsilon))

    for p in layer.params():
        flat_v = p.value.reshape(-1)
        flat_g = p.grad.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + epsilon
            plus = loss_at(x)
            flat_v[i] = orig - epsilon
            minus = loss_at(x)
            flat_v[i] = orig
            compare(flat_g[i], (plus - minus) / (2 * epsilon))

    # leave the layer's cache consistent with the unperturbed input
    layer.forward(x)
    return worst
