"""Dense kernels, activation, loss, init and optimizer for the training engine."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import flops
from .sparse_core import ShapeError


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    flops.record(a.shape[0] * a.shape[1] * b.shape[1])
    return a @ b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(pre_activation: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Mask ``upstream`` with 1[pre > 0]; the derivative at exactly 0 is 0."""
    if pre_activation.shape != upstream.shape:
        raise ShapeError(f"{pre_activation.shape} != {upstream.shape}")
    return np.where(pre_activation > 0, upstream, 0.0)


def row_norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def frobenius_norm(x: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(x))))


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray, mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over masked rows and its gradient w.r.t. ``logits``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (logits.shape[0],):
        raise ShapeError("mask length must equal number of rows")
    count = int(mask.sum())
    if count == 0:
        raise ValueError("empty mask")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label outside class range")
    z = logits[mask]
    y = labels[mask]
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    log_p = z - log_norm[:, None]
    loss = -float(log_p[np.arange(count), y].mean())
    g = np.exp(log_p)
    g[np.arange(count), y] -= 1.0
    grad = np.zeros_like(logits, dtype=np.float64)
    grad[mask] = g / count
    return loss, grad


def xavier_init(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("dimensions must be positive")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param))


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns new arrays; inputs are untouched."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ShapeError("param, grad and optimizer state shapes differ")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_param, AdamState(m, v, t)


def spectral_norm(
    x: np.ndarray, tol: float = 1e-6, max_iter: int = 1000, seed: int = 0
) -> float:
    """Largest singular value by power iteration on x^T x."""
    v = np.random.default_rng(seed).standard_normal(x.shape[1])
    v /= np.linalg.norm(v)
    sigma_sq = 0.0
    for _ in range(max_iter):
        w = x.T @ (x @ v)
        new_sq = float(np.dot(v, w))
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        if abs(new_sq - sigma_sq) <= tol * new_sq:
            sigma_sq = new_sq
            break
        sigma_sq = new_sq
    # Rayleigh quotient on the final iterate
    return float(np.linalg.norm(x @ v))


def stable_rank(x: np.ndarray) -> float:
    fro_sq = float(np.sum(np.square(x)))
    if fro_sq == 0.0:
        raise ValueError("stable rank of a zero matrix is undefined")
    sigma = spectral_norm(x)
    return fro_sq / sigma**2
