"""Channel normalization and its vector-Jacobian product.

Each channel is standardized over its own spatial positions, never across
channels::

    z' = (z - mean(z)) / sqrt(var(z) + eps) * gamma + beta

``var`` is the biased (divide-by-count) empirical variance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

DEFAULT_EPSILON = 1e-6


class NormMode(str, enum.Enum):
    LEARNED = "learned"
    FIXED = "fixed"
    NONE = "none"

    @property
    def normalizes(self) -> bool:
        return self is not NormMode.NONE


@dataclass(frozen=True)
class NormParams:
    gamma: float = 1.0
    beta: float = 0.0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def normalize_channels(z: np.ndarray, gamma, beta, epsilon: float = DEFAULT_EPSILON):
    """Normalize ``z`` of shape ``(C, *spatial)`` channel by channel.

    Returns the output and the standardized activations ``zhat`` together with
    the per-channel ``1/sqrt(var + eps)`` (shape ``(C, 1)``), which the VJP reuses.
    """
    shape = z.shape
    z = z.reshape(shape[0], -1)
    scale = 1.0 / z.shape[1]
    centered = z - z.sum(axis=1, keepdims=True) * scale
    var = np.einsum("ij,ij->i", centered, centered)[:, None] * scale
    inv_std = 1.0 / np.sqrt(var + epsilon)
    zhat = centered * inv_std
    out = zhat * np.reshape(gamma, (-1, 1)) + np.reshape(beta, (-1, 1))
    return out.reshape(shape), zhat.reshape(shape), inv_std


def normalize_channels_vjp(upstream: np.ndarray, zhat: np.ndarray, inv_std: np.ndarray, gamma):
    """Pull ``upstream`` back through :func:`normalize_channels`.

    Returns ``(grad_z, grad_gamma, grad_beta)`` with per-channel parameter
    gradients of shape ``(C,)``.
    """
    shape = upstream.shape
    g = upstream.reshape(shape[0], -1)
    zhat = zhat.reshape(g.shape)
    scale = 1.0 / g.shape[1]
    grad_beta = g.sum(axis=1)
    grad_gamma = np.einsum("ij,ij->i", g, zhat)
    gamma = np.reshape(gamma, (-1, 1))
    # mean(g*gamma) and mean(g*gamma*zhat) per channel
    g_mean = grad_beta[:, None] * gamma * scale
    gz_mean = grad_gamma[:, None] * gamma * scale
    grad_z = inv_std * (g * gamma - g_mean - zhat * gz_mean)
    return grad_z.reshape(shape), grad_gamma, grad_beta


def normalize(z, params: NormParams = NormParams()) -> np.ndarray:
    """Normalize a single channel ``z`` (statistics over all of its entries)."""
    z = np.asarray(z, dtype=np.float64)
    if z.size < 2:
        raise ValueError("channel must have at least two entries")
    out, _, _ = normalize_channels(z[None], params.gamma, params.beta, params.epsilon)
    return out[0]


def normalize_vjp(z, params: NormParams, upstream):
    """Exact VJP of :func:`normalize`: returns ``(grad_z, grad_gamma, grad_beta)``."""
    z = np.asarray(z, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if z.shape != upstream.shape:
        raise ValueError(f"shape mismatch: {z.shape} vs {upstream.shape}")
    _, zhat, inv_std = normalize_channels(z[None], params.gamma, params.beta, params.epsilon)
    gz, gg, gb = normalize_channels_vjp(upstream[None], zhat, inv_std, params.gamma)
    return gz[0], float(gg[0]), float(gb[0])
