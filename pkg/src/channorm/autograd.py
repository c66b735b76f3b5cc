"""Gradients of the squared loss.

Loss conventions per family (``r = f(x, w) - y``):

* ``linear1c``: ``0.5 * ||r||^2``
* ``mcnn1d``: ``mean(r^2)``
* ``gen2d``: ``||r||^2``

Kernel gradients for linear1c are restricted to the kernel support (entries
outside the first ``p`` are exactly zero), which makes plain gradient descent
on the support identical to projected gradient descent on the full vectors.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from channorm.channel_norm import normalize_channels_vjp
from channorm.networks import (
    DegenerateForward,
    ForwardTrace,
    KernelStack,
    NetworkSpec,
    conv_backward,
    forward,
    forward_linear_plain,
    parseval_weights,
    tap_shifts,
)


def loss_value(spec: NetworkSpec, f: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the network output."""
    r = f - y
    if spec.family == "linear1c":
        return 0.5 * float(np.dot(r.ravel(), r.ravel())), r
    if spec.family == "mcnn1d":
        return float(np.mean(r * r)), 2.0 * r / r.size
    return float(np.sum(r * r)), 2.0 * r


def loss(spec: NetworkSpec, stack: KernelStack, x, y) -> float:
    return loss_value(spec, forward(spec, stack, x), np.asarray(y, dtype=np.float64))[0]


def _zero_like(stack: KernelStack) -> KernelStack:
    return KernelStack(
        [np.zeros_like(k) for k in stack.kernels],
        np.zeros_like(stack.out_scale),
        [np.zeros_like(g) for g in stack.gamma],
        [np.zeros_like(b) for b in stack.beta],
    )


def _exclusive_products(factors: list[np.ndarray]) -> list[np.ndarray]:
    """``prod_{i != k} factors[i]`` for every ``k`` without dividing."""
    d = len(factors)
    prefix = [np.ones_like(factors[0])]
    for f in factors[:-1]:
        prefix.append(prefix[-1] * f)
    suffix = [np.ones_like(factors[0])] * d
    for k in range(d - 2, -1, -1):
        suffix[k] = suffix[k + 1] * factors[k + 1]
    return [prefix[k] * suffix[k] for k in range(d)]


def _restrict(g: np.ndarray, p: int) -> np.ndarray:
    g = g.copy()
    g[p:] = 0.0
    return g


def _commutation_spectra(stack: KernelStack, x: np.ndarray) -> list[np.ndarray]:
    """rfft-domain eigenvalues of ``X_k = prod_{i != k} W_i X`` for every ``k``."""
    spectra = [np.fft.rfft(w) for w in stack.kernels]
    xs = np.fft.rfft(x)
    return [xs * s for s in _exclusive_products(spectra)]


def grad_plain_linear(stack: KernelStack, x, y, p: int) -> KernelStack:
    """Exact gradient of ``0.5 ||y - prod_i W_i x||^2`` for each kernel, restricted to ``p`` taps.

    Computed in the Fourier domain as ``X_k^T (prod_i W_i x - y)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same shape")
    n = x.size
    residual_hat = np.fft.rfft(forward_linear_plain(stack, x) - y)
    grads = _zero_like(stack)
    for k, lam in enumerate(_commutation_spectra(stack, x)):
        grads.kernels[k] = _restrict(np.fft.irfft(np.conj(lam) * residual_hat, n), p)
    return grads


def grad_norm_linear(stack: KernelStack, x, y, p: int) -> KernelStack:
    """Closed-form gradient of ``0.5 ||y - w_{d+1} u/||u|| ||^2`` with ``u = X_k w_k``.

    Per kernel: ``-X_k^T (w_{d+1}/||u||) (I - u u^T/||u||^2) y``, restricted to
    the support; for the scale: ``w_{d+1} - <y, u>/||u||``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    u = forward_linear_plain(stack, x)
    unorm = np.linalg.norm(u)
    if unorm < 1e-300:
        raise DegenerateForward("X_k w_k vanished")
    scale = float(stack.out_scale)
    projected = y - u * (np.dot(u, y) / unorm**2)
    upstream_hat = np.fft.rfft(-(scale / unorm) * projected)
    grads = _zero_like(stack)
    for k, lam in enumerate(_commutation_spectra(stack, x)):
        grads.kernels[k] = _restrict(np.fft.irfft(np.conj(lam) * upstream_hat, n), p)
    grads.out_scale = np.asarray(scale - np.dot(y, u) / unorm)
    return grads


def grad_reverse(spec: NetworkSpec, stack: KernelStack, x, y) -> tuple[float, KernelStack]:
    """Loss and reverse-mode gradient for any family and normalization mode.

    ReLU uses derivative 0 at 0.  Gradients of parameters that the spec does
    not train (``gamma``/``beta`` outside learned mode, ``out_scale`` of a
    plain linear network) are returned but not used by the trainers.
    """
    y = np.asarray(y, dtype=np.float64)
    trace = ForwardTrace()
    f = forward(spec, stack, x, trace)
    if y.shape != f.shape:
        raise ValueError(f"target has shape {y.shape}, expected {f.shape}")
    value, g = loss_value(spec, f, y)
    grads = _zero_like(stack)
    if spec.family == "linear1c":
        _backward_linear(spec, stack, trace, g, grads)
    else:
        _backward_multichannel(spec, stack, trace, g.ravel(), grads)
    return value, grads


def _backward_linear(spec, stack, trace, g, grads):
    # rfft-domain reverse pass; ``weights`` turns spectra products into real inner products
    n, p = spec.n, spec.kernel
    spectra = trace.kernel_spectra
    g_hat = np.fft.rfft(g)
    if not spec.norm.normalizes:
        # inputs to layer i: X prod_{j<i} W_j; adjoint reaching layer i: prod_{j>i} W_j^T g
        ones = np.ones((1, spectra.shape[1]))
        inputs = trace.inputs[0] * np.cumprod(np.vstack([ones, spectra[:-1]]), axis=0)
        adjoints = np.cumprod(np.vstack([ones, np.conj(spectra[:0:-1])]), axis=0)[::-1] * g_hat
        kernel_hat = np.conj(inputs) * adjoints
    else:
        weights = parseval_weights(n)
        grads.out_scale = np.asarray(weights @ (g_hat * np.conj(trace.features)).real / np.sqrt(n))
        gz = float(stack.out_scale) / np.sqrt(n) * g_hat
        kernel_hat = np.empty_like(spectra)
        for i in range(spec.depth - 1, -1, -1):
            gamma = float(stack.gamma[i][0])
            zhat = trace.zhat[i]
            g_gamma = float(weights @ (gz * np.conj(zhat)).real)
            grads.gamma[i] = np.array([g_gamma])
            grads.beta[i] = np.array([gz[0].real])
            ga = (gamma * trace.inv_std[i]) * (gz - zhat * (g_gamma / n))
            ga[0] = 0.0
            kernel_hat[i] = np.conj(trace.inputs[i]) * ga
            gz = np.conj(spectra[i]) * ga
    kernels = np.fft.irfft(kernel_hat, n, axis=1)
    kernels[:, p:] = 0.0
    grads.kernels = list(kernels)


def _backward_multichannel(spec, stack, trace, g, grads):
    shifts = tap_shifts(spec.family, spec.kernel)
    grads.out_scale = trace.features @ g
    gz = np.outer(stack.out_scale, g)
    for i in range(spec.depth - 1, -1, -1):
        ga = gz * (trace.post[i] > 0)
        if spec.norm.normalizes:
            ga, gg, gb = normalize_channels_vjp(ga, trace.zhat[i], trace.inv_std[i], stack.gamma[i])
            grads.gamma[i] = gg
            grads.beta[i] = gb
        grads.kernels[i], gz = conv_backward(ga, stack.kernels[i], trace.cols[i], shifts, spec.output_shape,
                                                need_input=i > 0)


def fd_check(
    loss_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: np.ndarray,
    step: float = 1e-6,
    mode: str = "central",
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Compare an analytic gradient against central finite differences.

    ``loss_and_grad(vec)`` returns ``(loss, grad)``.  Every coordinate is
    perturbed unless ``max_coords`` is given, in which case a seeded random
    subset of ``max(max_coords, 64)`` coordinates is used.  The returned error
    is ``max_i |fd_i - g_i| / max_i |g_i|``, i.e. the worst coordinate error
    measured on the scale of the gradient.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if mode != "central":
        raise ValueError("only central differences are supported")
    params = np.asarray(params, dtype=np.float64)
    _, grad = loss_and_grad(params)
    grad = np.asarray(grad, dtype=np.float64)
    coords = np.arange(params.size)
    if max_coords is not None and params.size > max(max_coords, 64):
        rng = np.random.default_rng(seed)
        coords = np.sort(rng.choice(params.size, size=max(max_coords, 64), replace=False))
    fd = np.empty(coords.size)
    for j, c in enumerate(coords):
        e = np.zeros_like(params)
        e[c] = step
        fd[j] = (loss_and_grad(params + e)[0] - loss_and_grad(params - e)[0]) / (2 * step)
    scale = np.max(np.abs(grad[coords]))
    if scale == 0.0:
        return float(np.max(np.abs(fd)))
    return float(np.max(np.abs(fd - grad[coords])) / scale)
