"""Forward passes for the three network families.

``linear1c``
    Single-channel circular convolutions without activations.  Kernels are
    stored embedded in length-``n`` vectors (support in the first ``p``
    entries).  With normalization enabled the output is
    ``out_scale * z_{d+1} / sqrt(n)``, which equals the collapsed form
    ``out_scale * prod(W_i) x / ||prod(W_i) x||`` for centered ``x`` and
    ``eps -> 0``.
``mcnn1d``
    1-D multi-channel circular convolutions, each followed by channel
    normalization (per mode) and ReLU, then a 1x1 mixing layer to one output
    channel.  Kernel taps sit at downward shifts ``0..p-1``.
``gen2d``
    The same structure on ``H x W`` images with centered ``p x p`` kernels
    (circular padding).

None of the families uses bias terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from channorm.channel_norm import DEFAULT_EPSILON, NormMode, normalize_channels

FAMILIES = ("linear1c", "mcnn1d", "gen2d")


class DegenerateForward(ArithmeticError):
    """The network output collapsed to (numerically) zero before normalization."""


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description.

    For ``gen2d`` the image is ``n x n``.  ``channels`` is the width of every
    hidden layer and also the number of input channels for ``mcnn1d`` and
    ``gen2d``; ``linear1c`` always has one channel.
    """

    family: str
    n: int
    depth: int
    kernel: int
    channels: int = 1
    norm: NormMode = NormMode.NONE
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        object.__setattr__(self, "norm", NormMode(self.norm))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not 1 <= self.kernel <= self.n:
            raise ValueError("kernel size must satisfy 1 <= p <= n")
        if self.channels < 1:
            raise ValueError("channels must be at least 1")
        if self.family == "linear1c" and self.channels != 1:
            raise ValueError("linear1c has exactly one channel")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def positions(self) -> int:
        return self.n * self.n if self.family == "gen2d" else self.n

    @property
    def input_shape(self) -> tuple[int, ...]:
        if self.family == "linear1c":
            return (self.n,)
        if self.family == "mcnn1d":
            return (self.channels, self.n)
        return (self.channels, self.n, self.n)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return (self.n, self.n) if self.family == "gen2d" else (self.n,)


@dataclass
class KernelStack:
    """Network weights; also used to hold gradients of the same shapes.

    ``kernels[i]`` is ``(n,)`` for linear1c, ``(C, C, p)`` for mcnn1d and
    ``(C, C, p, p)`` for gen2d.  ``out_scale`` is the scalar ``w_{d+1}``
    (shape ``()``) for linear1c and the ``(C,)`` mixing weights otherwise.
    ``gamma``/``beta`` hold one ``(C,)`` array per layer.
    """

    kernels: list[np.ndarray]
    out_scale: np.ndarray
    gamma: list[np.ndarray] = field(default_factory=list)
    beta: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.kernels = [np.asarray(k, dtype=np.float64) for k in self.kernels]
        self.out_scale = np.asarray(self.out_scale, dtype=np.float64)
        if not self.gamma:
            self.gamma = [np.ones(_out_channels(k)) for k in self.kernels]
        if not self.beta:
            self.beta = [np.zeros(_out_channels(k)) for k in self.kernels]
        self.gamma = [np.asarray(g, dtype=np.float64) for g in self.gamma]
        self.beta = [np.asarray(b, dtype=np.float64) for b in self.beta]
        if len(self.gamma) != len(self.kernels) or len(self.beta) != len(self.kernels):
            raise ValueError("gamma/beta need one entry per layer")

    @property
    def depth(self) -> int:
        return len(self.kernels)

    def copy(self) -> "KernelStack":
        return KernelStack(
            [k.copy() for k in self.kernels],
            self.out_scale.copy(),
            [g.copy() for g in self.gamma],
            [b.copy() for b in self.beta],
        )

    def scaled_layer(self, k: int, factor: float) -> "KernelStack":
        """Copy with the 0-based layer ``k`` kernel multiplied by ``factor``."""
        out = self.copy()
        out.kernels[k] = out.kernels[k] * factor
        return out

    @classmethod
    def linear(cls, kernels, out_scale: float = 1.0) -> "KernelStack":
        return cls([np.asarray(k, dtype=np.float64) for k in kernels], np.asarray(out_scale, dtype=np.float64))


def _out_channels(kernel: np.ndarray) -> int:
    return 1 if kernel.ndim == 1 else kernel.shape[0]


def check_stack(spec: NetworkSpec, stack: KernelStack) -> None:
    if stack.depth != spec.depth:
        raise ValueError(f"stack has {stack.depth} layers, spec expects {spec.depth}")
    C, p, n = spec.channels, spec.kernel, spec.n
    if spec.family == "linear1c":
        shape, scale_shape = (n,), ()
    elif spec.family == "mcnn1d":
        shape, scale_shape = (C, C, p), (C,)
    else:
        shape, scale_shape = (C, C, p, p), (C,)
    for i, k in enumerate(stack.kernels):
        if k.shape != shape:
            raise ValueError(f"layer {i} kernel has shape {k.shape}, expected {shape}")
        if spec.family == "linear1c" and np.any(k[p:] != 0):
            raise ValueError(f"layer {i} kernel has entries outside its support")
    if stack.out_scale.shape != scale_shape:
        raise ValueError(f"out_scale has shape {stack.out_scale.shape}, expected {scale_shape}")


# ---------------------------------------------------------------------------
# trainable-parameter bookkeeping


def trainable_blocks(spec: NetworkSpec):
    """Names of trainable blocks, in flattening order, grouped by layer.

    Returns a list with one entry per trainable layer; each entry is a list of
    ``(kind, layer_index)`` pairs.  The final entry is the output layer when it
    is trainable (always for mcnn1d/gen2d, only with normalization for linear1c).
    """
    layers = []
    for i in range(spec.depth):
        blocks = [("kernel", i)]
        if spec.norm is NormMode.LEARNED:
            blocks += [("gamma", i), ("beta", i)]
        layers.append(blocks)
    if spec.family != "linear1c" or spec.norm.normalizes:
        layers.append([("out_scale", None)])
    return layers


def _block(spec: NetworkSpec, stack: KernelStack, kind: str, i):
    if kind == "kernel":
        k = stack.kernels[i]
        return k[: spec.kernel] if spec.family == "linear1c" else k
    if kind == "out_scale":
        return stack.out_scale
    return getattr(stack, kind)[i]


def flatten(spec: NetworkSpec, stack: KernelStack) -> np.ndarray:
    """Concatenate every trainable coordinate into one vector."""
    parts = [_block(spec, stack, kind, i).ravel() for layer in trainable_blocks(spec) for kind, i in layer]
    return np.concatenate(parts)


def layer_sizes(spec: NetworkSpec, stack: KernelStack) -> list[int]:
    return [sum(_block(spec, stack, kind, i).size for kind, i in layer) for layer in trainable_blocks(spec)]


def unflatten(spec: NetworkSpec, template: KernelStack, vector: np.ndarray) -> KernelStack:
    """Inverse of :func:`flatten`; non-trainable entries are copied from ``template``."""
    out = template.copy()
    offset = 0
    for layer in trainable_blocks(spec):
        for kind, i in layer:
            block = _block(spec, out, kind, i)
            size = block.size
            values = vector[offset : offset + size].reshape(block.shape)
            if kind == "kernel":
                if spec.family == "linear1c":
                    out.kernels[i][: spec.kernel] = values
                else:
                    out.kernels[i] = values.copy()
            elif kind == "out_scale":
                out.out_scale = values.copy()
            else:
                getattr(out, kind)[i] = values.copy()
            offset += size
    if offset != vector.size:
        raise ValueError(f"vector has {vector.size} entries, expected {offset}")
    return out


def layer_norms(spec: NetworkSpec, grads: KernelStack) -> np.ndarray:
    """Euclidean norm of each trainable layer's gradient."""
    return np.array(
        [
            np.sqrt(sum(float(np.sum(_block(spec, grads, kind, i) ** 2)) for kind, i in layer))
            for layer in trainable_blocks(spec)
        ]
    )


# ---------------------------------------------------------------------------
# circular shifts for the multi-channel convolutions


@lru_cache(maxsize=64)
def tap_shifts(family: str, p: int) -> tuple[tuple[int, ...], ...]:
    """Shift applied to the input by each kernel tap, in weight order.

    The 1-D taps shift downward by ``0..p-1``; the 2-D kernels are centered,
    so tap ``(a, b)`` shifts by ``(a - p//2, b - p//2)``.
    """
    if family == "mcnn1d":
        return tuple((t,) for t in range(p))
    offsets = [o - p // 2 for o in range(p)]
    return tuple((dy, dx) for dy in offsets for dx in offsets)


@lru_cache(maxsize=64)
def _gather_1d(shifts: tuple[tuple[int, ...], ...], n: int) -> np.ndarray:
    m = np.arange(n)
    index = np.stack([(m - t) % n for (t,) in shifts])
    index.setflags(write=False)
    return index


def _wrap_pad(z: np.ndarray, reach: int) -> np.ndarray:
    """Circularly extend every spatial axis of ``z`` (``(C, *spatial)``) by ``reach`` on both sides."""
    for axis in range(1, z.ndim):
        n = z.shape[axis]
        head = [slice(None)] * z.ndim
        tail = list(head)
        head[axis] = slice(n - reach, n)
        tail[axis] = slice(0, reach)
        z = np.concatenate([z[tuple(head)], z, z[tuple(tail)]], axis=axis)
    return z


def shifted_copies(z: np.ndarray, shifts, spatial: tuple[int, ...]) -> np.ndarray:
    """Stack of circularly shifted channels, ``out[c, k, r] = z[c, r - shifts[k]]``.

    ``z`` has shape ``(C, N)`` with ``N = prod(spatial)``; the result has shape
    ``(C, K, N)``.  Short 1-D signals use a cached gather index; images are
    wrap-padded once and filled from slices, which is faster at that size.
    """
    if len(spatial) == 1:
        return np.take(z, _gather_1d(tuple(shifts), spatial[0]), axis=1)
    c = z.shape[0]
    reach = max(abs(v) for shift in shifts for v in shift)
    if reach > min(spatial):
        raise ValueError("kernel reach exceeds the signal size")
    padded = _wrap_pad(z.reshape((c,) + spatial), reach)
    out = np.empty((c, len(shifts)) + spatial)
    for k, shift in enumerate(shifts):
        window = tuple(slice(reach - o, reach - o + size) for o, size in zip(shift, spatial))
        out[:, k] = padded[(slice(None),) + window]
    return out.reshape(c, len(shifts), -1)


def conv_forward(z: np.ndarray, weight: np.ndarray, shifts, spatial: tuple[int, ...]):
    """``z``: ``(C_in, N)``; ``weight``: ``(C_out, C_in, taps...)``. Returns output and im2col buffer."""
    cols = shifted_copies(z, shifts, spatial)  # (C_in, K, N)
    c_out = weight.shape[0]
    out = weight.reshape(c_out, -1) @ cols.reshape(-1, cols.shape[-1])
    return out, cols


def conv_backward(g: np.ndarray, weight: np.ndarray, cols: np.ndarray, shifts, spatial: tuple[int, ...],
                  need_input: bool = True):
    """Weight gradient and, if asked, the input gradient (convolution with the opposite shifts)."""
    c_out = weight.shape[0]
    flat_cols = cols.reshape(-1, cols.shape[-1])
    grad_w = (flat_cols @ g.T).T.reshape(weight.shape)
    if not need_input:
        return grad_w, None
    c_in = weight.shape[1]
    opposite = tuple(tuple(-v for v in shift) for shift in shifts)
    g_cols = shifted_copies(g, opposite, spatial).reshape(-1, g.shape[-1])  # (C_out * K, N)
    w_t = np.swapaxes(weight.reshape(c_out, c_in, -1), 0, 1).reshape(c_in, -1)
    return grad_w, w_t @ g_cols


# ---------------------------------------------------------------------------
# forward passes


@lru_cache(maxsize=64)
def parseval_weights(n: int) -> np.ndarray:
    """Weights ``c`` with ``<a, b> = sum(c * Re(rfft(a) * conj(rfft(b))))`` for real ``a, b``."""
    c = np.full(n // 2 + 1, 2.0 / n)
    c[0] = 1.0 / n
    if n % 2 == 0:
        c[-1] = 1.0 / n
    c.setflags(write=False)
    return c


@dataclass
class ForwardTrace:
    """Intermediate values of one forward pass, consumed once by the backward pass.

    For linear1c every entry is an rfft spectrum; for the multi-channel
    families entries are flattened ``(C, N)`` activations.
    """

    inputs: list = field(default_factory=list)
    cols: list = field(default_factory=list)
    zhat: list = field(default_factory=list)
    inv_std: list = field(default_factory=list)
    post: list = field(default_factory=list)
    kernel_spectra: np.ndarray | None = None
    features: np.ndarray | None = None


def forward_linear_plain(stack: KernelStack, x) -> np.ndarray:
    """``prod_i W_i x``; ``out_scale`` is ignored."""
    x = np.asarray(x, dtype=np.float64)
    for w in stack.kernels:
        if w.shape != x.shape:
            raise ValueError(f"kernel shape {w.shape} does not match input shape {x.shape}")
    lam = np.prod(np.fft.rfft(np.stack(stack.kernels), axis=1), axis=0)
    return np.fft.irfft(lam * np.fft.rfft(x), x.size)


def forward_linear_norm(stack: KernelStack, x) -> np.ndarray:
    """Collapsed normalized output ``w_{d+1} * u / ||u||`` with ``u = prod_i W_i x``.

    Requires a centered ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    if abs(x.sum()) > 1e-8 * max(1.0, np.abs(x).sum()):
        raise ValueError("forward_linear_norm requires a centered input")
    u = forward_linear_plain(stack, x)
    norm = np.linalg.norm(u)
    if norm < 1e-300:
        raise DegenerateForward("prod(W_i) x vanished")
    return float(stack.out_scale) * u / norm


def _forward_linear(spec: NetworkSpec, stack: KernelStack, x, trace: ForwardTrace | None):
    # Everything stays in the rfft domain: convolution is a per-bin product,
    # centering zeroes the DC bin and the variance follows from Parseval.
    n = spec.n
    spectra = np.fft.rfft(np.stack(stack.kernels), axis=1)
    z = np.fft.rfft(x)
    if trace is not None:
        trace.kernel_spectra = spectra
        trace.inputs.append(z)
    if not spec.norm.normalizes:
        return np.fft.irfft(np.prod(spectra, axis=0) * z, n)
    weights = parseval_weights(n)
    for i in range(spec.depth):
        a = spectra[i] * z
        a[0] = 0.0
        var = float(weights @ (a.real**2 + a.imag**2)) / n
        inv_std = 1.0 / np.sqrt(var + spec.epsilon)
        zhat = a * inv_std
        z = zhat * float(stack.gamma[i][0])
        z[0] += float(stack.beta[i][0]) * n
        if trace is not None:
            trace.zhat.append(zhat)
            trace.inv_std.append(inv_std)
            trace.inputs.append(z)
    if trace is not None:
        trace.features = z
    return float(stack.out_scale) / np.sqrt(n) * np.fft.irfft(z, n)


def _forward_multichannel(spec: NetworkSpec, stack: KernelStack, x, trace: ForwardTrace | None):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != spec.input_shape:
        raise ValueError(f"input has shape {x.shape}, expected {spec.input_shape}")
    shifts = tap_shifts(spec.family, spec.kernel)
    spatial = spec.output_shape
    z = x.reshape(spec.channels, -1)
    for i, w in enumerate(stack.kernels):
        a, cols = conv_forward(z, w, shifts, spatial)
        if spec.norm.normalizes:
            a, zhat, inv_std = normalize_channels(a, stack.gamma[i], stack.beta[i], spec.epsilon)
        else:
            zhat = inv_std = None
        z = np.maximum(a, 0.0)
        if trace is not None:
            trace.cols.append(cols)
            trace.zhat.append(zhat)
            trace.inv_std.append(inv_std)
            trace.post.append(a)
    if trace is not None:
        trace.features = z
    return (stack.out_scale @ z).reshape(spec.output_shape)


def forward(spec: NetworkSpec, stack: KernelStack, x, trace: ForwardTrace | None = None) -> np.ndarray:
    """Network output for any family and normalization mode.

    Pass an empty :class:`ForwardTrace` to record intermediates for
    :func:`channorm.autograd.grad_reverse`.
    """
    check_stack(spec, stack)
    if spec.family == "linear1c":
        x = np.asarray(x, dtype=np.float64)
        if x.shape != spec.input_shape:
            raise ValueError(f"input has shape {x.shape}, expected {spec.input_shape}")
        return _forward_linear(spec, stack, x, trace)
    return _forward_multichannel(spec, stack, x, trace)


def forward_mcnn1d(weights: KernelStack, x, spec: NetworkSpec) -> np.ndarray:
    if spec.family != "mcnn1d":
        raise ValueError("spec family must be mcnn1d")
    check_stack(spec, weights)
    return _forward_multichannel(spec, weights, x, None)


def forward_gen2d(weights: KernelStack, x, spec: NetworkSpec) -> np.ndarray:
    if spec.family != "gen2d":
        raise ValueError("spec family must be gen2d")
    check_stack(spec, weights)
    return _forward_multichannel(spec, weights, x, None)


def with_norm(spec: NetworkSpec, mode) -> NetworkSpec:
    return replace(spec, norm=NormMode(mode))
