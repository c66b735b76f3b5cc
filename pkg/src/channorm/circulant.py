"""Circulant matrices represented by their first column.

Scaling convention (used everywhere in the package): ``F`` is the unitary DFT
matrix with entries ``exp(-2j*pi*j*k/n)/sqrt(n)``, so ``F @ s`` is
``np.fft.fft(s, norm="ortho")`` and ``F^H @ s`` is ``np.fft.ifft(s, norm="ortho")``.
A circulant matrix with first column ``w`` factors as

    W = F diag(sqrt(n) F^H w) F^H

and the vector ``sqrt(n) F^H w`` holds its eigenvalues.  Kernels of size ``p``
occupy entries ``0..p-1`` of the first column; column ``j`` of ``W`` is the
first column shifted down by ``j`` (circularly).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Kernel:
    """A length-``p`` filter embedded at the top of a length-``n`` vector."""

    support: np.ndarray
    n: int

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.float64).ravel()
        if support.size > self.n:
            raise ValueError(f"kernel size {support.size} exceeds ambient dimension {self.n}")
        object.__setattr__(self, "support", support)

    @property
    def p(self) -> int:
        return self.support.size

    def embed(self) -> np.ndarray:
        w = np.zeros(self.n)
        w[: self.p] = self.support
        return w

    @classmethod
    def from_column(cls, column, p: int | None = None) -> "Kernel":
        column = np.asarray(column, dtype=np.float64)
        p = column.size if p is None else p
        if np.any(column[p:] != 0):
            raise ValueError("column has nonzero entries outside the kernel support")
        return cls(column[:p], column.size)


KernelLike = Union[Kernel, np.ndarray, Sequence[float]]


def _column(k: KernelLike) -> np.ndarray:
    if isinstance(k, Kernel):
        return k.embed()
    return np.asarray(k, dtype=np.float64)


def _check_signal(s, n: int) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (n,):
        raise ValueError(f"signal of shape {s.shape} does not match dimension {n}")
    return s


def dft(s: np.ndarray) -> np.ndarray:
    """Unitary DFT, ``F @ s``."""
    return np.fft.fft(s, norm="ortho")


def idft(s: np.ndarray) -> np.ndarray:
    """Inverse unitary DFT, ``F^H @ s``."""
    return np.fft.ifft(s, norm="ortho")


def spectrum(k: KernelLike) -> np.ndarray:
    """Eigenvalues ``sqrt(n) F^H w`` of the circulant matrix with first column ``w``."""
    w = _column(k)
    if w.ndim != 1 or w.size < 2:
        raise ValueError("kernel column must be a vector of length >= 2")
    return np.sqrt(w.size) * idft(w)


def inverse_spectrum(lam: np.ndarray) -> np.ndarray:
    """First column of the circulant matrix with eigenvalues ``lam``."""
    lam = np.asarray(lam, dtype=np.complex128)
    return dft(lam / np.sqrt(lam.size)).real


def apply(k: KernelLike, s) -> np.ndarray:
    """Multiply the circulant matrix of ``k`` with ``s`` (circular convolution)."""
    w = _column(k)
    s = _check_signal(s, w.size)
    return dft(spectrum(w) * idft(s)).real


def compose_apply(stack, s) -> np.ndarray:
    """Apply ``W_d ... W_2 W_1 s`` for the kernels in ``stack``.

    ``stack`` is any sequence of kernels (or a 2-D array with one kernel per
    row).  Evaluated as ``n^{d/2} F (prod_i diag(F^H w_i)) F^H s``.
    """
    columns = [_column(k) for k in stack]
    if not columns:
        raise ValueError("empty kernel stack")
    n = columns[0].size
    if any(c.shape != (n,) for c in columns):
        raise ValueError("all kernels must share the same ambient dimension")
    s = _check_signal(s, n)
    lam = np.prod([spectrum(c) for c in columns], axis=0)
    return dft(lam * idft(s)).real


def commutation_matrix_apply(stack, exclude: int, s, x) -> np.ndarray:
    """Action of ``X_k = prod_{i != k} W_i X`` on a kernel-space vector ``s``.

    ``X`` is the circulant matrix of the network input ``x`` and ``exclude`` is
    the 1-based index ``k`` of the layer left out.  Because circulant matrices
    commute, ``X_k w_k`` is the full network output.
    """
    columns = [_column(k) for k in stack]
    d = len(columns)
    if not 1 <= exclude <= d:
        raise IndexError(f"layer index {exclude} out of range 1..{d}")
    n = columns[0].size
    x = _check_signal(x, n)
    s = _check_signal(s, n)
    lam = spectrum(x)
    for i, c in enumerate(columns, start=1):
        if i != exclude:
            lam = lam * spectrum(c)
    return dft(lam * idft(s)).real


def commutation_matrix_transpose_apply(stack, exclude: int, r, x) -> np.ndarray:
    """Action of ``X_k^T`` on ``r``; the transpose of a real circulant has conjugate eigenvalues."""
    columns = [_column(k) for k in stack]
    d = len(columns)
    if not 1 <= exclude <= d:
        raise IndexError(f"layer index {exclude} out of range 1..{d}")
    n = columns[0].size
    lam = spectrum(_check_signal(x, n))
    for i, c in enumerate(columns, start=1):
        if i != exclude:
            lam = lam * spectrum(c)
    return dft(np.conj(lam) * idft(_check_signal(r, n))).real
