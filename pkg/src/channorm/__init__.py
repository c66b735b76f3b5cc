"""Circulant convolutional networks with and without channel normalization.

The package bundles FFT-backed circulant algebra, the channel normalization
transform, forward passes for three network families, closed-form and
reverse-mode gradients, numerical checks of the linear-network theory, and
the training/landscape/histogram experiments with a small CLI.
"""

from channorm.channel_norm import NormMode, NormParams, normalize, normalize_vjp
from channorm.circulant import (
    Kernel,
    apply,
    commutation_matrix_apply,
    compose_apply,
    inverse_spectrum,
    spectrum,
)
from channorm.networks import (
    DegenerateForward,
    KernelStack,
    NetworkSpec,
    forward,
    forward_gen2d,
    forward_linear_norm,
    forward_linear_plain,
    forward_mcnn1d,
)

__all__ = [
    "DegenerateForward",
    "Kernel",
    "KernelStack",
    "NetworkSpec",
    "NormMode",
    "NormParams",
    "apply",
    "commutation_matrix_apply",
    "compose_apply",
    "forward",
    "forward_gen2d",
    "forward_linear_norm",
    "forward_linear_plain",
    "forward_mcnn1d",
    "inverse_spectrum",
    "normalize",
    "normalize_vjp",
    "spectrum",
]

__version__ = "0.1.0"
