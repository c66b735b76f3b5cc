"""Analytic Shepp-Logan head phantom (modified-contrast variant, values in [0, 1])."""

from __future__ import annotations

import numpy as np

# (intensity, semi-axis a, semi-axis b, center x, center y, rotation in degrees)
ELLIPSES = (
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


def pixel_coordinates(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates in ``[-1, 1]``; ``x`` grows rightwards, ``y`` upwards."""
    centers = (np.arange(size) + 0.5) * (2.0 / size) - 1.0
    x = np.broadcast_to(centers[None, :], (size, size))
    y = np.broadcast_to(-centers[:, None], (size, size))
    return x, y


def inside_ellipse(x, y, a, b, x0, y0, phi_deg):
    phi = np.deg2rad(phi_deg)
    c, s = np.cos(phi), np.sin(phi)
    u = (x - x0) * c + (y - y0) * s
    v = -(x - x0) * s + (y - y0) * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def make_phantom(size: int = 64) -> np.ndarray:
    """Sum of the ellipse indicators weighted by intensity, clipped to ``[0, 1]``."""
    if size < 16:
        raise ValueError("phantom size must be at least 16")
    x, y = pixel_coordinates(size)
    image = np.zeros((size, size))
    for intensity, a, b, x0, y0, phi in ELLIPSES:
        image[inside_ellipse(x, y, a, b, x0, y0, phi)] += intensity
    return np.clip(image, 0.0, 1.0)
