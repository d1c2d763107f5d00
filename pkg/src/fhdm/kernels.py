"""Closed-form potential theory of the unit ball for standard Brownian motion.

The generator of the Brownian motion is ``(1/2) Laplacian``, so the
Green kernel below is the *occupation density*:

    E^{z0}[ int_0^{tau_R} f(W_t) dt ] = int_{B_R} G_R(z0, z) f(z) dz.

With this normalization the constant in front of the Newtonian potential
is ``2 / ((d - 2) |S^{d-1}|)``, which is what makes
``int_{B_R} G_R(z0, z) dz = (R^2 - |z0|^2) / d`` hold.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np

from .errors import Coincident, UnsupportedDimension

COINCIDENT_TOL = 1e-12
ORIGIN_TOL = 1e-10


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * pi ** (d / 2) / gamma(d / 2)


@dataclass(frozen=True)
class KernelParams:
    d: int
    sphere_area: float = field(init=False)

    def __post_init__(self):
        if self.d < 3:
            raise UnsupportedDimension(f"d must be >= 3, got {self.d}")
        object.__setattr__(self, "sphere_area", sphere_area(self.d))


def poisson_density(x, z, p: KernelParams | int) -> np.ndarray:
    """Exit density q(x | z) of Brownian motion from z, wrt surface measure."""
    if not isinstance(p, KernelParams):
        p = KernelParams(int(p))
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    diff2 = np.sum((z - x) ** 2, axis=-1)
    return (1.0 - np.sum(z**2, axis=-1)) / (p.sphere_area * diff2 ** (p.d / 2))


def log_poisson_density(x, z, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    diff2 = np.sum((z - x) ** 2, axis=-1)
    return np.log1p(-np.sum(z**2, axis=-1)) - 0.5 * d * np.log(diff2) - np.log(sphere_area(d))


def grad_log_poisson(x, z, d: int | None = None) -> np.ndarray:
    """Gradient in z of log q(x | z): the first-hitting bridge drift toward x."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if d is None:
        d = z.shape[-1]
    diff = z - x
    diff2 = np.sum(diff**2, axis=-1, keepdims=True)
    if np.any(diff2 < COINCIDENT_TOL**2):
        raise Coincident("z coincides with the exit point x")
    rz2 = np.sum(z**2, axis=-1, keepdims=True)
    return -2.0 * z / (1.0 - rz2) - d * diff / diff2


def green_kernel(z, z0, R: float, d: int) -> np.ndarray:
    """Occupation density G_R(z, z0) of Brownian motion killed on |z| = R."""
    z = np.asarray(z, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    c = 2.0 / ((d - 2) * sphere_area(d))
    rz = np.linalg.norm(z, axis=-1)
    r0 = np.linalg.norm(z0, axis=-1)
    dist = np.linalg.norm(z - z0, axis=-1)
    if np.any(dist < COINCIDENT_TOL):
        raise Coincident("Green kernel is singular at z = z0")
    if np.all(r0 < ORIGIN_TOL):
        out = c * (dist ** (2 - d) - R ** (2 - d))
    else:
        r0_safe = np.where(r0 < ORIGIN_TOL, 1.0, r0)
        z0_star = (R**2 / r0_safe**2)[..., None] * z0
        dist_star = np.linalg.norm(z - z0_star, axis=-1)
        image = (R / r0_safe) ** (d - 2) * dist_star ** (2 - d)
        image = np.where(r0 < ORIGIN_TOL, R ** (2 - d), image)
        out = c * (dist ** (2 - d) - image)
    out = np.where(rz >= R * (1 - 1e-12), 0.0, out)
    return np.maximum(out, 0.0)


def expected_exit_time(z, R: float, d: int) -> np.ndarray:
    """E^z[tau_R] = (R^2 - |z|^2) / d."""
    z = np.asarray(z, dtype=float)
    return (R**2 - np.sum(z**2, axis=-1)) / d


def radial_green_occupation(a: float, b: float, R: float, d: int) -> float:
    """Expected time spent in the shell a <= |z| <= b, started at the origin.

    Closed-form radial integral of ``G_R(., 0)`` over the shell.
    """
    c = 2.0 / ((d - 2) * sphere_area(d))
    area = sphere_area(d)
    # int_a^b area * r^(d-1) * c * (r^(2-d) - R^(2-d)) dr
    return area * c * ((b**2 - a**2) / 2 - R ** (2 - d) * (b**d - a**d) / d)
