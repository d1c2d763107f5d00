"""Points on the unit ball and sphere, projection and stereographic charts.

All functions accept a single point of shape ``(d,)`` or a batch of shape
``(n, d)`` unless stated otherwise.

Stereographic charts use the coordinates of the *projected* point
``x / |x|``::

    plus:  theta_i = -x_i / (1 + x_d)     (singular at the south pole)
    minus: theta_i = +x_i / (1 - x_d)     (singular at the north pole)

The inverse maps are fixed so that ``stereo_inverse(stereo_forward(x)) == x``.
The variant with ``(2 r^2 theta, r(|theta|^2 - r^2))``
components composes with the forward map to the antipodal map on the
sphere, so it is not used here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ChartSingularity, UnsupportedDimension, ZeroVector

ZERO_TOL = 1e-14
CHART_TOL = 1e-9


def _check_dim(d: int) -> None:
    if d < 3:
        raise UnsupportedDimension(f"dimension must be >= 3, got {d}")


@dataclass(frozen=True)
class BallPoint:
    """A point of the open (or, with ``closed=True``, closed) unit ball."""

    coords: np.ndarray
    closed: bool = False

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if c.ndim != 1:
            raise ValueError("BallPoint coords must be a vector")
        _check_dim(c.size)
        r = np.linalg.norm(c)
        if (r > 1.0) if self.closed else (r >= 1.0):
            raise ValueError(f"|z| = {r} outside the {'closed' if self.closed else 'open'} unit ball")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def __array__(self, dtype=None, copy=None):
        return self.coords if dtype is None else self.coords.astype(dtype)

    @property
    def d(self) -> int:
        return self.coords.size


@dataclass(frozen=True)
class SpherePoint:
    """A unit vector; coordinates are renormalized on construction."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if c.ndim != 1:
            raise ValueError("SpherePoint coords must be a vector")
        _check_dim(c.size)
        r = np.linalg.norm(c)
        if r < ZERO_TOL:
            raise ZeroVector("cannot normalize the zero vector")
        c = c / r
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def __array__(self, dtype=None, copy=None):
        return self.coords if dtype is None else self.coords.astype(dtype)

    @property
    def d(self) -> int:
        return self.coords.size


@dataclass(frozen=True)
class StereoCoords:
    r: float | np.ndarray
    theta: np.ndarray
    chart: str  # "plus" or "minus"


def project_to_sphere(z) -> np.ndarray:
    """Radial projection ``z / |z|`` onto the unit sphere."""
    z = np.asarray(z, dtype=float)
    r = np.linalg.norm(z, axis=-1, keepdims=True)
    if np.any(r < ZERO_TOL):
        raise ZeroVector("projection of a (near) zero vector")
    return z / r


def select_chart(x) -> np.ndarray:
    """``True`` where the plus chart is used (``x_d >= 0``)."""
    return np.asarray(x, dtype=float)[..., -1] >= 0.0


def stereo_forward(x, chart: str) -> StereoCoords:
    x = np.asarray(x, dtype=float)
    if chart not in ("plus", "minus"):
        raise ValueError(f"unknown chart {chart!r}")
    r = np.linalg.norm(x, axis=-1)
    if np.any(r < ZERO_TOL):
        raise ZeroVector("stereographic coordinates need a nonzero point")
    xh = x / r[..., None]
    if chart == "plus":
        den = 1.0 + xh[..., -1]
        sign = -1.0
    else:
        den = 1.0 - xh[..., -1]
        sign = 1.0
    if np.any(den < CHART_TOL):
        raise ChartSingularity(f"point too close to the excluded pole of the {chart} chart")
    theta = sign * xh[..., :-1] / den[..., None]
    return StereoCoords(r=r, theta=theta, chart=chart)


def stereo_inverse(c: StereoCoords) -> np.ndarray:
    r = np.asarray(c.r, dtype=float)
    theta = np.asarray(c.theta, dtype=float)
    if np.any(r <= 0) or np.any(r > 1 + 1e-12):
        raise ValueError("radius must lie in (0, 1]")
    t2 = np.sum(theta**2, axis=-1)
    den = 1.0 + t2
    if c.chart == "plus":
        head = -2.0 * theta / den[..., None]
        tail = (1.0 - t2) / den
    elif c.chart == "minus":
        head = 2.0 * theta / den[..., None]
        tail = (t2 - 1.0) / den
    else:
        raise ValueError(f"unknown chart {c.chart!r}")
    xh = np.concatenate([head, tail[..., None]], axis=-1)
    return r[..., None] * xh if r.ndim else r * xh


def sample_uniform_sphere(d: int, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Uniform draw(s) on the unit sphere in R^d via normalized Gaussians."""
    _check_dim(d)
    shape = (d,) if n is None else (n, d)
    g = rng.standard_normal(shape)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)
