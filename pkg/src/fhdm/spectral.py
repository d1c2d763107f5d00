"""Real spherical-harmonic oracle for d = 3.

Harmonics are real, orthonormal under the surface measure and carry no
Condon-Shortley phase, so ``Y_{1,-1}, Y_{1,0}, Y_{1,1}`` are proportional
to ``y, z, x``.  Index ``m < 0`` selects the sine branch.

The regular solid harmonics ``R_lm(z) = |z|^l Y_lm(z/|z|)`` are evaluated
as polynomials through the associated-Legendre recurrence

    (l - m) Q_l^m = (2l - 1) z Q_{l-1}^m - (l + m - 1) |z|^2 Q_{l-2}^m,
    Q_m^m = (2m - 1)!!,

times ``Re/Im (x + i y)^m``.  Cartesian gradients are carried through the
same recurrence, so ``grad h_N`` is exact for every degree (this is the
radial plus tangential split of the gradient written in Cartesian form).
"""
from __future__ import annotations

from dataclasses import dataclass
from math import lgamma, pi, sqrt

import numpy as np

from .errors import EnvelopeError, NotPositive, UnsupportedDimension
from .geometry import sample_uniform_sphere


def _lm_pairs(N: int) -> list[tuple[int, int]]:
    return [(l, m) for l in range(N + 1) for m in range(-l, l + 1)]


def n_coeffs(N: int) -> int:
    return (N + 1) ** 2


def _norm(l: int, m: int) -> float:
    am = abs(m)
    k = sqrt((2 * l + 1) / (4 * pi) * np.exp(lgamma(l - am + 1) - lgamma(l + am + 1)))
    return k if m == 0 else sqrt(2.0) * k


def solid_harmonics(z, N: int, grad: bool = False):
    """All ``R_lm(z)`` for ``l <= N`` in (l, m) order; optionally gradients.

    Returns ``vals`` of shape ``(..., (N+1)^2)`` and, with ``grad``, ``grads``
    of shape ``(..., (N+1)^2, 3)``.
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != 3:
        raise UnsupportedDimension("spherical-harmonic oracle supports d = 3 only")
    lead = z.shape[:-1]
    X, Y, Zc = z[..., 0], z[..., 1], z[..., 2]
    r2 = X * X + Y * Y + Zc * Zc
    zeros = np.zeros(lead)
    ones = np.ones(lead)
    e = [np.stack(v, axis=-1) for v in ((ones, zeros, zeros), (zeros, ones, zeros), (zeros, zeros, ones))]
    g_r2 = 2.0 * z

    # A_m + i B_m = (x + i y)^m
    A, B = [ones], [zeros]
    gA, gB = [np.zeros(lead + (3,))], [np.zeros(lead + (3,))]
    for m in range(1, N + 1):
        a, b = A[-1], B[-1]
        A.append(X * a - Y * b)
        B.append(X * b + Y * a)
        if grad:
            ga, gb = gA[-1], gB[-1]
            gA.append(X[..., None] * ga + a[..., None] * e[0] - Y[..., None] * gb - b[..., None] * e[1])
            gB.append(X[..., None] * gb + b[..., None] * e[0] + Y[..., None] * ga + a[..., None] * e[1])

    nc = n_coeffs(N)
    vals = np.empty(lead + (nc,))
    grads = np.empty(lead + (nc, 3)) if grad else None
    col = {lm: k for k, lm in enumerate(_lm_pairs(N))}

    for m in range(N + 1):
        dfact = float(np.prod(np.arange(2 * m - 1, 0, -2))) if m > 0 else 1.0
        Q_prev2, Q_prev = None, dfact * ones
        gQ_prev2, gQ_prev = None, np.zeros(lead + (3,))
        for l in range(m, N + 1):
            if l == m:
                Q, gQ = Q_prev, gQ_prev
            elif l == m + 1:
                Q = (2 * m + 1) * Zc * Q_prev
                gQ = (2 * m + 1) * (Zc[..., None] * gQ_prev + Q_prev[..., None] * e[2]) if grad else None
            else:
                Q = ((2 * l - 1) * Zc * Q_prev - (l + m - 1) * r2 * Q_prev2) / (l - m)
                if grad:
                    gQ = (
                        (2 * l - 1) * (Zc[..., None] * gQ_prev + Q_prev[..., None] * e[2])
                        - (l + m - 1) * (r2[..., None] * gQ_prev2 + Q_prev2[..., None] * g_r2)
                    ) / (l - m)
            if l > m:
                Q_prev2, Q_prev = Q_prev, Q
                gQ_prev2, gQ_prev = gQ_prev, gQ
            for sgn, T, gT in ((1, A[m], gA[m] if grad else None), (-1, B[m], gB[m] if grad else None)):
                if m == 0 and sgn < 0:
                    continue
                k = col[(l, sgn * m)]
                c = _norm(l, m)
                vals[..., k] = c * Q * T
                if grad:
                    grads[..., k, :] = c * (gQ * T[..., None] + Q[..., None] * gT)
    return (vals, grads) if grad else vals


def real_sph_harmonic(l: int, m: int, x) -> np.ndarray:
    """Real orthonormal spherical harmonic Y_lm at unit vector(s) x."""
    if l < 0 or abs(m) > l:
        raise ValueError(f"invalid degree/order ({l}, {m})")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise UnsupportedDimension("spherical-harmonic oracle supports d = 3 only")
    x = x / np.linalg.norm(x, axis=-1, keepdims=True)
    vals = solid_harmonics(x, l)
    return vals[..., l * l + l + m]


# --- quadrature ----------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray  # (n, 3) unit vectors
    weights: np.ndarray  # (n,), sum 4 pi
    degree: int


def quadrature_grid(degree: int) -> QuadratureGrid:
    """Gauss-Legendre (in cos theta) x trapezoid (in azimuth) product rule.

    Exact for polynomials on the sphere of total degree <= ``degree``.
    """
    L = max(int(degree), 0)
    t, wt = np.polynomial.legendre.leggauss(L + 1)
    n_phi = 2 * L + 2
    phi = 2 * pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - t * t)
    nodes = np.stack(
        [np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)), np.outer(t, np.ones(n_phi))], axis=-1
    ).reshape(-1, 3)
    weights = np.outer(wt, np.full(n_phi, 2 * pi / n_phi)).ravel()
    return QuadratureGrid(nodes, weights, L)


def surface_quadrature(f, grid: QuadratureGrid) -> float:
    return float(np.sum(np.asarray(f(grid.nodes)) * grid.weights))


# --- harmonic model --------------------------------------------------------------


@dataclass(frozen=True)
class HarmonicModel:
    """Band-limited target density (wrt normalized surface measure) and its extension.

    ``coeffs[l*l + l + m] = a_lm = int Y_lm pi* dsigma``.
    """

    N: int
    coeffs: np.ndarray
    pi_min: float
    pi_max: float

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (n_coeffs(self.N),):
            raise ValueError(f"expected {n_coeffs(self.N)} coefficients, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if not self.pi_min > 0:
            raise NotPositive(f"pi_min must be positive, got {self.pi_min}")

    def coeff(self, l: int, m: int) -> float:
        return float(self.coeffs[l * l + l + m]) if l <= self.N else 0.0

    def density(self, x) -> np.ndarray:
        """Truncated pi*(x) = sum a_lm Y_lm(x) on the sphere."""
        x = np.asarray(x, dtype=float)
        x = x / np.linalg.norm(x, axis=-1, keepdims=True)
        return solid_harmonics(x, self.N) @ self.coeffs

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"shm v1 N={self.N}\n")
            for (l, m), a in zip(_lm_pairs(self.N), self.coeffs):
                fh.write(f"{l} {m} {a:.17g}\n")

    @classmethod
    def load(cls, path) -> "HarmonicModel":
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 3 or header[:2] != ["shm", "v1"] or not header[2].startswith("N="):
                raise ValueError(f"{path}: not an 'shm v1' coefficient file")
            N = int(header[2][2:])
            coeffs = np.zeros(n_coeffs(N))
            for line in fh:
                if not line.strip() or line.startswith("#"):
                    continue
                l, m, a = line.split()
                l, m = int(l), int(m)
                if l > N or abs(m) > l:
                    raise ValueError(f"{path}: bad index ({l}, {m})")
                coeffs[l * l + l + m] = float(a)
        return from_coeffs(coeffs, N)


def _probe_grid(n_theta: int = 181, n_phi: int = 360) -> np.ndarray:
    th = np.linspace(0.0, pi, n_theta)
    ph = 2 * pi * np.arange(n_phi) / n_phi
    st = np.sin(th)
    pts = np.stack([np.outer(st, np.cos(ph)), np.outer(st, np.sin(ph)), np.outer(np.cos(th), np.ones(n_phi))], -1)
    return pts.reshape(-1, 3)


PROBE_SLACK = 1e-6


def _bounds(density) -> tuple[float, float]:
    v = density(_probe_grid())
    return float(v.min()) - PROBE_SLACK, float(v.max())


def from_coeffs(coeffs, N: int) -> HarmonicModel:
    coeffs = np.asarray(coeffs, dtype=float)
    dens = lambda x: solid_harmonics(x, N) @ coeffs  # noqa: E731
    lo, hi = _bounds(dens)
    if lo <= 0:
        raise NotPositive(f"band-limited density is not positive (probe min {lo + PROBE_SLACK:.3g})")
    return HarmonicModel(N, coeffs, lo, hi)


def fit_coeffs(pi_star, N: int, grid: QuadratureGrid | None = None) -> HarmonicModel:
    """Project a density (wrt normalized surface measure) onto degree <= N."""
    if grid is None:
        grid = quadrature_grid(2 * N + 2)
    Y = solid_harmonics(grid.nodes, N)
    vals = np.asarray(pi_star(grid.nodes), dtype=float)
    coeffs = Y.T @ (vals * grid.weights)
    lo, _ = _bounds(pi_star)
    if lo <= 0:
        raise NotPositive(f"target density has non-positive values (probe min {lo + PROBE_SLACK:.3g})")
    _, hi = _bounds(lambda x: solid_harmonics(x, N) @ coeffs)
    return HarmonicModel(N, coeffs, lo, hi)


def h_truncated(z, model: HarmonicModel) -> np.ndarray:
    """h_N(z) = sum a_lm |z|^l Y_lm(z/|z|)."""
    return solid_harmonics(z, model.N) @ model.coeffs


def grad_h_truncated(z, model: HarmonicModel) -> np.ndarray:
    _, g = solid_harmonics(z, model.N, grad=True)
    return np.einsum("...kj,k->...j", g, model.coeffs)


def oracle_score(z, model: HarmonicModel) -> np.ndarray:
    """Exact score grad log h_N = grad h_N / h_N."""
    v, g = solid_harmonics(z, model.N, grad=True)
    h = v @ model.coeffs
    return np.einsum("...kj,k->...j", g, model.coeffs) / h[..., None]


def log_h(z, model: HarmonicModel) -> np.ndarray:
    return np.log(h_truncated(z, model))


def sample_target(model: HarmonicModel, rng: np.random.Generator, n: int = 1, envelope: float | None = None,
                  return_rate: bool = False):
    """Rejection sampler for the density ``pi*/4pi`` wrt surface measure.

    Proposals are uniform; the envelope defaults to the probe maximum of
    pi* with a relative slack of 1e-3.
    """
    env = model.pi_max * (1 + 1e-3) if envelope is None else float(envelope)
    out = np.empty((0, 3))
    tried = accepted = 0
    while out.shape[0] < n:
        m = max(64, int(1.2 * (n - out.shape[0]) * env) + 16)
        x = sample_uniform_sphere(3, rng, m)
        p = model.density(x)
        if np.any(p > env):
            raise EnvelopeError(f"density {p.max():.6g} exceeds envelope {env:.6g}")
        keep = rng.uniform(0.0, env, m) < p
        tried += m
        accepted += int(keep.sum())
        out = np.vstack([out, x[keep]])
    out = out[:n]
    return (out, accepted / tried) if return_rate else out


# --- builtin targets -------------------------------------------------------------

Y10_NORM = sqrt(3.0 / (4.0 * pi))


def uniform_model() -> HarmonicModel:
    c = np.zeros(1)
    c[0] = sqrt(4 * pi)
    return from_coeffs(c, 0)


def y10_model() -> HarmonicModel:
    """pi* = 1 + Y_10, i.e. h(z) = 1 + sqrt(3/4pi) z_3."""
    c = np.zeros(4)
    c[0] = sqrt(4 * pi)
    c[2] = 1.0
    return from_coeffs(c, 1)


def vmf_density(kappa: float, mu) -> callable:
    """von Mises-Fisher density wrt normalized surface measure on S^2."""
    mu = np.asarray(mu, dtype=float)
    mu = mu / np.linalg.norm(mu)
    # 4 pi * kappa / (4 pi sinh kappa) * exp(kappa mu.x), written stably
    scale = 2.0 * kappa / (1.0 - np.exp(-2.0 * kappa))

    def dens(x):
        return scale * np.exp(kappa * (np.asarray(x) @ mu - 1.0))

    return dens


def vmf_model(kappa: float, mu=(0.0, 0.0, 1.0), N: int | None = None) -> HarmonicModel:
    if N is None:
        N = max(4, int(np.ceil(3 * kappa + 10)))
    return fit_coeffs(vmf_density(kappa, mu), N)
