"""Closed-form validation battery behind ``fhdm oracle-check``.

Each check returns ``(name, ok, detail)``.  Monte Carlo checks use a
3 SE band; ``fast`` shrinks path counts by roughly 10x.
"""
from __future__ import annotations

import numpy as np

from .evaluation import BinGrid, chi2_exit_test, explicit_score_mse
from .geometry import project_to_sphere, sample_uniform_sphere, stereo_forward, stereo_inverse
from .kernels import expected_exit_time, green_kernel, grad_log_poisson, log_poisson_density, poisson_density
from .kernels import radial_green_occupation
from .paths import SimConfig, drift_batch, stopped_bm_batch
from .rng import substream
from .spectral import log_h, oracle_score, quadrature_grid, solid_harmonics, surface_quadrature, y10_model


def _fd_grad(f, z, h=1e-6):
    g = np.zeros_like(z)
    for j in range(z.shape[-1]):
        e = np.zeros_like(z)
        e[..., j] = h
        g[..., j] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def _fd_laplacian(f, z, h=1e-4):
    out = -2 * z.shape[-1] * f(z)
    for j in range(z.shape[-1]):
        e = np.zeros_like(z)
        e[..., j] = h
        out = out + f(z + e) + f(z - e)
    return out / h**2


def check_poisson_normalized():
    grid = quadrature_grid(40)
    zs = np.array([[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [0.1, -0.4, 0.5]])
    errs = [abs(surface_quadrature(lambda x, z=z: poisson_density(x, z, 3), grid) - 1) for z in zs]
    return "poisson kernel integrates to 1", max(errs) < 1e-6, f"max err {max(errs):.2e}"


def check_poisson_harmonic():
    rng = substream(0, "oracle", "harmonic")
    x = sample_uniform_sphere(3, rng, 8)
    z = 0.5 * sample_uniform_sphere(3, rng, 8)
    lap = _fd_laplacian(lambda y: poisson_density(x, y, 3), z)
    rel = np.max(np.abs(lap) / poisson_density(x, z, 3))
    return "poisson kernel harmonic in z", rel < 1e-3, f"max |lap q|/q {rel:.2e}"


def check_bridge_drift():
    rng = substream(0, "oracle", "drift")
    x = sample_uniform_sphere(3, rng, 8)
    z = 0.6 * sample_uniform_sphere(3, rng, 8)
    fd = _fd_grad(lambda y: log_poisson_density(x, y, 3), z)
    err = np.max(np.abs(fd - grad_log_poisson(x, z, 3)))
    return "bridge drift equals grad log q", err < 1e-6, f"max err {err:.2e}"


def check_green_mass():
    # int G_R(z, z0) dz = E tau, by spherical shells around the origin
    R, z0 = 1.0, np.array([0.3, 0.0, 0.0])
    r, wr = np.polynomial.legendre.leggauss(200)
    r = 0.5 * R * (r + 1)
    wr = 0.5 * R * wr
    grid = quadrature_grid(60)
    total = 0.0
    for ri, wi in zip(r, wr):
        pts = ri * grid.nodes
        mask = np.linalg.norm(pts - z0, axis=1) > 1e-9
        total += wi * ri**2 * np.sum(grid.weights[mask] * green_kernel(pts[mask], z0, R, 3))
    exact = float(expected_exit_time(z0, R, 3))
    return "green kernel mass equals mean exit time", abs(total - exact) < 5e-3, f"{total:.5f} vs {exact:.5f}"


def check_stereo_roundtrip():
    rng = substream(0, "oracle", "stereo")
    x = sample_uniform_sphere(3, rng, 200)
    err = 0.0
    for chart, sel in (("plus", x[:, 2] > -0.5), ("minus", x[:, 2] < 0.5)):
        back = stereo_inverse(stereo_forward(x[sel], chart))
        err = max(err, float(np.max(np.abs(back - x[sel]))))
    return "stereographic round trip", err < 1e-10, f"max err {err:.2e}"


def check_harmonic_orthonormal():
    grid = quadrature_grid(16)
    Y = solid_harmonics(grid.nodes, 6)
    G = Y.T @ (Y * grid.weights[:, None])
    err = float(np.max(np.abs(G - np.eye(G.shape[0]))))
    return "spherical harmonics orthonormal", err < 1e-10, f"max err {err:.2e}"


def check_oracle_score():
    hm = y10_model()
    z = 0.8 * project_to_sphere(substream(0, "oracle", "score").standard_normal((8, 3)))
    err = float(np.max(np.abs(_fd_grad(lambda y: log_h(y, hm), z) - oracle_score(z, hm))))
    return "oracle score equals grad log h", err < 1e-6, f"max err {err:.2e}"


def check_exit_law(fast):
    n = 10_000 if fast else 100_000
    z0 = np.array([0.3, 0.0, 0.0])
    b = stopped_bm_batch(z0, 1.0, n, SimConfig(), substream(0, "oracle", "exit"))
    t = b.times[b.ok]
    exact = float(expected_exit_time(z0, 1.0, 3))
    se = t.std(ddof=1) / np.sqrt(t.size)
    _, p = chi2_exit_test(b.points[b.ok], lambda x: poisson_density(x, z0, 3), BinGrid())
    ok = abs(t.mean() - exact) < 3 * se and p > 1e-3
    return "stopped BM exit law and time", ok, f"E tau {t.mean():.5f} vs {exact:.5f} (se {se:.1e}); chi2 p {p:.3g}"


def check_occupation(fast):
    n = 5_000 if fast else 50_000
    a, bnd = 0.2, 0.8

    def shell(z, i):
        r = np.linalg.norm(z, axis=1)
        return ((r >= a) & (r <= bnd)).astype(float)

    b = stopped_bm_batch(np.zeros(3), 1.0, n, SimConfig(), substream(0, "oracle", "occ"), integrands={"occ": shell})
    v = b.integrals["occ"][b.ok]
    se = v.std(ddof=1) / np.sqrt(v.size)
    exact = radial_green_occupation(a, bnd, 1.0, 3)
    return "annulus occupation time", abs(v.mean() - exact) < 3 * se, f"{v.mean():.5f} vs {exact:.5f} (se {se:.1e})"


def check_score_identity(fast):
    # paired on the same oracle-driven paths: int |grad log h|^2 dt vs 2 log h(end) - 2 log h(0)
    n = 2_000 if fast else 20_000
    hm = y10_model()
    eps = 0.05
    sq = lambda z, i: np.sum(oracle_score(z, hm) ** 2, axis=1)  # noqa: E731
    b = drift_batch(lambda z: oracle_score(z, hm), np.zeros(3), 1 - eps, n, SimConfig(),
                    substream(0, "oracle", "l2"), integrands={"sq": sq})
    lhs = b.integrals["sq"][b.ok]
    rhs = 2 * (log_h(b.points[b.ok], hm) - log_h(np.zeros(3), hm))
    diff = lhs - rhs
    se = diff.std(ddof=1) / np.sqrt(diff.size)
    ok = abs(diff.mean()) < 3 * se
    return "L2 score identity", ok, f"{lhs.mean():.5f} vs {rhs.mean():.5f} (paired se {se:.1e})"


def run_all(fast: bool = False):
    checks = [
        check_poisson_normalized, check_poisson_harmonic, check_bridge_drift, check_green_mass,
        check_stereo_roundtrip, check_harmonic_orthonormal, check_oracle_score,
    ]
    out = [c() for c in checks]
    out += [c(fast) for c in (check_exit_law, check_occupation, check_score_identity)]
    return [(name, bool(ok), detail) for name, ok, detail in out]
