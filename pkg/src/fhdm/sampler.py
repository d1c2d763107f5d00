"""Generation: run the learned SDE to the sphere of radius 1 - eps and project."""
from __future__ import annotations

import logging
import warnings

import numpy as np

from . import model as mlp
from .errors import BadSmoothness, TooManyTimeouts
from .geometry import project_to_sphere
from .paths import SimConfig, drift_batch

log = logging.getLogger(__name__)

MAX_TIMEOUT_FRACTION = 0.01


def epsilon_schedule(n: int, alpha: float, d: int) -> float:
    """Early-stopping radius gap eps = n^(-alpha / (beta (2 alpha + d - 1)))."""
    if alpha <= (d - 1) / 2:
        raise BadSmoothness(f"alpha must exceed (d - 1)/2 = {(d - 1) / 2}")
    if n < 1:
        raise ValueError("n must be >= 1")
    beta = min(alpha - (d - 1) / 2, 1.0)
    return float(n ** (-alpha / (beta * (2 * alpha + d - 1))))


def clip_eps(eps: float, z0) -> float:
    """Clip eps below (1 - |z0|)/2, warning when it changes."""
    cap = (1.0 - float(np.linalg.norm(z0))) / 2
    if eps >= cap:
        new = 0.99 * cap
        warnings.warn(f"eps={eps:.4g} violates eps < (1-|z0|)/2; clipped to {new:.4g}", stacklevel=2)
        return new
    return eps


def generate(params, eps: float, z0, n_samples: int, cfg: SimConfig, seed):
    """Draw samples by simulating dZ = s(Z) dt + dW from z0 until |Z| = 1 - eps.

    ``params`` is an :class:`MlpParams`, a drift callable, or ``None``
    (zero drift).  Timed-out runs are discarded and counted.
    Returns ``(samples, diagnostics)``.
    """
    z0 = np.asarray(z0, dtype=float)
    if not 0 < eps < (1 - np.linalg.norm(z0)) / 2:
        raise ValueError("eps must lie in (0, (1 - |z0|)/2)")
    if isinstance(params, mlp.MlpParams):
        drift = lambda z: mlp.forward(params, z)  # noqa: E731
    else:
        drift = params
    b = drift_batch(drift, z0, 1.0 - eps, n_samples, cfg, seed)
    if b.n_timeouts > MAX_TIMEOUT_FRACTION * n_samples:
        raise TooManyTimeouts(f"{b.n_timeouts} of {n_samples} runs timed out")
    ok = b.ok
    samples = project_to_sphere(b.points[ok])
    t = b.times[ok]
    diag = {
        "n_samples": int(ok.sum()),
        "mean_hit_time": float(t.mean()),
        "se_hit_time": float(t.std(ddof=1) / np.sqrt(t.size)) if t.size > 1 else 0.0,
        "p50_hit_time": float(np.percentile(t, 50)),
        "p99_hit_time": float(np.percentile(t, 99)),
        "timeouts": b.n_timeouts,
        "mean_steps": float(b.n_steps.mean()),
    }
    return samples, diag


def write_samples(samples, path) -> None:
    np.savetxt(path, samples, fmt="%.17g")


def write_diagnostics(diag: dict, fh) -> None:
    for k in ("mean_hit_time", "p99_hit_time", "timeouts"):
        fh.write(f"{k}: {diag[k]}\n")
    for k, v in diag.items():
        if k not in ("mean_hit_time", "p99_hit_time", "timeouts"):
            fh.write(f"{k}: {v}\n")
