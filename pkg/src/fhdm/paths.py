"""Euler-Maruyama simulation of absorbed diffusions in the unit ball.

All simulators share one vectorized engine that advances every active path
of a chunk in lockstep.  Paths are grouped in chunks of ``cfg.chunk_size``;
chunk ``k`` draws its noise from the substream ``(seed, "chunk", k)``, so the
result does not depend on how chunks are scheduled across threads.

Step rule, for a path at radius ``r`` with stopping radius ``R``::

    dt_eff = clip(kappa * (R - r)^2, dt * 1e-4, dt)

A step that lands outside ``R`` is cut at the exact crossing of the chord
with the sphere (smaller positive root of ``|Z + s dZ| = R``); the hit time
is ``t + s * dt_eff`` and the partial step is included in time integrals.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DriftBlowup, NotCentered, SimulationTimeout
from .kernels import grad_log_poisson
from .rng import as_seed, substream

log = logging.getLogger(__name__)

Drift = Callable[[np.ndarray, np.ndarray], np.ndarray]
Integrand = Callable[[np.ndarray, np.ndarray], np.ndarray]

TIMEOUT_WARN_FRACTION = 1e-3


@dataclass
class SimConfig:
    dt: float = 1e-3
    dt_boundary_scale: float = 0.1
    t_max: float | None = None
    store_full_path: bool = False
    min_dt_factor: float = 1e-4
    max_step: float = 0.5
    chunk_size: int = 4096
    threads: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_max is not None and self.t_max < 100 * self.dt:
            raise ValueError("t_max must be at least 100 * dt")

    def horizon(self, z0, R: float) -> float:
        if self.t_max is not None:
            return self.t_max
        z0 = np.asarray(z0, dtype=float)
        d = z0.shape[-1]
        r0 = float(np.max(np.linalg.norm(np.atleast_2d(z0), axis=-1)))
        return max(50.0 * (R**2 - r0**2) / d, 100 * self.dt)


@dataclass
class HitRecord:
    time: float
    location: np.ndarray
    radius_hit: float


@dataclass
class Path:
    times: np.ndarray
    points: np.ndarray
    hit: HitRecord | None
    exit_point: np.ndarray | None = None  # full unit-sphere exit (rotation bridges)

    def dump(self, fh) -> None:
        """Write one ``t x1 ... xd`` line per sample."""
        for t, z in zip(self.times, self.points):
            fh.write(" ".join(f"{v:.17g}" for v in (t, *z)) + "\n")


@dataclass
class ExitBatch:
    """Vectorized outcome of many independent paths."""

    times: np.ndarray
    points: np.ndarray
    radius: float
    timed_out: np.ndarray
    n_steps: np.ndarray
    integrals: dict[str, np.ndarray] = field(default_factory=dict)
    exit_points: np.ndarray | None = None
    records: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None  # (path, z, dt)
    paths: list[Path] | None = None

    @property
    def ok(self) -> np.ndarray:
        return ~self.timed_out

    @property
    def n_timeouts(self) -> int:
        return int(self.timed_out.sum())


def _crossing_fraction(z: np.ndarray, step: np.ndarray, R: float) -> np.ndarray:
    """Smaller positive root s of |z + s step| = R for rows with |z| < R."""
    a = np.sum(step * step, axis=1)
    b = 2.0 * np.sum(z * step, axis=1)
    c = np.sum(z * z, axis=1) - R * R
    disc = np.sqrt(np.maximum(b * b - 4.0 * a * c, 0.0))
    q = -0.5 * (b + np.where(b >= 0, disc, -disc))
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(b >= 0, c / q, q / a)
    return np.clip(np.nan_to_num(s, nan=1.0), 0.0, 1.0)


def _run_chunk(z0s, R, drift, cfg, rng, offset, integrands, inner, record, t_max):
    n, d = z0s.shape
    Z = z0s.copy()
    t = np.zeros(n)
    idx = np.arange(n)
    hit_t = np.full(n, np.nan)
    hit_z = np.full((n, d), np.nan)
    timed_out = np.zeros(n, dtype=bool)
    n_steps = np.zeros(n, dtype=np.int64)
    acc = {k: np.zeros(n) for k in integrands}
    kappa = cfg.dt_boundary_scale
    dt_min = cfg.dt * cfg.min_dt_factor

    pending = None
    if inner is not None:
        pending = np.ones(n, dtype=bool)
        in_t = np.full(n, np.nan)
        in_z = np.full((n, d), np.nan)

    rec_i, rec_z, rec_dt = [], [], []
    store = cfg.store_full_path
    st_i, st_t, st_z = [], [], []

    while idx.size:
        gi = idx + offset
        r = np.sqrt(np.sum(Z * Z, axis=1))
        dist = R - r
        if pending is not None:
            p = pending[idx]
            dist = np.where(p, np.minimum(dist, inner - r), dist)
        h = np.clip(kappa * dist * dist, dt_min, cfg.dt) if kappa > 0 else np.full(idx.size, cfg.dt)
        noise = rng.standard_normal((idx.size, d))
        step = np.sqrt(h)[:, None] * noise
        if drift is not None:
            step += drift(Z, gi) * h[:, None]
        big = np.sum(step * step, axis=1)
        if np.any(big > cfg.max_step**2):
            raise DriftBlowup(
                f"Euler step of norm {np.sqrt(big.max()):.3g} exceeds {cfg.max_step}; reduce dt"
            )
        Znew = Z + step
        crossed = np.sum(Znew * Znew, axis=1) >= R * R
        frac = np.ones(idx.size)
        if crossed.any():
            frac[crossed] = _crossing_fraction(Z[crossed], step[crossed], R)

        # time weight of the left endpoint Z for integrals / records
        w = h * frac
        if pending is not None:
            p = pending[idx]
            cin = p & (np.sum(Znew * Znew, axis=1) >= inner * inner)
            sin = np.ones(idx.size)
            if cin.any():
                sin[cin] = _crossing_fraction(Z[cin], step[cin], inner)
                j = idx[cin]
                in_t[j] = t[cin] + sin[cin] * h[cin]
                zi = Z[cin] + sin[cin, None] * step[cin]
                in_z[j] = inner * zi / np.linalg.norm(zi, axis=1, keepdims=True)
            w = np.where(p, h * np.minimum(sin, frac), 0.0)

        for k, f in integrands.items():
            acc[k][idx] += f(Z, gi) * w
        if record:
            keep = w > 0
            rec_i.append(gi[keep])
            rec_z.append(Z[keep])
            rec_dt.append(w[keep])
        if store:
            st_i.append(idx.copy())
            st_t.append(t.copy())
            st_z.append(Z.copy())

        t = t + h * frac
        n_steps[idx] += 1
        if pending is not None:
            pending[idx[cin]] = False

        if crossed.any():
            j = idx[crossed]
            zc = Z[crossed] + frac[crossed, None] * step[crossed]
            hit_z[j] = R * zc / np.linalg.norm(zc, axis=1, keepdims=True)
            hit_t[j] = t[crossed]
        Z = Znew
        late = ~crossed & (t >= t_max)
        if late.any():
            timed_out[idx[late]] = True
        alive = ~crossed & ~late
        idx, Z, t = idx[alive], Z[alive], t[alive]

    out = {
        "times": hit_t,
        "points": hit_z,
        "timed_out": timed_out,
        "n_steps": n_steps,
        "integrals": acc,
    }
    if inner is not None:
        out["exit_points"] = hit_z
        out["times"] = in_t
        out["points"] = in_z
        out["timed_out"] = timed_out | np.isnan(in_t)
    if record:
        out["records"] = (
            np.concatenate(rec_i) if rec_i else np.zeros(0, dtype=np.int64),
            np.concatenate(rec_z) if rec_z else np.zeros((0, d)),
            np.concatenate(rec_dt) if rec_dt else np.zeros(0),
        )
    if store:
        out["store"] = (st_i, st_t, st_z)
    return out


def _assemble_paths(store, out, n, d, radius, inner):
    st_i, st_t, st_z = store
    ii = np.concatenate(st_i)
    tt = np.concatenate(st_t)
    zz = np.concatenate(st_z)
    order = np.argsort(ii, kind="stable")
    ii, tt, zz = ii[order], tt[order], zz[order]
    bounds = np.searchsorted(ii, np.arange(n + 1))
    paths = []
    for k in range(n):
        ts = tt[bounds[k] : bounds[k + 1]]
        zs = zz[bounds[k] : bounds[k + 1]]
        hit = None
        if not out["timed_out"][k]:
            ht = out["times"][k]
            hz = out["points"][k]
            keep = ts < ht
            ts = np.append(ts[keep], ht)
            zs = np.vstack([zs[keep], hz])
            hit = HitRecord(float(ht), hz, inner if inner is not None else radius)
        ep = out["exit_points"][k] if "exit_points" in out else None
        paths.append(Path(ts, zs, hit, ep))
    return paths


def run_batch(
    z0,
    R: float,
    n_paths: int,
    cfg: SimConfig,
    seed,
    drift: Drift | None = None,
    integrands: dict[str, Integrand] | None = None,
    inner_radius: float | None = None,
    record: bool = False,
) -> ExitBatch:
    """Simulate ``n_paths`` independent paths from ``z0`` until |Z| = R.

    ``drift(z, i)`` and integrands ``f(z, i)`` receive the current positions
    of the active paths and their global path indices.  With
    ``inner_radius`` the reported hit is the first passage of that inner
    sphere while the path keeps running to ``R`` (``exit_points``).
    """
    seed = as_seed(seed)
    z0 = np.asarray(z0, dtype=float)
    z0s = np.broadcast_to(z0, (n_paths, z0.shape[-1])) if z0.ndim == 1 else z0
    if z0s.shape[0] != n_paths:
        raise ValueError("z0 rows must match n_paths")
    if np.any(np.linalg.norm(z0s, axis=1) >= (inner_radius or R)):
        raise ValueError("start point must lie strictly inside the stopping sphere")
    integrands = integrands or {}
    t_max = cfg.horizon(z0s, R)
    n, d = z0s.shape
    cs = max(1, cfg.chunk_size)
    starts = list(range(0, n, cs))

    def work(k):
        a = starts[k]
        b = min(a + cs, n)
        return _run_chunk(
            np.array(z0s[a:b]), R, drift, cfg, substream(seed, "chunk", k), a,
            integrands, inner_radius, record, t_max,
        )

    if cfg.threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            parts = list(ex.map(work, range(len(starts))))
    else:
        parts = [work(k) for k in range(len(starts))]

    cat = lambda key: np.concatenate([p[key] for p in parts])  # noqa: E731
    batch = ExitBatch(
        times=cat("times"),
        points=cat("points"),
        radius=inner_radius if inner_radius is not None else R,
        timed_out=cat("timed_out"),
        n_steps=cat("n_steps"),
        integrals={k: np.concatenate([p["integrals"][k] for p in parts]) for k in integrands},
    )
    if inner_radius is not None:
        batch.exit_points = cat("exit_points")
    if record:
        batch.records = tuple(np.concatenate([p["records"][j] for p in parts]) for j in range(3))
    if cfg.store_full_path:
        batch.paths = []
        for p, a in zip(parts, starts):
            m = p["times"].shape[0]
            batch.paths.extend(_assemble_paths(p["store"], p, m, d, R, inner_radius))
    if batch.n_timeouts > TIMEOUT_WARN_FRACTION * n:
        log.warning("%d of %d paths timed out and were discarded", batch.n_timeouts, n)
    return batch


def _single(batch: ExitBatch) -> Path:
    path = batch.paths[0]
    if path.hit is None:
        raise SimulationTimeout("path did not reach its stopping sphere before t_max")
    return path


def _store_cfg(cfg: SimConfig) -> SimConfig:
    return SimConfig(**{**cfg.__dict__, "store_full_path": True, "chunk_size": 1})


def _check_bridge(z0, eps):
    r0 = float(np.linalg.norm(z0))
    if not 0 < eps < (1 - r0) / 2:
        raise ValueError(f"eps must lie in (0, (1 - |z0|)/2) = (0, {(1 - r0) / 2:.4g})")


# --- stopped Brownian motion -------------------------------------------------


def stopped_bm_batch(z0, R, n_paths, cfg, seed, integrands=None, record=False) -> ExitBatch:
    return run_batch(z0, R, n_paths, cfg, seed, integrands=integrands, record=record)


def simulate_stopped_bm(z0, R: float, cfg: SimConfig, rng) -> Path:
    """Brownian motion from z0 absorbed at the sphere of radius R."""
    return _single(stopped_bm_batch(z0, R, 1, _store_cfg(cfg), as_seed(rng)))


# --- first-hitting bridges ---------------------------------------------------


def bridge_drift(xs) -> Drift:
    xs = np.asarray(xs, dtype=float)
    d = xs.shape[-1]
    if xs.ndim == 1:
        return lambda z, i: grad_log_poisson(xs, z, d)
    return lambda z, i: grad_log_poisson(xs[i], z, d)


def bridge_batch(xs, z0, eps, cfg, seed, integrands=None, record=False) -> ExitBatch:
    """Bridges Z^x (one per row of ``xs``) stopped at radius 1 - eps."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    z0 = np.asarray(z0, dtype=float)
    _check_bridge(z0, eps)
    return run_batch(
        z0, 1.0 - eps, xs.shape[0], cfg, seed,
        drift=bridge_drift(xs), integrands=integrands, record=record,
    )


def simulate_bridge(x, z0, eps: float, cfg: SimConfig, rng) -> Path:
    """Single first-hitting bridge toward x, stopped at radius 1 - eps."""
    return _single(bridge_batch(np.asarray(x)[None], z0, eps, _store_cfg(cfg), as_seed(rng)))


def _householder(v, y):
    vv = np.sum(v * v, axis=-1, keepdims=True)
    safe = np.where(vv > 1e-24, vv, 1.0)
    coef = np.where(vv > 1e-24, 2.0 * np.sum(v * y, axis=-1, keepdims=True) / safe, 0.0)
    return y - coef * v


def _perpendicular(x):
    k = np.argmin(np.abs(x), axis=-1)
    e = np.zeros_like(x)
    e[np.arange(x.shape[0]), k] = 1.0
    w = e - np.sum(e * x, axis=-1, keepdims=True) * x
    return w / np.linalg.norm(w, axis=-1, keepdims=True)


def rotation_to(u, x):
    """Rotation (two Householder reflections) mapping unit rows u onto x.

    Returns a function applying the rotation of path ``i`` to points.
    """
    u = np.atleast_2d(u)
    x = np.atleast_2d(x)
    v = u - x
    w = _perpendicular(x)

    def apply(y, i):
        return _householder(w[i], _householder(v[i], y))

    return apply


def rotation_bridge_batch(xs, eps, cfg, seed, z0=None, record=False) -> ExitBatch:
    """Bridges from the origin built by rotating stopped Brownian paths.

    Each path is run to the unit sphere, rotated so its exit point lands on
    the target, and truncated at its first passage of radius 1 - eps.
    Records (if requested) hold the rotated, truncated path.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    d = xs.shape[1]
    if z0 is not None and np.linalg.norm(z0) > 0:
        raise NotCentered("rotation bridges require z0 = 0")
    _check_bridge(np.zeros(d), eps)
    b = run_batch(np.zeros(d), 1.0, xs.shape[0], cfg, seed, inner_radius=1.0 - eps, record=record)
    ok = b.ok
    rot = rotation_to(np.where(ok[:, None], b.exit_points, xs), xs)
    allidx = np.arange(xs.shape[0])
    b.points = np.where(ok[:, None], rot(np.nan_to_num(b.points), allidx), np.nan)
    b.exit_points = np.where(ok[:, None], rot(np.nan_to_num(b.exit_points), allidx), np.nan)
    if record:
        pi, pz, pdt = b.records
        b.records = (pi, rot(pz, pi), pdt)
    if b.paths is not None:
        for k, p in enumerate(b.paths):
            if p.hit is not None:
                ki = np.full(p.points.shape[0], k)
                p.points = rot(p.points, ki)
                p.hit.location = b.points[k]
                p.exit_point = b.exit_points[k]
    return b


def simulate_bridge_rotation(x, eps: float, cfg: SimConfig, rng, z0=None) -> Path:
    return _single(rotation_bridge_batch(np.asarray(x)[None], eps, _store_cfg(cfg), as_seed(rng), z0=z0))


# --- general drift -----------------------------------------------------------


def _wrap(drift):
    return None if drift is None else (lambda z, i: drift(z))


def drift_batch(drift, z0, stop_radius, n_paths, cfg, seed, integrands=None, record=False) -> ExitBatch:
    """Paths of dZ = drift(Z) dt + dW stopped at ``stop_radius``.

    ``drift`` maps an ``(m, d)`` array of positions to ``(m, d)`` drifts.
    """
    return run_batch(
        z0, stop_radius, n_paths, cfg, seed, drift=_wrap(drift), integrands=integrands, record=record,
    )


def simulate_drift_process(drift, z0, stop_radius: float, cfg: SimConfig, rng) -> Path:
    return _single(drift_batch(drift, z0, stop_radius, 1, _store_cfg(cfg), as_seed(rng)))


def path_time_integral(path: Path, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """Left-endpoint Riemann sum of f along the path, up to the hit time."""
    if path.points.shape[0] < 2:
        raise ValueError("path needs at least two samples")
    vals = np.asarray(f(path.points[:-1]), dtype=float)
    return float(np.sum(vals * np.diff(path.times)))
