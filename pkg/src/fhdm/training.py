"""Denoising score matching over first-hitting bridges.

For a data point x the per-path loss is the left Riemann sum

    sum_k |s(Z_k) - grad_z log q(x | Z_k)|^2 dt_k

along a bridge Z^x started at z0 and stopped at radius 1 - eps.  Bridges
do not depend on the network, so the parameter gradient is the same sum
with ``2 (s - target) dt`` pushed through :func:`fhdm.model.backward`.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as mlp
from .errors import Diverged
from .kernels import grad_log_poisson
from .paths import SimConfig, bridge_batch, rotation_bridge_batch
from .rng import as_seed, substream

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    bridges_per_point: int = 1
    dt: float = 1e-3
    eps: float = 0.05
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    z0: np.ndarray | None = None
    path_bank: bool = False
    bridge_method: str = "sde"
    dt_boundary_scale: float = 0.1
    threads: int = 1

    def __post_init__(self):
        if self.bridges_per_point < 1:
            raise ValueError("bridges_per_point must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.bridge_method not in ("sde", "rotation"):
            raise ValueError(f"unknown bridge method {self.bridge_method!r}")

    def sim_config(self) -> SimConfig:
        return SimConfig(dt=self.dt, dt_boundary_scale=self.dt_boundary_scale, threads=self.threads)


@dataclass
class LossReport:
    epoch: int
    mc_loss: float
    mc_se: float
    grad_norm: float
    wall_ms: float = 0.0


def _as_drift(s):
    if isinstance(s, mlp.MlpParams):
        return lambda z: mlp.forward(s, z)
    return s


def _bridges(xs, z0, eps, cfg: SimConfig, seed, method, record=False, integrands=None):
    if method == "rotation":
        if integrands:
            b = rotation_bridge_batch(xs, eps, cfg, seed, z0=z0, record=True)
            pi, pz, pdt = b.records
            b.integrals = {
                k: np.bincount(pi, weights=f(pz, pi) * pdt, minlength=xs.shape[0]) for k, f in integrands.items()
            }
            return b
        return rotation_bridge_batch(xs, eps, cfg, seed, z0=z0, record=record)
    return bridge_batch(xs, z0, eps, cfg, seed, integrands=integrands, record=record)


def denoising_loss_mc(s, x, B: int, cfg: SimConfig, rng, eps: float = 0.05, z0=None, method: str = "sde"):
    """Monte Carlo denoising loss L_s(x) over B bridges toward x.

    ``s`` is an :class:`MlpParams` or a callable drift on ``(m, d)`` arrays.
    Returns ``(mean, per_path_values)``; timed-out paths are dropped.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    z0 = np.zeros(d) if z0 is None else np.asarray(z0, dtype=float)
    drift = _as_drift(s)
    xs = np.tile(x, (B, 1))

    def resid2(z, i):
        r = drift(z) - grad_log_poisson(xs[i], z, d)
        return np.sum(r * r, axis=1)

    b = _bridges(xs, z0, eps, cfg, as_seed(rng), method, integrands={"loss": resid2})
    vals = b.integrals["loss"][b.ok]
    return float(vals.mean()), vals


def empirical_risk(s, data, B: int, cfg: SimConfig, rng, eps: float = 0.05, z0=None,
                   method: str = "sde", point_seeds=None) -> float:
    """Average denoising loss over the data set with fresh bridges.

    With ``point_seeds`` each data point draws its B bridges from its own
    seed (slow path, one batch per point); otherwise all bridges share one
    vectorized batch.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if point_seeds is not None:
        if len(point_seeds) != data.shape[0]:
            raise ValueError("one seed per data point required")
        return float(np.mean([
            denoising_loss_mc(s, x, B, cfg, sd, eps, z0, method)[0] for x, sd in zip(data, point_seeds)
        ]))
    n, d = data.shape
    z0 = np.zeros(d) if z0 is None else np.asarray(z0, dtype=float)
    drift = _as_drift(s)
    xs = np.repeat(data, B, axis=0)

    def resid2(z, i):
        r = drift(z) - grad_log_poisson(xs[i], z, d)
        return np.sum(r * r, axis=1)

    b = _bridges(xs, z0, eps, cfg, as_seed(rng), method, integrands={"loss": resid2})
    vals = np.where(b.ok, b.integrals["loss"], np.nan).reshape(n, B)
    return float(np.mean(np.nanmean(vals, axis=1)))


def loss_and_grad(params: mlp.MlpParams, xs, records):
    """Per-path losses and flat parameter gradient of their mean on frozen paths.

    ``records = (path_index, z, dt)`` as produced by ``record=True`` batches.
    """
    pi, pz, pdt = records
    n_paths = xs.shape[0]
    target = grad_log_poisson(xs[pi], pz, xs.shape[1])
    s, cache = mlp._forward(params, pz)
    resid = s - target
    per_path = np.bincount(pi, weights=np.sum(resid * resid, axis=1) * pdt, minlength=n_paths)
    upstream = (2.0 / n_paths) * resid * pdt[:, None]
    dW, db = mlp.backward(params, pz, upstream, cache)
    return per_path, mlp.flat_grad(dW, db)


class Adam:
    def __init__(self, size, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mh = self.m / (1 - self.b1**self.t)
        vh = self.v / (1 - self.b2**self.t)
        return theta - self.lr * mh / (np.sqrt(vh) + self.eps)


def train(data, model_init: mlp.MlpParams, tcfg: TrainConfig, callback=None):
    """Minibatch Adam on the Monte Carlo denoising loss.

    Returns ``(params, reports)``.  Bridges are resampled on every visit
    unless ``tcfg.path_bank`` is set, in which case one fixed bank of B
    bridges per data point is simulated up front and reused.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n, d = data.shape
    z0 = np.zeros(d) if tcfg.z0 is None else np.asarray(tcfg.z0, dtype=float)
    B = tcfg.bridges_per_point
    sim = tcfg.sim_config()
    params = model_init.copy()
    theta = params.flat()
    opt = Adam(theta.size, tcfg.learning_rate, tcfg.adam_betas, tcfg.adam_eps)

    bank = None
    if tcfg.path_bank:
        xs_all = np.repeat(data, B, axis=0)
        b = _bridges(xs_all, z0, tcfg.eps, sim, substream(tcfg.seed, "bank"), tcfg.bridge_method, record=True)
        order = np.argsort(b.records[0], kind="stable")
        pi, pz, pdt = (a[order] for a in b.records)
        bank = (pi, pz, pdt, np.searchsorted(pi, np.arange(n * B + 1)))

    reports = []
    for epoch in range(tcfg.epochs):
        t0 = time.perf_counter()
        perm = substream(tcfg.seed, "epoch", epoch).permutation(n)
        losses, gnorms = [], []
        for k in range(0, n, tcfg.batch_size):
            pts = perm[k : k + tcfg.batch_size]
            xs = np.repeat(data[pts], B, axis=0)
            if bank is None:
                b = _bridges(xs, z0, tcfg.eps, sim, substream(tcfg.seed, "bridges", epoch, k),
                             tcfg.bridge_method, record=True)
                rec = b.records
            else:
                rec = _bank_records(bank, pts, B)
            per_path, grad = loss_and_grad(params, xs, rec)
            if not (np.all(np.isfinite(per_path)) and np.all(np.isfinite(grad))):
                raise Diverged(f"non-finite loss or gradient in epoch {epoch}")
            theta = opt.step(theta, grad)
            params.set_flat(theta)
            losses.append(per_path)
            gnorms.append(float(np.linalg.norm(grad)))
        allv = np.concatenate(losses) if losses else np.zeros(1)
        rep = LossReport(
            epoch=epoch,
            mc_loss=float(allv.mean()),
            mc_se=float(allv.std(ddof=1) / np.sqrt(allv.size)) if allv.size > 1 else 0.0,
            grad_norm=float(np.mean(gnorms)) if gnorms else 0.0,
            wall_ms=1e3 * (time.perf_counter() - t0),
        )
        if not np.isfinite(rep.mc_loss):
            raise Diverged(f"non-finite loss in epoch {epoch}")
        reports.append(rep)
        log.info("epoch %d loss %.5g +- %.2g grad %.3g", epoch, rep.mc_loss, rep.mc_se, rep.grad_norm)
        if callback is not None:
            callback(rep, params)
    return params, reports


def _bank_records(bank, pts, B):
    pi, pz, pdt, bounds = bank
    rows, new_i = [], []
    for j, p in enumerate(pts):
        for b in range(B):
            path = p * B + b
            sl = slice(bounds[path], bounds[path + 1])
            rows.append(sl)
            new_i.append(np.full(bounds[path + 1] - bounds[path], j * B + b))
    idx = np.concatenate([np.arange(s.start, s.stop) for s in rows])
    return np.concatenate(new_i), pz[idx], pdt[idx]


def write_log(reports, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,se,grad_norm,wall_ms\n")
        for r in reports:
            fh.write(f"{r.epoch},{r.mc_loss:.17g},{r.mc_se:.17g},{r.grad_norm:.17g},{r.wall_ms:.3f}\n")
