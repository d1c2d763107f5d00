"""Metrics on the sphere S^2 and the convergence-sweep harness.

Binned total variation uses an equal-area grid of latitude bands (equal
steps in ``x_3``, which gives equal areas on S^2) times longitude sectors.
It is a lower bound of the true total variation; all thresholds in this
package are stated for the same binning.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from math import pi

import numpy as np
from scipy import stats

from . import model as mlp
from .paths import SimConfig, drift_batch
from .rng import substream
from .spectral import HarmonicModel, oracle_score

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BinGrid:
    n_bands: int = 6
    n_sectors: int = 8

    @property
    def K(self) -> int:
        return self.n_bands * self.n_sectors

    @property
    def area(self) -> float:
        return 4 * pi / self.K

    def assign(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        x = x / np.linalg.norm(x, axis=1, keepdims=True)
        band = np.clip(np.floor((x[:, 2] + 1.0) / 2.0 * self.n_bands).astype(int), 0, self.n_bands - 1)
        phi = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * pi)
        sector = np.clip(np.floor(phi / (2 * pi) * self.n_sectors).astype(int), 0, self.n_sectors - 1)
        return band * self.n_sectors + sector

    def counts(self, x) -> np.ndarray:
        return np.bincount(self.assign(x), minlength=self.K).astype(float)

    def bin_areas(self, order: int = 8) -> np.ndarray:
        return self.masses(lambda x: np.ones(x.shape[0]), order)

    def masses(self, density, order: int = 16) -> np.ndarray:
        """Integral of ``density`` (wrt surface measure) over each bin.

        Product Gauss-Legendre rule in (x_3, azimuth) inside every bin; the
        surface element is exactly ``dx_3 dphi``.
        """
        t, w = np.polynomial.legendre.leggauss(order)
        out = np.empty(self.K)
        dz = 2.0 / self.n_bands
        dp = 2 * pi / self.n_sectors
        for band in range(self.n_bands):
            zc = -1.0 + (band + 0.5) * dz + 0.5 * dz * t
            for sec in range(self.n_sectors):
                pc = (sec + 0.5) * dp + 0.5 * dp * t
                Zg, Pg = np.meshgrid(zc, pc, indexing="ij")
                rho = np.sqrt(np.maximum(1.0 - Zg**2, 0.0))
                pts = np.stack([rho * np.cos(Pg), rho * np.sin(Pg), Zg], -1).reshape(-1, 3)
                vals = np.asarray(density(pts)).reshape(order, order)
                out[band * self.n_sectors + sec] = 0.25 * dz * dp * (w @ vals @ w)
        return out


def binned_tv(p, q) -> float:
    """Half L1 distance between two bin-probability vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())


def tv_standard_error(p_hat, q, n: int) -> float:
    """Delta-method standard error of the binned TV for a multinomial sample."""
    p_hat = np.asarray(p_hat, dtype=float)
    s = np.sign(p_hat - q)
    var = (np.sum(s * s * p_hat) - np.sum(s * p_hat) ** 2) / max(n, 1)
    return 0.5 * float(np.sqrt(max(var, 0.0)))


def empirical_tv(samples, target_density, grid: BinGrid | None = None, return_se: bool = False):
    """Binned TV between samples and a density wrt surface measure."""
    grid = grid or BinGrid()
    masses = grid.masses(target_density)
    total = masses.sum()
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"target density integrates to {total:.8g}, not 1")
    counts = grid.counts(samples)
    n = counts.sum()
    p_hat = counts / n
    tv = 0.5 * float(np.abs(p_hat - masses).sum())
    return (tv, tv_standard_error(p_hat, masses, int(n))) if return_se else tv


def chi2_exit_test(samples, target_density, grid: BinGrid | None = None):
    """Pearson chi-square goodness of fit against the target bin masses."""
    grid = grid or BinGrid()
    masses = grid.masses(target_density)
    counts = grid.counts(samples)
    res = stats.chisquare(counts, counts.sum() * masses / masses.sum())
    return float(res.statistic), float(res.pvalue)


def harmonic_target_density(model: HarmonicModel):
    """Density of Pi* wrt surface measure (model density is wrt normalized measure)."""
    return lambda x: model.density(x) / (4 * pi)


def explicit_score_mse(drift, model: HarmonicModel, z0, eps: float, n_paths: int, cfg: SimConfig, seed):
    """MC mean and SE of int_0^tau |s - grad log h|^2 dt along oracle-driven paths."""
    drift = _drift_fn(drift)
    score = lambda z: oracle_score(z, model)  # noqa: E731

    def resid2(z, i):
        r = drift(z) - score(z)
        return np.sum(r * r, axis=1)

    b = drift_batch(score, z0, 1.0 - eps, n_paths, cfg, seed, integrands={"mse": resid2})
    v = b.integrals["mse"][b.ok]
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def matched_loss_differences(s1, s2, model: HarmonicModel, z0, eps: float, n_paths: int, cfg: SimConfig, seed):
    """Denoising-loss and explicit-loss differences L(s1) - L(s2) on shared paths.

    Bridges toward x ~ Pi* mixed over x are Z^h paths, so one batch serves
    both losses.  Returns ``(delta_denoise, delta_explicit, se_paired, se_combined)``;
    the paired SE is that of the per-path difference of the two deltas.
    """
    from .kernels import grad_log_poisson
    from .paths import bridge_batch
    from .spectral import sample_target

    f1 = _drift_fn(s1)
    f2 = _drift_fn(s2)
    xs = sample_target(model, substream(seed, "targets"), n_paths)
    d = xs.shape[1]

    def den(z, i):
        t = grad_log_poisson(xs[i], z, d)
        a, b = f1(z) - t, f2(z) - t
        return np.sum(a * a, axis=1) - np.sum(b * b, axis=1)

    def exp(z, i):
        t = oracle_score(z, model)
        a, b = f1(z) - t, f2(z) - t
        return np.sum(a * a, axis=1) - np.sum(b * b, axis=1)

    bt = bridge_batch(xs, z0, eps, cfg, substream(seed, "paths"), integrands={"den": den, "exp": exp})
    u = bt.integrals["den"][bt.ok]
    v = bt.integrals["exp"][bt.ok]
    m = u.size
    se_paired = float((u - v).std(ddof=1) / np.sqrt(m))
    se_comb = float(np.hypot(u.std(ddof=1), v.std(ddof=1)) / np.sqrt(m))
    return float(u.mean()), float(v.mean()), se_paired, se_comb


def _drift_fn(s):
    if s is None:
        return lambda z: np.zeros_like(z)
    if isinstance(s, mlp.MlpParams):
        return lambda z: mlp.forward(s, z)
    return s


def kl_from_score_mse(value: float) -> float:
    """KL divergence of the stopped laws implied by an explicit score MSE."""
    return 0.5 * value


def pinsker_tv_bound(value: float) -> float:
    return float(np.sqrt(0.5 * kl_from_score_mse(value)))


# --- sweep -----------------------------------------------------------------------

SWEEP_COLUMNS = ("n", "alpha", "eps", "seed", "tv", "tv_se", "score_mse", "score_mse_se", "train_minutes")


def run_cell(n: int, alpha: float, seed: int, base, oracle_drift: bool = False) -> dict:
    """One sweep cell: data, eps schedule, training, generation, metrics."""
    from .config import target_model
    from .sampler import clip_eps, epsilon_schedule, generate
    from .spectral import sample_target
    from .training import train

    hm = target_model(base.target)
    z0 = np.asarray(base.z0, dtype=float)
    eps = base.eps if base.eps is not None else epsilon_schedule(n, alpha, base.d)
    eps = clip_eps(eps, z0)
    sim = base.sim_config()
    t0 = time.perf_counter()
    if oracle_drift:
        drift = lambda z: oracle_score(z, hm)  # noqa: E731
    else:
        data = sample_target(hm, substream(seed, "data"), n)
        params, _ = train(data, base.init_params(seed), base.train_config(eps=eps, seed=seed))
        drift = params
    minutes = (time.perf_counter() - t0) / 60
    samples, _ = generate(drift, eps, z0, base.n_samples, sim, substream(seed, "generate"))
    tv, tv_se = empirical_tv(samples, harmonic_target_density(hm), return_se=True)
    mse, mse_se = explicit_score_mse(drift, hm, z0, eps, base.eval_paths, sim, substream(seed, "eval"))
    return dict(n=n, alpha=alpha, eps=eps, seed=seed, tv=tv, tv_se=tv_se,
                score_mse=mse, score_mse_se=mse_se, train_minutes=minutes)


def sweep(cells, base, oracle_drift: bool = False, csv_path=None, threads: int = 1):
    """Run every ``(n, alpha, seed)`` cell; failures become NaN rows.

    Returns ``(rows, slope)`` where ``slope`` is the least-squares log-log
    slope of the per-n median TV against n (NaN with fewer than two n).
    """
    def one(cell):
        n, alpha, seed = cell
        try:
            return run_cell(int(n), float(alpha), int(seed), base, oracle_drift)
        except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
            log.error("sweep cell %s failed: %s", cell, exc)
            return dict(n=n, alpha=alpha, eps=float("nan"), seed=seed, tv=float("nan"), tv_se=float("nan"),
                        score_mse=float("nan"), score_mse_se=float("nan"), train_minutes=float("nan"))

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(one, cells))
    else:
        rows = [one(c) for c in cells]
    if csv_path is not None:
        write_sweep_csv(rows, csv_path)
    return rows, median_tv_slope(rows)


def median_tv_by_n(rows) -> dict[int, float]:
    ns = sorted({int(r["n"]) for r in rows})
    return {n: float(np.nanmedian([r["tv"] for r in rows if int(r["n"]) == n])) for n in ns}


def median_tv_slope(rows) -> float:
    med = median_tv_by_n(rows)
    if len(med) < 2:
        return float("nan")
    x = np.log(list(med.keys()))
    y = np.log(list(med.values()))
    return float(np.polyfit(x, y, 1)[0])


def write_sweep_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(f"{r[k]:.10g}" if isinstance(r[k], float) else str(r[k]) for k in SWEEP_COLUMNS) + "\n")
