"""Flat ``key = value`` run configuration and target-string parsing.

Recognized keys (all optional, defaults in brackets)::

    d [3]                 ambient dimension
    z0 [0,0,0]            start point, comma separated
    eps []                early-stopping gap; exclusive with n + alpha
    n [] / alpha []       sample size and smoothness for the eps schedule
    dt [0.001]            Euler-Maruyama step
    t_max []              simulation horizon (default 50 E[tau])
    kappa [0.1]           adaptive boundary step factor
    hidden [64,64,64]     hidden widths
    feat_mode [cartesian+radial]
    clamp_c []            growth clamp constant (default 12 (d+2))
    epochs [30]  batch_size [64]  bridges_per_point [1]
    learning_rate [0.001] beta1 [0.9] beta2 [0.999]
    path_bank [false]     bridge_method [sde]
    seed [0]              master seed
    target [y10]          uniform | y10 | vmf:kappa:axis | coefficient file
    n_samples [20000]     eval_paths [2000]
    data / checkpoint / samples / out   file paths
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import model as mlp
from .paths import SimConfig
from .spectral import HarmonicModel, uniform_model, vmf_model, y10_model
from .training import TrainConfig


class UsageError(ValueError):
    """Bad command-line or configuration input (exit code 2)."""


@dataclass
class RunConfig:
    d: int = 3
    z0: tuple = (0.0, 0.0, 0.0)
    eps: float | None = None
    n: int | None = None
    alpha: float | None = None
    dt: float = 1e-3
    t_max: float | None = None
    kappa: float = 0.1
    hidden: tuple = (64, 64, 64)
    feat_mode: str = "cartesian+radial"
    clamp_c: float | None = None
    epochs: int = 30
    batch_size: int = 64
    bridges_per_point: int = 1
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    path_bank: bool = False
    bridge_method: str = "sde"
    seed: int = 0
    target: str = "y10"
    n_samples: int = 20000
    eval_paths: int = 2000
    threads: int = 1
    data: str | None = None
    checkpoint: str | None = None
    samples: str | None = None
    out: str | None = None

    def __post_init__(self):
        self.z0 = tuple(float(v) for v in self.z0)
        self.hidden = tuple(int(v) for v in self.hidden)
        if len(self.z0) != self.d:
            raise UsageError(f"z0 has {len(self.z0)} entries, expected d={self.d}")
        if self.eps is not None and self.alpha is not None:
            raise UsageError("eps and alpha (schedule) are mutually exclusive")
        if self.feat_mode not in mlp.FEAT_MODES:
            raise UsageError(f"unknown feat_mode {self.feat_mode!r}")
        if self.bridge_method not in ("sde", "rotation"):
            raise UsageError(f"unknown bridge_method {self.bridge_method!r}")

    # --- derived objects ------------------------------------------------------

    def resolved_eps(self) -> float:
        from .sampler import epsilon_schedule

        if self.eps is not None:
            return float(self.eps)
        if self.n is not None and self.alpha is not None:
            return epsilon_schedule(self.n, self.alpha, self.d)
        return 0.05

    def sim_config(self) -> SimConfig:
        return SimConfig(dt=self.dt, dt_boundary_scale=self.kappa, t_max=self.t_max, threads=self.threads)

    def train_config(self, eps: float | None = None, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, bridges_per_point=self.bridges_per_point,
            dt=self.dt, eps=self.resolved_eps() if eps is None else eps, learning_rate=self.learning_rate,
            adam_betas=(self.beta1, self.beta2), seed=self.seed if seed is None else seed,
            z0=np.asarray(self.z0), path_bank=self.path_bank, bridge_method=self.bridge_method,
            dt_boundary_scale=self.kappa, threads=self.threads,
        )

    def init_params(self, seed: int | None = None) -> mlp.MlpParams:
        dims = mlp.default_dims(self.d, self.hidden, self.feat_mode)
        return mlp.init(dims, self.feat_mode, self.seed if seed is None else seed, self.clamp_c)

    # --- persistence ------------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for f in fields(self):
                v = getattr(self, f.name)
                if v is None:
                    continue
                if isinstance(v, tuple):
                    v = ",".join(repr(x) for x in v)
                elif isinstance(v, bool):
                    v = "true" if v else "false"
                elif isinstance(v, float):
                    v = repr(v)
                fh.write(f"{f.name} = {v}\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        kinds = {f.name: f for f in fields(cls)}
        kw = {}
        with open(path) as fh:
            for ln, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{ln}: expected 'key = value'")
                key, val = (s.strip() for s in line.split("=", 1))
                if key not in kinds:
                    raise UsageError(f"{path}:{ln}: unknown key {key!r}")
                kw[key] = _parse_value(key, val)
        cfg = cls(**kw)
        for key in ("data", "checkpoint"):
            p = getattr(cfg, key)
            if p is not None and not Path(p).exists():
                raise UsageError(f"{key} path {p!r} does not exist")
        return cfg

    def replace(self, **kw) -> "RunConfig":
        cur = {f.name: getattr(self, f.name) for f in fields(self)}
        cur.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig(**cur)


_INT = {"d", "n", "epochs", "batch_size", "bridges_per_point", "seed", "n_samples", "eval_paths", "threads"}
_FLOAT = {"eps", "alpha", "dt", "t_max", "kappa", "clamp_c", "learning_rate", "beta1", "beta2"}


def _parse_value(key: str, val: str):
    try:
        if key in _INT:
            return int(val)
        if key in _FLOAT:
            return float(val)
        if key in ("z0", "hidden"):
            return tuple(float(v) if key == "z0" else int(v) for v in val.split(","))
        if key == "path_bank":
            if val.lower() not in ("true", "false", "1", "0"):
                raise ValueError(val)
            return val.lower() in ("true", "1")
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {val!r}") from exc
    return val


def default_threads() -> int:
    env = os.environ.get("FHDM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"FHDM_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def target_model(spec: str) -> HarmonicModel:
    """Parse ``uniform``, ``y10``, ``vmf:kappa:axis`` or a coefficient file path."""
    if spec == "uniform":
        return uniform_model()
    if spec == "y10":
        return y10_model()
    if spec.startswith("vmf"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise UsageError(f"vmf target must be vmf:kappa:axis, got {spec!r}")
        try:
            kappa = float(parts[1])
            axis = np.array([float(v) for v in parts[2].split(",")])
        except ValueError as exc:
            raise UsageError(f"malformed vmf target {spec!r}") from exc
        if not np.isfinite(kappa) or kappa < 0:
            raise UsageError(f"vmf kappa must be a finite nonnegative number, got {parts[1]!r}")
        if axis.shape != (3,) or np.linalg.norm(axis) == 0:
            raise UsageError("vmf axis must be a nonzero 3-vector such as 0,0,1")
        return vmf_model(kappa, axis / np.linalg.norm(axis))
    if Path(spec).exists():
        return HarmonicModel.load(spec)
    raise UsageError(f"unknown target {spec!r}")


def load_dataset(path, d: int | None = None, tol: float = 1e-6) -> np.ndarray:
    """Read one point per line; renormalize if within ``tol`` of unit norm."""
    x = np.loadtxt(path, comments="#", ndmin=2)
    if d is not None and x.shape[1] != d:
        raise ValueError(f"{path}: expected {d} columns, found {x.shape[1]}")
    r = np.linalg.norm(x, axis=1)
    bad = np.abs(r - 1.0) > tol
    if bad.any():
        raise ValueError(f"{path}: {int(bad.sum())} points deviate from unit norm by more than {tol}")
    return x / r[:, None]


def write_dataset(x, path) -> None:
    np.savetxt(path, np.asarray(x), fmt="%.17g")
