"""Growth-clamped ReLU network used as the learnable drift.

The raw network output ``phi(z)`` is radially rescaled so that

    |s(z)| <= clamp_c / (1 - |z|),     clamp_c = 12 (d + 2) by default,

which is a hard projection: the bound holds for every parameter value.
The sparsity and weight-magnitude budgets of the network class
are not enforced; :func:`weight_stats` reports them for monitoring.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import log

import numpy as np

from .geometry import stereo_forward

FEAT_MODES = ("cartesian", "cartesian+radial", "cartesian+stereo")
RADIAL_LIMIT = 1.0 - 1e-9
CLAMP_MARGIN = 1.0 - 1e-12


def default_clamp(d: int) -> float:
    return 12.0 * (d + 2)


def feature_dim(d: int, mode: str) -> int:
    if mode == "cartesian":
        return d
    if mode == "cartesian+radial":
        return d + 2
    if mode == "cartesian+stereo":
        return 2 * d
    raise ValueError(f"unknown feature mode {mode!r}")


def featurize(z, mode: str) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if mode == "cartesian":
        return z
    r = np.linalg.norm(z, axis=1)
    if mode == "cartesian+radial":
        if np.any(r > RADIAL_LIMIT):
            raise ValueError("radial feature needs |z| <= 1 - 1e-9")
        return np.column_stack([z, r, 1.0 / (1.0 - r)])
    if mode == "cartesian+stereo":
        theta = np.zeros((z.shape[0], z.shape[1] - 1))
        nz = r > 0
        plus = nz & (z[:, -1] >= 0)
        minus = nz & ~plus
        if plus.any():
            theta[plus] = stereo_forward(z[plus], "plus").theta
        if minus.any():
            theta[minus] = stereo_forward(z[minus], "minus").theta
        return np.column_stack([z, r, theta])
    raise ValueError(f"unknown feature mode {mode!r}")


@dataclass
class MlpParams:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    feat_mode: str = "cartesian+radial"
    clamp_c: float | None = None
    d: int = field(init=False)

    def __post_init__(self):
        self.d = self.layer_dims[-1]
        if self.clamp_c is None:
            self.clamp_c = default_clamp(self.d)
        if len(self.weights) < 1 or len(self.weights) != len(self.layer_dims) - 1:
            raise ValueError("need one weight matrix per layer")
        if self.layer_dims[0] != feature_dim(self.d, self.feat_mode):
            raise ValueError("input width does not match the feature mode")
        if self.clamp_c < self.d + 2:
            raise ValueError(f"clamp constant must be >= d + 2 = {self.d + 2}")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_dims[k + 1], self.layer_dims[k]) or b.shape != (self.layer_dims[k + 1],):
                raise ValueError(f"layer {k} has inconsistent shapes")

    def copy(self) -> "MlpParams":
        return MlpParams(
            list(self.layer_dims), [W.copy() for W in self.weights], [b.copy() for b in self.biases],
            self.feat_mode, self.clamp_c,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def set_flat(self, v: np.ndarray) -> None:
        k = 0
        for W, b in zip(self.weights, self.biases):
            W[...] = v[k : k + W.size].reshape(W.shape)
            k += W.size
            b[...] = v[k : k + b.size]
            k += b.size

    def __call__(self, z) -> np.ndarray:
        return forward(self, z)

    # --- checkpoint --------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "w") as fh:
            dims = ",".join(str(k) for k in self.layer_dims)
            fh.write(f"mlp v1 d={self.d} feat={self.feat_mode} clamp={self.clamp_c:.17g} dims={dims}\n")
            for W, b in zip(self.weights, self.biases):
                for row in W:
                    fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
                fh.write(" ".join(f"{v:.17g}" for v in b) + "\n")

    @classmethod
    def load(cls, path) -> "MlpParams":
        with open(path) as fh:
            head = fh.readline().split()
            if head[:2] != ["mlp", "v1"]:
                raise ValueError(f"{path}: not an 'mlp v1' checkpoint")
            kv = dict(item.split("=", 1) for item in head[2:])
            dims = [int(k) for k in kv["dims"].split(",")]
            rows = [line.split() for line in fh if line.strip()]
        weights, biases = [], []
        k = 0
        for a, b in zip(dims[:-1], dims[1:]):
            weights.append(np.array(rows[k : k + b], dtype=float).reshape(b, a))
            biases.append(np.array(rows[k + b], dtype=float).reshape(b))
            k += b + 1
        p = cls(dims, weights, biases, kv["feat"], float(kv["clamp"]))
        if p.d != int(kv["d"]):
            raise ValueError(f"{path}: header d does not match output width")
        return p


def init(layer_dims, feat_mode: str = "cartesian+radial", seed: int = 0, clamp_c: float | None = None) -> MlpParams:
    """He-scaled Gaussian hidden layers, zero biases, zero output layer."""
    rng = np.random.default_rng(seed)
    dims = list(layer_dims)
    weights, biases = [], []
    for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        last = k == len(dims) - 2
        W = np.zeros((b, a)) if last else rng.standard_normal((b, a)) * np.sqrt(2.0 / a)
        weights.append(W)
        biases.append(np.zeros(b))
    return MlpParams(dims, weights, biases, feat_mode, clamp_c)


def default_dims(d: int, hidden=(64, 64, 64), feat_mode: str = "cartesian+radial") -> list[int]:
    return [feature_dim(d, feat_mode), *hidden, d]


def _forward(p: MlpParams, z):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    a = featurize(z, p.feat_mode)
    acts, pres = [a], []
    L = len(p.weights)
    for k in range(L):
        pre = a @ p.weights[k].T + p.biases[k]
        if k < L - 1:
            pres.append(pre)
            a = np.maximum(pre, 0.0)
            acts.append(a)
        else:
            phi = pre
    norm = np.sqrt(np.sum(phi * phi, axis=1))
    # shave 1e-12 relative so the bound survives rounding of the rescaled output
    bound = p.clamp_c * CLAMP_MARGIN / (1.0 - np.linalg.norm(z, axis=1))
    active = norm > bound
    scale = np.where(active, bound / np.where(active, norm, 1.0), 1.0)
    s = phi * scale[:, None]
    return s, (acts, pres, phi, norm, bound, active)


def forward(p: MlpParams, z) -> np.ndarray:
    """Clamped drift s(z) for a point or a batch of points."""
    z = np.asarray(z, dtype=float)
    s, _ = _forward(p, z)
    return s[0] if z.ndim == 1 else s


def backward(p: MlpParams, z, upstream, cache=None):
    """Gradient of sum_i <upstream_i, s(z_i)> wrt all weights and biases.

    Returns ``(dW_list, db_list)``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    u = np.atleast_2d(np.asarray(upstream, dtype=float))
    if cache is None:
        _, cache = _forward(p, z)
    acts, pres, phi, norm, bound, active = cache
    g = u.copy()
    if active.any():
        ph, nm, bd, ua = phi[active], norm[active], bound[active], u[active]
        dot = np.sum(ph * ua, axis=1)
        g[active] = bd[:, None] * (ua / nm[:, None] - ph * (dot / nm**3)[:, None])
    L = len(p.weights)
    dW = [None] * L
    db = [None] * L
    for k in range(L - 1, -1, -1):
        dW[k] = g.T @ acts[k]
        db[k] = g.sum(axis=0)
        if k > 0:
            g = (g @ p.weights[k]) * (pres[k - 1] > 0)
    return dW, db


def flat_grad(dW, db) -> np.ndarray:
    return np.concatenate([a.ravel() for pair in zip(dW, db) for a in pair])


def weight_stats(p: MlpParams) -> dict:
    """Nonzero count and max magnitude of all parameters."""
    v = p.flat()
    return {"nonzero": int(np.count_nonzero(v)), "max_abs": float(np.abs(v).max(initial=0.0))}


def suggested_sizes(n: int, alpha: float, d: int) -> dict:
    """Order-of-magnitude network sizes suggested for sample size n (constants set to 1)."""
    rate = (d - 1) / (2 * alpha + d - 1)
    ln = log(max(n, 2))
    return {
        "depth": ln**2,
        "width": n**rate * ln**2,
        "sparsity": n**rate * ln**3,
    }
