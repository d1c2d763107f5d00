"""Shared test helpers."""
import numpy as np

from fhdm import model as mlp


def random_params(seed, hidden=(16, 16), feat="cartesian+radial", out_scale=1.0, d=3):
    rng = np.random.default_rng(seed)
    p = mlp.init(mlp.default_dims(d, hidden, feat), feat, seed)
    p.weights[-1][...] = out_scale * rng.standard_normal(p.weights[-1].shape) / np.sqrt(hidden[-1])
    for b in p.biases:
        b[...] = 0.1 * rng.standard_normal(b.shape)
    return p


def ball_points(rng, n, rmax=0.99, d=3):
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.uniform(0, rmax, (n, 1))


def near_kink(p, z, tol=1e-6):
    """True if any ReLU pre-activation or the clamp switch is within tol."""
    _, (acts, pres, phi, norm, bound, active) = mlp._forward(p, z)
    relu = min((np.min(np.abs(a)) for a in pres), default=np.inf)
    clamp = np.min(np.abs(norm - bound) / bound)
    return relu < tol or clamp < tol


def fd_check(p, z, u, h=1e-5):
    """Max per-coordinate relative error of backward against central differences."""
    dW, db = mlp.backward(p, z, u)
    g = mlp.flat_grad(dW, db)
    th = p.flat()
    fd = np.empty_like(th)
    for i in range(th.size):
        a = th.copy()
        a[i] += h
        p.set_flat(a)
        fp = np.sum(u * mlp.forward(p, z))
        a[i] -= 2 * h
        p.set_flat(a)
        fm = np.sum(u * mlp.forward(p, z))
        fd[i] = (fp - fm) / (2 * h)
    p.set_flat(th)
    # coordinates far below the gradient scale are dominated by FD roundoff
    floor = max(1e-6, 1e-3 * float(np.abs(g).max()))
    rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
    return float(rel.max())
