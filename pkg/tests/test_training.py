from math import sqrt

import numpy as np
import pytest

from fhdm import model as mlp
from fhdm.evaluation import matched_loss_differences
from fhdm.kernels import grad_log_poisson, log_poisson_density
from fhdm.paths import SimConfig, bridge_batch
from fhdm.rng import substream
from fhdm.spectral import sample_target, uniform_model
from fhdm.training import TrainConfig, denoising_loss_mc, empirical_risk, loss_and_grad, train, write_log
from helpers import random_params

E3 = np.array([0.0, 0.0, 1.0])


def test_oracle_drift_zero_loss(cfg):
    _, vals = denoising_loss_mc(lambda z: grad_log_poisson(E3, z), E3, 50, cfg, 1, eps=0.1)
    assert np.all(vals == 0)


def test_zero_drift_l2_identity(cfg):
    eps, B, seed = 0.1, 2000, 3
    mean, vals = denoising_loss_mc(lambda z: np.zeros_like(z), E3, B, cfg, seed, eps=eps)
    xs = np.tile(E3, (B, 1))
    b = bridge_batch(xs, np.zeros(3), eps, cfg, seed,
                     integrands={"sq": lambda z, i: np.sum(grad_log_poisson(xs[i], z) ** 2, axis=1)})
    assert np.array_equal(b.integrals["sq"], vals)
    rhs = 2 * log_poisson_density(E3, b.points, 3) - 2 * log_poisson_density(E3, np.zeros(3), 3)
    diff = vals - rhs
    assert abs(diff.mean()) < 3 * diff.std(ddof=1) / sqrt(B)
    assert np.all(vals >= 0)


def test_mlp_and_callable_agree(cfg):
    p = random_params(2)
    a, _ = denoising_loss_mc(p, E3, 20, cfg, 4)
    b, _ = denoising_loss_mc(lambda z: mlp.forward(p, z), E3, 20, cfg, 4)
    assert a == b


@pytest.mark.parametrize("pair", range(5))
def test_denoising_explicit_difference(pair, y10, cfg):
    s1 = None if pair == 0 else random_params(10 + pair, (32, 32), out_scale=0.3)
    s2 = random_params(20 + pair, (32, 32), out_scale=0.3)
    dd, de, se_p, se_c = matched_loss_differences(s1, s2, y10, np.zeros(3), 0.05, 2000, cfg, pair)
    assert abs(dd - de) <= 3 * se_c
    assert abs(dd - de) <= 3 * se_p


def test_empirical_risk_reductions(cfg):
    s = random_params(3)
    x = np.array([[0.6, 0.0, 0.8]])
    a = empirical_risk(s, x, 30, cfg, 7)
    b, _ = denoising_loss_mc(s, x[0], 30, cfg, 7)
    assert a == pytest.approx(b, rel=1e-14)
    one = empirical_risk(s, x, 30, cfg, None, point_seeds=[5])
    two = empirical_risk(s, np.vstack([x, x]), 30, cfg, None, point_seeds=[5, 5])
    assert one == two
    with pytest.raises(ValueError):
        empirical_risk(s, x, 3, cfg, None, point_seeds=[1, 2])


def test_rotation_method_matches_sde_in_mean(cfg):
    s = lambda z: np.zeros_like(z)  # noqa: E731
    a, va = denoising_loss_mc(s, E3, 3000, cfg, 1, eps=0.1, method="rotation")
    b, vb = denoising_loss_mc(s, E3, 3000, cfg, 2, eps=0.1, method="sde")
    se = np.hypot(va.std(ddof=1), vb.std(ddof=1)) / sqrt(3000)
    assert abs(a - b) < 3 * se


def test_loss_and_grad_fd(cfg):
    p = random_params(4, (8, 8), out_scale=2.0)
    xs = sample_target(uniform_model(), substream(0, "x"), 6)
    b = bridge_batch(xs, np.zeros(3), 0.1, cfg, 2, record=True)
    per_path, g = loss_and_grad(p, xs, b.records)
    assert np.all(per_path >= 0)
    th = p.flat()
    h = 1e-5
    rng = np.random.default_rng(0)
    for i in rng.choice(th.size, 25, replace=False):
        a = th.copy()
        a[i] += h
        p.set_flat(a)
        fp = loss_and_grad(p, xs, b.records)[0].mean()
        a[i] -= 2 * h
        p.set_flat(a)
        fm = loss_and_grad(p, xs, b.records)[0].mean()
        fd = (fp - fm) / (2 * h)
        assert abs(fd - g[i]) <= 1e-4 * max(abs(fd), abs(g[i]), 1e-3 * np.abs(g).max())
    p.set_flat(th)


def test_target_carries_no_gradient(cfg):
    # the bridge drift does not depend on parameters: the gradient is linear in (s - target)
    p = random_params(5, (8, 8))
    xs = sample_target(uniform_model(), substream(1, "x"), 4)
    b = bridge_batch(xs, np.zeros(3), 0.1, cfg, 3, record=True)
    pi, pz, pdt = b.records
    target = grad_log_poisson(xs[pi], pz)
    s = mlp.forward(p, pz)
    expected = mlp.flat_grad(*mlp.backward(p, pz, (2.0 / 4) * (s - target) * pdt[:, None]))
    np.testing.assert_allclose(loss_and_grad(p, xs, b.records)[1], expected, rtol=1e-13)


def _small_data(n=64, seed=0, model=None):
    from fhdm.spectral import y10_model
    return sample_target(model or y10_model(), substream(seed, "data"), n)


def test_train_lr_zero_is_noop():
    p0 = mlp.init(mlp.default_dims(3, (16, 16)), seed=1)
    data = _small_data()
    p, reps = train(data, p0, TrainConfig(epochs=3, learning_rate=0.0, batch_size=32))
    assert np.array_equal(p.flat(), p0.flat())
    p, reps = train(data, p0, TrainConfig(epochs=3, learning_rate=0.0, batch_size=32, path_bank=True))
    assert len({r.mc_loss for r in reps}) == 1


def test_train_deterministic_and_log(tmp_path):
    p0 = mlp.init(mlp.default_dims(3, (16, 16)), seed=2)
    data = _small_data()
    tc = TrainConfig(epochs=2, batch_size=16, seed=7)
    pa, ra = train(data, p0, tc)
    pb, rb = train(data, p0, tc)
    assert np.array_equal(pa.flat(), pb.flat())
    assert [(r.epoch, r.mc_loss, r.mc_se, r.grad_norm) for r in ra] == [(r.epoch, r.mc_loss, r.mc_se, r.grad_norm) for r in rb]
    write_log(ra, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,se,grad_norm,wall_ms" and len(lines) == 3


def test_train_thread_independent():
    p0 = mlp.init(mlp.default_dims(3, (8,)), seed=2)
    data = _small_data(32)
    a, _ = train(data, p0, TrainConfig(epochs=1, batch_size=32, threads=1))
    b, _ = train(data, p0, TrainConfig(epochs=1, batch_size=32, threads=4))
    assert np.array_equal(a.flat(), b.flat())


def test_train_path_bank_and_rotation_modes():
    p0 = mlp.init(mlp.default_dims(3, (8,)), seed=3)
    data = _small_data(24)
    for kw in ({"path_bank": True, "bridges_per_point": 2}, {"bridge_method": "rotation"}):
        p, reps = train(data, p0, TrainConfig(epochs=2, batch_size=8, **kw))
        assert all(np.isfinite(r.mc_loss) for r in reps)
        assert not np.array_equal(p.flat(), p0.flat())


def test_uniform_target_risk_floor(cfg):
    # for uniform data the optimal drift is zero; a trained net cannot beat the s = 0 risk
    data = _small_data(256, 4, uniform_model())
    p0 = mlp.init(mlp.default_dims(3, (32, 32)), seed=4)
    p, _ = train(data, p0, TrainConfig(epochs=4, batch_size=64, eps=0.1))
    ev = data[:128]
    seeds = list(range(128))
    zero = lambda z: np.zeros_like(z)  # noqa: E731
    B = 8
    r0 = [denoising_loss_mc(zero, x, B, cfg, s, eps=0.1)[1] for x, s in zip(ev, seeds)]
    r1 = [denoising_loss_mc(p, x, B, cfg, s, eps=0.1)[1] for x, s in zip(ev, seeds)]
    diff = np.concatenate(r1) - np.concatenate(r0)
    assert abs(diff.mean()) < 3 * diff.std(ddof=1) / sqrt(diff.size)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(bridges_per_point=0)
    with pytest.raises(ValueError):
        TrainConfig(bridge_method="euler")
