import numpy as np
import pytest
from math import pi, sqrt
from scipy import stats

from fhdm.errors import EnvelopeError, NotPositive
from fhdm.evaluation import BinGrid
from fhdm.geometry import sample_uniform_sphere
from fhdm.rng import substream
from fhdm.spectral import (
    HarmonicModel, fit_coeffs, from_coeffs, grad_h_truncated, h_truncated, log_h, n_coeffs, oracle_score,
    quadrature_grid, real_sph_harmonic, sample_target, solid_harmonics, surface_quadrature, uniform_model,
    vmf_density, vmf_model,
)

Y10 = sqrt(3 / (4 * pi))


def _ball(rng, n, rmax=0.99):
    return sample_uniform_sphere(3, rng, n) * rng.uniform(0, rmax, (n, 1)) ** (1 / 3)


def test_low_degree_values():
    x = sample_uniform_sphere(3, np.random.default_rng(0), 50)
    np.testing.assert_allclose(real_sph_harmonic(0, 0, x), 1 / sqrt(4 * pi), rtol=1e-14)
    np.testing.assert_allclose(real_sph_harmonic(1, 0, x), Y10 * x[:, 2], rtol=1e-13, atol=1e-15)
    assert Y10 == pytest.approx(0.4886025, abs=1e-7)


def test_orthonormality_examples():
    g = quadrature_grid(12)
    inner = lambda a, b: surface_quadrature(lambda x: real_sph_harmonic(*a, x) * real_sph_harmonic(*b, x), g)
    assert inner((2, 1), (2, 1)) == pytest.approx(1, abs=1e-10)
    assert inner((2, 1), (1, 0)) == pytest.approx(0, abs=1e-10)
    assert inner((3, 2), (3, 2)) == pytest.approx(1, abs=1e-10)


def test_full_gram_matrix():
    g = quadrature_grid(20)
    Y = solid_harmonics(g.nodes, 8)
    np.testing.assert_allclose(Y.T @ (Y * g.weights[:, None]), np.eye(n_coeffs(8)), atol=1e-12)


def test_quadrature_moments():
    g = quadrature_grid(8)
    assert surface_quadrature(lambda x: np.ones(len(x)), g) == pytest.approx(4 * pi, abs=1e-12)
    assert surface_quadrature(lambda x: x[:, 2] ** 2, g) == pytest.approx(4 * pi / 3, abs=1e-10)


def test_fit_constant_and_y10(y10):
    m = fit_coeffs(lambda x: np.ones(len(x)), 3)
    assert m.coeff(0, 0) == pytest.approx(sqrt(4 * pi), abs=1e-10)
    assert np.max(np.abs(m.coeffs[1:])) < 1e-10
    m = fit_coeffs(lambda x: 1 + Y10 * x[:, 2], 4)
    assert m.coeff(0, 0) == pytest.approx(sqrt(4 * pi), abs=1e-10)
    assert m.coeff(1, 0) == pytest.approx(1, abs=1e-10)
    rest = np.delete(m.coeffs, [0, 2])
    assert np.max(np.abs(rest)) < 1e-10
    np.testing.assert_allclose(y10.coeffs, m.coeffs[:4], atol=1e-10)


def test_vmf_grid_refinement():
    f = vmf_density(2.0, [0, 0, 1])
    a = fit_coeffs(f, 16)
    b = fit_coeffs(f, 16, quadrature_grid(4 * 16 + 4))
    np.testing.assert_allclose(a.coeffs, b.coeffs, atol=1e-8)
    # vMF coefficients are zonal and decay with l
    a_l0 = [abs(a.coeff(l, 0)) for l in range(6)]
    assert all(x > y for x, y in zip(a_l0, a_l0[1:]))
    assert np.max(np.abs([a.coeff(1, m) for m in (-1, 1)])) < 1e-12


def test_vmf_density_normalized():
    g = quadrature_grid(40)
    assert surface_quadrature(vmf_density(3.0, [1, 0, 0]), g) / (4 * pi) == pytest.approx(1, abs=1e-12)


def test_parseval():
    rng = np.random.default_rng(5)
    c = np.zeros(n_coeffs(4))
    c[0] = sqrt(4 * pi)
    c[1:] = 0.05 * rng.standard_normal(c.size - 1)
    m = from_coeffs(c, 4)
    g = quadrature_grid(12)
    assert np.sum(c**2) == pytest.approx(surface_quadrature(lambda x: m.density(x) ** 2, g), abs=1e-8)


def test_fit_rejects_nonpositive():
    with pytest.raises(NotPositive):
        fit_coeffs(lambda x: x[:, 2], 2)
    with pytest.raises(NotPositive):
        from_coeffs(np.array([sqrt(4 * pi), 0, 5.0, 0]), 1)


def test_h_examples(y10):
    u = uniform_model()
    z = _ball(np.random.default_rng(0), 20)
    np.testing.assert_allclose(h_truncated(z, u), 1, atol=1e-14)
    np.testing.assert_allclose(grad_h_truncated(z, u), 0, atol=1e-14)
    np.testing.assert_allclose(oracle_score(z, u), 0, atol=1e-14)
    assert h_truncated(np.array([0, 0, 0.5]), y10) == pytest.approx(1.2443013, abs=1e-7)
    assert h_truncated(np.zeros(3), y10) == pytest.approx(1, abs=1e-14)
    np.testing.assert_allclose(grad_h_truncated(z, y10), np.tile([0, 0, Y10], (20, 1)), atol=1e-14)


def test_oracle_score_examples(y10):
    np.testing.assert_allclose(oracle_score(np.zeros(3), y10), [0, 0, 0.4886025], atol=1e-7)
    s = oracle_score(np.array([0, 0, 0.9]), y10)
    np.testing.assert_allclose(s, [0, 0, Y10 / (1 + 0.9 * Y10)], atol=1e-14)
    assert s[2] == pytest.approx(0.339368, abs=1e-6)
    assert s[2] <= 5 / 0.1


def _random_model(seed, N=4, scale=0.08):
    rng = np.random.default_rng(seed)
    c = np.zeros(n_coeffs(N))
    c[0] = sqrt(4 * pi)
    c[1:] = scale * rng.standard_normal(c.size - 1)
    return from_coeffs(c, N)


def test_gradient_fd_random_degree4():
    m = _random_model(1)
    z = _ball(np.random.default_rng(2), 30, 0.95)
    h = 1e-6
    g = grad_h_truncated(z, m)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (h_truncated(z + e, m) - h_truncated(z - e, m)) / (2 * h)
        np.testing.assert_allclose(g[:, j], fd, rtol=1e-5, atol=1e-8)


def test_harmonicity():
    m = _random_model(3, N=5)
    z = _ball(np.random.default_rng(4), 100, 0.9)
    h = 1e-3
    lap = -6 * h_truncated(z, m)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        lap += h_truncated(z + e, m) + h_truncated(z - e, m)
    assert np.max(np.abs(lap / h**2)) <= 1e-3


def test_boundary_trace():
    m = _random_model(6)
    x = sample_uniform_sphere(3, np.random.default_rng(7), 40)
    np.testing.assert_allclose(h_truncated(x, m), m.density(x), rtol=1e-12)


@pytest.mark.parametrize("model", ["y10", "vmf", "random"])
def test_score_growth_bound(model, y10):
    m = {"y10": y10, "vmf": vmf_model(1.0), "random": _random_model(8)}[model]
    z = _ball(np.random.default_rng(9), 10_000)
    z[:100] = 0.99 * sample_uniform_sphere(3, np.random.default_rng(10), 100)
    bound = np.linalg.norm(oracle_score(z, m), axis=1) * (1 - np.linalg.norm(z, axis=1))
    assert np.all(bound <= 3 + 2)


def test_log_h_consistent(y10):
    z = _ball(np.random.default_rng(11), 5)
    np.testing.assert_allclose(log_h(z, y10), np.log(1 + Y10 * z[:, 2]))


def test_sample_uniform_target():
    x = sample_target(uniform_model(), substream(0, "t"), 100_000)
    g = BinGrid()
    p = stats.chisquare(g.counts(x)).pvalue
    assert p > 1e-3


def test_sample_y10_moment_and_rate(y10):
    x, rate = sample_target(y10, substream(1, "t"), 100_000, return_rate=True)
    se = x[:, 2].std(ddof=1) / sqrt(len(x))
    assert abs(x[:, 2].mean() - Y10 / 3) < 3 * se
    assert Y10 / 3 == pytest.approx(0.16287, abs=1e-5)
    assert rate == pytest.approx(1 / 1.4886, abs=0.01)
    assert np.max(np.abs(np.linalg.norm(x, axis=1) - 1)) < 1e-12


def test_sample_envelope_error(y10):
    with pytest.raises(EnvelopeError):
        sample_target(y10, substream(2, "t"), 1000, envelope=1.0)


def test_model_file_round_trip(tmp_path, y10):
    m = vmf_model(2.0, N=8)
    for model in (m, y10):
        p = tmp_path / "m.shm"
        model.save(p)
        back = HarmonicModel.load(p)
        assert back.N == model.N
        assert np.array_equal(back.coeffs, model.coeffs)
    p.write_text("bogus\n")
    with pytest.raises(ValueError):
        HarmonicModel.load(p)
