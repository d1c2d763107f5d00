import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fhdm.errors import ChartSingularity, UnsupportedDimension, ZeroVector
from fhdm.geometry import (
    BallPoint, SpherePoint, StereoCoords, project_to_sphere, sample_uniform_sphere, select_chart,
    stereo_forward, stereo_inverse,
)


@pytest.mark.parametrize("z, expected", [
    ((2, 0, 0), (1, 0, 0)),
    ((0.95, 0, 0), (1, 0, 0)),
    ((0.3, 0.4, 0), (0.6, 0.8, 0)),
])
def test_project_examples(z, expected):
    np.testing.assert_allclose(project_to_sphere(np.array(z, float)), expected, atol=1e-15)


def test_project_zero_raises():
    with pytest.raises(ZeroVector):
        project_to_sphere(np.zeros(3))


def test_ball_point_invariants():
    assert BallPoint([0.1, 0.2, 0.3]).d == 3
    with pytest.raises(ValueError):
        BallPoint([1.0, 0, 0])
    BallPoint([1.0, 0, 0], closed=True)
    with pytest.raises(UnsupportedDimension):
        BallPoint([0.1, 0.2])


def test_sphere_point_renormalizes():
    x = SpherePoint([3.0, 4.0, 0.0])
    assert abs(np.linalg.norm(np.asarray(x)) - 1) <= 1e-12


@pytest.mark.parametrize("x, chart, theta", [
    ((0, 0, 1), "plus", (0, 0)),
    ((1, 0, 0), "plus", (-1, 0)),
    ((1, 0, 0), "minus", (1, 0)),
])
def test_stereo_forward_examples(x, chart, theta):
    c = stereo_forward(np.array(x, float), chart)
    assert c.r == pytest.approx(1.0)
    np.testing.assert_allclose(c.theta, theta, atol=1e-15)


@pytest.mark.parametrize("r, theta, expected", [
    (1.0, (0, 0), (0, 0, 1)),
    (1.0, (-1, 0), (1, 0, 0)),
    (0.5, (0, 0), (0, 0, 0.5)),
])
def test_stereo_inverse_examples(r, theta, expected):
    out = stereo_inverse(StereoCoords(r, np.array(theta, float), "plus"))
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_chart_singularity():
    with pytest.raises(ChartSingularity):
        stereo_forward(np.array([0, 0, -1.0]), "plus")
    with pytest.raises(ChartSingularity):
        stereo_forward(np.array([0, 0, 1.0]), "minus")


def test_select_chart():
    assert select_chart(np.array([0.1, 0, 0.0])) and not select_chart(np.array([0, 0, -0.2]))


def test_stereo_round_trip_bulk():
    x = sample_uniform_sphere(3, np.random.default_rng(0), 10_000)
    for chart, sel in (("plus", x[:, 2] > -0.99), ("minus", x[:, 2] < 0.99)):
        back = stereo_inverse(stereo_forward(x[sel], chart))
        assert np.max(np.abs(back - x[sel])) < 1e-10


def test_stereo_round_trip_interior_radius():
    z = np.array([0.2, -0.1, 0.4])
    for chart in ("plus", "minus"):
        np.testing.assert_allclose(stereo_inverse(stereo_forward(z, chart)), z, atol=1e-12)


vec = arrays(np.float64, 3, elements=st.floats(-10, 10, allow_nan=False)).filter(lambda v: np.linalg.norm(v) > 1e-6)


@given(vec)
def test_projection_idempotent(z):
    p = project_to_sphere(z)
    assert np.array_equal(project_to_sphere(p), p) or np.max(np.abs(project_to_sphere(p) - p)) < 1e-15


@given(vec, st.floats(0.01, 0.45))
@settings(max_examples=50)
def test_inner_sphere_bijection(z, eps):
    x = project_to_sphere(z)
    np.testing.assert_allclose(project_to_sphere((1 - eps) * x), x, atol=1e-12)


def test_uniform_sphere_moments():
    x = sample_uniform_sphere(3, np.random.default_rng(7), 100_000)
    assert np.all(np.abs(x.mean(axis=0)) < 0.013)
    assert abs(np.mean(x[:, 2] ** 2) - 1 / 3) < 0.01
    assert np.max(np.abs(np.linalg.norm(x, axis=1) - 1)) < 1e-12
    one = sample_uniform_sphere(4, np.random.default_rng(1))
    assert one.shape == (4,) and abs(np.linalg.norm(one) - 1) < 1e-12
