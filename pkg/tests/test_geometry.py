import numpy as np
import pytest

from bubbletree import geometry as geo
from bubbletree.errors import AntipodalPoints, SouthPole


def test_stereo_round_trip_and_poles():
    z = np.array([0.0, 0.3 - 0.2j, 2.0 + 1.0j, 1e8j])
    p = geo.stereo_project(z)
    assert np.allclose(np.linalg.norm(p, axis=-1), 1.0)
    assert np.allclose(p[0], geo.NORTH)
    assert np.allclose(geo.stereo_inverse(p[:3]), z[:3])
    assert np.allclose(geo.stereo_project(np.array([np.inf + 0j]))[0], geo.SOUTH)
    with pytest.raises(SouthPole):
        geo.stereo_inverse(geo.SOUTH)


def test_stereo_differential_matches_difference_quotient():
    w, xi, h = 0.4 + 0.7j, 0.3 - 0.5j, 1e-6
    fd = (geo.stereo_project(w + h * xi) - geo.stereo_project(w - h * xi)) / (2 * h)
    assert np.allclose(geo.stereo_differential(w, xi), fd, atol=1e-8)


def test_geodesic_endpoints_speed_and_antipodes():
    p0 = geo.stereo_project(0.2 + 0.1j)
    p1 = geo.stereo_project(-0.5 + 0.3j)
    d = geo.geodesic_distance(p0, p1)
    t = np.linspace(0, 1, 11)
    arc = geo.geodesic(p0, p1, t)
    assert np.allclose(arc[0], p0) and np.allclose(arc[-1], p1)
    assert np.allclose(np.linalg.norm(arc, axis=-1), 1.0)
    assert np.allclose(geo.geodesic_distance(arc[:-1], arc[1:]), d / 10)
    with pytest.raises(AntipodalPoints):
        geo.geodesic(geo.NORTH, geo.SOUTH, 0.5)


def test_geodesic_variation_matches_moving_endpoint():
    p0 = geo.stereo_project(0.1 + 0.0j)
    p1 = geo.stereo_project(0.0 + 0.3j)
    dp1 = geo.tangent_project(p1, np.array([0.3, -0.2, 0.5]))
    t, h = np.array([0.25, 0.7]), 1e-6
    moved = [geo.project_to_target(p1 + s * h * dp1) for s in (1, -1)]
    fd = (geo.geodesic(p0, moved[0], t) - geo.geodesic(p0, moved[1], t)) / (2 * h)
    assert np.allclose(geo.geodesic_variation(p0, p1, t, np.zeros(3), dp1), fd, atol=1e-7)


def test_second_fundamental_form_and_rotation():
    p = geo.stereo_project(0.3 + 0.4j)
    v = geo.tangent_project(p, np.array([1.0, 0.0, 0.0]))
    assert np.allclose(geo.second_fundamental_form(p, v, v), -np.dot(v, v) * p)
    R = geo.rotation_matrix((1, 3), 0.7, 4)
    assert np.allclose(R.T @ R, np.eye(4))
    assert np.allclose(R @ np.array([0.0, 0.0, 1.0, 0.0]), [0.0, 0.0, 1.0, 0.0])
