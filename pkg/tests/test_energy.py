import math

import numpy as np
import pytest

from bubbletree import energy as en
from bubbletree.errors import EmptyTestSpace, NonTangentVariation
from bubbletree.geometry import stereo_project
from bubbletree.grid import Field, GridParams, make_grid
from tests.conftest import same_surface_model


@pytest.fixture(scope="module")
def sphere():
    g = make_grid(GridParams(n_r=256, n_theta=64))
    return Field(g, stereo_project(g.z))


def smooth_tangent(u, seed, width=2.0):
    rng = np.random.default_rng(seed)
    g = u.grid
    th = g.theta
    modes = np.stack([np.ones_like(th), np.cos(th), np.sin(th), np.cos(2 * th)], -1)
    amb = np.einsum("tm,mn->tn", modes, rng.standard_normal((4, u.N)))[None]
    amb = amb * en._bump(g.s / width)[:, None, None]
    return en.project_field(u, amb)


def test_energy_and_tension_of_the_sphere(sphere):
    assert math.isclose(en.dirichlet_energy(sphere), 4 * math.pi, rel_tol=1e-9)
    assert en.tension_sphere_L2(sphere) < 1e-6
    assert np.max(np.abs(en.tension_cylinder(sphere))) < 1e-6


def test_weak_and_tension_forms_agree(sphere):
    g = sphere.grid
    bent = Field(g, stereo_project(g.z * (1 + 0.1 * np.exp(-g.s[:, None] ** 2))))
    w = smooth_tangent(bent, 3)
    a = en.first_variation(bent, w, "weak")
    b = en.first_variation(bent, w, "tension")
    assert abs(a - b) < 1e-8 * max(1.0, abs(a))
    assert abs(a) > 1e-4


def test_nontangent_variation_is_rejected(sphere):
    with pytest.raises(NonTangentVariation):
        en.first_variation(sphere, sphere)


def test_energy_difference_is_cancellation_free(sphere):
    w = smooth_tangent(sphere, 1)
    moved = en.retract(sphere, w, 1e-7)
    direct = en.dirichlet_energy(moved) - en.dirichlet_energy(sphere)
    assert abs(en.energy_difference(moved, sphere) - direct) < 1e-12


def test_mobius_and_rotation_fields_are_jacobi_fields(sphere):
    w = smooth_tangent(sphere, 2)
    for name, v in en.mobius_fields(sphere)[2:4] + en.rotation_fields(sphere):
        assert abs(en.second_variation(sphere, v, w)) < 1e-7, name


def test_weighted_norm_density_matches_conformal_weights():
    norm = en.WeightedNorm(2.0, 50.0)
    s = np.linspace(-6, 3, 7)
    assert np.allclose(norm.cylinder_density(s), norm.density(np.exp(s)) * np.exp(2 * s))
    assert norm.swapped(100.0).swapped(100.0) == norm


def test_galerkin_dual_norm_vanishes_at_a_harmonic_map(sphere):
    # what remains is trapezoid error on the bumps, so it falls with nodes per bump
    norm = en.WeightedNorm(1.0, 1.0)
    assert en.dual_norm_estimate(sphere, norm, en.TestSpaceSpec(1.0, 2, (-6.0, 6.0))) < 1e-8
    g = make_grid(GridParams(n_r=512, n_theta=64))
    fine = Field(g, stereo_project(g.z))
    assert en.dual_norm_estimate(fine, norm, en.TestSpaceSpec(0.5, 2, (-6.0, 6.0))) < 1e-8
    with pytest.raises(EmptyTestSpace):
        en.GalerkinSystem(sphere, norm, en.TestSpaceSpec(0.5, 2, (5.0, -5.0)))


def test_galerkin_dual_norm_bounds_a_test_direction():
    m = same_surface_model(math.exp(6), 0.05)
    g = m.grid(n_r=256, n_theta=64)
    u = m.sample(g)
    norm = en.model_norm(m)
    w = m.direction("translate_U1").field(g)
    sysm = en.GalerkinSystem(u, norm, en.default_space(m), [("y", w)])
    ratio = en.first_variation(u, w) / norm.norm(w)
    assert sysm.dual_norm() >= abs(ratio) * (1 - 1e-9)


def test_energy_defect_report_fields():
    m = same_surface_model(math.exp(6), 0.05)
    rep = en.energy_defect(m, m.grid(n_r=256, n_theta=64), with_dual=False)
    assert math.isclose(rep.defect, rep.E - rep.E_star)
    assert rep.E_star == 8 * math.pi
    assert math.isnan(rep.dual_norm_lower_bound)
    assert set(rep.to_json()) == {"E", "E_star", "defect", "tension_L2_sphere", "dual_norm_lower_bound"}


def test_bump_profile():
    x = np.linspace(-1.2, 1.2, 49)
    assert np.all(en._bump(x)[np.abs(x) >= 1] == 0) and en._bump(np.array(0.0)) == 1
    h = 1e-6
    assert np.allclose(en._bump_slope(x), (en._bump(x + h) - en._bump(x - h)) / (2 * h), atol=1e-6)
