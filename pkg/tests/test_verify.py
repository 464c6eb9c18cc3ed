import math

import numpy as np
import pytest

from bubbletree import model as md
from bubbletree import rational as rat
from bubbletree import verify as vf
from bubbletree.errors import AllCoefficientsZero, AssumptionViolated, DegenerateDifferential
from tests.conftest import opposite_model, same_surface_model, transversal_pair

Z = rat.RationalMap.monomial(1)


def test_cutoff_energy_approaches_two_pi_c():
    # sharp caps leave exactly 2 pi c; smoothing adds O(c^2)
    m = same_surface_model(math.exp(10), 0.05)
    c = m.c_mu
    E = vf.cutoff_energy(m.radii)
    assert 0 < E - 2 * math.pi * c < 2 * c**2
    assert math.isclose(vf.cutoff_energy_grid(m, m.grid(n_r=512, n_theta=32)), E, rel_tol=1e-4)


def test_neck_energy_is_half_delta_squared_cutoff_energy():
    m = same_surface_model(math.exp(8), 0.1)
    E = vf.neck_energy(m, m.grid(n_r=512, n_theta=32))
    assert math.isclose(E, 0.5 * m.diagnostics.delta**2 * vf.cutoff_energy(m.radii), rel_tol=1e-4)


def test_bubble_profile_mass():
    # u = t^{2j} turns int_0^inf H_j(t) t dt into 2j int_0^inf (1 + u)^-3 du = j
    from scipy import integrate

    for j in (1, 2, 3):
        val = integrate.quad(lambda t: vf.bubble_profile(j, t) * t, 0, np.inf, epsrel=1e-12)[0]
        assert math.isclose(val, j, rel_tol=1e-8)


def test_Ij_H_routes_agree_and_scale():
    for j in (1, 2, 3):
        for mu in (math.exp(6), 1e4):
            a, b = vf.Ij_H(j, mu), vf.Ij_H_disc(j, mu)
            assert math.isclose(a, b, rel_tol=1e-9)
            assert 0.9 * j < a * mu**j < 1.01 * j
    with pytest.raises(ValueError):
        vf.Ij_H(1, 0.5)


def test_Ij_theta_opposite_orientation():
    U0 = md.stereographic_descriptor()
    U1 = md.stereographic_descriptor(conjugated=True)
    for j in (1, 2, 3):
        assert abs(vf.Ij_theta(j, math.pi, U0, U1).value + 8 * math.pi) < 1e-12
    with pytest.raises(DegenerateDifferential):
        vf.Ij_theta(1, 0.0, U0, md.stereographic_descriptor(degree=2))


@pytest.mark.parametrize("angle", [0.3, math.pi / 2, 2.0])
def test_Ij_theta_transversal_closed_form(angle):
    U0, U1 = transversal_pair(angle)
    for alpha in np.linspace(0, 2 * math.pi, 7):
        ref = vf.transversal_closed_form(alpha, U0, U1)
        for j in (1, 2, 3):
            assert abs(vf.Ij_theta(j, alpha, U0, U1).value - ref) < 1e-10


def test_alpha_star_cases():
    U = md.stereographic_descriptor()
    with pytest.raises(AssumptionViolated):
        vf.alpha_star_select(U, U)
    ch = vf.alpha_star_select(U, md.stereographic_descriptor(conjugated=True))
    assert ch.case == "opposite" and ch.alpha == math.pi and math.isclose(ch.c_star, 4 * math.pi)
    U0, U1 = transversal_pair()
    ch = vf.alpha_star_select(U0, U1)
    assert ch.case == "transversal" and ch.c_star > 0
    for j in (1, 2, 3):
        assert vf.Ij_theta(j, ch.alpha, U0, U1).value < 0


def test_dominant_index():
    q = rat.RationalMap.from_coefficients([0.0, 1e-6, 1.0, 0.0])
    assert vf.dominant_index(q, 1e4, 10.0) == 2  # 1e-6 * 1e-3 < 1e-6
    assert vf.dominant_index(q, 1e4, 1e3) == 2
    assert vf.dominant_index(rat.RationalMap.from_coefficients([0.0, 1e-3, 1.0]), 1e4, 10.0) == 1
    # ties go to the smaller index
    q = rat.RationalMap.from_coefficients([0.0, 0.01, 1.0])
    assert vf.dominant_index(q, 1e4, 1e4 * 0.01) == 1
    with pytest.raises(AllCoefficientsZero):
        vf.dominant_index(rat.RationalMap.from_coefficients([0.0, 0.0, 0.0, 1.0]), 1e4, 10.0, n_star=2)


def test_theta_star_sets_the_sign_of_the_first_variation():
    m = opposite_model(math.exp(6))
    g = m.grid(n_r=256, n_theta=64)
    ch = vf.alpha_star_select(m.data.U0, m.data.U1)
    th = vf.theta_star(ch.alpha, m.data.q0, 1)
    up = vf.expansion_residual(m, m.direction("perturb_q1", j0=1, theta=float(th)), g)
    down = vf.expansion_residual(m, m.direction("perturb_q1", j0=1, theta=float(th + math.pi)), g)
    assert up.dE > 0 > down.dE
    assert abs(up.residual) < 0.1 * abs(up.main)


def test_expansion_of_a_translation_is_led_by_the_neck():
    m = same_surface_model(math.exp(8), 0.05)
    rep = vf.expansion_residual(m, m.direction("translate_U1"), m.grid(n_r=512, n_theta=64))
    assert math.isclose(rep.neck_term / rep.dE, 1.0, rel_tol=0.05)
    assert abs(rep.residual) < 0.05 * abs(rep.dE)
    assert set(rep.to_json()) >= {"dE", "neck_term", "residual", "error_proxy"}
