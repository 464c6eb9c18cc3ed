"""Acceptance criteria C1-C12, each at its stated tolerance.

Every test records one PASS/FAIL line that is printed in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from bubbletree import energy as en
from bubbletree import flow as fl
from bubbletree import model as md
from bubbletree import rational as rat
from bubbletree import verify as vf
from bubbletree.geometry import stereo_project
from bubbletree.grid import Field, GridParams, make_grid
from tests.conftest import opposite_model, record, same_surface_model, transversal_pair

E6, E8, E10, E12 = (math.exp(k) for k in (6, 8, 10, 12))
# frozen from the quadrature oracle (scipy quad, epsrel 1e-13) when the cap profile was fixed
CUTOFF_EXCESS = 0.830930543


def _monomial_field(g, k):
    return Field(g, stereo_project(g.z**k))


def test_c1_harmonic_energies():
    start = time.perf_counter()
    g = make_grid()
    errs = [abs(en.dirichlet_energy(_monomial_field(g, k)) / (4 * math.pi * k) - 1) for k in (1, 2, 3)]
    elapsed = time.perf_counter() - start
    ok = max(errs) <= 1e-6 and elapsed < 10
    record("C1", ok, f"max rel err {max(errs):.2e} (<= 1e-6), {elapsed:.2f} s")
    assert ok


def test_c2_harmonicity():
    floor = 1e-8  # below this the value is rounding noise and need not halve
    ladder = {}
    for n_r in (128, 256, 512):
        g = make_grid(GridParams(n_r=n_r))
        ladder[n_r] = [en.tension_sphere_L2(_monomial_field(g, k)) for k in (1, 2, 3)]
    at_default = max(ladder[512])
    halving = all(b <= 0.5 * a or max(a, b) < floor
                  for lo, hi in ((128, 256), (256, 512)) for a, b in zip(ladder[lo], ladder[hi]))
    ok = at_default <= 1e-6 and halving
    record("C2", ok, f"max tension {at_default:.2e} at n_r=512, halves per doubling: {halving}")
    assert ok


def test_c3_cutoff_energy():
    ratios, grid_gap = [], 0.0
    for mu in (E6, E8, E10, E12):
        m = same_surface_model(mu, 0.05)
        quad = vf.cutoff_energy(m.radii)
        on_grid = vf.cutoff_energy_grid(m, m.grid(n_theta=32))
        grid_gap = max(grid_gap, abs(on_grid / quad - 1))
        ratios.append(abs(quad - 2 * math.pi * m.c_mu) / m.c_mu**2)
    spread = max(ratios) / min(ratios)
    ok = spread <= 2 and grid_gap < 1e-4 and abs(ratios[0] - CUTOFF_EXCESS) < 1e-6
    record("C3", ok, f"|E - 2 pi c| / c^2 = {min(ratios):.5f}..{max(ratios):.5f}, grid vs quad {grid_gap:.1e}")
    assert ok


def test_c4_neck_energy():
    errs = []
    for delta in (0.02, 0.05, 0.1):
        m = same_surface_model(E8, delta)
        E = vf.neck_energy(m, m.grid(n_theta=32))
        errs.append(abs(E / vf.neck_energy_main_term(m) - 1))
    ok = max(errs) <= 0.05
    record("C4", ok, f"E(gamma) / (pi c delta^2) - 1 up to {max(errs):.3%} (<= 5%)")
    assert ok


def test_c5_bubble_integral():
    from scipy import integrate

    anchor = integrate.quad(lambda t: t**3 / (1 + t * t) ** 3, 0, np.inf, epsrel=1e-13)[0]
    assert abs(anchor - 0.25) < 1e-12
    lead = 1e4 * vf.Ij_H(1, 1e4)
    scaled = {j: [mu**j * vf.Ij_H(j, mu) for mu in (E6, E8, E10, E12)] for j in (1, 2, 3)}
    routes = max(abs(vf.Ij_H(j, mu) / vf.Ij_H_disc(j, mu) - 1) for j in (1, 2, 3) for mu in (E6, E10))
    bounded = all(0.5 * j <= v <= 1.5 * j for j, vals in scaled.items() for v in vals)
    ok = abs(lead - 1) <= 0.02 and bounded and routes < 1e-9
    record("C5", ok, f"mu I_1^H(1e4) = {lead:.5f}; mu^j I_j^H in [j/2, 3j/2]: {bounded}; routes {routes:.1e}")
    assert ok


def test_c6_angular_pairing():
    U0 = md.stereographic_descriptor()
    U1 = md.stereographic_descriptor(conjugated=True)
    opp = max(abs(vf.Ij_theta(j, math.pi, U0, U1).value + 8 * math.pi) for j in (1, 2, 3))
    trans = 0.0
    for angle in (0.4, math.pi / 2, 2.5):
        T0, T1 = transversal_pair(angle)
        for alpha in np.linspace(0, 2 * math.pi, 9):
            ref = vf.transversal_closed_form(alpha, T0, T1)
            trans = max(trans, max(abs(vf.Ij_theta(j, alpha, T0, T1).value - ref) for j in (1, 2, 3)))
    ok = opp <= 1e-6 and trans <= 1e-6
    record("C6", ok, f"|I_j(pi) + 8 pi| = {opp:.1e}; transversal closed form gap {trans:.1e}")
    assert ok


def _random_pairs():
    # translations get a random phase: along a symmetry axis dE vanishes exactly and the
    # central difference is pure rounding, so no order could be observed
    rng = np.random.default_rng(7)
    kinds = ("translate_U1", "translate_U0", "perturb_q1", "perturb_q0", "scale_mu")
    out = []
    for i in range(10):
        mu = math.exp(rng.uniform(5.5, 8.0))
        delta = rng.uniform(0.01, 0.1)
        phase = rng.uniform(0, 2 * math.pi)
        kind = kinds[i % len(kinds)]
        m = opposite_model(mu) if i in (2, 4, 8) else same_surface_model(mu, delta)
        params = {"a": complex(math.cos(phase), math.sin(phase))} if kind.startswith("translate") else \
            {"theta": phase} if kind.startswith("perturb") else {}
        out.append((m, m.direction(kind, **params)))
    return out


def _observed_order(errs):
    return math.log2(errs[0] / errs[1])


def test_c7_variation_consistency():
    orders1, orders2 = [], []
    for i, (m, d) in enumerate(_random_pairs()):
        g = m.grid(n_r=256, n_theta=64)
        u = m.sample(g)
        w = d.field(g)
        w = w * (1.0 / en.model_norm(m).norm(w))
        exact = en.first_variation(u, w)
        errs = []
        for h in (0.04, 0.02):
            fd = en.energy_difference(en.retract(u, w, h), en.retract(u, w, -h)) / (2 * h)
            errs.append(abs(fd - exact))
        orders1.append(_observed_order(errs))

        v = en.project_field(u, np.roll(w.values, 3, axis=1))
        exact2 = en.second_variation(u, v, w)
        errs = []
        for h in (0.04, 0.02):
            def at(a, b):
                p = u.values + a * v.values + b * w.values
                return Field(g, p / np.linalg.norm(p, axis=-1, keepdims=True))
            num = (en.energy_difference(at(h, h), at(h, -h)) - en.energy_difference(at(-h, h), at(-h, -h)))
            errs.append(abs(num / (4 * h * h) - exact2))
        orders2.append(_observed_order(errs))
    ok = min(orders1) >= 1.9 and min(orders2) >= 1.9
    record("C7", ok, f"observed orders: first {min(orders1):.2f}..{max(orders1):.2f}, "
                     f"second {min(orders2):.2f}..{max(orders2):.2f} (>= 1.9)")
    assert ok


def test_c8_defect_scaling():
    deltas = np.linspace(0.01, 0.1, 7)
    defects = []
    for delta in deltas:
        m = same_surface_model(E8, delta)
        defects.append(en.energy_defect(m, m.grid(), with_dual=False).defect)
    x, y = deltas**2, np.array(defects)
    s = float(x @ y / (x @ x))
    r2 = 1 - float(np.sum((y - s * x) ** 2)) / float(np.sum((y - y.mean()) ** 2))
    c = same_surface_model(E8, 0.05).c_mu
    ok = abs(s / (math.pi * c) - 1) <= 0.05 and r2 >= 0.999
    record("C8", ok, f"slope / (pi c) = {s / (math.pi * c):.4f}, R^2 = {r2:.8f}")
    assert ok


@pytest.fixture(scope="module")
def same_surface_trio():
    return [same_surface_model(mu, 0.05) for mu in (E6, E8, E10)]


def test_c9_quotient_trend(same_surface_trio):
    Q, theory = [], []
    for m in same_surface_trio:
        Q.append(vf.quotient_Q(m, m.direction("translate_U1"), m.grid()).Q)
        lam = m.scales.mu1 / m.scales.mu0
        theory.append(math.log(m.data.f(lam)) / math.log(lam))
    rel = [(Q[k + 1] / Q[k]) / (theory[k + 1] / theory[k]) for k in range(2)]
    ok = all(b < a for a, b in zip(Q, Q[1:])) and all(0.5 <= r <= 2 for r in rel)
    record("C9", ok, f"Q = {', '.join(f'{q:.4f}' for q in Q)}; observed/theory ratio "
                     f"{', '.join(f'{r:.3f}' for r in rel)} (within x2)")
    assert ok


def test_c10_spectral_gap(same_surface_trio):
    lam_min, stable = [], []
    for m in same_surface_trio:
        g = m.grid()
        u = m.sample(g)
        system = en.GalerkinSystem(u, en.model_norm(m), en.default_space(m, 0.5), en.model_test_globals(m, u))
        lam_min.append(vf.jacobi_spectrum(m, system=system, include_delta=False).min_positive)
        fine = vf.jacobi_spectrum(m, system=system, include_delta=True).min_abs
        coarse = vf.jacobi_spectrum(m, g, spacing=1.0, include_delta=True).min_abs
        stable.append(abs(fine / coarse - 1))
    L = [math.log(m.data.mu) for m in same_surface_trio]
    rel = [(lam_min[k + 1] / lam_min[k]) / (L[k] / L[k + 1]) for k in range(2)]
    ok = all(0.5 <= r <= 2 for r in rel) and max(stable) <= 0.2
    record("C10", ok, f"lambda_min (delta excluded) {', '.join(f'{v:.4f}' for v in lam_min)}, ratio/theory "
                      f"{', '.join(f'{r:.3f}' for r in rel)}; complement min drift {max(stable):.2%} (<= 20%)")
    assert ok


def test_c11_flow():
    start = time.perf_counter()
    g = fl.flow_grid()
    op = fl.FlowOperator(g)
    u = fl.perturbed_sphere(g, 0.01)
    tau2 = op.tension_sq(u.values)
    consts = []
    for dt in (2e-5, 1e-5, 5e-6, 2.5e-6):
        nxt = fl.flow_step(fl.FlowState(u, 0.0, dt), op)
        consts.append(abs(en.energy_difference(nxt.u, u) + dt * tau2) / dt**2)
    identity = max(consts) / min(consts) <= 2
    state = fl.run_flow(u, 2.0, op=op, e_inf=4 * math.pi)
    elapsed = time.perf_counter() - start
    ok = identity and state.rate_r2 >= 0.99 and state.rate > 0 and elapsed < 300
    record("C11", ok, f"|dE + dt|tau|^2| / dt^2 = {min(consts):.4f}..{max(consts):.4f}; "
                      f"rate {state.rate:.3f}, R^2 {state.rate_r2:.5f}, {elapsed:.1f} s")
    assert ok


def test_c12_obstruction_trend():
    T0, T1 = transversal_pair()
    z = rat.RationalMap.monomial(1)
    spreads, detail = [], []
    for name in ("opposite", "transversal"):
        vals = []
        for mu in (E6, E8, E10):
            if name == "opposite":
                m = opposite_model(mu)
            else:
                m = md.assemble(md.GluingData(T0, T1, z, z, mu))
            n = min(rat.vanishing_order(m.data.q0), rat.vanishing_order(m.data.q1))
            vals.append(en.energy_defect(m, m.grid()).dual_norm_lower_bound * mu**n)
        mid = 0.5 * (max(vals) + min(vals))
        spreads.append(min(vals) > 0 and (max(vals) - min(vals)) / 2 <= 0.5 * mid)
        detail.append(f"{name} {', '.join(f'{v:.2f}' for v in vals)}")
    ok = all(spreads)
    record("C12", ok, "dual * mu^n*: " + "; ".join(detail) + " (within +-50%)")
    assert ok
