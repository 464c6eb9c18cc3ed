"""Checks of the expansion machinery: neck and cutoff energies, the bubble
integrals, the angular pairing, the dominant coefficient, the first-variation
expansion, the quotient Q and Galerkin spectra of the second variation.

Angular pairing convention: the second slot is fed e^{-i(j theta + alpha)},
so the value does not depend on j and the transversal closed form reads
pi c1 c0 [(A11 - A22) cos alpha - (A12 + A21) sin alpha].
"""
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from . import geometry as geo
from . import rational as rat
from .energy import (GalerkinSystem, default_space, dirichlet_energy, first_variation,
                     model_norm, model_test_globals)
from .errors import (AllCoefficientsZero, AssumptionViolated, DegenerateDifferential,
                     NonpositiveDenominator)
from .grid import Field
from .model import CAP_WIDTH, cutoff_phi_log_slope

_QUAD = dict(epsabs=0.0, epsrel=1e-13, limit=400)


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        elif isinstance(v, np.ndarray):
            v = v.tolist()
        out[k] = v
    return out


# cutoff and neck ---------------------------------------------------------------
def cutoff_energy(radii, width=CAP_WIDTH):
    """int |grad phi|^2 dx = 2 pi int (d phi / d log r)^2 d log r by adaptive quadrature."""
    t1, t0 = radii.log_r1, radii.log_r0

    def g(t):
        return cutoff_phi_log_slope(radii, math.exp(t), width) ** 2

    pts = [t1, t1 + width, t0 - width, t0]
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        total += integrate.quad(g, a, b, **_QUAD)[0]
    return 2.0 * math.pi * total


def cutoff_energy_grid(model, grid=None):
    """Same quantity on the model grid (cylinder trapezoid)."""
    grid = grid or model.grid()
    slope = cutoff_phi_log_slope(model.radii, grid.r)
    dens = np.broadcast_to(slope[:, None] ** 2, (grid.n_nodes, grid.n_theta))
    return grid.integrate_cylinder(dens, check_tail=False)


def neck_energy(model, grid=None):
    """E(gamma) of the geodesic neck map sampled on the model grid."""
    grid = grid or model.grid()
    return dirichlet_energy(Field(grid, model.gamma(grid.z), source="neck"))


def neck_energy_main_term(model):
    delta = geo.geodesic_distance(model.p1, model.p0)
    return math.pi * model.c_mu * float(delta) ** 2


# bubble integrals ----------------------------------------------------------------
def bubble_harmonic_h(j, mu, z):
    """2 (mu conj z)^j / (1 + |mu z|^{2j})."""
    w = (mu * np.conj(np.asarray(z, dtype=complex))) ** j
    return 2.0 * w / (1.0 + np.abs(w) ** 2)


def bubble_profile(j, t):
    """H_j(t) = 4 j^2 t^{2j-2} / (1 + t^{2j})^3."""
    t = np.asarray(t, dtype=float)
    return 4.0 * j * j * t ** (2 * j - 2) / (1.0 + t ** (2 * j)) ** 3


def Ij_H(j, mu):
    """4 j^2 mu^{-j} int_0^{sqrt mu} t^{4j-1} / (1 + t^{2j})^3 dt."""
    if mu <= 1.0:
        raise ValueError("mu must exceed 1")

    def g(t):
        return t ** (4 * j - 1) / (1.0 + t ** (2 * j)) ** 3

    top = math.sqrt(mu)
    val = sum(integrate.quad(g, a, b, **_QUAD)[0] for a, b in ((0.0, min(1.0, top)), (min(1.0, top), top)))
    return 4.0 * j * j * mu ** (-j) * val


def Ij_H_disc(j, mu, n_theta=None):
    """(1/2pi) int over |z| < mu^{-1/2} of Re[z^j mu^2 H_j(mu|z|)(mu conj z)^j] dx.

    Polar product rule: adaptive quadrature in r, trapezoid in the angle.
    """
    if mu <= 1.0:
        raise ValueError("mu must exceed 1")
    n_theta = n_theta or 4 * j + 4
    th = 2.0 * math.pi * np.arange(n_theta) / n_theta

    def ring(r):
        z = r * np.exp(1j * th)
        vals = z ** j * mu ** 2 * bubble_profile(j, mu * r) * (mu * np.conj(z)) ** j
        return float(np.mean(vals.real)) * r

    edge = mu ** -0.5
    knee = min(1.0 / mu, edge)
    val = integrate.quad(ring, 0.0, knee, **_QUAD)[0] + integrate.quad(ring, knee, edge, **_QUAD)[0]
    return val


# angular pairing -------------------------------------------------------------------
@dataclass(frozen=True)
class AngularPairing:
    j: int
    alpha: float
    value: float

    def to_json(self):
        return _jsonable(asdict(self))


def _apply(M, xi):
    xi = np.asarray(xi, dtype=complex)
    return xi.real[..., None] * M[:, 0] + xi.imag[..., None] * M[:, 1]


def Ij_theta(j, alpha, U0, U1, n_theta=None):
    """int d(U0 - U1)(0)(e^{ij theta}) . dU1(0)(e^{-i(j theta + alpha)}) d theta.

    The trapezoid rule on n_theta > 2j points is exact for this trigonometric integrand.
    """
    M1 = U1.differential_matrix()
    if np.linalg.norm(M1) <= 1e-12:
        raise DegenerateDifferential("dU1(0) vanishes")
    M = U0.differential_matrix() - M1
    n = n_theta or 4 * j + 4
    th = 2.0 * math.pi * np.arange(n) / n
    a = _apply(M, np.exp(1j * j * th))
    b = _apply(M1, np.exp(-1j * (j * th + alpha)))
    value = 2.0 * math.pi * float(np.mean(np.sum(a * b, axis=-1)))
    return AngularPairing(int(j), float(alpha), value)


@dataclass(frozen=True)
class FrameData:
    """dU0(0) / c0 in the orthonormal frame of dU1(0), plus the leftover normal part."""
    c0: float
    c1: float
    A: np.ndarray
    normal: float


def frame_data(U0, U1, tol=1e-8):
    M0, M1 = U0.differential_matrix(), U1.differential_matrix()
    c1 = float(np.linalg.norm(M1) / math.sqrt(2.0))
    c0 = float(np.linalg.norm(M0) / math.sqrt(2.0))
    if c1 <= tol or c0 <= tol:
        raise DegenerateDifferential("a differential at 0 vanishes")
    e = M1 / c1
    if abs(e[:, 0] @ e[:, 1]) > tol or abs(e[:, 0] @ e[:, 0] - e[:, 1] @ e[:, 1]) > tol:
        raise AssumptionViolated("dU1(0) is not conformal")
    A = e.T @ M0 / c0
    normal = float(np.linalg.norm(M0 / c0 - e @ A))
    return FrameData(c0, c1, A, normal)


def transversal_closed_form(alpha, U0, U1):
    fd = frame_data(U0, U1)
    A = fd.A
    return math.pi * fd.c0 * fd.c1 * ((A[0, 0] - A[1, 1]) * math.cos(alpha)
                                      - (A[0, 1] + A[1, 0]) * math.sin(alpha))


@dataclass(frozen=True)
class AlphaChoice:
    alpha: float
    c_star: float
    case: str
    j_max: int

    def to_json(self):
        return _jsonable(asdict(self))


def alpha_star_select(U0, U1, j_max=3, tol=1e-8):
    """Phase alpha* with -I_j(alpha*) > 0 for j <= j_max, and c* = min_j -I_j(alpha*) / 2."""
    if (np.allclose(U0.value_at_origin(), U1.value_at_origin(), atol=tol)
            and np.allclose(U0.differential_matrix(), U1.differential_matrix(), atol=tol)):
        raise AssumptionViolated("U0 and U1 agree to first order at 0")
    fd = frame_data(U0, U1, tol)
    A = fd.A
    if fd.normal <= tol:
        if np.linalg.det(A) > 0:
            raise AssumptionViolated("same tangent plane with the same orientation")
        case, alpha = "opposite", math.pi
    else:
        case = "transversal"
        d, s = A[0, 0] - A[1, 1], A[0, 1] + A[1, 0]
        if abs(d) > tol:
            alpha = 0.0 if d < 0 else math.pi
        elif abs(s) > tol:
            alpha = math.pi / 2 if s > 0 else 3 * math.pi / 2
        else:
            raise AssumptionViolated("angular pairing vanishes for every phase")
    c_star = min(-Ij_theta(j, alpha, U0, U1).value / 2.0 for j in range(1, j_max + 1))
    if c_star <= 0:
        raise AssumptionViolated(f"pairing not negative at alpha*={alpha}")
    return AlphaChoice(alpha, float(c_star), case, int(j_max))


def theta_star(alpha, q0, j0):
    """Phase of the q1 coefficient perturbation that realises alpha* against a_{j0}(q0)."""
    a = rat.taylor_at_zero(q0, j0 + 1).a(j0)
    return -(alpha + np.angle(a)) / j0


def dominant_index(q0, mu, lam1=10.0, n_star=None):
    """argmax over j <= n* of |a_j(q0)| (lam1/mu)^j, ties to the smaller j."""
    n_star = n_star or max(q0.numerator.degree, 1)
    tay = rat.taylor_at_zero(q0, n_star + 1)
    # compare logarithms so large mu does not underflow
    best, best_j = -math.inf, None
    for j in range(1, n_star + 1):
        a = abs(tay.a(j))
        if a == 0.0:
            continue
        v = math.log(a) + j * (math.log(lam1) - math.log(mu))
        if best_j is None or v > best + 1e-12 * max(1.0, abs(best)):
            best, best_j = v, j
    if best_j is None:
        raise AllCoefficientsZero("q0 has no nonzero coefficient up to n*")
    return best_j


# first-variation expansion ---------------------------------------------------------
@dataclass
class ExpansionReport:
    dE: float
    neck_term: float
    neck_term_exact: float
    interior_terms: float
    energy_terms: float
    residual: float
    error_proxy: float

    @property
    def main(self):
        return self.neck_term_exact + self.interior_terms + self.energy_terms

    def to_json(self):
        return _jsonable(asdict(self) | {"main": self.main})


def _delta_sq_rate(model, direction):
    p0, p1 = model.p0, model.p1
    dp0, dp1 = direction._dU_origin()
    cos_d = float(np.clip(p0 @ p1, -1.0, 1.0))
    delta = math.acos(cos_d)
    dcos = float(dp0 @ p1 + p0 @ dp1)
    # d(delta^2) = -2 delta / sin(delta) d(cos delta), with delta/sin delta -> 1
    ratio = 1.0 if delta < 1e-8 else delta / math.sin(delta)
    return -2.0 * ratio * dcos


def expansion_residual(model, direction, grid=None):
    grid = grid or model.grid()
    u = model.sample(grid)
    w = direction.field(grid)
    dE = first_variation(u, w)
    rate = _delta_sq_rate(model, direction)
    neck = math.pi * model.c_mu * rate
    # E(gamma) = delta^2 |grad phi|^2 / 2 exactly; pi c is its leading part
    neck_exact = 0.5 * cutoff_energy(model.radii) * rate

    parts = direction.parts(grid.z)
    q0x, q1x = model.q_parts(grid.z)
    inner = (grid.r < model.radii.r_hat)[:, None]
    interior = 0.0
    for j_vals, du, mask in ((model.apply_dbeta0(q0x), parts["u1"], inner),
                             (-model.apply_dbeta0(q1x), parts["u0"], ~inner)):
        lap = Field(grid, du).cylinder_laplacian
        dens = np.where(mask, np.sum(j_vals * lap, axis=-1), 0.0)
        interior += grid.integrate_cylinder(dens, check_tail=False)
    # E(U_i) is unchanged along translations and coefficient perturbations
    energy_terms = 0.0
    main = neck_exact + interior + energy_terms
    d = model.diagnostics
    beta = float(np.linalg.norm(model.dbeta0))
    mu = model.data.mu
    proxy = d.delta ** 2 / math.log(mu) + beta * d.nu_bar * mu ** -0.5
    return ExpansionReport(float(dE), float(neck), float(neck_exact), float(interior), energy_terms,
                           float(dE - main), float(proxy))


# quotient and spectra -----------------------------------------------------------------
@dataclass
class QuotientReport:
    dE_y: float
    dual_norm: float
    d2E_y_dual: float
    Q: float

    def to_json(self):
        return _jsonable(asdict(self))


def quotient_Q(model, direction, grid=None, spacing=0.5, modes=2, system=None):
    """Q = |dE|_* (|dE|_* + |d2E(y, .)|_*) / dE(y) for the z-normalised direction y."""
    grid = grid or model.grid()
    u = model.sample(grid)
    norm = model_norm(model)
    y = direction.field(grid)
    y = y * (1.0 / norm.norm(y))
    dE_y = first_variation(u, y)
    if not dE_y > 0:
        raise NonpositiveDenominator(f"dE(z)(y) = {dE_y:.3g} is not positive")
    if system is None:
        globals_ = model_test_globals(model, u) + [("y", y)]
        system = GalerkinSystem(u, norm, default_space(model, spacing, modes), globals_)
    dual = system.dual_norm()
    d2 = system.dual_norm(system.hessian_row("y"))
    return QuotientReport(float(dE_y), dual, d2, dual * (dual + d2) / dE_y)


KERNEL_PREFIXES = ("mobius", "rotation", "translate_both", "perturb", "scale")
DELTA_DIRECTIONS = ("translate_U1_re", "translate_U1_im")


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    kernel_rank: int
    min_abs: float
    min_positive: float

    def to_json(self):
        return {"kernel_rank": self.kernel_rank, "min_abs": self.min_abs,
                "min_positive": self.min_positive, "n": int(self.eigenvalues.size)}


def jacobi_spectrum(model, grid=None, spacing=0.5, modes=2, include_delta=True, system=None):
    """Generalised Galerkin spectrum of d2E(z) on the complement of the near-kernel.

    With ``include_delta=False`` the translations of the bubble, which change the
    neck length, stay in the complement.
    """
    if system is None:
        grid = grid or model.grid()
        u = model.sample(grid)
        system = GalerkinSystem(u, model_norm(model), default_space(model, spacing, modes),
                                model_test_globals(model, u))
    names = [n for n in system.global_names if n.startswith(KERNEL_PREFIXES)]
    if include_delta:
        names += [n for n in DELTA_DIRECTIONS if n in system.global_names]
    ev, rank = system.spectrum(names)
    pos = ev[ev > 0]
    return SpectrumReport(ev, rank, float(np.min(np.abs(ev))),
                          float(pos.min()) if pos.size else float("nan"))
