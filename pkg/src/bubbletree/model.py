"""Glued two-scale approximate harmonic maps ("singularity models").

A model is built from two exactly harmonic spheres ``U0`` (base) and
``U1`` (bubble), two rational maps ``q0, q1`` vanishing at 0 and a scale
``mu``.  Both spheres are precomposed with

    q_mu(z) = q0(z) + q1(1 / (mu z)),

their values at 0 are joined along a geodesic neck on the annulus
``r1 < |z| < r0``, first-order correction terms make the two pieces agree
to second order, and the results are blended across ``|z| ~ r_hat`` and
projected back to the sphere.

Plane points are complex arrays throughout; every evaluator returns
ambient vectors with a trailing axis of length N.
"""
import functools
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import geometry as geo
from . import rational as rat
from .errors import (ConfigError, DegenerateDifferential, PoleInDomain, ScalesTooClose,
                     TubularNeighborhoodViolated)
from .grid import Field, model_grid

CAP_WIDTH = 0.15  # width in log r of each smoothing cap of the neck cutoff
MU_BAR = math.exp(4.0)


# ---------------------------------------------------------------------------
# smooth steps

def _psi(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _dpsi(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos]) / x[pos] ** 2
    return out


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    a, b = _psi(x), _psi(1.0 - np.asarray(x, dtype=float))
    return a / (a + b)


def smooth_step_slope(x):
    x = np.asarray(x, dtype=float)
    a, b = _psi(x), _psi(1.0 - x)
    da, db = _dpsi(x), _dpsi(1.0 - x)
    return (da * b + a * db) / (a + b) ** 2


def blend(t):
    """Gluing profile on [0, inf): 0 below 1/2, 1 above 2, blend(1/t) = 1 - blend(t)."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return smooth_step((np.log(t) + math.log(2.0)) / (2.0 * math.log(2.0)))


def blend_log_slope(t):
    """t * blend'(t)."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        x = (np.log(t) + math.log(2.0)) / (2.0 * math.log(2.0))
    return smooth_step_slope(x) / (2.0 * math.log(2.0))


# ---------------------------------------------------------------------------
# harmonic spheres

def _sphere_of_ratio(n, d):
    """pi(n / d) without forming the quotient (poles map to the south pole)."""
    scale = np.maximum(np.abs(n), np.abs(d))
    scale = np.where(scale == 0, 1.0, scale)
    n, d = n / scale, d / scale
    den = np.abs(n) ** 2 + np.abs(d) ** 2
    planar = 2.0 * n * np.conj(d) / den
    out = np.empty(np.shape(n) + (3,))
    out[..., 0] = planar.real
    out[..., 1] = planar.imag
    out[..., 2] = (np.abs(d) ** 2 - np.abs(n) ** 2) / den
    return out


_FLIP = np.array([1.0, 1.0, -1.0])


def _sphere_differential_of_ratio(n, d, dn, dd, xi):
    """d/de pi((n + e dn xi) / (d + e dd xi)) in the complex direction xi."""
    wronski = dn * d - n * dd
    inner = np.abs(n) <= np.abs(d)
    out = np.empty(np.broadcast(n, xi).shape + (3,))
    with np.errstate(divide="ignore", invalid="ignore"):
        Z = np.where(inner, n / np.where(inner, d, 1.0), 0.0)
        dZ = np.where(inner, wronski / np.where(inner, d, 1.0) ** 2 * xi, 0.0)
        W = np.where(inner, 0.0, d / np.where(inner, 1.0, n))
        dW = np.where(inner, 0.0, -wronski / np.where(inner, 1.0, n) ** 2 * xi)
    a = geo.stereo_differential(Z, dZ)
    b = geo.stereo_differential(np.conj(W), np.conj(dW)) * _FLIP
    out[...] = np.where(inner[..., None], a, b)
    return out


@dataclass(frozen=True)
class HarmonicMapDescriptor:
    """U(z) = embedding(pi(R(z + c))), or with z, c conjugated."""

    rational_data: rat.RationalMap
    conjugated: bool = False
    embedding: geo.GreatSphereEmbedding = field(default_factory=geo.GreatSphereEmbedding.identity)
    translation: complex = 0.0

    @property
    def N(self):
        return self.embedding.ambient_dim

    @property
    def degree(self):
        return self.rational_data.degree

    def translated(self, a):
        return replace(self, translation=complex(self.translation) + complex(a))

    def _arg(self, z):
        w = np.asarray(z, dtype=complex) + complex(self.translation)
        return np.conj(w) if self.conjugated else w

    def __call__(self, z):
        w = self._arg(z)
        R = self.rational_data
        return self.embedding(_sphere_of_ratio(R.numerator(w), R.denominator(w)))

    evaluate = __call__

    def differential(self, z, xi):
        """dU(z) applied to the plane vector xi (complex)."""
        w = self._arg(z)
        xi = np.conj(xi) if self.conjugated else np.asarray(xi, dtype=complex)
        R = self.rational_data
        n, d = R.numerator, R.denominator
        out = _sphere_differential_of_ratio(n(w), d(w), n.deriv()(w), d.deriv()(w), xi)
        return self.embedding(out)

    def second_differential(self, z, xi, eta):
        """d^2U(z)(xi, eta) at points where R(z + c) is finite."""
        w = self._arg(z)
        if self.conjugated:
            xi, eta = np.conj(xi), np.conj(eta)
        R = self.rational_data
        Z = R(w)
        d1 = R.raw_derivative(w)
        d2 = derivative_map(R).raw_derivative(w)
        out = (geo.stereo_second_differential(Z, d1 * xi, d1 * eta)
               + geo.stereo_differential(Z, d2 * xi * eta))
        return self.embedding(out)

    def value_at_origin(self):
        return self(np.complex128(0.0))

    def differential_matrix(self, z=0.0):
        """N x 2 real matrix of dU(z) (columns: d/dx, d/dy)."""
        return np.stack([self.differential(z, 1.0), self.differential(z, 1j)], axis=-1)

    def to_json(self):
        return {"rational": self.rational_data.to_json(), "conjugated": bool(self.conjugated),
                "rotation": self.embedding.rotation.tolist(),
                "translation": [float(np.real(self.translation)), float(np.imag(self.translation))]}

    @classmethod
    def from_json(cls, d):
        return cls(rat.RationalMap.from_json(d["rational"]), bool(d.get("conjugated", False)),
                   geo.GreatSphereEmbedding(np.array(d.get("rotation", np.eye(3).tolist()))),
                   complex(*d.get("translation", [0.0, 0.0])))


def stereographic_descriptor(dim=3, conjugated=False, rotation=None, translation=0.0, degree=1):
    """The descriptor of pi(z^degree) (optionally conjugated / rotated / embedded)."""
    emb = geo.GreatSphereEmbedding(np.eye(dim) if rotation is None else rotation)
    return HarmonicMapDescriptor(rat.RationalMap.monomial(degree), conjugated, emb, translation)


def derivative_map(R):
    """R' as a rational map (no precomposition)."""
    n, d = R.numerator, R.denominator
    return rat.RationalMap(n.deriv() * d + (n * d.deriv()) * -1.0, d * d)


# ---------------------------------------------------------------------------
# gluing data, radii, partitions

@dataclass(frozen=True)
class GluingData:
    U0: HarmonicMapDescriptor
    U1: HarmonicMapDescriptor
    q0: rat.RationalMap
    q1: rat.RationalMap
    mu: float
    f_choice: str = "log"
    sigma1: float = 0.05
    mu_bar: float = MU_BAR

    def __post_init__(self):
        if self.f_choice not in ("log", "power"):
            raise ConfigError(f"unknown f_choice {self.f_choice!r}")
        if self.U0.N != self.U1.N:
            raise ConfigError("U0 and U1 must share the target dimension")
        for name, q in (("q0", self.q0), ("q1", self.q1)):
            if q.precomposition != "identity":
                raise ConfigError(f"{name} must be given without precomposition")
            if abs(rat.taylor_at_zero(q, 1).a(0)) > 1e-12:
                raise ConfigError(f"{name}(0) must vanish")
        if not self.mu > self.mu_bar:
            raise ScalesTooClose(f"mu = {self.mu:.4g} must exceed mu_bar = {self.mu_bar:.4g}")

    @property
    def N(self):
        return self.U0.N

    def f(self, lam):
        return math.log(lam) if self.f_choice == "log" else lam**self.sigma1

    def f_log_slope(self, lam):
        """d log f / d log lam."""
        return 1.0 / math.log(lam) if self.f_choice == "log" else self.sigma1

    def swapped(self):
        """Roles of base and bubble exchanged (domain coordinate x' = 1/(mu x))."""
        return replace(self, U0=self.U1, U1=self.U0, q0=self.q1, q1=self.q0)

    def assumption_checks(self):
        lam = self.scales().mu1 / self.scales().mu0
        f = self.f(lam)
        return {"mu_df_le_f": lam * f * self.f_log_slope(lam) / lam <= f,
                "log_f_over_log_mu_le_sigma1": math.log(f) / math.log(lam) <= self.sigma1,
                "inv_f_le_sigma1": 1.0 / f <= self.sigma1}

    def scales(self):
        return rat.mu_values(self.q0, self.q1, self.mu)

    def to_json(self):
        return {"U0": self.U0.to_json(), "U1": self.U1.to_json(),
                "q0": self.q0.to_json(), "q1": self.q1.to_json(), "mu": float(self.mu),
                "f_choice": self.f_choice, "sigma1": self.sigma1, "mu_bar": self.mu_bar}


@dataclass(frozen=True)
class Radii:
    r0: float
    r1: float
    r_hat: float
    c: float

    @property
    def log_r0(self):
        return math.log(self.r0)

    @property
    def log_r1(self):
        return math.log(self.r1)


def build_radii(data: GluingData, min_ratio=2.0):
    sc = data.scales()
    lam = sc.mu1 / sc.mu0
    if lam <= 1.0:
        raise ScalesTooClose("bubble scale must exceed base scale")
    f = data.f(lam)
    r1, r0, rh = f / sc.mu1, sc.mu0 / f, math.sqrt(sc.mu0 / sc.mu1)
    chain = [1.0 / sc.mu1, r1, rh, r0, sc.mu0]
    ratios = [b / a for a, b in zip(chain, chain[1:])]
    if min(ratios) < min_ratio:
        raise ScalesTooClose(f"radii not separated: consecutive ratios {np.round(ratios, 3).tolist()}")
    return Radii(r0, r1, rh, 1.0 / math.log(r0 / r1))


@dataclass(frozen=True)
class DomainPartition:
    """Disk/annulus bookkeeping; each predicate takes |x|."""

    radii: Radii

    def inner_disk(self, r):  # Omega_1
        return np.asarray(r) < self.radii.r_hat

    def outer_region(self, r):  # Omega_0
        return np.asarray(r) >= self.radii.r_hat

    def neck(self, r):  # A
        r = np.asarray(r)
        return (r >= self.radii.r1) & (r < self.radii.r0)

    def cap_annuli(self, r):  # A*
        r, R = np.asarray(r), self.radii
        return ((r >= R.r1) & (r < 2 * R.r1)) | ((r >= R.r0 / 2) & (r < R.r0))

    def gluing_annulus(self, r):  # A hat
        r, R = np.asarray(r), self.radii
        return (r >= R.r_hat / 2) & (r < 2 * R.r_hat)


def cutoff_phi(radii: Radii, r, width=CAP_WIDTH):
    """Neck cutoff: 0 on |x| <= r1, 1 on |x| >= r0, c log(r / r1) in between.

    Each end is smoothed over a log-width ``width`` with the mirror image of
    the other, so phi(r1 r0 / r) = 1 - phi(r).
    """
    return _cutoff_parts(radii, r, width)[0]


def cutoff_phi_radii_derivatives(radii, r, width=CAP_WIDTH):
    """(d phi / d log r1, d phi / d log r0) at fixed r."""
    return _cutoff_parts(radii, r, width)[1:]


def cutoff_phi_log_slope(radii, r, width=CAP_WIDTH):
    """d phi / d log r."""
    t = np.log(np.asarray(r, dtype=float))
    t1, t0, c = radii.log_r1, radii.log_r0, radii.c
    x1, x0 = (t - t1) / width, (t0 - t) / width
    S1, S0 = smooth_step(x1), smooth_step(x0)
    dS1, dS0 = smooth_step_slope(x1), smooth_step_slope(x0)
    mid = c * np.ones_like(t)
    inner = c * S1 + c * (t - t1) * dS1 / width
    outer = c * S0 + c * (t0 - t) * dS0 / width
    out = np.where(x1 < 1, inner, np.where(x0 < 1, outer, mid))
    return np.where((t <= t1) | (t >= t0), 0.0, out)


def _cutoff_parts(radii, r, width):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        t = np.log(r)
    t1, t0, c = radii.log_r1, radii.log_r0, radii.c
    x1, x0 = (t - t1) / width, (t0 - t) / width
    S1, S0 = smooth_step(x1), smooth_step(x0)
    dS1, dS0 = smooth_step_slope(x1), smooth_step_slope(x0)
    a, b = t - t1, t0 - t
    # c = 1/(t0 - t1): dc/dt1 = c^2, dc/dt0 = -c^2
    val = np.where(x1 < 1, c * a * S1, np.where(x0 < 1, 1.0 - c * b * S0, c * a))
    d1 = np.where(x1 < 1, (c * c * a - c) * S1 - c * a * dS1 / width,
                  np.where(x0 < 1, -c * c * b * S0, c * c * a - c))
    d0 = np.where(x1 < 1, -c * c * a * S1,
                  np.where(x0 < 1, -(c - c * c * b) * S0 - c * b * dS0 / width, -c * c * a))
    lo, hi = t <= t1, t >= t0
    val = np.where(lo, 0.0, np.where(hi, 1.0, val))
    d1 = np.where(lo | hi, 0.0, d1)
    d0 = np.where(lo | hi, 0.0, d0)
    return val, d1, d0


def geodesic_velocity(p0, p1, t):
    """d/dt of the constant-speed geodesic from p0 to p1."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    d = float(geo.geodesic_distance(p0, p1))
    t = np.asarray(t, dtype=float)[..., None]
    if d < 1e-12:
        return np.broadcast_to(p1 - p0, t.shape[:-1] + p0.shape).copy()
    return d * (-np.cos((1.0 - t) * d) * p0 + np.cos(t * d) * p1) / np.sin(d)


# ---------------------------------------------------------------------------
# the model

@dataclass(frozen=True)
class Diagnostics:
    delta: float
    tension: float
    nu0: float
    nu1: float
    nu_bar: float

    def to_json(self):
        return {k: float(v) for k, v in asdict(self).items()}


class SingularityModel:
    """Immutable glued map; build it with :func:`assemble`."""

    def __init__(self, data: GluingData, radii: Radii, reference=None):
        self.data = data
        self.radii = radii
        self.partition = DomainPartition(radii)
        self.scales = data.scales()
        self.N = data.N
        self.p1 = data.U1.value_at_origin()
        self.p0 = data.U0.value_at_origin()
        self.dbeta0 = data.U0.differential_matrix() - data.U1.differential_matrix()
        self.reference = reference or (data.q0, data.q1)

    # pieces -----------------------------------------------------------------
    def apply_dbeta0(self, xi, M=None):
        M = self.dbeta0 if M is None else M
        xi = np.asarray(xi, dtype=complex)
        return xi.real[..., None] * M[:, 0] + xi.imag[..., None] * M[:, 1]

    def q_parts(self, x):
        x = np.asarray(x, dtype=complex)
        with np.errstate(divide="ignore", invalid="ignore"):
            q1x = self.data.q1(1.0 / (self.data.mu * x))
        return self.data.q0(x), q1x

    def q_mu(self, x):
        a, b = self.q_parts(x)
        return a + b

    def phi(self, x):
        return cutoff_phi(self.radii, np.abs(x))

    def gamma(self, x):
        return geo.geodesic(self.p1, self.p0, self.phi(x))

    def beta(self, x):
        w = self.q_mu(x)
        return self.data.U0(w) - self.data.U1(w)

    def corrections(self, x):
        q0x, q1x = self.q_parts(x)
        return -self.apply_dbeta0(q1x), self.apply_dbeta0(q0x)

    def components(self, x):
        """Dict of u0, u1, gamma, gamma_tilde_0/1, j0, j1, v0, v1, blend, z."""
        x = np.asarray(x, dtype=complex)
        r = np.abs(x)
        q0x, q1x = self.q_parts(x)
        w = q0x + q1x
        u0, u1 = self.data.U0(w), self.data.U1(w)
        gam = geo.geodesic(self.p1, self.p0, cutoff_phi(self.radii, r))
        b = blend(r / self.radii.r_hat)[..., None]
        # j1 grows with |q0| and j0 with |q1|; each only enters where it is blended in
        j1 = np.where(b < 1, self.apply_dbeta0(np.where(b[..., 0] < 1, q0x, 0.0)), 0.0)
        j0 = np.where(b > 0, -self.apply_dbeta0(np.where(b[..., 0] > 0, q1x, 0.0)), 0.0)
        v1 = u1 + gam - self.p1 + j1
        v0 = u0 + gam - self.p0 + j0
        P = (1.0 - b) * v1 + b * v0
        norm = np.linalg.norm(P, axis=-1)
        if np.any(norm <= 0.5):
            raise TubularNeighborhoodViolated(f"pre-projection field reaches |P| = {norm.min():.3g}")
        return {"u0": u0, "u1": u1, "gamma": gam, "gamma_tilde_1": gam - self.p1,
                "gamma_tilde_0": gam - self.p0, "j0": j0, "j1": j1, "v0": v0, "v1": v1,
                "blend": b[..., 0], "pre": P, "z": P / norm[..., None]}

    def __call__(self, x):
        return self.components(x)["z"]

    evaluate = __call__

    # diagnostics --------------------------------------------------------------
    @functools.cached_property
    def diagnostics(self):
        delta = float(geo.geodesic_distance(self.p1, self.p0))
        n0 = rat.vanishing_order(self.reference[0])
        n1 = rat.vanishing_order(self.reference[1])
        nu0, nu1, nub = rat.nu_values(self.data.q0, self.data.q1, self.data.mu,
                                      mu1=self.scales.mu1, n0=n0, n1=n1)
        # descriptors are exactly harmonic, so their tensions vanish identically
        return Diagnostics(delta, 0.0, nu0, nu1, nub)

    @property
    def c_mu(self):
        return self.radii.c

    @property
    def energy_star(self):
        d = self.data
        return 4.0 * math.pi * (d.q0.degree * d.U0.degree + d.q1.degree * d.U1.degree)

    @property
    def max_degree(self):
        d = self.data
        return max(d.q0.degree, d.q1.degree) * max(d.U0.degree, d.U1.degree)

    # sampling -------------------------------------------------------------------
    def grid(self, n_r=512, n_theta=128, **kw):
        return model_grid(self.radii, self.scales.mu0, self.scales.mu1, n_r=n_r,
                          n_theta=n_theta, **kw)

    def sample(self, grid=None, **kw):
        grid = grid or self.grid(**kw)
        if grid.n_theta < 4 * (self.max_degree + 1):
            raise ValueError("angular resolution too low for the rational degree")
        if grid.min_radius > self.radii.r1 / 10.0:
            raise ValueError("grid does not resolve the bubble scale")
        return Field(grid, self(grid.z), source="singularity-model")

    def swapped_point(self, x):
        """Image of x under the role-swapping inversion x' = 1/(mu x)."""
        return 1.0 / (self.data.mu * np.asarray(x, dtype=complex))

    # tangent directions ---------------------------------------------------------
    def direction(self, kind, **params):
        return VariationDirection(self, kind, params)

    def tangent_basis(self, j0=None, theta=0.0):
        """Translations of either sphere (2 real directions each), leading
        coefficient perturbations of q0 and q1, and the scale of the bubble."""
        out = []
        for kind in ("translate_U1", "translate_U0"):
            for a in (1.0, 1j):
                out.append(self.direction(kind, a=a))
        n0 = rat.vanishing_order(self.reference[0])
        n1 = rat.vanishing_order(self.reference[1])
        for th in (0.0, math.pi / (2 * n0)):
            out.append(self.direction("perturb_q0", j0=n0, theta=th))
        for th in (0.0, math.pi / (2 * n1)):
            out.append(self.direction("perturb_q1", j0=j0 or n1, theta=th))
        out.append(self.direction("scale_mu"))
        return out


def assemble(data: GluingData, reference=None, check=True):
    """Build a model; ``reference`` (q0*, q1*) fixes the vanishing orders used for nu."""
    radii = build_radii(data)
    for p in data.q0.poles():
        if abs(p) < 4.0 * radii.r_hat:
            raise PoleInDomain(f"q0 has a pole at {p:.3g} inside the bubble-side disk")
    for p in rat.reciprocal_rescale(data.q1, data.mu).poles():
        if abs(p) > radii.r_hat / 4.0:
            raise PoleInDomain(f"q1(1/(mu z)) has a pole at {p:.3g} on the base side")
    model = SingularityModel(data, radii, reference)
    if check:
        probe = np.exp(np.linspace(math.log(radii.r1 / 4), math.log(4 * radii.r0), 97))
        ang = np.exp(2j * np.pi * np.arange(16) / 16)
        model.components(probe[:, None] * ang[None, :])
    return model


# ---------------------------------------------------------------------------
# tangent directions

KINDS = ("translate_U0", "translate_U1", "perturb_q0", "perturb_q1", "scale_mu")


class VariationDirection:
    """A one-parameter family of models through ``model`` and its derivative."""

    def __init__(self, model, kind, params):
        if kind not in KINDS:
            raise ValueError(f"unknown variation kind {kind!r}")
        self.model = model
        self.kind = kind
        self.params = dict(params)
        if kind.startswith("translate"):
            self.params.setdefault("a", 1.0)
        if kind.startswith("perturb"):
            self.params.setdefault("theta", 0.0)
            if "j0" not in self.params:
                q = model.data.q0 if kind == "perturb_q0" else model.data.q1
                self.params["j0"] = rat.vanishing_order(q)

    def __repr__(self):
        return f"VariationDirection({self.kind}, {self.params})"

    # the family ---------------------------------------------------------------
    def family(self, eps):
        d = self.model.data
        k, p = self.kind, self.params
        if k == "translate_U0":
            return replace(d, U0=d.U0.translated(eps * p["a"]))
        if k == "translate_U1":
            return replace(d, U1=d.U1.translated(eps * p["a"]))
        if k == "perturb_q0":
            return replace(d, q0=rat.perturb_coefficient(d.q0, p["j0"], p["theta"], eps))
        if k == "perturb_q1":
            return replace(d, q1=rat.perturb_coefficient(d.q1, p["j0"], p["theta"], eps))
        return replace(d, mu=d.mu * (1.0 + eps))

    def model_at(self, eps):
        return assemble(self.family(eps), reference=self.model.reference, check=False)

    # bookkeeping ----------------------------------------------------------------
    def _dq(self):
        d, k, p = self.model.data, self.kind, self.params
        if k == "perturb_q0":
            return rat.coefficient_direction(d.q0, p["j0"], p["theta"]), None
        if k == "perturb_q1":
            return None, rat.coefficient_direction(d.q1, p["j0"], p["theta"])
        if k == "scale_mu":
            return None, rat.scale_direction(d.q1)
        return None, None

    def _dU_origin(self):
        d, m = self.model.data, self.model
        a = self.params.get("a", 0.0)
        zero = np.zeros(m.N)
        if self.kind == "translate_U0":
            return d.U0.differential(0.0, a), zero
        if self.kind == "translate_U1":
            return zero, d.U1.differential(0.0, a)
        return zero, zero

    @property
    def eta0(self):
        d0, d1 = self._dU_origin()
        return float(np.linalg.norm(d0) + np.linalg.norm(d1))

    @property
    def eta_rat(self):
        return 0 if self.kind.startswith("translate") else 1

    @property
    def j_star(self):
        dq0, dq1 = self._dq()
        orders = [rat.taylor_at_zero(q).order for q in (dq0, dq1) if q is not None]
        return min(orders) if orders else None

    def _dlog_scales(self):
        d = self.model.data
        dq0, dq1 = self._dq()
        out = []
        for q, dq in ((d.q0, dq0), (d.q1, dq1)):
            if dq is None:
                out.append(0.0)
                continue
            a, n = rat.leading_coefficient(q)
            da = rat.taylor_at_zero(dq, n + 1).a(n)
            out.append(-(da / a).real / n)
        return out

    # derivative of the model ------------------------------------------------------
    def __call__(self, x):
        """d/d eps of model_eps(x) at eps = 0."""
        return self.parts(x)["z"]

    def parts(self, x):
        """Derivatives of the pieces (u0, u1, gamma, j0, j1, v0, v1, z) along the family."""
        m, d = self.model, self.model.data
        x = np.asarray(x, dtype=complex)
        r = np.abs(x)
        comp = m.components(x)
        q0x, q1x = m.q_parts(x)
        w = q0x + q1x
        dq0, dq1 = self._dq()
        with np.errstate(divide="ignore", invalid="ignore"):
            dq0x = dq0(x) if dq0 is not None else np.zeros_like(x)
            dq1x = dq1(1.0 / (d.mu * x)) if dq1 is not None else np.zeros_like(x)
        dw = dq0x + dq1x

        a = self.params.get("a", 0.0)
        dp0, dp1 = self._dU_origin()
        du0 = d.U0.differential(w, dw)
        du1 = d.U1.differential(w, dw)
        ddb = np.zeros_like(m.dbeta0)
        if self.kind == "translate_U0":
            du0 = du0 + d.U0.differential(w, a)
            ddb = np.stack([d.U0.second_differential(0.0, a, 1.0),
                            d.U0.second_differential(0.0, a, 1j)], axis=-1)
        elif self.kind == "translate_U1":
            du1 = du1 + d.U1.differential(w, a)
            ddb = -np.stack([d.U1.second_differential(0.0, a, 1.0),
                             d.U1.second_differential(0.0, a, 1j)], axis=-1)

        # radii move with the leading coefficients
        dl0, dl1 = self._dlog_scales()
        lam = m.scales.mu1 / m.scales.mu0
        dlogf = d.f_log_slope(lam) * (dl1 - dl0)
        dlog_r1, dlog_r0, dlog_rh = dlogf - dl1, dl0 - dlogf, 0.5 * (dl0 - dl1)

        phi = cutoff_phi(m.radii, r)
        dphi1, dphi0 = cutoff_phi_radii_derivatives(m.radii, r)
        dphi = dphi1 * dlog_r1 + dphi0 * dlog_r0
        dgam = (geo.geodesic_variation(m.p1, m.p0, phi, dp1, dp0)
                + geodesic_velocity(m.p1, m.p0, phi) * dphi[..., None])

        b = comp["blend"][..., None]
        db = -blend_log_slope(r / m.radii.r_hat)[..., None] * dlog_rh
        use1, use0 = b[..., 0] < 1, b[..., 0] > 0
        dj1 = np.where(use1[..., None], m.apply_dbeta0(np.where(use1, q0x, 0.0), ddb)
                       + m.apply_dbeta0(np.where(use1, dq0x, 0.0)), 0.0)
        dj0 = np.where(use0[..., None], -m.apply_dbeta0(np.where(use0, q1x, 0.0), ddb)
                       - m.apply_dbeta0(np.where(use0, dq1x, 0.0)), 0.0)
        dv1 = du1 + dgam - dp1 + dj1
        dv0 = du0 + dgam - dp0 + dj0
        dP = (1.0 - b) * dv1 + b * dv0 + (comp["v0"] - comp["v1"]) * db
        P = comp["pre"]
        norm = np.linalg.norm(P, axis=-1, keepdims=True)
        z = comp["z"]
        dz = (dP - np.sum(dP * z, axis=-1, keepdims=True) * z) / norm
        return {"u0": du0, "u1": du1, "gamma": dgam, "j0": dj0, "j1": dj1, "v0": dv0, "v1": dv1,
                "z": dz}

    evaluate = __call__

    def field(self, grid):
        return Field(grid, self(grid.z), source=f"d/deps {self.kind}")

    def finite_difference(self, x, eps=1e-5):
        """Central difference of the family (independent of the analytic route)."""
        return (self.model_at(eps)(x) - self.model_at(-eps)(x)) / (2.0 * eps)


def check_differential(U: HarmonicMapDescriptor, tol=1e-8):
    """Reject descriptors whose differential at 0 (nearly) vanishes."""
    if np.linalg.norm(U.differential_matrix()) <= tol:
        raise DegenerateDifferential("dU(0) vanishes")
