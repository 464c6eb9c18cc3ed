"""Dirichlet energy, tension, weighted norms and Galerkin estimates.

All integrals are taken on the log-polar cylinder, where the Dirichlet
density is conformally invariant.  With ``u_s, u_t`` the derivatives in
``log r`` and the angle:

* energy          1/2 int (u_s^2 + u_t^2) ds dt
* planar tension  tau = P_u(u_ss + u_tt) / r^2
* dE(u)(w)        int u_s.w_s + u_t.w_t
* d2E(u)(v, w)    int v_s.w_s + v_t.w_t - |grad u|^2 r^2 <v, w>

For unit ``u`` the projected Laplacian equals Delta u + |grad u|^2 u; the
projection keeps the rounding noise of nearly constant tails out of the
normal direction.
"""
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyTestSpace, NonTangentVariation
from .grid import ROUNDOFF_FLOOR, Field

TANGENCY_TOL = 1e-8


def _check_tangent(u, w, name="w"):
    inner = np.abs(np.sum(u.values * w.values, axis=-1))
    scale = max(1.0, float(np.max(np.abs(w.values))))
    if float(np.max(inner)) > TANGENCY_TOL * scale:
        raise NonTangentVariation(f"{name} is not tangent along u (max |<u,{name}>| = {inner.max():.3g})")


def dirichlet_energy(u: Field):
    return 0.5 * u.grid.integrate_cylinder(u.gradient_density)


def energy_difference(a: Field, b: Field):
    """E(a) - E(b) as 1/2 int <grad(a - b), grad(a + b)>, free of cancellation."""
    d, s = a - b, a + b
    dens = np.sum(d.d_s * s.d_s + d.d_theta * s.d_theta, axis=-1)
    return 0.5 * a.grid.integrate_cylinder(dens, check_tail=False)


def tension_cylinder(u: Field):
    """P_u(u_ss + u_tt) = r^2 * planar tension."""
    lap = u.cylinder_laplacian
    return lap - np.sum(lap * u.values, axis=-1, keepdims=True) * u.values


def tension_euclidean(u: Field, node=None):
    """Flat-gauge tension Delta u + |grad u|^2 u, projected onto T_u S."""
    out = tension_cylinder(u) / (u.grid.r**2)[:, None, None]
    return out if node is None else out[node]


def tension_sphere_L2(u: Field):
    """L2(S^2) norm of the round-metric tension.

    |tau_round|^2 dv_round = (1 + r^2)^2 / 4 |tau_flat|^2 dx, which on the
    cylinder is cosh(s)^2 |P_u(u_ss + u_tt)|^2 ds dt.
    """
    g = u.grid
    weight = np.cosh(g.s) ** 2
    dens = weight[:, None] * np.sum(tension_cylinder(u) ** 2, axis=-1)
    # rounding in tau is amplified by cosh^2 at the chart ends
    floor = max(1e-16, ROUNDOFF_FLOOR * float(weight.max()))
    return math.sqrt(max(g.integrate_cylinder(dens, check_tail=True, abs_floor=floor), 0.0))


@dataclass(frozen=True)
class WeightedNorm:
    """||w||^2 = int |grad w|^2 + (|grad pi_{1/mu0}|^2 + |grad pi_{mu1}|^2) |w|^2."""

    mu0: float
    mu1: float

    def density(self, x):
        from .geometry import conformal_weight
        return conformal_weight(x, 1.0 / self.mu0) + conformal_weight(x, self.mu1)

    def cylinder_density(self, s):
        """density * r^2 as a function of s = log r."""
        s = np.asarray(s, dtype=float)
        return (2.0 / np.cosh(s - math.log(self.mu0)) ** 2
                + 2.0 / np.cosh(s + math.log(self.mu1)) ** 2)

    def swapped(self, mu):
        """Norm transported by x' = 1/(mu x): the bubble weight becomes the base weight."""
        return WeightedNorm(self.mu1 / mu, mu * self.mu0)

    def inner(self, v: Field, w: Field):
        g = v.grid
        dens = (np.sum(v.d_s * w.d_s + v.d_theta * w.d_theta, axis=-1)
                + self.cylinder_density(g.s)[:, None] * np.sum(v.values * w.values, axis=-1))
        return g.integrate_cylinder(dens, check_tail=False)

    def norm(self, w: Field):
        return math.sqrt(max(self.inner(w, w), 0.0))

    __call__ = norm


def model_norm(model):
    return WeightedNorm(model.scales.mu0, model.scales.mu1)


def weighted_norm(w: Field, norm: WeightedNorm):
    return norm.norm(w)


def first_variation(u: Field, w: Field, form="weak"):
    """dE(u)(w) for tangent w.

    ``weak``: int grad u . grad w (the exact derivative of the discrete
    energy along pi(u + eps w)); ``tension``: -int tau(u) . w.
    """
    _check_tangent(u, w)
    g = u.grid
    if form == "weak":
        dens = np.sum(u.d_s * w.d_s + u.d_theta * w.d_theta, axis=-1)
    elif form == "tension":
        dens = -np.sum(tension_cylinder(u) * w.values, axis=-1)
    else:
        raise ValueError(form)
    return g.integrate_cylinder(dens, check_tail=False)


def second_variation(u: Field, v: Field, w: Field, form="weak"):
    """d2E(u)(v, w) for tangent v, w.

    The curvature term is written as int grad u . grad(<v,w> u), equal to
    int |grad u|^2 <v,w> for unit u; in this form the result is the exact
    second derivative of the discrete energy along pi(u + a v + b w).
    ``form="pointwise"`` uses |grad u|^2 <v,w> directly.
    """
    _check_tangent(u, v, "v")
    _check_tangent(u, w, "w")
    g = u.grid
    lead = np.sum(v.d_s * w.d_s + v.d_theta * w.d_theta, axis=-1)
    vw = np.sum(v.values * w.values, axis=-1)
    if form == "weak":
        prod = Field(g, vw[..., None] * u.values)
        curv = np.sum(u.d_s * prod.d_s + u.d_theta * prod.d_theta, axis=-1)
    elif form == "pointwise":
        curv = u.gradient_density * vw
    else:
        raise ValueError(form)
    return g.integrate_cylinder(lead - curv, check_tail=False)


def project_field(u: Field, w):
    """Tangent projection of raw ambient samples (the explicit opt-in route)."""
    w = w.values if isinstance(w, Field) else np.asarray(w)
    return Field(u.grid, w - np.sum(w * u.values, axis=-1, keepdims=True) * u.values)


def retract(u: Field, w: Field, eps):
    """pi(u + eps w)."""
    p = u.values + eps * w.values
    return Field(u.grid, p / np.linalg.norm(p, axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# Galerkin test spaces

# (1 - x^2)^8: its odd derivatives vanish to high order at +-1, so the
# trapezoid rule stays accurate with ~10 nodes per bump; exp(-1/(1-x^2))
# needs several times more.
BUMP_POWER = 8


def _bump(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) < 1, (1.0 - x * x) ** BUMP_POWER, 0.0)


def _bump_slope(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) < 1, -2.0 * BUMP_POWER * x * (1.0 - x * x) ** (BUMP_POWER - 1), 0.0)


def mobius_fields(u: Field):
    """du(V) for the infinitesimal Moebius maps V in {1, i, z, iz, z^2, iz^2}."""
    g = u.grid
    r = g.r[:, None, None]
    c, s = np.cos(g.theta)[None, :, None], np.sin(g.theta)[None, :, None]
    ux = (c * u.d_s - s * u.d_theta) / r
    uy = (s * u.d_s + c * u.d_theta) / r
    out = []
    for name, V in (("mobius_1", 1.0 + 0 * g.z), ("mobius_i", 1j + 0 * g.z), ("mobius_z", g.z),
                    ("mobius_iz", 1j * g.z), ("mobius_z2", g.z**2), ("mobius_iz2", 1j * g.z**2)):
        if name == "mobius_z":
            vals = u.d_s
        elif name == "mobius_iz":
            vals = u.d_theta
        else:
            vals = ux * V.real[..., None] + uy * V.imag[..., None]
        out.append((name, project_field(u, vals)))
    return out


def rotation_fields(u: Field):
    """Omega u for a basis of so(N)."""
    N = u.N
    out = []
    for i in range(N):
        for j in range(i + 1, N):
            vals = np.zeros_like(u.values)
            vals[..., i] = -u.values[..., j]
            vals[..., j] = u.values[..., i]
            out.append((f"rotation_{i}{j}", Field(u.grid, vals)))
    return out


@dataclass(frozen=True)
class TestSpaceSpec:
    spacing: float = 0.5
    modes: int = 2
    s_range: tuple = (-10.0, 3.0)


class GalerkinSystem:
    """Gram, Hessian and gradient of E restricted to a finite tangent test space.

    The space is spanned by ``globals`` (named tangent Fields) and by the
    local functions P_u(b_m(s) m_k(theta) e_a): compact bumps b_m of width
    4 * spacing centred on a uniform lattice of s, angular modes up to
    ``modes`` and the ambient basis e_a.
    """

    def __init__(self, u: Field, norm: WeightedNorm, spec: TestSpaceSpec, globals_=()):
        self.u, self.norm, self.spec = u, norm, spec
        g = u.grid
        self.grid = g
        self.global_names = [n for n, _ in globals_]
        self.global_fields = [f for _, f in globals_]
        for n, f in globals_:
            _check_tangent(u, f, n)
        lo, hi = spec.s_range
        lo, hi = max(lo, g.s[0] + 2 * spec.spacing), min(hi, g.s[-1] - 2 * spec.spacing)
        if hi < lo:
            self.centres = np.zeros(0)
        else:
            m0 = math.ceil(lo / spec.spacing - 1e-9)
            m1 = math.floor(hi / spec.spacing + 1e-9)
            self.centres = spec.spacing * np.arange(m0, m1 + 1)
        self.n_modes = 2 * spec.modes + 1
        self.per_bump = self.n_modes * u.N
        self.n_global = len(self.global_fields)
        self.dim = self.n_global + self.per_bump * len(self.centres)
        if self.dim == 0:
            raise EmptyTestSpace("test space is empty")
        self._assemble()

    # local blocks --------------------------------------------------------------
    def _group(self, m):
        g, u, sp = self.grid, self.u, self.spec
        h = 2.0 * sp.spacing
        c = self.centres[m]
        ks = np.nonzero(np.abs(g.s - c) < h)[0]
        ks = np.arange(max(ks[0] - 1, 0), min(ks[-1] + 2, g.n_nodes))
        x = (g.s[ks] - c) / h
        b, db = _bump(x), _bump_slope(x) / h
        th = g.theta
        modes = [np.ones_like(th)]
        dmodes = [np.zeros_like(th)]
        for k in range(1, sp.modes + 1):
            modes += [np.cos(k * th), np.sin(k * th)]
            dmodes += [-k * np.sin(k * th), k * np.cos(k * th)]
        modes, dmodes = np.stack(modes, -1), np.stack(dmodes, -1)  # (T, M)
        f = b[:, None, None] * modes[None]
        fs = db[:, None, None] * modes[None]
        ft = b[:, None, None] * dmodes[None]
        U, Us, Ut = u.values[ks], u.d_s[ks], u.d_theta[ks]
        N = u.N
        eye = np.eye(N)
        # P_u e_a = e_a - u_a u, shape (k, t, a, n)
        Pe = eye[None, None] - U[..., :, None] * U[..., None, :]
        dPe_s = -(Us[..., :, None] * U[..., None, :] + U[..., :, None] * Us[..., None, :])
        dPe_t = -(Ut[..., :, None] * U[..., None, :] + U[..., :, None] * Ut[..., None, :])
        W = f[..., :, None, None] * Pe[..., None, :, :]
        Ws = fs[..., :, None, None] * Pe[..., None, :, :] + f[..., :, None, None] * dPe_s[..., None, :, :]
        Wt = ft[..., :, None, None] * Pe[..., None, :, :] + f[..., :, None, None] * dPe_t[..., None, :, :]
        shape = (len(ks), g.n_theta, self.per_bump, N)
        return ks, W.reshape(shape), Ws.reshape(shape), Wt.reshape(shape)

    def _globals_on(self, ks):
        if not self.global_fields:
            return None
        W = np.stack([f.values[ks] for f in self.global_fields], axis=2)
        Ws = np.stack([f.d_s[ks] for f in self.global_fields], axis=2)
        Wt = np.stack([f.d_theta[ks] for f in self.global_fields], axis=2)
        return W, Ws, Wt

    def _pair(self, ks, A, B):
        """Gram and Hessian blocks between stacks A, B on nodes ks."""
        g = self.grid
        w = g.weights[ks][:, None]
        rho = self.norm.cylinder_density(g.s[ks])[:, None]
        grad2 = self.u.gradient_density[ks]

        def form(X, Y, weight):
            # contract over (node, angle, component) with a per-(node, angle) weight
            f, gdim, n = X.shape[2], Y.shape[2], X.shape[3]
            Xm = np.moveaxis(X * weight[..., None, None], 2, 0).reshape(f, -1)
            Ym = np.moveaxis(Y, 2, 0).reshape(gdim, -1)
            return Xm @ Ym.T

        W, Ws, Wt = A
        V, Vs, Vt = B
        lead = form(Ws, Vs, w) + form(Wt, Vt, w)
        mass = form(W, V, w * rho)
        curv = form(W, V, w * grad2)
        return lead + mass, lead - curv

    def _rhs(self, ks, A):
        g = self.grid
        w = g.weights[ks][:, None]
        _, Ws, Wt = A
        return (np.einsum("ktfn,ktn,kt->f", Ws, self.u.d_s[ks], w)
                + np.einsum("ktfn,ktn,kt->f", Wt, self.u.d_theta[ks], w))

    def _assemble(self):
        n, ng, pb = self.dim, self.n_global, self.per_bump
        G = np.zeros((n, n))
        H = np.zeros((n, n))
        b = np.zeros(n)
        allk = np.arange(self.grid.n_nodes)
        if ng:
            A = self._globals_on(allk)
            G[:ng, :ng], H[:ng, :ng] = self._pair(allk, A, A)
            b[:ng] = self._rhs(allk, A)
        groups = {}
        reach = 4  # bumps have half-width 2 * spacing, so centres closer than 4 spacings overlap
        for m in range(len(self.centres)):
            groups[m] = self._group(m)
            for old in [k for k in groups if k < m - reach]:
                del groups[old]
            ks, W, Ws, Wt = groups[m]
            sl = slice(ng + m * pb, ng + (m + 1) * pb)
            b[sl] = self._rhs(ks, (W, Ws, Wt))
            if ng:
                Gg, Hg = self._pair(ks, self._globals_on(ks), (W, Ws, Wt))
                G[:ng, sl], H[:ng, sl] = Gg, Hg
                G[sl, :ng], H[sl, :ng] = Gg.T, Hg.T
            for mm in range(max(m - reach, 0), m + 1):
                ks2, W2, W2s, W2t = groups[mm]
                common, i1, i2 = np.intersect1d(ks, ks2, return_indices=True)
                if common.size == 0:
                    continue
                Gb, Hb = self._pair(common, (W[i1], Ws[i1], Wt[i1]), (W2[i2], W2s[i2], W2t[i2]))
                sl2 = slice(ng + mm * pb, ng + (mm + 1) * pb)
                G[sl, sl2], H[sl, sl2] = Gb, Hb
                if mm != m:
                    G[sl2, sl], H[sl2, sl] = Gb.T, Hb.T
        self.G = 0.5 * (G + G.T)
        self.H = 0.5 * (H + H.T)
        self.b = b
        self._orthonormal_basis()

    def _orthonormal_basis(self, rcond=1e-9):
        # the global fields can be larger than the local ones by a factor ~mu,
        # so equilibrate before cutting off the near-null space of the Gram matrix
        d = 1.0 / np.sqrt(np.maximum(np.diag(self.G), 1e-300))
        lam, V = np.linalg.eigh(self.G * d[:, None] * d[None, :])
        keep = lam > rcond * lam.max()
        self.rank = int(keep.sum())
        self.T = d[:, None] * V[:, keep] / np.sqrt(lam[keep])  # columns orthonormal in <.,.>_z

    # estimates --------------------------------------------------------------------
    def dual_norm(self, rhs=None):
        """sup over the span of rhs(w) / ||w||_z for a linear functional given by values rhs."""
        rhs = self.b if rhs is None else rhs
        y = self.T.T @ rhs
        return float(np.linalg.norm(y))

    def global_index(self, name):
        return self.global_names.index(name)

    def hessian_row(self, name):
        """d2E(y, w_i) for the global direction ``name`` against every test function."""
        return self.H[self.global_index(name)]

    def spectrum(self, kernel_names):
        """Generalised eigenvalues of H w.r.t. G on the G-orthogonal complement of kernel_names."""
        Ht = self.T.T @ self.H @ self.T
        if kernel_names:
            idx = [self.global_index(nm) for nm in kernel_names]
            E = np.zeros((self.dim, len(idx)))
            E[idx, np.arange(len(idx))] = 1.0
            Y = self.T.T @ self.G @ E  # coordinates of the kernel fields in the orthonormal basis
            Uy, sv, _ = np.linalg.svd(Y, full_matrices=False)
            Q = Uy[:, sv > 1e-8 * sv.max()]
            full, _ = np.linalg.qr(np.hstack([Q, np.eye(Ht.shape[0])]))
            C = full[:, Q.shape[1]:Ht.shape[0]]
            kernel_rank = Q.shape[1]
        else:
            C = np.eye(Ht.shape[0])
            kernel_rank = 0
        ev = np.linalg.eigvalsh(C.T @ Ht @ C)
        return ev, kernel_rank


def dual_norm_estimate(u: Field, norm: WeightedNorm, test_space=None, globals_=()):
    """Galerkin lower bound for sup{dE(u)(w) : ||w||_z = 1}."""
    spec = test_space or TestSpaceSpec()
    return GalerkinSystem(u, norm, spec, globals_).dual_norm()


def model_test_globals(model, u: Field, include=("mobius", "rotation", "tangent")):
    """Named tangent fields along the sampled model for Galerkin test spaces."""
    out = []
    if "mobius" in include:
        out += mobius_fields(u)
    if "rotation" in include:
        out += rotation_fields(u)
    if "tangent" in include:
        fields = {}
        for d in model.tangent_basis():
            fields[direction_label(d)] = d.field(u.grid)
        for part in ("re", "im"):
            fields[f"translate_both_{part}"] = fields[f"translate_U0_{part}"] + fields[f"translate_U1_{part}"]
        out += list(fields.items())
    return out


def direction_label(d):
    """Stable name of a tangent direction, e.g. ``translate_U1_re`` or ``perturb_q1_1_0``."""
    p = d.params
    if d.kind.startswith("translate"):
        a = complex(p["a"])
        part = "re" if a == 1 else "im" if a == 1j else f"{a.real:g}{a.imag:+g}i"
        return f"{d.kind}_{part}"
    if d.kind.startswith("perturb"):
        return f"{d.kind}_{p['j0']}_{p['theta']:.4f}"
    return d.kind


@dataclass
class EnergyReport:
    E: float
    E_star: float
    defect: float
    tension_L2_sphere: float
    dual_norm_lower_bound: float

    def to_json(self):
        return {k: float(v) for k, v in asdict(self).items()}


def energy_defect(model, grid=None, test_space=None, with_dual=True):
    u = model.sample(grid)
    E = dirichlet_energy(u)
    Es = model.energy_star
    dual = float("nan")
    if with_dual:
        dual = dual_norm_estimate(u, model_norm(model), test_space or default_space(model))
    return EnergyReport(E, Es, E - Es, tension_sphere_L2(u), dual)


def default_space(model, spacing=0.5, modes=2):
    lo = -math.log(model.scales.mu1) - 3.0
    hi = math.log(model.scales.mu0) + 3.0
    return TestSpaceSpec(spacing, modes, (lo, hi))
