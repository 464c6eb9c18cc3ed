"""Round-sphere targets: stereographic charts, projections, geodesics.

Plane points are complex numbers ``x + iy`` (numpy complex arrays are
accepted everywhere). Sphere points are real arrays with a trailing axis
of length N.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import AntipodalPoints, SouthPole, TooFarFromTarget

NORTH = np.array([0.0, 0.0, 1.0])
SOUTH = np.array([0.0, 0.0, -1.0])


def as_complex(x):
    """Accept a complex scalar/array or a real array with trailing axis 2."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return x
    if x.ndim >= 1 and x.shape[-1] == 2:
        return x[..., 0] + 1j * x[..., 1]
    return x.astype(complex)


def stereo_project(x):
    """Inverse stereographic projection of plane points onto S^2 in R^3.

    Points with ``|x| > 1`` are evaluated through ``w = 1/x`` so that huge
    arguments and ``inf`` map cleanly towards the south pole.
    """
    z = as_complex(x)
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape + (3,))
    mod2 = np.abs(z) ** 2
    small = mod2 <= 1.0
    zs, ms = z[small], mod2[small]
    den = 1.0 + ms
    out[small, 0] = 2.0 * zs.real / den
    out[small, 1] = 2.0 * zs.imag / den
    out[small, 2] = (1.0 - ms) / den
    big = ~small
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(np.isfinite(z[big]), 1.0 / z[big], 0.0)
    mw = np.abs(w) ** 2
    den = 1.0 + mw
    # 2z/(1+|z|^2) = 2 conj(w)/(1+|w|^2)
    out[big, 0] = 2.0 * w.real / den
    out[big, 1] = -2.0 * w.imag / den
    out[big, 2] = (mw - 1.0) / den
    return out


def stereo_inverse(p):
    """Plane point whose stereographic image is ``p`` (p != south pole)."""
    p = np.asarray(p, dtype=float)
    den = 1.0 + p[..., 2]
    if np.any(den <= 1e-14):
        raise SouthPole("the south pole has no finite preimage")
    return (p[..., 0] + 1j * p[..., 1]) / den


def stereo_differential(w, xi):
    """Derivative of the projection at plane point ``w`` applied to ``xi``.

    Both arguments are complex (``xi`` read as a real 2-vector); returns a
    real array with trailing axis 3.
    """
    w = np.asarray(w, dtype=complex)
    xi = np.asarray(xi, dtype=complex)
    a = 1.0 + np.abs(w) ** 2
    da = 2.0 * (w.real * xi.real + w.imag * xi.imag)
    planar = 2.0 * xi / a - 2.0 * w * da / a**2
    out = np.empty(np.broadcast(w, xi).shape + (3,))
    out[..., 0] = planar.real
    out[..., 1] = planar.imag
    out[..., 2] = -2.0 * da / a**2
    return out


def stereo_second_differential(w, xi, eta):
    """Second derivative of the projection at ``w`` in directions ``xi, eta``."""
    w = np.asarray(w, dtype=complex)
    xi = np.asarray(xi, dtype=complex)
    eta = np.asarray(eta, dtype=complex)
    a = 1.0 + np.abs(w) ** 2

    def dot(p, q):
        return p.real * q.real + p.imag * q.imag

    da_x, da_e, dd = 2.0 * dot(w, xi), 2.0 * dot(w, eta), 2.0 * dot(xi, eta)
    # G = (2w, 1-|w|^2), DG(e) = (2e, -2 w.e), D2G(e,f) = (0, -2 e.f)
    planar = (-2.0 * xi * da_e / a**2 - 2.0 * eta * da_x / a**2
              - 2.0 * w * dd / a**2 + 4.0 * w * da_x * da_e / a**3)
    g3 = 1.0 - np.abs(w) ** 2
    third = (-dd / a + (da_x * da_e) / a**2 + (da_e * da_x) / a**2
             - g3 * dd / a**2 + 2.0 * g3 * da_x * da_e / a**3)
    out = np.empty(np.broadcast(w, xi, eta).shape + (3,))
    out[..., 0] = planar.real
    out[..., 1] = planar.imag
    out[..., 2] = third
    return out


def conformal_weight(x, scale=1.0):
    """|grad pi_scale|^2 at x, where pi_scale(z) = pi(scale * z)."""
    r2 = np.abs(as_complex(x)) ** 2
    lam2 = float(scale) ** 2
    return 8.0 * lam2 / (1.0 + lam2 * r2) ** 2


def project_to_target(x):
    """Nearest-point projection onto the unit sphere, defined for |x| > 1/2."""
    x = np.asarray(x, dtype=float)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(n <= 0.5):
        raise TooFarFromTarget(f"min |x| = {float(n.min()):.3g} <= 1/2")
    return x / n


def tangent_project(p, v):
    """Orthogonal projection of v onto the tangent space of the sphere at p."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    return v - np.sum(v * p, axis=-1, keepdims=True) * p


def normal_part(p, v):
    p = np.asarray(p, dtype=float)
    return np.sum(np.asarray(v) * p, axis=-1, keepdims=True) * p


def second_fundamental_form(p, v, w):
    """Unit sphere: A(p)(v, w) = -<v, w> p."""
    p = np.asarray(p, dtype=float)
    return -np.sum(np.asarray(v) * np.asarray(w), axis=-1, keepdims=True) * p


def geodesic_distance(p0, p1):
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    # atan2 form stays accurate for nearly equal and nearly antipodal points
    cross = np.linalg.norm(p1 - np.sum(p0 * p1, axis=-1, keepdims=True) * p0, axis=-1)
    return np.arctan2(cross, np.sum(p0 * p1, axis=-1))


def _sin_ratio(a, d):
    """sin(a d) / sin(d) as an even analytic function of d."""
    return a * np.sinc(a * d / np.pi) / np.sinc(d / np.pi)


def _sin_ratio_dd2(a, d):
    """Derivative of sin(a d)/sin(d) with respect to d**2."""
    d = np.asarray(d, dtype=float)
    small = np.abs(d) < 1e-3
    ds = np.where(small, 1.0, d)
    num = (a * np.cos(a * ds) * np.sin(ds) - np.sin(a * ds) * np.cos(ds)) / np.sin(ds) ** 2
    exact = num / (2.0 * ds)
    # series: a [1 + (1-a^2) d^2/6 + (1-a^2)(7-3a^2) d^4/360]
    series = a * (1.0 - a**2) / 6.0 + a * (1.0 - a**2) * (7.0 - 3.0 * a**2) * d**2 / 180.0
    return np.where(small, series, exact)


def geodesic(p0, p1, t):
    """Constant-speed great-circle arc from p0 (t=0) to p1 (t=1).

    ``t`` may be an array; the result has shape ``t.shape + (N,)``.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = float(geodesic_distance(p0, p1))
    if d > np.pi - 1e-9:
        raise AntipodalPoints("no unique shortest geodesic between antipodal points")
    t = np.asarray(t, dtype=float)[..., None]
    return _sin_ratio(1.0 - t, d) * p0 + _sin_ratio(t, d) * p1


def geodesic_variation(p0, p1, t, dp0, dp1):
    """Derivative of ``geodesic(p0, p1, t)`` when the endpoints move by dp0, dp1.

    dp0, dp1 must be tangent at p0, p1. Smooth through p0 == p1.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = float(geodesic_distance(p0, p1))
    if d > np.pi - 1e-9:
        raise AntipodalPoints("no unique shortest geodesic between antipodal points")
    t = np.asarray(t, dtype=float)[..., None]
    # d(d^2) = 2 d dd, dd = -(<dp0,p1> + <p0,dp1>)/sin d
    ratio = 1.0 if d < 1e-12 else d / np.sin(d)
    dd2 = -2.0 * ratio * (np.dot(dp0, p1 - p0) + np.dot(p0 - p1, dp1))
    a = _sin_ratio(1.0 - t, d)
    b = _sin_ratio(t, d)
    return (a * dp0 + b * dp1
            + (_sin_ratio_dd2(1.0 - t, d) * p0 + _sin_ratio_dd2(t, d) * p1) * dd2)


def rotation_matrix(axis_pair, angle, dim):
    """Rotation by ``angle`` in the coordinate plane ``axis_pair`` of R^dim."""
    i, j = axis_pair
    m = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    m[i, i], m[j, j] = c, c
    m[i, j], m[j, i] = -s, s
    return m


@dataclass(frozen=True)
class TargetManifold:
    """Round unit sphere S^{N-1} in R^N with N in {3, 4}."""

    ambient_dim: int = 3

    def __post_init__(self):
        if self.ambient_dim not in (3, 4):
            raise ValueError("ambient_dim must be 3 or 4")

    project = staticmethod(project_to_target)
    tangent = staticmethod(tangent_project)


@dataclass(frozen=True)
class GreatSphereEmbedding:
    """Isometric, totally geodesic inclusion S^2 -> S^{N-1}: pad with zeros, rotate."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] not in (3, 4):
            raise ValueError("rotation must be a 3x3 or 4x4 matrix")
        if not np.allclose(r.T @ r, np.eye(r.shape[0]), atol=1e-12):
            raise ValueError("rotation must be orthogonal")
        object.__setattr__(self, "rotation", r)

    @property
    def ambient_dim(self):
        return self.rotation.shape[0]

    def __call__(self, p3):
        """Map points (or tangent vectors) of R^3 into R^N."""
        p3 = np.asarray(p3, dtype=float)
        n = self.ambient_dim
        if n > 3:
            pad = np.zeros(p3.shape[:-1] + (n - 3,))
            p3 = np.concatenate([p3, pad], axis=-1)
        return p3 @ self.rotation.T

    @classmethod
    def identity(cls, dim=3):
        return cls(np.eye(dim))
