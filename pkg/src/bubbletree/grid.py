"""Two-chart log-polar discretisation of maps from the plane (plus infinity).

Both charts use polar coordinates in the logarithmic radius: the inner
chart ``s = log|z|`` and the outer chart ``sigma = log|w|`` with
``w = 1/z``.  The two charts share one lattice that is uniform in a
stretched coordinate ``xi`` (``ds/dxi = 1/density(s)``), so every node
of the overlap annulus belongs to both charts and chart transition is an
exact relabelling.  Derivatives in ``xi`` use high-order central
differences, derivatives in the angle are spectral (FFT).  Integrals are
trapezoid sums in ``(xi, theta)``, which converge spectrally for the
smooth, exponentially decaying integrands that occur here.

On the cylinder the Dirichlet integrand is conformally invariant:
``|grad f|^2 dx = (f_s^2 + f_theta^2) ds dtheta``.
"""
import functools
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import erf

from .errors import InvalidResolution, NonIntegrableTail

CHART_TAGS = {"inner": 0, "outer": 1}
_MAGIC = b"BTFD"
# densities below this are rounding noise (e.g. a constant map); never a tail failure
ROUNDOFF_FLOOR = 1e-20


@dataclass(frozen=True)
class GridParams:
    n_r: int = 512
    n_theta: int = 128
    r_min: float = 1e-5 * np.exp(-8.0)
    overlap_radius: float = 10.0
    bands: tuple = ()  # ((radius, half width in log r[, factor]), ...)
    band_factor: float = 3.0
    band_edge: float = 0.5
    fd_order: int = 12

    def to_json(self):
        d = asdict(self)
        d["bands"] = [list(b) for b in self.bands]
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        d["bands"] = tuple(tuple(b) for b in d.get("bands", ()))
        return cls(**d)


def fornberg_weights(x0, x, m):
    """Finite-difference weights for derivatives 0..m at x0 on nodes x."""
    n = len(x)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c


@functools.lru_cache(maxsize=32)
def difference_matrix(n, order, m):
    """Sparse n x n matrix of the m-th derivative on a unit-spaced lattice."""
    width = order + 1 if m == 1 else order + 1
    width += 1 - width % 2
    half = width // 2
    rows, cols, vals = [], [], []
    x = np.arange(n, dtype=float)
    interior = None
    for i in range(n):
        lo = min(max(i - half, 0), n - width)
        idx = np.arange(lo, lo + width)
        if lo == i - half and interior is not None:
            w = interior
        else:
            w = fornberg_weights(x[i], x[idx], m)[:, m]
            if lo == i - half:
                interior = w
        rows.extend([i] * width)
        cols.extend(idx)
        vals.extend(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _phi_int(x):
    return x * erf(x) + np.exp(-x * x) / np.sqrt(np.pi)


@dataclass(frozen=True)
class RadialGrid:
    """One chart: log-spaced radii in its own coordinate and the angle count."""

    chart: str
    radii: np.ndarray
    n_theta: int
    match_radius: float = 1.0

    @property
    def n_r(self):
        return len(self.radii)


class PolarGrid:
    """Shared lattice for the inner and outer chart."""

    def __init__(self, params: GridParams):
        p = params
        if p.n_r < 64 or p.n_theta < 32:
            raise InvalidResolution("need n_r >= 64 and n_theta >= 32")
        if p.n_theta & (p.n_theta - 1):
            raise InvalidResolution("n_theta must be a power of two")
        if p.fd_order < 2 or p.fd_order % 2:
            raise InvalidResolution("fd_order must be even and >= 2")
        if not (0 < p.r_min < 1.0 / p.overlap_radius) or p.overlap_radius < 1:
            raise InvalidResolution("need 0 < r_min < 1/overlap_radius and overlap_radius >= 1")
        self.params = p
        self.n_r = p.n_r
        self.n_theta = p.n_theta
        self._bands = [(np.log(b[0]) - b[1], np.log(b[0]) + b[1],
                        (b[2] if len(b) > 2 else p.band_factor) - 1.0) for b in p.bands]

        s_lo, s_ov = np.log(p.r_min), np.log(p.overlap_radius)
        xi_lo, xi_hi = self.xi_of_s(s_lo), self.xi_of_s(s_ov)
        self.h_xi = (xi_hi - xi_lo) / (p.n_r - 1)
        k0 = int(np.floor((self.xi_of_s(-s_ov) - xi_lo) / self.h_xi + 1e-9))
        self.outer_start = k0
        self.n_nodes = k0 + p.n_r
        xi = xi_lo + self.h_xi * np.arange(self.n_nodes)
        xi[p.n_r - 1] = xi_hi
        self.s = self._invert(xi)
        self.s[0], self.s[p.n_r - 1] = s_lo, s_ov
        self.density = self.density_of_s(self.s)
        self.density_ds = self.density_slope(self.s)
        self.theta = 2.0 * np.pi * np.arange(p.n_theta) / p.n_theta
        self.r = np.exp(self.s)
        self.z = self.r[:, None] * np.exp(1j * self.theta)[None, :]

        w = self.h_xi / self.density
        w[0] *= 0.5
        w[-1] *= 0.5
        self.weights = w * (2.0 * np.pi / p.n_theta)  # per (node, angle)
        self._kx = np.fft.rfftfreq(p.n_theta, 1.0 / p.n_theta)

    # lattice stretching
    def density_of_s(self, s):
        s = np.asarray(s, dtype=float)
        out = np.ones_like(s)
        e = self.params.band_edge
        for a, b, k in self._bands:
            out += k * 0.5 * (erf((s - a) / e) - erf((s - b) / e))
        return out

    def density_slope(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        e = self.params.band_edge
        for a, b, k in self._bands:
            out += (k / (np.sqrt(np.pi) * e)
                    * (np.exp(-((s - a) / e) ** 2) - np.exp(-((s - b) / e) ** 2)))
        return out

    def xi_of_s(self, s):
        s = np.asarray(s, dtype=float)
        out = s.copy()
        e = self.params.band_edge
        for a, b, k in self._bands:
            out += (k * 0.5 * e
                    * (_phi_int((s - a) / e) - _phi_int((s - b) / e)))
        return out

    def _invert(self, xi):
        s = xi.copy()
        if self._bands:
            table_s = np.linspace(np.log(self.params.r_min) - 1, -np.log(self.params.r_min) + 40, 20001)
            s = np.interp(xi, self.xi_of_s(table_s), table_s)
            for _ in range(50):
                step = (self.xi_of_s(s) - xi) / self.density_of_s(s)
                s -= step
                if np.max(np.abs(step)) < 1e-15:
                    break
        return s

    # chart bookkeeping
    @property
    def node_count(self):
        return 2 * self.n_r * self.n_theta

    def chart(self, tag):
        if tag == "inner":
            return RadialGrid("inner", self.r[: self.n_r].copy(), self.n_theta)
        if tag == "outer":
            return RadialGrid("outer", 1.0 / self.r[self.outer_start:][::-1], self.n_theta)
        raise ValueError(f"unknown chart {tag!r}")

    def chart_slice(self, tag):
        if tag == "inner":
            return np.arange(self.n_r)
        return np.arange(self.n_nodes - 1, self.outer_start - 1, -1)

    def outer_angle_index(self):
        """Global angle index of outer-chart angle j (arg w = -arg z)."""
        return (-np.arange(self.n_theta)) % self.n_theta

    def chart_points(self, tag):
        """Chart-native complex coordinates of the chart's nodes."""
        rg = self.chart(tag)
        return rg.radii[:, None] * np.exp(1j * self.theta)[None, :]

    @property
    def min_radius(self):
        return float(self.r[0])

    @property
    def max_radius(self):
        return float(self.r[-1])

    @property
    def overlap(self):
        return np.arange(self.outer_start, self.n_r)

    # differentiation along the lattice
    def _d_xi(self, values, m):
        K = self.n_nodes
        flat = values.reshape(K, -1)
        D = difference_matrix(K, self.params.fd_order, m)
        return (D @ flat).reshape(values.shape) / self.h_xi**m

    def d_s(self, values):
        shape = (-1,) + (1,) * (values.ndim - 1)
        return self.density.reshape(shape) * self._d_xi(values, 1)

    def d_ss(self, values):
        shape = (-1,) + (1,) * (values.ndim - 1)
        d1 = self._d_xi(values, 1)
        d2 = self._d_xi(values, 2)
        return self.density_ds.reshape(shape) * d1 + self.density.reshape(shape) ** 2 * d2

    def d_theta(self, values, m=1):
        spec = np.fft.rfft(values, axis=1)
        k = self._kx.reshape((1, -1) + (1,) * (values.ndim - 2))
        if m % 2 == 1:
            k = k.copy()
            k[:, -1] = 0.0  # Nyquist mode carries no odd derivative
        spec = spec * (1j * k) ** m
        return np.fft.irfft(spec, n=self.n_theta, axis=1)

    # quadrature
    def integrate_cylinder(self, density, check_tail=True, tail_tol=1e-6, abs_floor=ROUNDOFF_FLOOR):
        """Sum of density * ds dtheta over the lattice (density shape (K, n_theta))."""
        density = np.asarray(density, dtype=float)
        if check_tail:
            peak = np.max(np.abs(density))
            ends = max(np.max(np.abs(density[:2])), np.max(np.abs(density[-2:])))
            if peak > 0 and ends > max(tail_tol * peak, abs_floor):
                raise NonIntegrableTail(f"integrand not decayed at the chart ends ({ends:.3g} vs {peak:.3g})")
        inner = np.sum(density[: self.n_r] * self._split_weight("inner")[:, None])
        outer = np.sum(density[self.outer_start:] * self._split_weight("outer")[:, None])
        return float(inner + outer)

    @functools.cached_property
    def _split_weights(self):
        # each chart integrates its own side of |z| = 1; a node on the circle is shared
        wi = np.where(self.s[: self.n_r] < 0, 1.0, np.where(self.s[: self.n_r] == 0, 0.5, 0.0))
        so = self.s[self.outer_start:]
        wo = np.where(so > 0, 1.0, np.where(so == 0, 0.5, 0.0))
        return {"inner": wi * self.weights[: self.n_r], "outer": wo * self.weights[self.outer_start:]}

    def _split_weight(self, tag):
        return self._split_weights[tag]

    def integrate_plane(self, g, **kw):
        """Integral over R^2 of a planar density g (shape (K, n_theta))."""
        return self.integrate_cylinder(np.asarray(g) * (self.r**2)[:, None], **kw)

    def __repr__(self):
        return (f"PolarGrid(n_r={self.n_r}, n_theta={self.n_theta}, "
                f"r=[{self.min_radius:.3g}, {self.max_radius:.3g}], nodes={self.n_nodes})")


@functools.lru_cache(maxsize=16)
def _cached_grid(params):
    return PolarGrid(params)


def make_grid(params=None, **kw):
    """Build (or fetch from cache) the grid for ``params``."""
    if params is None:
        params = GridParams(**kw)
    elif kw:
        params = GridParams(**{**asdict(params), **kw})
    return _cached_grid(params)


def model_grid(radii, mu0=1.0, mu1=None, n_r=512, n_theta=128, fd_order=12, tail=1e-5,
               band_edge=0.5):
    """Grid adapted to a singularity model.

    The cutoff caps next to r1 and r0 get a dense band (their transition
    layer is narrow); the gluing annulus around r_hat gets a milder one.
    """
    mu1 = mu1 if mu1 is not None else mu0 / radii.r_hat**2
    r_min = min(tail * mu0 / mu1, radii.r1 / 10.0)
    bands = ((radii.r1 * np.exp(0.075), 0.4, 6.0), (radii.r_hat, 1.0, 3.0),
             (radii.r0 * np.exp(-0.075), 0.4, 6.0))
    return make_grid(GridParams(n_r=n_r, n_theta=n_theta, r_min=float(r_min), bands=bands,
                                fd_order=fd_order, band_edge=band_edge))


class Field:
    """Samples of a map R^2 -> R^N on a PolarGrid (values shape (K, n_theta, N))."""

    def __init__(self, grid, values, source=""):
        values = np.array(values, dtype=float)
        if values.ndim == 2:
            values = values[..., None]
        if values.shape[:2] != (grid.n_nodes, grid.n_theta):
            raise ValueError(f"values shape {values.shape} does not match grid")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.source = source

    @classmethod
    def from_function(cls, grid, func, source=""):
        return cls(grid, func(grid.z), source)

    @property
    def N(self):
        return self.values.shape[-1]

    # cylinder derivatives
    @functools.cached_property
    def d_s(self):
        return self.grid.d_s(self.values)

    @functools.cached_property
    def d_theta(self):
        return self.grid.d_theta(self.values)

    @functools.cached_property
    def cylinder_laplacian(self):
        """f_ss + f_thetatheta = r^2 (planar Laplacian)."""
        return self.grid.d_ss(self.values) + self.grid.d_theta(self.values, 2)

    @functools.cached_property
    def gradient_density(self):
        """|grad f|^2 r^2 = f_s^2 + f_theta^2 summed over components."""
        return np.sum(self.d_s**2 + self.d_theta**2, axis=-1)

    def gradient(self, node=None):
        """Planar gradient, shape (K, n_theta, 2, N) or (2, N) at ``node=(k, j)``."""
        g = self.grid
        c = np.cos(g.theta)[None, :, None]
        s = np.sin(g.theta)[None, :, None]
        rinv = (1.0 / g.r)[:, None, None]
        gx = (c * self.d_s - s * self.d_theta) * rinv
        gy = (s * self.d_s + c * self.d_theta) * rinv
        out = np.stack([gx, gy], axis=-2)
        return out if node is None else out[node]

    def laplacian(self, node=None):
        out = self.cylinder_laplacian / (self.grid.r**2)[:, None, None]
        return out if node is None else out[node]

    # algebra
    def _wrap(self, values, source=""):
        return Field(self.grid, values, source or self.source)

    def __add__(self, other):
        return self._wrap(self.values + _vals(other))

    def __sub__(self, other):
        return self._wrap(self.values - _vals(other))

    def __mul__(self, a):
        return self._wrap(self.values * _vals(a))

    __rmul__ = __mul__

    def dot(self, other):
        return np.sum(self.values * _vals(other), axis=-1)

    # charts and persistence
    def chart(self, tag):
        g = self.grid
        vals = self.values[g.chart_slice(tag)]
        if tag == "outer":
            vals = vals[:, g.outer_angle_index()]
        return vals

    @classmethod
    def from_charts(cls, grid, inner, outer, source="", tol=1e-9):
        """Reassemble a field from chart samples, checking the overlap annulus."""
        vals = np.empty((grid.n_nodes, grid.n_theta, inner.shape[-1]))
        vals[: grid.n_r] = inner
        back = np.empty_like(outer)
        back[:, grid.outer_angle_index()] = outer
        back = back[::-1]
        ov = grid.overlap
        mismatch = np.max(np.abs(back[ov - grid.outer_start] - inner[ov])) if ov.size else 0.0
        if mismatch > tol:
            raise ValueError(f"charts disagree on the overlap annulus by {mismatch:.3g}")
        vals[grid.outer_start:] = back
        return cls(grid, vals, source)

    def dump(self, path, meta=None):
        """Write ``path`` (binary, both charts) and ``path + '.json'`` (sidecar)."""
        g = self.grid
        with open(path, "wb") as fh:
            for tag in ("inner", "outer"):
                data = np.ascontiguousarray(self.chart(tag), dtype="<f8")
                fh.write(_MAGIC + struct.pack("<IIII", g.n_r, g.n_theta, self.N, CHART_TAGS[tag]))
                fh.write(data.tobytes())
        with open(path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        side = {"format": "bubbletree-field-v1", "grid": g.params.to_json(), "source": self.source,
                "n_r": g.n_r, "n_theta": g.n_theta, "N": self.N, "charts": ["inner", "outer"],
                "dtype": "float64-le", "sha256": digest, "meta": meta or {}}
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(side, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(str(path) + ".json", encoding="utf-8") as fh:
            side = json.load(fh)
        grid = make_grid(GridParams.from_json(side["grid"]))
        charts = {}
        with open(path, "rb") as fh:
            for _ in range(2):
                head = fh.read(20)
                if head[:4] != _MAGIC:
                    raise ValueError("not a field dump")
                n_r, n_t, n_c, tag = struct.unpack("<IIII", head[4:])
                data = np.frombuffer(fh.read(8 * n_r * n_t * n_c), dtype="<f8")
                charts[tag] = data.reshape(n_r, n_t, n_c)
        return cls.from_charts(grid, charts[0], charts[1], side.get("source", ""))


def _vals(x):
    return x.values if isinstance(x, Field) else x
