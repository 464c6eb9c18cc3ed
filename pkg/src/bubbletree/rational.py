"""Complex rational maps, their Taylor data at 0 and the derived scales."""
from dataclasses import dataclass

import numpy as np

from .errors import AllCoefficientsZero, Pole

PRECOMPOSITIONS = ("identity", "reciprocal", "conj", "conj_reciprocal")


def _trim(c):
    c = np.atleast_1d(np.asarray(c, dtype=complex))
    nz = np.nonzero(c)[0]
    if nz.size == 0:
        return np.zeros(1, dtype=complex)
    return c[: nz[-1] + 1].copy()


@dataclass(frozen=True)
class Polynomial:
    """Complex polynomial with ascending coefficients."""

    coefficients: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coefficients", _trim(self.coefficients))

    @property
    def degree(self):
        c = self.coefficients
        return -1 if (len(c) == 1 and c[0] == 0) else len(c) - 1

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros_like(z)
        for a in self.coefficients[::-1]:
            out = out * z + a
        return out

    def deriv(self):
        c = self.coefficients
        if len(c) == 1:
            return Polynomial([0.0])
        return Polynomial(c[1:] * np.arange(1, len(c)))

    def __add__(self, other):
        a, b = self.coefficients, other.coefficients
        n = max(len(a), len(b))
        out = np.zeros(n, dtype=complex)
        out[: len(a)] += a
        out[: len(b)] += b
        return Polynomial(out)

    def __mul__(self, other):
        if np.isscalar(other):
            return Polynomial(self.coefficients * other)
        return Polynomial(np.convolve(self.coefficients, other.coefficients))

    __rmul__ = __mul__

    def roots(self):
        c = self.coefficients
        if len(c) <= 1:
            return np.zeros(0, dtype=complex)
        return np.roots(c[::-1])

    def to_json(self):
        return [[float(a.real), float(a.imag)] for a in self.coefficients]

    @classmethod
    def from_json(cls, pairs):
        return cls([complex(re, im) for re, im in pairs])


@dataclass(frozen=True)
class RationalMap:
    """q = numerator / denominator, optionally precomposed.

    ``precomposition`` is one of ``identity`` (z), ``reciprocal``
    (1/(mu z)), ``conj`` (conj z) or ``conj_reciprocal`` (1/(mu conj z));
    ``mu`` is only used by the reciprocal variants.
    """

    numerator: Polynomial
    denominator: Polynomial = Polynomial([1.0])
    precomposition: str = "identity"
    mu: float = 1.0

    def __post_init__(self):
        if not isinstance(self.numerator, Polynomial):
            object.__setattr__(self, "numerator", Polynomial(self.numerator))
        if not isinstance(self.denominator, Polynomial):
            object.__setattr__(self, "denominator", Polynomial(self.denominator))
        if self.precomposition not in PRECOMPOSITIONS:
            raise ValueError(f"unknown precomposition {self.precomposition!r}")
        if self.denominator.degree < 0:
            raise ValueError("zero denominator")

    # construction helpers
    @classmethod
    def from_coefficients(cls, num, den=(1.0,)):
        return cls(Polynomial(num), Polynomial(den))

    @classmethod
    def monomial(cls, n, a=1.0):
        c = np.zeros(n + 1, dtype=complex)
        c[n] = a
        return cls(Polynomial(c))

    def base(self):
        """The same rational function without precomposition."""
        return RationalMap(self.numerator, self.denominator)

    def normalized(self):
        """Rescale so that the denominator has constant term 1."""
        d0 = self.denominator.coefficients[0]
        if d0 == 0:
            raise Pole("denominator vanishes at 0")
        return RationalMap(self.numerator * (1.0 / d0), self.denominator * (1.0 / d0),
                           self.precomposition, self.mu)

    @property
    def degree(self):
        return max(self.numerator.degree, self.denominator.degree)

    def _inner(self, z):
        z = np.asarray(z, dtype=complex)
        if self.precomposition in ("conj", "conj_reciprocal"):
            z = np.conj(z)
        if self.precomposition in ("reciprocal", "conj_reciprocal"):
            with np.errstate(divide="ignore"):
                z = 1.0 / (self.mu * z)
        return z

    def _raw(self, w, tol=1e-300):
        den = self.denominator(w)
        if np.any(np.abs(den) <= tol * np.maximum(1.0, np.abs(self.numerator(w)))):
            raise Pole("evaluation at a pole")
        return self.numerator(w) / den

    def __call__(self, z):
        return self._raw(self._inner(z))

    evaluate = __call__

    def raw_derivative(self, w):
        """d/dw of numerator/denominator (no precomposition)."""
        w = np.asarray(w, dtype=complex)
        n, d = self.numerator, self.denominator
        dw = d(w)
        if np.any(dw == 0):
            raise Pole("derivative at a pole")
        return (n.deriv()(w) * dw - n(w) * d.deriv()(w)) / dw**2

    def derivative(self, z):
        """Complex derivative including the precomposition chain factor.

        For the conjugated variants this is the derivative with respect to
        conj(z).
        """
        z = np.asarray(z, dtype=complex)
        w = self._inner(z)
        base = self.raw_derivative(w)
        if self.precomposition == "identity" or self.precomposition == "conj":
            return base
        zz = np.conj(z) if self.precomposition == "conj_reciprocal" else z
        return base * (-1.0 / (self.mu * zz**2))

    def poles(self):
        """Poles in the variable z (after precomposition)."""
        p = self.denominator.roots()
        if self.precomposition in ("reciprocal", "conj_reciprocal"):
            p = p[np.abs(p) > 0]
            p = 1.0 / (self.mu * p)
        if self.precomposition in ("conj", "conj_reciprocal"):
            p = np.conj(p)
        return p

    def to_json(self):
        return {"numerator": self.numerator.to_json(),
                "denominator": self.denominator.to_json(),
                "precomposition": self.precomposition}

    @classmethod
    def from_json(cls, d, mu=1.0):
        return cls(Polynomial.from_json(d["numerator"]),
                   Polynomial.from_json(d.get("denominator", [[1.0, 0.0]])),
                   d.get("precomposition", "identity"), mu)


@dataclass(frozen=True)
class TaylorData:
    order: int
    coefficients: np.ndarray  # index j holds a_j, j = 0..J

    def a(self, j):
        return self.coefficients[j] if j < len(self.coefficients) else 0.0


def taylor_at_zero(q, J=None):
    """Power-series coefficients a_0..a_J of numerator/denominator at 0."""
    num = q.numerator.coefficients
    den = q.denominator.coefficients
    if den[0] == 0:
        raise Pole("q has a pole at 0")
    if J is None:
        J = max(q.degree, 1) + 4
    a = np.zeros(J + 1, dtype=complex)
    for k in range(J + 1):
        acc = num[k] if k < len(num) else 0.0
        for i in range(1, min(k, len(den) - 1) + 1):
            acc -= den[i] * a[k - i]
        a[k] = acc / den[0]
    scale = max(1.0, float(np.max(np.abs(a))))
    nz = np.nonzero(np.abs(a[1:]) > 1e-14 * scale)[0]
    order = int(nz[0] + 1) if nz.size else 0
    return TaylorData(order, a)


def vanishing_order(q):
    t = taylor_at_zero(q)
    if t.order == 0:
        raise AllCoefficientsZero("q vanishes identically near 0")
    return t.order


def leading_coefficient(q, n=None):
    t = taylor_at_zero(q, J=max(q.degree, n or 1) + 4)
    n = t.order if n is None else n
    return t.a(n), n


def rescale_domain(q, c):
    """z -> q(c z)."""
    num = q.numerator.coefficients * c ** np.arange(len(q.numerator.coefficients))
    den = q.denominator.coefficients * c ** np.arange(len(q.denominator.coefficients))
    return RationalMap(Polynomial(num), Polynomial(den), q.precomposition, q.mu)


def normalize_leading(q0, q1, mu):
    """Rescale so both leading Taylor coefficients have modulus 1.

    Returns ``(c, mu_adj, q0n, q1n)`` with q0n(z) = q0(c z) and
    q1n(w) = q1(lam w); q0(x) + q1(1/(mu x)) equals
    q0n(y) + q1n(1/(mu_adj y)) for x = c y, with mu_adj = mu c lam.
    """
    a0, n0 = leading_coefficient(q0)
    a1, n1 = leading_coefficient(q1)
    c = abs(a0) ** (-1.0 / n0)
    lam = abs(a1) ** (-1.0 / n1)
    return c, mu * c * lam, rescale_domain(q0, c), rescale_domain(q1, lam)


def reciprocal_rescale(q, mu):
    """The map z -> q(1/(mu z))."""
    pre = "conj_reciprocal" if q.precomposition == "conj" else "reciprocal"
    return RationalMap(q.numerator, q.denominator, pre, float(mu))


@dataclass(frozen=True)
class ScalePair:
    mu0: float
    mu1: float


def mu_values(q0, q1, mu):
    a0, n0 = leading_coefficient(q0)
    a1, n1 = leading_coefficient(q1)
    return ScalePair(abs(a0) ** (-1.0 / n0), mu * abs(a1) ** (-1.0 / n1))


def nu_values(q0, q1, mu, mu1=None, n0=None, n1=None):
    """Interaction sizes (nu0, nu1, nu_bar).

    nu1 = max_{j<=n1} |a_j(q1)| mu^-j and nu0 = max_{j<=n0} |a_j(q0)| mu1^-j,
    where n0, n1 default to the vanishing orders of the given maps.
    """
    if mu1 is None:
        mu1 = mu_values(q0, q1, mu).mu1
    n0 = vanishing_order(q0) if n0 is None else n0
    n1 = vanishing_order(q1) if n1 is None else n1
    t0 = taylor_at_zero(q0, J=n0 + 1)
    t1 = taylor_at_zero(q1, J=n1 + 1)
    nu1 = max(abs(t1.a(j)) * float(mu) ** (-j) for j in range(1, n1 + 1))
    nu0 = max(abs(t0.a(j)) * float(mu1) ** (-j) for j in range(1, n0 + 1))
    return nu0, nu1, max(nu0, nu1)


def perturb_coefficient(q, j0, theta, eps):
    """(r1 + eps (e^{i theta} z)^j0) / r2 with r2(0) = 1."""
    qn = q.normalized()
    add = np.zeros(j0 + 1, dtype=complex)
    add[j0] = np.exp(1j * j0 * theta) * eps
    return RationalMap(qn.numerator + Polynomial(add), qn.denominator, q.precomposition, q.mu)


def coefficient_direction(q, j0, theta):
    """d/d eps of perturb_coefficient at eps = 0, as a rational map."""
    qn = q.normalized()
    add = np.zeros(j0 + 1, dtype=complex)
    add[j0] = np.exp(1j * j0 * theta)
    return RationalMap(Polynomial(add), qn.denominator, q.precomposition, q.mu)


def scale_variation(q, eps):
    """The family member z -> q(z / (1 + eps))."""
    return rescale_domain(q, 1.0 / (1.0 + eps))


def scale_direction(q):
    """d/d eps of scale_variation at 0, i.e. z -> -z q'(z)."""
    n, d = q.numerator, q.denominator
    z = Polynomial([0.0, 1.0])
    num = (n.deriv() * d + (n * d.deriv()) * -1.0) * z * -1.0
    return RationalMap(num, d * d, q.precomposition, q.mu)
