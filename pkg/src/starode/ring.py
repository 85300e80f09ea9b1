"""Exact star-product ring on polynomial distributions.

An element is ``f(t,s) Theta(t-s) + sum_i c_i(s) delta^(i)(t-s)`` with
polynomial ``f`` and ``c_i``.  Delta coefficients are kept in a canonical
form that depends on ``s`` only, so two equal distributions always have
equal coefficient arrays.

The product is assembled from three rules:

* Theta x Theta: Volterra composition ``int_s^t f(t,u) g(u,s) du``;
* ``x * c(s) delta^(j)``: ``c(s) (-d/ds)^j x``;
* ``c(s) delta^(i) * y``: ``(d/dt)^i (c(t) y)``.

Derivatives of Theta produce delta terms, and products ``q(t,s) delta^(i)``
are reduced with ``(t-s)^j delta^(i) = (-1)^j i!/(i-j)! delta^(i-j)``.
"""

from __future__ import annotations

from math import comb, factorial
from typing import Mapping

import numpy as np
from scipy.signal import convolve2d

from .kernels import KernelMatrix, bivariate_quadrature
from .legendre import DomainError

__all__ = [
    "DegreeOverflowError",
    "UnrepresentableError",
    "PolyBivariate",
    "StarElement",
    "star_identity",
    "theta_element",
    "delta_prime",
    "delta",
    "from_poly",
    "from_poly_t",
    "star",
    "star_power",
    "truncated_resolvent",
    "to_coeff_matrix",
    "eval_theta_part",
    "volterra",
]

MAX_DEGREE = 24


class DegreeOverflowError(OverflowError):
    """A polynomial result would exceed the configured degree cap."""


class UnrepresentableError(ValueError):
    """Element has no bounded Legendre coefficient matrix."""


class PolyBivariate:
    """Dense polynomial sum c[a, b] t^a s^b with 0 <= a, b <= max_degree."""

    __slots__ = ("c", "max_degree")

    def __init__(self, coeffs=None, max_degree: int = MAX_DEGREE):
        self.max_degree = max_degree
        n = max_degree + 1
        c = np.zeros((n, n))
        if coeffs is not None:
            a = np.atleast_2d(np.asarray(coeffs, dtype=float))
            nz = np.argwhere(a != 0.0)
            if nz.size and nz.max() > max_degree:
                raise DegreeOverflowError(
                    f"degree {int(nz.max())} exceeds cap {max_degree}"
                )
            r, k = min(a.shape[0], n), min(a.shape[1], n)
            c[:r, :k] = a[:r, :k]
        c.flags.writeable = False
        self.c = c

    # construction helpers
    @classmethod
    def zero(cls, max_degree: int = MAX_DEGREE):
        return cls(None, max_degree)

    @classmethod
    def const(cls, value: float, max_degree: int = MAX_DEGREE):
        return cls([[value]], max_degree)

    @classmethod
    def in_t(cls, coeffs, max_degree: int = MAX_DEGREE):
        """sum_a coeffs[a] t^a"""
        return cls(np.asarray(coeffs, dtype=float)[:, None], max_degree)

    @classmethod
    def in_s(cls, coeffs, max_degree: int = MAX_DEGREE):
        """sum_b coeffs[b] s^b"""
        return cls(np.asarray(coeffs, dtype=float)[None, :], max_degree)

    @classmethod
    def monomial(cls, a: int, b: int, coeff: float = 1.0, max_degree: int = MAX_DEGREE):
        c = np.zeros((a + 1, b + 1))
        c[a, b] = coeff
        return cls(c, max_degree)

    def _new(self, c):
        return PolyBivariate(c, self.max_degree)

    # arithmetic
    def __add__(self, other):
        return self._new(self.c + other.c)

    def __sub__(self, other):
        return self._new(self.c - other.c)

    def __neg__(self):
        return self._new(-self.c)

    def __mul__(self, other):
        if isinstance(other, PolyBivariate):
            return self._new(_poly_mul(self.c, other.c))
        return self._new(self.c * float(other))

    __rmul__ = __mul__

    def __eq__(self, other):
        return isinstance(other, PolyBivariate) and np.array_equal(self.c, other.c)

    def __hash__(self):
        return hash(self.c.tobytes())

    def is_zero(self) -> bool:
        return not self.c.any()

    def degrees(self) -> tuple[int, int]:
        nz = np.argwhere(self.c != 0.0)
        if not nz.size:
            return 0, 0
        return int(nz[:, 0].max()), int(nz[:, 1].max())

    def total_degree(self) -> int:
        nz = np.argwhere(self.c != 0.0)
        return int(nz.sum(axis=1).max()) if nz.size else 0

    def dt(self):
        n = self.max_degree + 1
        out = np.zeros((n, n))
        out[:-1] = self.c[1:] * np.arange(1, n)[:, None]
        return self._new(out)

    def ds(self):
        n = self.max_degree + 1
        out = np.zeros((n, n))
        out[:, :-1] = self.c[:, 1:] * np.arange(1, n)[None, :]
        return self._new(out)

    def diagonal(self):
        """q(s, s) as a polynomial in s."""
        c = _trim(self.c)
        out = np.zeros(sum(c.shape) - 1)
        for a in range(c.shape[0]):
            out[a : a + c.shape[1]] += c[a]
        return PolyBivariate.in_s(out, self.max_degree)

    def t_to_s(self):
        """Rename: the t-only polynomial c(t) becomes c(s)."""
        return self._new(self.c.T)

    def s_to_t(self):
        return self._new(self.c.T)

    def depends_on_t(self) -> bool:
        return bool(self.c[1:].any())

    def __call__(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        a, b = self.degrees()
        # Horner in s for each t-power, then Horner in t
        out = np.zeros(np.broadcast(t, s).shape)
        for i in range(a, -1, -1):
            row = np.zeros_like(out)
            for j in range(b, -1, -1):
                row = row * s + self.c[i, j]
            out = out * t + row
        return out

    def __repr__(self):
        terms = [
            f"{v:+.6g}*t^{a}*s^{b}" for (a, b), v in np.ndenumerate(self.c) if v != 0.0
        ]
        return "PolyBivariate(" + (" ".join(terms) or "0") + ")"


def _trim(c):
    nz = np.argwhere(c != 0.0)
    if not nz.size:
        return c[:1, :1]
    return c[: nz[:, 0].max() + 1, : nz[:, 1].max() + 1]


def _poly_mul(x, y):
    return convolve2d(_trim(x), _trim(y))


def volterra(f: PolyBivariate, g: PolyBivariate) -> PolyBivariate:
    """Exact int_s^t f(t, u) g(u, s) du."""
    fc, gc = _trim(f.c), _trim(g.c)
    na, nb = fc.shape
    nc, nd = gc.shape
    out = np.zeros((na + nb + nc + 1, nd + nb + nc + 1))
    for n in range(nb + nc - 1):
        # coefficient of t^a u^n s^d in f(t,u) g(u,s)
        blk = np.zeros((na, nd))
        for b in range(max(0, n - nc + 1), min(nb, n + 1)):
            blk += np.outer(fc[:, b], gc[n - b])
        blk /= n + 1
        out[n + 1 : n + 1 + na, :nd] += blk
        for a in range(na):
            out[a, n + 1 : n + 1 + nd] -= blk[a]
    return PolyBivariate(out, f.max_degree)


def _canonical_delta(q: PolyBivariate, order: int) -> dict[int, PolyBivariate]:
    """Rewrite q(t,s) delta^(order)(t-s) as sum_j e_j(s) delta^(order-j)(t-s)."""
    out = {}
    dq = q
    for j in range(order + 1):
        if dq.is_zero():
            break
        coeff = (-1) ** j * comb(order, j)
        term = dq.diagonal() * float(coeff)
        if not term.is_zero():
            out[order - j] = term
        dq = dq.dt()
    return out


class StarElement:
    """Element f(t,s) Theta(t-s) + sum_i c_i(s) delta^(i)(t-s)."""

    __slots__ = ("theta", "deltas", "max_degree")

    def __init__(
        self,
        theta: PolyBivariate | None = None,
        deltas: Mapping[int, PolyBivariate] | None = None,
        max_degree: int = MAX_DEGREE,
    ):
        if theta is not None:
            max_degree = theta.max_degree
        self.max_degree = max_degree
        self.theta = theta if theta is not None else PolyBivariate.zero(max_degree)
        acc: dict[int, PolyBivariate] = {}
        for order, q in (deltas or {}).items():
            if order < 0:
                raise ValueError("delta order must be >= 0")
            for i, e in _canonical_delta(q, order).items():
                acc[i] = acc[i] + e if i in acc else e
        self.deltas = {i: e for i, e in sorted(acc.items()) if not e.is_zero()}

    @property
    def theta_part(self) -> PolyBivariate:
        return self.theta

    @property
    def delta_parts(self) -> dict[int, PolyBivariate]:
        return self.deltas

    def _zero_poly(self):
        return PolyBivariate.zero(self.max_degree)

    def __add__(self, other: "StarElement") -> "StarElement":
        d = dict(self.deltas)
        for i, e in other.deltas.items():
            d[i] = d[i] + e if i in d else e
        return StarElement(self.theta + other.theta, d)

    def __neg__(self):
        return StarElement(-self.theta, {i: -e for i, e in self.deltas.items()})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar: float):
        scalar = float(scalar)
        return StarElement(self.theta * scalar, {i: e * scalar for i, e in self.deltas.items()})

    __rmul__ = __mul__

    def __matmul__(self, other):
        return star(self, other)

    def __eq__(self, other):
        return (
            isinstance(other, StarElement)
            and self.theta == other.theta
            and self.deltas.keys() == other.deltas.keys()
            and all(self.deltas[i] == other.deltas[i] for i in self.deltas)
        )

    def is_zero(self) -> bool:
        return self.theta.is_zero() and not self.deltas

    def max_abs_coeff(self) -> float:
        vals = [np.abs(self.theta.c).max()] + [np.abs(e.c).max() for e in self.deltas.values()]
        return float(max(vals))

    def coeff_distance(self, other: "StarElement") -> float:
        """Largest coefficient difference relative to the larger operand."""
        diff = (self - other).max_abs_coeff()
        scale = max(self.max_abs_coeff(), other.max_abs_coeff(), 1e-300)
        return diff / scale

    # distribution calculus
    def multiply(self, q: PolyBivariate) -> "StarElement":
        """Pointwise product with the polynomial q(t, s)."""
        return StarElement(self.theta * q, {i: e * q for i, e in self.deltas.items()})

    def d_t(self) -> "StarElement":
        deltas = {0: self.theta.diagonal()}
        out = StarElement(self.theta.dt(), deltas)
        return out + StarElement(None, {i + 1: e for i, e in self.deltas.items()}, self.max_degree)

    def d_s(self) -> "StarElement":
        out = StarElement(self.theta.ds(), {0: -self.theta.diagonal()})
        shifted = {}
        for i, e in self.deltas.items():
            shifted.setdefault(i, self._zero_poly())
            shifted[i] = shifted[i] + e.ds()
            shifted[i + 1] = shifted.get(i + 1, self._zero_poly()) - e
        return out + StarElement(None, shifted, self.max_degree)

    def __repr__(self):
        parts = [f"Theta: {self.theta!r}"] + [f"delta^({i}): {e!r}" for i, e in self.deltas.items()]
        return "StarElement(" + "; ".join(parts) + ")"


def star_identity(max_degree: int = MAX_DEGREE) -> StarElement:
    return StarElement(None, {0: PolyBivariate.const(1.0, max_degree)}, max_degree)


def theta_element(max_degree: int = MAX_DEGREE) -> StarElement:
    return StarElement(PolyBivariate.const(1.0, max_degree))


def delta(order: int = 0, max_degree: int = MAX_DEGREE) -> StarElement:
    return StarElement(None, {order: PolyBivariate.const(1.0, max_degree)}, max_degree)


def delta_prime(max_degree: int = MAX_DEGREE) -> StarElement:
    return delta(1, max_degree)


def from_poly(p) -> StarElement:
    """p(t, s) Theta(t - s); ``p`` a PolyBivariate or a coefficient grid."""
    if not isinstance(p, PolyBivariate):
        p = PolyBivariate(p)
    return StarElement(p)


def from_poly_t(coeffs, max_degree: int = MAX_DEGREE) -> StarElement:
    """p(t) Theta(t - s) from the coefficients of p in powers of t."""
    return StarElement(PolyBivariate.in_t(coeffs, max_degree))


def _right_delta(x: StarElement, e: PolyBivariate, order: int) -> StarElement:
    for _ in range(order):
        x = -x.d_s()
    return x.multiply(e)


def _left_delta(c: PolyBivariate, order: int, y: StarElement) -> StarElement:
    y = y.multiply(c.s_to_t())
    for _ in range(order):
        y = y.d_t()
    return y


def star(a: StarElement, b: StarElement) -> StarElement:
    """Exact star product (a * b)(t, s) = int a(t, u) b(u, s) du."""
    out = StarElement(volterra(a.theta, b.theta))
    if not a.theta.is_zero():
        a_theta = StarElement(a.theta)
        for j, e in b.deltas.items():
            out = out + _right_delta(a_theta, e, j)
    for i, c in a.deltas.items():
        out = out + _left_delta(c, i, b)
    return out


def star_power(a: StarElement, k: int) -> StarElement:
    if k < 0:
        raise ValueError("power must be >= 0")
    out = star_identity(a.max_degree)
    for _ in range(k):
        out = star(out, a)
    return out


def truncated_resolvent(a: StarElement, K: int) -> StarElement:
    """I + a + a*a + ... + a^K for a Theta-only element."""
    if a.deltas:
        raise ValueError("resolvent series needs an element without delta parts")
    if K < 0:
        raise ValueError("K must be >= 0")
    total = star_identity(a.max_degree)
    term = star_identity(a.max_degree)
    for _ in range(K):
        term = star(term, a)
        total = total + term
    return total


def to_coeff_matrix(a: StarElement, M: int, Q: int | None = None) -> KernelMatrix:
    """alpha I + coefficient matrix of the Theta part."""
    alpha = 0.0
    for i, e in a.deltas.items():
        if i > 0:
            raise UnrepresentableError(
                f"delta^({i}) has no bounded coefficient matrix"
            )
        if e.depends_on_t() or e.c[:, 1:].any():
            raise UnrepresentableError("delta coefficient must be constant")
        alpha = float(e.c[0, 0])
    deg = a.theta.total_degree()
    Q = Q or max(64, 2 * M, M + deg // 2 + 2)
    if a.theta.is_zero():
        F = np.zeros((M, M))
    else:
        F = bivariate_quadrature(a.theta, M, Q).entries.copy()
    F += alpha * np.eye(M)
    return KernelMatrix(F, "bivariate_quadrature")


def eval_theta_part(a: StarElement, t: float, s: float) -> float:
    for v in (t, s):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"point must lie in [0, 1], got {v!r}")
    return float(a.theta(t, s)) if t >= s else 0.0
