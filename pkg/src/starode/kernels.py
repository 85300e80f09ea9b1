"""Coefficient matrices of Theta-kernels in the orthonormal shifted Legendre basis.

A kernel ``f(t, s) = g(t, s) * Theta(t - s)`` is represented by the matrix ``F``
with ``f(t, s) ~ phi(t)^T F phi(s)``.  Under this map the star product of two
kernels becomes the ordinary matrix product of their coefficient matrices.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .legendre import (
    DomainError,
    EvaluationError,
    _sample,
    basis_table,
    default_order,
    gauss_rule,
)

__all__ = [
    "KernelMatrix",
    "DecayFitError",
    "theta_matrix",
    "pk_theta_matrix",
    "from_univariate",
    "univariate_quadrature",
    "bivariate_quadrature",
    "star_multiply",
    "evaluate_kernel",
    "estimate_decay",
    "decay_fit",
    "fit_residual_per_octave",
    "leading_submatrix",
    "entry_bound",
    "eval_margin",
    "compare_margin",
]


class DecayFitError(ValueError):
    """No off-diagonal data to fit a geometric decay to."""


@dataclass(frozen=True)
class KernelMatrix:
    """M x M coefficient matrix plus how it was obtained.

    ``provenance`` is one of ``theta``, ``pk_theta``, ``univariate_series``,
    ``univariate_quadrature``, ``bivariate_quadrature``, ``product``,
    ``submatrix``, ``dense``.  ``k`` is only set for ``pk_theta``.
    """

    entries: np.ndarray
    provenance: str = "dense"
    k: int | None = None
    decay: tuple[float, float] | None = field(default=None, compare=False)

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"coefficient matrix must be square, got shape {a.shape}")
        a.flags.writeable = False
        object.__setattr__(self, "entries", a)

    @property
    def M(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __matmul__(self, other: "KernelMatrix") -> "KernelMatrix":
        return star_multiply(self, other)

    def with_decay(self) -> "KernelMatrix":
        return replace(self, decay=estimate_decay(self))

    def to_csv(self) -> str:
        buf = io.StringIO()
        for row in self.entries:
            buf.write(",".join(f"{v:.17g}" for v in row))
            buf.write("\n")
        return buf.getvalue()


def eval_margin(M: int) -> int:
    """Trailing rows dropped when a truncated matrix is evaluated at a point.

    The last rows of a truncated product miss their band partners beyond
    column M; those rows are discarded before summing the Legendre series.
    """
    return min(M - 1, max(4, M // 4))


def compare_margin(M: int) -> int:
    """Trailing rows/cols ignored when comparing truncated products."""
    return max(4, -(-M // 10))


def _theta_entries(M: int) -> np.ndarray:
    T = np.zeros((M, M))
    T[0, 0] = 0.5
    k = np.arange(1, M)
    sub = 0.5 / np.sqrt(4.0 * k * k - 1.0)
    T[k, k - 1] = sub
    T[k - 1, k] = -sub
    return T


def theta_matrix(M: int) -> KernelMatrix:
    """Coefficient matrix T of Theta(t - s); tridiagonal, T[0, 0] = 1/2."""
    if M < 1:
        raise ValueError("M must be >= 1")
    return KernelMatrix(_theta_entries(M), "theta")


def _antiderivative_table(M: int, nodes: np.ndarray) -> np.ndarray:
    # int_0^t p_l(s) ds = sum_j T[j, l] p_j(t), exactly, with j <= l + 1
    return basis_table(M + 1, nodes) @ _theta_entries(M + 1)[:, :M]


def _weighted_theta(weights_t: np.ndarray, nodes: np.ndarray, M: int) -> np.ndarray:
    P = basis_table(M, nodes)
    Psi = _antiderivative_table(M, nodes)
    return (P * weights_t[:, None]).T @ Psi


def pk_theta_matrix(k: int, M: int) -> KernelMatrix:
    """Coefficient matrix B^(k) of p_k(t) Theta(t - s); bandwidth k + 1."""
    if k < 0 or M < 1:
        raise ValueError("need k >= 0 and M >= 1")
    if k == 0:
        return KernelMatrix(_theta_entries(M), "pk_theta", k=0)
    rule = gauss_rule(M + k // 2 + 2)
    pk = basis_table(k + 1, rule.nodes)[:, k]
    F = _weighted_theta(rule.weights * pk, rule.nodes, M)
    return KernelMatrix(F, "pk_theta", k=k)


def from_univariate(alpha, M: int) -> KernelMatrix:
    """F = sum_k alpha_k B^(k) for the kernel f(t) Theta(t - s).

    Evaluated as one exact quadrature of the polynomial sum_k alpha_k p_k
    rather than by accumulating the banded B^(k).
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    L = alpha.size
    if not np.any(alpha):
        return KernelMatrix(np.zeros((M, M)), "univariate_series")
    rule = gauss_rule(M + (L + 1) // 2 + 2)
    ft = basis_table(L, rule.nodes) @ alpha
    return KernelMatrix(_weighted_theta(rule.weights * ft, rule.nodes, M), "univariate_series")


def univariate_quadrature(f: Callable, M: int, Q: int | None = None) -> KernelMatrix:
    """Coefficient matrix of f(t) Theta(t - s) straight from samples of f."""
    rule = gauss_rule(Q or default_order(M))
    vals = _sample(f, rule.nodes)
    return KernelMatrix(_weighted_theta(rule.weights * vals, rule.nodes, M), "univariate_quadrature")


def bivariate_quadrature(f: Callable, M: int, Q: int | None = None) -> KernelMatrix:
    """f_{k,l} = int_0^1 p_k(t) int_0^t f(t, s) p_l(s) ds dt by nested Gauss rules.

    ``f`` is called with two equally shaped arrays (t, s); the inner rule is
    mapped affinely onto [0, t] for every outer node.
    """
    rule = gauss_rule(Q or default_order(M))
    x, w = rule.nodes, rule.weights
    tt = np.repeat(x[:, None], x.size, axis=1)
    ss = tt * x[None, :]
    try:
        vals = np.asarray(f(tt, ss), dtype=float)
        vals = np.broadcast_to(vals, tt.shape)
    except (TypeError, ValueError):
        vals = np.array([[float(f(a, b)) for a, b in zip(r1, r2)] for r1, r2 in zip(tt, ss)])
    bad = ~np.isfinite(vals)
    if bad.any():
        i, j = np.unravel_index(np.argmax(bad), bad.shape)
        node = (float(tt[i, j]), float(ss[i, j]))
        raise EvaluationError(f"non-finite kernel value at (t, s)={node}", node=node)
    Pt = basis_table(M, x)
    inner = np.empty((x.size, M))
    for i, ti in enumerate(x):
        Ps = basis_table(M, ss[i])
        inner[i] = (ti * w * vals[i]) @ Ps
    F = Pt.T @ (w[:, None] * inner)
    return KernelMatrix(F, "bivariate_quadrature")


def star_multiply(F: KernelMatrix, G: KernelMatrix) -> KernelMatrix:
    if F.M != G.M:
        raise ValueError(f"dimension mismatch: {F.M} vs {G.M}")
    return KernelMatrix(F.entries @ G.entries, "product")


def evaluate_kernel(F: KernelMatrix, t: float, s: float, margin: int | None = None) -> float:
    """phi(t)^T F phi(s) using the leading M - margin rows of F.

    With ``margin=0`` this is the plain truncated expansion.  The default drops
    ``eval_margin(M)`` trailing rows, whose sums over columns are incomplete.
    """
    for v in (t, s):
        if not (0.0 <= v <= 1.0):
            raise DomainError(f"point must lie in [0, 1], got {v!r}")
    M = F.M
    m = M - (eval_margin(M) if margin is None else margin)
    if not 1 <= m <= M:
        raise ValueError(f"margin leaves {m} rows of {M}")
    left = basis_table(m, t)[0]
    right = basis_table(M, s)[0]
    return float(left @ F.entries[:m] @ right)


def _diagonal_maxima(F: np.ndarray):
    M = F.shape[0]
    d = np.arange(M)
    out = np.zeros(M)
    for k in range(M):
        out[k] = max(np.abs(np.diagonal(F, k)).max(), np.abs(np.diagonal(F, -k)).max())
    return d, out


def decay_fit(F: KernelMatrix):
    """Fit log max_{|k-l|=d} |f_kl| ~ log K + d log rho.

    Returns (K, rho, distances, residuals), residuals in natural-log units.
    Distances 0 and 1 are skipped, and so are diagonals at roundoff level
    (below 1000 eps max|F|), which count as exact zeros.
    """
    a = F.entries
    if F.M < 8:
        raise ValueError("decay fit needs M >= 8")
    scale = np.abs(a).max()
    if scale == 0.0:
        raise DecayFitError("all-zero matrix has no decay rate")
    d, mx = _diagonal_maxima(a)
    keep = (d >= 2) & (d <= F.M - 2) & (mx > 1e3 * np.finfo(float).eps * scale)
    if keep.sum() < 2:
        # banded to within roundoff
        return float(scale), 0.0, d[keep], np.zeros(int(keep.sum()))
    x, y = d[keep], np.log(mx[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return float(np.exp(intercept)), float(np.exp(slope)), x, resid


def estimate_decay(F: KernelMatrix) -> tuple[float, float]:
    K, rho, _, _ = decay_fit(F)
    return K, rho


def fit_residual_per_octave(F: KernelMatrix) -> float:
    """RMS log-residual of the decay fit divided by the octaves of |k-l| it spans."""
    _, _, d, resid = decay_fit(F)
    if d.size < 2:
        return 0.0
    return float(np.sqrt(np.mean(resid**2)) / np.log2(d.max() / d.min()))


def leading_submatrix(F: KernelMatrix, m: int) -> KernelMatrix:
    if not 1 <= m <= F.M:
        raise IndexError(f"submatrix size {m} outside 1..{F.M}")
    if m == F.M:
        return F
    return KernelMatrix(F.entries[:m, :m], "submatrix")


def entry_bound(M: int, fmax: float) -> np.ndarray:
    """Envelope max|f| sqrt(2k+1) sqrt(2l+1) for every entry."""
    r = np.sqrt(2.0 * np.arange(M) + 1.0)
    return fmax * np.outer(r, r)
