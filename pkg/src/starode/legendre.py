"""Orthonormal shifted Legendre polynomials on [0, 1] and Gauss rules."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

__all__ = [
    "DomainError",
    "EvaluationError",
    "LegendreBasis",
    "QuadratureRule",
    "eval_p",
    "basis_vector",
    "basis_table",
    "gauss_rule",
    "default_order",
    "project_univariate",
]


class DomainError(ValueError):
    """Argument outside the unit interval."""


class EvaluationError(ArithmeticError):
    """A user function returned a non-finite value at a quadrature node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


def _check_unit(t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError(f"t must lie in [0, 1], got {t!r}")
    return t


def basis_table(M: int, t) -> np.ndarray:
    """Values p_k(t_j) as an array of shape (len(t), M).

    Uses the three-term recurrence on x = 2t - 1 and rescales by sqrt(2k+1).
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    t = np.atleast_1d(_check_unit(t))
    x = 2.0 * t - 1.0
    P = np.empty((t.size, M))
    P[:, 0] = 1.0
    if M > 1:
        P[:, 1] = x
    for k in range(2, M):
        P[:, k] = ((2 * k - 1) * x * P[:, k - 1] - (k - 1) * P[:, k - 2]) / k
    return P * np.sqrt(2.0 * np.arange(M) + 1.0)


def eval_p(k: int, t: float) -> float:
    if k < 0:
        raise ValueError("k must be >= 0")
    return float(basis_table(k + 1, t)[0, k])


def basis_vector(M: int, t: float) -> np.ndarray:
    """phi_M(t) = [p_0(t), ..., p_{M-1}(t)]."""
    return basis_table(M, t)[0]


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return self.nodes.size

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@lru_cache(maxsize=64)
def _gauss(Q: int):
    x, w = leggauss(Q)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights


def gauss_rule(Q: int) -> QuadratureRule:
    """Q-point Gauss-Legendre rule on [0, 1]; exact up to degree 2Q-1."""
    if Q < 1:
        raise ValueError("quadrature order must be >= 1")
    return QuadratureRule(*_gauss(int(Q)))


def default_order(M: int) -> int:
    return max(64, 2 * M)


def _sample(f: Callable, nodes: np.ndarray) -> np.ndarray:
    try:
        vals = np.asarray(f(nodes), dtype=float)
        if vals.shape != nodes.shape:
            vals = np.broadcast_to(vals, nodes.shape).astype(float)
    except (TypeError, ValueError):
        vals = np.array([float(f(float(x))) for x in nodes])
    bad = ~np.isfinite(vals)
    if bad.any():
        node = float(nodes[np.argmax(bad)])
        raise EvaluationError(f"non-finite value at t={node!r}", node=node)
    return vals


def project_univariate(f: Callable, M: int, Q: int | None = None) -> np.ndarray:
    """Legendre coefficients alpha_d = int_0^1 f(t) p_d(t) dt, d < M.

    ``f`` may be vectorised or scalar-only; both are accepted.
    """
    rule = gauss_rule(Q or default_order(M))
    vals = _sample(f, rule.nodes)
    return basis_table(M, rule.nodes).T @ (rule.weights * vals)


@dataclass(frozen=True)
class LegendreBasis:
    """Orthonormal shifted Legendre family p_0..p_{max_degree} on [0, 1]."""

    max_degree: int

    def __post_init__(self):
        if self.max_degree < 0:
            raise ValueError("max_degree must be >= 0")

    @property
    def size(self) -> int:
        return self.max_degree + 1

    def __call__(self, t) -> np.ndarray:
        return basis_table(self.size, t)

    def gram(self, Q: int | None = None) -> np.ndarray:
        rule = gauss_rule(Q or default_order(self.size))
        P = basis_table(self.size, rule.nodes)
        return P.T @ (rule.weights[:, None] * P)

    def project(self, f: Callable, Q: int | None = None) -> np.ndarray:
        return project_univariate(f, self.size, Q)
