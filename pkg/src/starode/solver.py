"""Block coefficient-matrix solver for U' = A(t) U + B(t), U(0) = I on [0, 1].

Each entry of A(t) and B(t) becomes an M x M coefficient matrix of
``entry(t) Theta(t - s)``.  The block matrices satisfy

    U = T (I - A)^{-1} (I + B)

and U(t, 0) is read off by contracting with phi(t)^T T on the left and
phi(0) on the right of every block.
"""

from __future__ import annotations

import logging
import numbers
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.linalg.lapack import dgecon

from .kernels import (
    bivariate_quadrature,
    eval_margin,
    from_univariate,
    theta_matrix,
)
from .legendre import DomainError, EvaluationError, basis_table, default_order, project_univariate

__all__ = [
    "ODEProblem",
    "BlockSystem",
    "SolveReport",
    "SingularSystemError",
    "assemble_A",
    "assemble_B",
    "solve_direct",
    "neumann_resolvent",
    "resolvent_witness",
    "evaluate_solution",
    "solve_ode",
]

log = logging.getLogger(__name__)

Entry = Callable | float | int | None


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, message, condition=np.inf):
        super().__init__(message)
        self.condition = condition


def _is_zero(entry) -> bool:
    if entry is None:
        return True
    if isinstance(entry, numbers.Real):
        return entry == 0
    return bool(getattr(entry, "is_zero", False))


def _constant(entry):
    if isinstance(entry, numbers.Real):
        return float(entry)
    c = getattr(entry, "constant_value", None)
    return None if c is None else float(c)


@dataclass
class ODEProblem:
    """Data of U' = A(t) U + B(t), U(0) = I_N.

    ``A`` and ``B`` are N x N grids whose entries are callables of t, real
    constants or ``None`` (zero).  ``B=None`` means homogeneous.  With
    ``b_bivariate`` the entries of B are functions of (t, s).
    ``M=None`` selects the truncation by doubling.
    """

    A: Sequence[Sequence[Entry]]
    B: Sequence[Sequence[Entry]] | None = None
    M: int | None = 40
    Q: int | None = None
    b_bivariate: bool = False

    def __post_init__(self):
        self.A = [list(row) for row in self.A]
        n = len(self.A)
        if n < 1 or any(len(row) != n for row in self.A):
            raise ValueError("A must be a non-empty square grid")
        if self.B is not None:
            self.B = [list(row) for row in self.B]
            if len(self.B) != n or any(len(row) != n for row in self.B):
                raise ValueError("B must have the same square shape as A")
        if self.M is not None and self.M < 2:
            raise ValueError("M must be >= 2")

    @property
    def N(self) -> int:
        return len(self.A)

    @property
    def homogeneous(self) -> bool:
        return self.B is None or all(_is_zero(e) for row in self.B for e in row)

    def with_M(self, M: int) -> "ODEProblem":
        return ODEProblem(self.A, self.B, M, self.Q, self.b_bivariate)

    def A_at(self, t: float) -> np.ndarray:
        return _grid_at(self.A, t)

    def B_at(self, t: float) -> np.ndarray:
        if self.B is None:
            return np.zeros((self.N, self.N))
        if self.b_bivariate:
            return _grid_at(self.B, t, 0.0)
        return _grid_at(self.B, t)


def _grid_at(grid, *args) -> np.ndarray:
    n = len(grid)
    out = np.zeros((n, n))
    for i, row in enumerate(grid):
        for j, e in enumerate(row):
            if _is_zero(e):
                continue
            c = _constant(e)
            out[i, j] = c if c is not None else float(e(*args))
    return out


@dataclass(frozen=True)
class BlockSystem:
    """N x N grid of M x M blocks stored as one (NM) x (NM) array.

    Block (k, l) occupies rows kM..kM+M-1 and columns lM..lM+M-1.
    """

    N: int
    M: int
    matrix: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.matrix.shape != (self.N * self.M, self.N * self.M):
            raise ValueError("matrix shape does not match N*M")

    @classmethod
    def zeros(cls, N: int, M: int) -> "BlockSystem":
        return cls(N, M, np.zeros((N * M, N * M)))

    @classmethod
    def identity(cls, N: int, M: int) -> "BlockSystem":
        return cls(N, M, np.eye(N * M))

    @classmethod
    def from_blocks(cls, blocks) -> "BlockSystem":
        blocks = [[np.asarray(b, dtype=float) for b in row] for row in blocks]
        return cls(len(blocks), blocks[0][0].shape[0], np.block(blocks))

    def block(self, k: int, l: int) -> np.ndarray:
        M = self.M
        return self.matrix[k * M : (k + 1) * M, l * M : (l + 1) * M]

    @property
    def blocks(self):
        return [[self.block(k, l) for l in range(self.N)] for k in range(self.N)]

    def __matmul__(self, other: "BlockSystem") -> "BlockSystem":
        return BlockSystem(self.N, self.M, self.matrix @ other.matrix)


@dataclass(frozen=True)
class SolveReport:
    t_grid: tuple[float, ...]
    U_eval: dict
    M: int
    residual_norm: float
    condition_estimate: float | None = None
    neumann_gap: float | None = None
    neumann_terms: int | None = None
    timings: dict = field(default_factory=dict)

    def values(self) -> np.ndarray:
        """U at the grid points, shape (len(t_grid), N, N)."""
        return np.array([self.U_eval[t] for t in self.t_grid])


def _assemble(grid, N: int, M: int, Q: int | None, bivariate: bool = False) -> BlockSystem:
    out = np.zeros((N * M, N * M))
    T = theta_matrix(M).entries
    for i, row in enumerate(grid):
        for j, e in enumerate(row):
            if _is_zero(e):
                continue
            c = _constant(e)
            try:
                if c is not None and not bivariate:
                    blk = c * T
                elif bivariate:
                    blk = bivariate_quadrature(e, M, Q).entries
                else:
                    blk = from_univariate(project_univariate(e, M, Q), M).entries
            except EvaluationError as exc:
                raise EvaluationError(f"entry ({i}, {j}): {exc}", node=exc.node) from exc
            out[i * M : (i + 1) * M, j * M : (j + 1) * M] = blk
    return BlockSystem(N, M, out)


def _require_M(problem: ODEProblem) -> int:
    if problem.M is None:
        raise ValueError("problem has no fixed truncation M")
    return problem.M


def assemble_A(problem: ODEProblem) -> BlockSystem:
    return _assemble(problem.A, problem.N, _require_M(problem), problem.Q)


def assemble_B(problem: ODEProblem) -> BlockSystem:
    M = _require_M(problem)
    if problem.homogeneous:
        return BlockSystem.zeros(problem.N, M)
    return _assemble(problem.B, problem.N, M, problem.Q, problem.b_bivariate)


def solve_direct(A: BlockSystem, B: BlockSystem) -> BlockSystem:
    """X = (I - A)^{-1} (I + B) by LU with partial pivoting.

    The returned system carries ``residual_norm`` (Frobenius) and
    ``condition`` (1-norm estimate) in ``meta``.
    """
    if (A.N, A.M) != (B.N, B.M):
        raise ValueError("A and B block layouts differ")
    n = A.N * A.M
    L = np.eye(n) - A.matrix
    R = np.eye(n) + B.matrix
    lu, piv = lu_factor(L, check_finite=True)
    rcond, info = dgecon(lu, np.linalg.norm(L, 1), norm="1")
    cond = np.inf if rcond == 0.0 else 1.0 / rcond
    if info != 0 or rcond < np.finfo(float).eps:
        raise SingularSystemError(f"I - A is numerically singular (cond ~ {cond:.3g})", cond)
    X = lu_solve((lu, piv), R)
    residual = float(np.linalg.norm(L @ X - R))
    return BlockSystem(A.N, A.M, X, {"residual_norm": residual, "condition": cond})


def neumann_resolvent(A: BlockSystem, K: int, tol: float = 0.0) -> BlockSystem:
    """I + A + ... + A^K, stopping once a term's Frobenius norm drops below tol.

    ``meta["terms"]`` counts the summed terms including the identity and
    ``meta["term_norms"]`` lists their norms.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    n = A.N * A.M
    total = np.eye(n)
    term = np.eye(n)
    norms = [float(np.sqrt(n))]
    for _ in range(K):
        if not A.matrix.any():
            break
        term = term @ A.matrix
        nrm = float(np.linalg.norm(term))
        if not np.isfinite(nrm):
            raise FloatingPointError("Neumann term overflowed")
        total += term
        norms.append(nrm)
        if nrm < tol:
            break
    return BlockSystem(A.N, A.M, total, {"terms": len(norms), "term_norms": norms})


def resolvent_witness(A: BlockSystem, K: int) -> float:
    """||(I + C_K)(I - A) - I||_F with C_K = A + ... + A^K."""
    S = neumann_resolvent(A, K).matrix
    n = S.shape[0]
    return float(np.linalg.norm(S @ (np.eye(n) - A.matrix) - np.eye(n)))


def _right_contract(X: BlockSystem) -> np.ndarray:
    """Apply phi_M(0) on the right of every block: shape (N, M, N)."""
    N, M = X.N, X.M
    r = basis_table(M, 0.0)[0]
    return X.matrix.reshape(N, M, N, M) @ r


def evaluate_solution(X: BlockSystem, t, margin: int | None = None) -> np.ndarray:
    """U(t, 0) from X = (I - A)^{-1}(I + B).

    Only the leading M - margin Legendre modes of each block row are summed;
    see :func:`starode.kernels.eval_margin`.  Returns an N x N matrix for
    scalar ``t`` and an array of shape (len(t), N, N) otherwise.
    """
    scalar = np.ndim(t) == 0
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < 0.0) or np.any(ts > 1.0) or not np.all(np.isfinite(ts)):
        raise DomainError(f"t must lie in [0, 1], got {t!r}")
    M = X.M
    m = M - (eval_margin(M) if margin is None else margin)
    if not 1 <= m <= M:
        raise ValueError(f"margin leaves {m} modes of {M}")
    T = theta_matrix(M).entries
    left = basis_table(m, ts) @ T[:m]  # (len(t), M)
    v = _right_contract(X)  # (N, M, N)
    U = np.einsum("pm,imj->pij", left, v)
    return U[0] if scalar else U


def _solve_fixed(problem: ODEProblem, ts: np.ndarray, neumann: bool, neumann_K: int):
    timings = {}
    t0 = time.perf_counter()
    A = assemble_A(problem)
    B = assemble_B(problem)
    timings["assemble"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    X = solve_direct(A, B)
    timings["solve"] = time.perf_counter() - t0
    gap = terms = None
    if neumann:
        t0 = time.perf_counter()
        S = neumann_resolvent(A, neumann_K, tol=1e-16)
        XN = S.matrix @ (np.eye(A.N * A.M) + B.matrix)
        gap = float(np.linalg.norm(XN - X.matrix))
        terms = S.meta["terms"]
        timings["neumann"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    U = evaluate_solution(X, ts)
    timings["evaluate"] = time.perf_counter() - t0
    return X, U, gap, terms, timings


def solve_ode(
    problem: ODEProblem,
    t_grid: Sequence[float],
    *,
    neumann: bool = False,
    neumann_K: int = 200,
    tol: float = 1e-10,
    M_start: int = 16,
    M_max: int = 512,
) -> SolveReport:
    """Assemble, solve and evaluate U(t, 0) on ``t_grid``.

    When ``problem.M`` is None, M is doubled from ``M_start`` until two
    successive grid evaluations differ by at most ``tol`` (max-abs).
    """
    ts = np.asarray(list(t_grid), dtype=float)
    if ts.ndim != 1 or ts.size == 0:
        raise ValueError("t_grid must be a non-empty sequence")
    if np.any(np.diff(ts) < 0):
        raise ValueError("t_grid must be sorted")
    if ts[0] < 0.0 or ts[-1] > 1.0:
        raise DomainError("t_grid must lie in [0, 1]")

    if problem.M is not None:
        X, U, gap, terms, timings = _solve_fixed(problem, ts, neumann, neumann_K)
        M = problem.M
    else:
        M = M_start
        X, U, gap, terms, timings = _solve_fixed(problem.with_M(M), ts, neumann, neumann_K)
        while True:
            if 2 * M > M_max:
                log.warning("M doubling stopped at M=%d without reaching tol=%g", M, tol)
                break
            X2, U2, gap2, terms2, timings2 = _solve_fixed(problem.with_M(2 * M), ts, neumann, neumann_K)
            change = float(np.abs(U2 - U).max())
            M *= 2
            X, U, gap, terms, timings = X2, U2, gap2, terms2, timings2
            log.debug("M=%d change=%.3g", M, change)
            if change <= tol:
                break

    return SolveReport(
        t_grid=tuple(float(t) for t in ts),
        U_eval={float(t): U[i] for i, t in enumerate(ts)},
        M=M,
        residual_norm=X.meta["residual_norm"],
        condition_estimate=X.meta["condition"],
        neumann_gap=gap,
        neumann_terms=terms,
        timings=timings,
    )
