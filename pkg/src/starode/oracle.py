"""Independent reference solutions: adaptive Runge-Kutta, closed forms, quadrature."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .legendre import DomainError, gauss_rule

__all__ = [
    "IntegratorConfig",
    "NonConvergenceError",
    "integrate",
    "commuting_solution",
    "volterra_compose",
]


class NonConvergenceError(RuntimeError):
    def __init__(self, message, t_last):
        super().__init__(message)
        self.t_last = t_last


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-14
    max_steps: int = 200_000

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")


# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array(_A[6] + [0.0])
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)


def _rhs(problem):
    N = problem.N
    homogeneous = problem.homogeneous

    def f(t, y):
        U = y.reshape(N, N)
        dU = problem.A_at(t) @ U
        if not homogeneous:
            dU = dU + problem.B_at(t)
        return dU.ravel()

    return f


def _dp54(f, y0, t_stops, cfg):
    """Integrate y' = f(t, y) from t_stops[0], landing exactly on each stop."""
    t = float(t_stops[0])
    y = np.array(y0, dtype=float)
    out = [y.copy()]
    k1 = f(t, y)
    span = float(t_stops[-1] - t_stops[0])
    h = min(1e-2, span) if span > 0 else 0.0
    err_prev = 1e-4
    steps = 0
    K = np.empty((7, y.size))
    for target in t_stops[1:]:
        while t < target:
            if steps >= cfg.max_steps:
                raise NonConvergenceError(f"step limit {cfg.max_steps} reached at t={t!r}", t)
            steps += 1
            h_try = min(h, target - t)
            K[0] = k1
            for i in range(1, 7):
                K[i] = f(t + _C[i] * h_try, y + h_try * (np.asarray(_A[i]) @ K[:i]))
            y_new = y + h_try * (_B5 @ K)
            err_vec = h_try * (_E @ K)
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
            if not np.isfinite(err):
                raise NonConvergenceError(f"non-finite error estimate at t={t!r}", t)
            if err <= 1.0:
                # PI controller
                fac = 0.9 * max(err, 1e-10) ** (-0.7 / 5) * err_prev ** (0.4 / 5)
                fac = min(5.0, max(0.2, fac))
                t = target if h_try == target - t else t + h_try
                y = y_new
                k1 = K[6].copy()
                err_prev = max(err, 1e-4)
                if h_try == h or fac < 1.0:
                    h = h_try * fac
            else:
                h = h_try * max(0.2, 0.9 * err ** (-1 / 5))
            if t + h == t:
                raise NonConvergenceError(f"step size underflow at t={t!r}", t)
        out.append(y.copy())
    return out


def integrate(problem, t_grid: Sequence[float], cfg: IntegratorConfig | None = None) -> dict:
    """U(t) for U' = A(t) U + B(t), U(0) = I, at every point of ``t_grid``."""
    cfg = cfg or IntegratorConfig()
    ts = np.asarray(list(t_grid), dtype=float)
    if ts.size == 0:
        return {}
    if ts[0] < 0.0 or ts[-1] > 1.0 or np.any(np.diff(ts) < 0):
        raise DomainError("t_grid must be sorted within [0, 1]")
    N = problem.N
    stops = np.concatenate([[0.0], ts]) if ts[0] > 0.0 else ts
    ys = _dp54(_rhs(problem), np.eye(N).ravel(), stops, cfg)
    if ts[0] > 0.0:
        ys = ys[1:]
    return {float(t): y.reshape(N, N) for t, y in zip(ts, ys)}


def commuting_solution(a: Callable, C, t: float, Q: int = 32) -> np.ndarray:
    """exp((int_0^t a) C) for the commuting family A(t) = a(t) C."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t!r}")
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if t == 0.0:
        return np.eye(C.shape[0])
    rule = gauss_rule(Q)
    nodes = t * rule.nodes
    vals = np.array([float(a(x)) for x in nodes])
    return expm(t * rule.integrate(vals) * C)


def volterra_compose(f: Callable, g: Callable, t: float, s: float, Q: int = 32) -> float:
    """int_s^t f(t, u) g(u, s) du by a Q-point Gauss rule."""
    if t < s:
        raise DomainError(f"need t >= s, got t={t!r}, s={s!r}")
    if t == s:
        return 0.0
    rule = gauss_rule(Q)
    u = s + (t - s) * rule.nodes
    vals = np.array([float(f(t, x)) * float(g(x, s)) for x in u])
    return (t - s) * rule.integrate(vals)
