"""Self-checks run by ``starode verify``.

Each check reports the measured quantity next to the allowed bound.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import ring
from .kernels import (
    compare_margin,
    evaluate_kernel,
    from_univariate,
    pk_theta_matrix,
    star_multiply,
    theta_matrix,
)
from .legendre import project_univariate
from .oracle import IntegratorConfig, integrate
from .solver import ODEProblem, assemble_A, resolvent_witness, solve_ode

__all__ = ["Check", "run_checks", "random_poly", "random_element", "NONCOMMUTING"]

# U' = [[0, 1], [-(1 + t^2), 0]] U
NONCOMMUTING = [[0.0, 1.0], [lambda t: -(1.0 + t * t), 0.0]]


@dataclass
class Check:
    name: str
    measured: float
    allowed: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.measured <= self.allowed)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: measured {self.measured:.3e} allowed {self.allowed:.3e} ({self.seconds:.2f}s)"


def random_poly(rng, degree: int, s_only: bool = False) -> ring.PolyBivariate:
    """Random bivariate polynomial of total degree <= degree."""
    c = np.zeros((degree + 1, degree + 1))
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            c[a, b] = rng.uniform(-1.0, 1.0)
    if s_only:
        c[1:] = 0.0
    return ring.PolyBivariate(c)


def random_element(rng, degree: int = 4, deltas: bool = True) -> ring.StarElement:
    parts = {}
    if deltas and rng.random() < 0.5:
        parts[0] = random_poly(rng, min(degree, 2))
    if deltas and rng.random() < 0.5:
        parts[1] = random_poly(rng, min(degree, 2))
    return ring.StarElement(random_poly(rng, degree), parts)


def check_ring_axioms(trials: int, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    one = ring.star_identity()
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(trials):
        a, b, c = (random_element(rng) for _ in range(3))
        worst = max(
            worst,
            ring.star(a, ring.star(b, c)).coeff_distance(ring.star(ring.star(a, b), c)),
            ring.star(one, a).coeff_distance(a),
            ring.star(a, one).coeff_distance(a),
            ring.star(a, b + c).coeff_distance(ring.star(a, b) + ring.star(a, c)),
            ring.star(a + b, c).coeff_distance(ring.star(a, c) + ring.star(b, c)),
        )
    return Check("ring axioms", worst, 1e-12, time.perf_counter() - t0)


def check_theta_inverse() -> Check:
    th, dp, one = ring.theta_element(), ring.delta_prime(), ring.star_identity()
    err = max(ring.star(dp, th).coeff_distance(one), ring.star(th, dp).coeff_distance(one))
    return Check("delta' inverts Theta", err, 0.0)


def check_theta_structure(M: int = 40) -> Check:
    T = theta_matrix(M).entries
    k = np.arange(1, M)
    expected = np.zeros((M, M))
    expected[0, 0] = 0.5
    expected[k, k - 1] = 1.0 / (2.0 * np.sqrt(4.0 * k * k - 1.0))
    expected[k - 1, k] = -expected[k, k - 1]
    return Check(f"T structure (M={M})", float(np.abs(T - expected).max()), 1e-12)


def check_bandedness(M: int = 40, kmax: int = 6) -> Check:
    worst = 0.0
    i, j = np.indices((M, M))
    for k in range(kmax + 1):
        B = pk_theta_matrix(k, M).entries
        outside = np.abs(i - j) > k + 1
        if outside.any():
            worst = max(worst, float(np.abs(B[outside]).max()))
    return Check(f"B^(k) bandwidth k+1 (k<={kmax}, M={M})", worst, 1e-12)


def check_correspondence(pairs: int, M: int = 40, seed: int = 1) -> Check:
    rng = np.random.default_rng(seed)
    m = M - compare_margin(M)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(pairs):
        a = ring.StarElement(random_poly(rng, 4))
        b = ring.StarElement(random_poly(rng, 4))
        FG = star_multiply(ring.to_coeff_matrix(a, M), ring.to_coeff_matrix(b, M)).entries
        H = ring.to_coeff_matrix(ring.star(a, b), M).entries
        worst = max(worst, float(np.abs(FG[:m, :m] - H[:m, :m]).max()))
    return Check(f"star product = matrix product (M={M}, {pairs} pairs)", worst, 1e-8, time.perf_counter() - t0)


def check_oracle_equivalence(M: int = 60) -> Check:
    grid = np.linspace(0.0, 1.0, 11)
    t0 = time.perf_counter()
    problem = ODEProblem(NONCOMMUTING, M=M)
    rep = solve_ode(problem, grid)
    ref = integrate(problem, grid, IntegratorConfig(rel_tol=1e-12))
    err = max(float(np.abs(rep.U_eval[t] - ref[t]).max()) for t in rep.t_grid)
    return Check(f"non-commuting 2x2 vs Runge-Kutta (M={M})", err, 1e-6, time.perf_counter() - t0)


def check_diagonal_halving(Ms) -> Check:
    t0 = time.perf_counter()
    errs = []
    for M in Ms:
        T = theta_matrix(M)
        errs.append(max(abs(evaluate_kernel(T, t, t) - 0.5) for t in (0.25, 0.5, 0.75)))
    # bound at the largest M, and no growth along the sequence
    growth = max([0.0] + [b - a for a, b in zip(errs, errs[1:])])
    measured = errs[-1] if growth <= 1e-14 else np.inf
    return Check(f"diagonal halving (M={Ms[-1]})", measured, 2e-2, time.perf_counter() - t0)


def check_resolvent_witness(K: int = 60) -> Check:
    worst = 0.0
    problems = [
        ODEProblem([[1.0]], M=40),
        ODEProblem([[lambda t: t]], M=40),
        ODEProblem(NONCOMMUTING, M=60),
    ]
    for p in problems:
        worst = max(worst, resolvent_witness(assemble_A(p), K))
    return Check(f"(I + C_K)(I - A) = I (K={K})", worst, 1e-8)


def check_geometric_convergence(Ms=(8, 16, 24, 32, 40)) -> Check:
    grid = np.linspace(0.0, 1.0, 11)
    errs = []
    for M in Ms:
        rep = solve_ode(ODEProblem([[1.0]], M=M), grid)
        errs.append(float(np.abs(rep.values()[:, 0, 0] - np.exp(grid)).max()))
    pre = [e for e in errs if e >= 1e-11]
    ok = all(b < a for a, b in zip(errs, errs[1:len(pre) + 1]))
    if len(pre) >= 2:
        slope = np.polyfit(list(Ms)[: len(pre)], np.log10(pre), 1)[0]
    else:
        slope = -np.inf
    return Check("geometric convergence slope (log10 err / M)", slope if ok else np.inf, -0.2)


def run_checks(level: str = "quick") -> list[Check]:
    full = level == "full"
    checks = [
        check_ring_axioms(100 if full else 20),
        check_theta_inverse(),
        check_theta_structure(),
        check_bandedness(),
        check_correspondence(20 if full else 4),
        check_oracle_equivalence(),
        check_diagonal_halving((50, 100, 200) if full else (25, 50)),
        check_resolvent_witness(),
        check_geometric_convergence(),
    ]
    return checks
