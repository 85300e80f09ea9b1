import math

import numpy as np
import pytest
import sympy as sp

from starode.kernels import (
    DecayFitError,
    KernelMatrix,
    bivariate_quadrature,
    compare_margin,
    entry_bound,
    estimate_decay,
    evaluate_kernel,
    from_univariate,
    leading_submatrix,
    pk_theta_matrix,
    star_multiply,
    theta_matrix,
    univariate_quadrature,
)
from starode.legendre import DomainError, EvaluationError, project_univariate
from starode.oracle import volterra_compose

t_, s_ = sp.symbols("t s")


def sym_p(k, x):
    return sp.sqrt(2 * k + 1) * sp.legendre(k, 2 * x - 1)


def sym_kernel_matrix(f, M):
    """Exact f_{k,l} = int_0^1 int_0^t f(t,s) p_k(t) p_l(s) ds dt."""
    F = np.empty((M, M))
    for k in range(M):
        for l in range(M):
            inner = sp.integrate(f * sym_p(l, s_), (s_, 0, t_))
            F[k, l] = float(sp.integrate(sp.expand(inner * sym_p(k, t_)), (t_, 0, 1)))
    return F


@pytest.fixture(scope="module")
def sym_theta6():
    return sym_kernel_matrix(sp.Integer(1), 6)


def test_theta_small_examples():
    np.testing.assert_allclose(theta_matrix(1).entries, [[0.5]])
    r = 1 / (2 * math.sqrt(3))
    np.testing.assert_allclose(theta_matrix(2).entries, [[0.5, -r], [r, 0.0]], atol=1e-16)


def test_theta_matches_symbolic(sym_theta6):
    assert np.abs(theta_matrix(6).entries - sym_theta6).max() <= 1e-14


def test_theta_structure_M5():
    T = theta_matrix(5).entries
    i, j = np.indices(T.shape)
    assert np.all(T[np.abs(i - j) > 1] == 0.0)
    for k in range(1, 5):
        assert T[k, k - 1] == pytest.approx(1 / (2 * math.sqrt(4 * k * k - 1)), abs=1e-16)
    Tq = bivariate_quadrature(lambda t, s: np.ones_like(t), 5, Q=64).entries
    assert np.abs(T - Tq).max() <= 1e-14


def test_theta_plus_transpose_is_e00():
    T = theta_matrix(30).entries
    E = np.zeros((30, 30))
    E[0, 0] = 1.0
    assert np.abs(T + T.T - E).max() <= 1e-12


def test_pk_theta_zero_is_theta():
    for M in (1, 7, 40):
        assert np.abs(pk_theta_matrix(0, M).entries - theta_matrix(M).entries).max() <= 1e-14


@pytest.mark.parametrize("k", range(7))
def test_pk_theta_bandwidth(k):
    B = pk_theta_matrix(k, 40).entries
    i, j = np.indices(B.shape)
    outside = np.abs(i - j) > k + 1
    assert np.abs(B[outside]).max() <= 1e-12


def test_pk_theta_against_symbolic():
    F = sym_kernel_matrix(sym_p(1, t_), 5)
    assert np.abs(pk_theta_matrix(1, 5).entries - F).max() <= 1e-13


def test_pk_theta_against_nested_quadrature():
    p2 = lambda t, s: math.sqrt(5) * (6 * t * t - 6 * t + 1)
    Bq = bivariate_quadrature(p2, 6)
    assert np.abs(pk_theta_matrix(2, 6).entries - Bq.entries).max() <= 1e-12
    p1 = lambda t, s: math.sqrt(3) * (2 * t - 1)
    assert np.abs(pk_theta_matrix(1, 12).entries - bivariate_quadrature(p1, 12).entries).max() <= 1e-12


def test_from_univariate_examples():
    M = 20
    np.testing.assert_allclose(from_univariate([1.0], M).entries, theta_matrix(M).entries, atol=1e-14)
    assert not from_univariate([0.0, 0.0, 0.0], M).entries.any()
    F = from_univariate(project_univariate(lambda t: t, M), M)
    G = bivariate_quadrature(lambda t, s: t, M)
    assert np.abs(F.entries - G.entries).max() <= 1e-10


def test_from_univariate_is_sum_of_banded():
    rng = np.random.default_rng(3)
    alpha = rng.normal(size=5)
    M = 15
    expected = sum(a * pk_theta_matrix(k, M).entries for k, a in enumerate(alpha))
    assert np.abs(from_univariate(alpha, M).entries - expected).max() <= 1e-13


def test_univariate_quadrature_matches_series():
    M = 30
    F = univariate_quadrature(np.exp, M)
    G = from_univariate(project_univariate(np.exp, M), M)
    assert np.abs(F.entries - G.entries).max() <= 1e-13


def test_bivariate_quadrature_entry_bound():
    F = bivariate_quadrature(lambda t, s: np.ones_like(t), 10)
    assert np.all(np.abs(F.entries) <= entry_bound(10, 1.0))


def test_bivariate_quadrature_reports_node():
    with np.errstate(divide="ignore"), pytest.raises(EvaluationError) as info:
        bivariate_quadrature(lambda t, s: 1.0 / (t - t), 4)
    assert len(info.value.node) == 2


def test_star_multiply_zero_and_mismatch():
    T = theta_matrix(6)
    Z = KernelMatrix(np.zeros((6, 6)))
    assert not star_multiply(T, Z).entries.any()
    assert star_multiply(T, T).provenance == "product"
    with pytest.raises(ValueError):
        star_multiply(T, theta_matrix(5))


def test_theta_squared_is_ramp():
    # Theta * Theta = (t - s) Theta
    M = 30
    TT = star_multiply(theta_matrix(M), theta_matrix(M)).entries
    R = bivariate_quadrature(lambda t, s: t - s, M).entries
    m = M - 4
    assert np.abs(TT[:m, :m] - R[:m, :m]).max() <= 1e-8


def test_product_keeps_decay():
    M = 40
    F = from_univariate(project_univariate(np.exp, M), M)
    G = from_univariate(project_univariate(np.cos, M), M)
    _, rf = estimate_decay(F)
    _, rg = estimate_decay(G)
    _, rfg = estimate_decay(star_multiply(F, G))
    assert 0.0 < rfg <= max(rf, rg) + 0.1


def test_associativity_of_truncated_products():
    M = 25
    F = from_univariate(project_univariate(np.exp, M), M)
    G = from_univariate(project_univariate(np.sin, M), M)
    H = theta_matrix(M)
    left = ((F @ G) @ H).entries
    right = (F @ (G @ H)).entries
    assert np.abs(left - right).max() <= 1e-12 * np.abs(left).max()


def test_evaluate_kernel_examples():
    assert evaluate_kernel(theta_matrix(60), 0.75, 0.0) == pytest.approx(1.0, abs=5e-3)
    assert evaluate_kernel(theta_matrix(200), 0.5, 0.5) == pytest.approx(0.5, abs=2e-2)
    F = from_univariate(project_univariate(lambda t: t, 40), 40)
    assert evaluate_kernel(F, 0.9, 0.0) == pytest.approx(0.9, abs=1e-3)


def test_plain_truncation_misses_endpoints():
    # without the trailing margin the last row of T has no partner column
    T = theta_matrix(40)
    assert abs(evaluate_kernel(T, 1.0, 0.0, margin=0) - 1.0) > 0.1
    assert evaluate_kernel(T, 1.0, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_evaluate_kernel_domain():
    with pytest.raises(DomainError):
        evaluate_kernel(theta_matrix(5), 1.2, 0.0)


def test_kernel_eval_against_volterra_quadrature():
    # composed kernel of f(t) Theta and g(t) Theta, evaluated along s = 0
    rng = np.random.default_rng(11)
    M = 40
    for _ in range(5):
        fc, gc = rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 5)
        f = np.polynomial.Polynomial(fc)
        g = np.polynomial.Polynomial(gc)
        F = from_univariate(project_univariate(f, M), M)
        G = from_univariate(project_univariate(g, M), M)
        FG = star_multiply(F, G)
        for t in rng.uniform(0, 1, 4):
            exact = volterra_compose(lambda a, b: f(a), lambda a, b: g(a), t, 0.0)
            assert abs(evaluate_kernel(FG, t, 0.0) - exact) <= 1e-6


def test_estimate_decay_examples():
    K, rho = estimate_decay(from_univariate(project_univariate(np.exp, 40), 40))
    assert K > 0 and 0 < rho < 1
    _, rho_theta = estimate_decay(theta_matrix(40))
    assert rho_theta <= 1e-12
    _, rho_pole = estimate_decay(from_univariate(project_univariate(lambda t: 1 / (1 + 5 * t), 30), 40))
    assert rho < rho_pole < 1


def test_estimate_decay_errors():
    with pytest.raises(DecayFitError):
        estimate_decay(KernelMatrix(np.zeros((10, 10))))
    with pytest.raises(ValueError):
        estimate_decay(theta_matrix(5))


def test_leading_submatrix():
    F = theta_matrix(5)
    assert leading_submatrix(F, 5) is F
    np.testing.assert_allclose(leading_submatrix(F, 1).entries, [[0.5]])
    with pytest.raises(IndexError):
        leading_submatrix(F, 6)


def test_truncation_gap_shrinks_with_margin():
    M = 40
    F = from_univariate(project_univariate(np.exp, M), M)
    G = from_univariate(project_univariate(np.cos, M), M)
    exact = star_multiply(F, G).entries
    gaps = []
    for Ms in (12, 16, 20, 28):
        small = star_multiply(leading_submatrix(F, Ms), leading_submatrix(G, Ms)).entries
        gaps.append(np.abs(small[:10, :10] - exact[:10, :10]).max())
    assert all(b <= a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-12


def test_csv_dump_round_trip():
    F = from_univariate(project_univariate(np.exp, 6), 6)
    back = np.loadtxt(F.to_csv().splitlines(), delimiter=",")
    assert np.array_equal(back, F.entries)


def test_compare_margin():
    assert compare_margin(40) == 4
    assert compare_margin(30) == 4
    assert compare_margin(100) == 10
