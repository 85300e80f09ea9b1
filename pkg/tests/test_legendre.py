import math

import numpy as np
import pytest
from numpy.polynomial import Legendre
from scipy.integrate import quad

from starode.legendre import (
    DomainError,
    EvaluationError,
    LegendreBasis,
    basis_vector,
    eval_p,
    gauss_rule,
    project_univariate,
)


def p_reference(k):
    """p_k from numpy's Legendre class, independent of the recurrence."""
    return Legendre.basis(k, domain=[0, 1]) * math.sqrt(2 * k + 1)


@pytest.mark.parametrize(
    "k, t, expected",
    [(0, 0.37, 1.0), (1, 0.5, 0.0), (2, 1.0, math.sqrt(5))],
)
def test_eval_p_examples(k, t, expected):
    assert eval_p(k, t) == pytest.approx(expected, abs=1e-15)


def test_eval_p_explicit_formulas():
    ts = np.linspace(0, 1, 41)
    explicit = [
        lambda t: 1.0,
        lambda t: math.sqrt(3) * (2 * t - 1),
        lambda t: math.sqrt(5) * (6 * t * t - 6 * t + 1),
        lambda t: math.sqrt(7) * (20 * t**3 - 30 * t**2 + 12 * t - 1),
    ]
    for k, f in enumerate(explicit):
        for t in ts:
            assert abs(eval_p(k, t) - f(t)) <= 1e-14


def test_recurrence_matches_numpy_legendre():
    ts = np.linspace(0, 1, 17)
    for k in range(0, 40, 3):
        np.testing.assert_allclose(
            [eval_p(k, t) for t in ts], p_reference(k)(ts), rtol=0, atol=1e-11
        )


@pytest.mark.parametrize("t", [-0.1, 1.5, float("nan")])
def test_eval_p_domain(t):
    with pytest.raises(DomainError):
        eval_p(1, t)


def test_basis_vector_examples():
    np.testing.assert_allclose(basis_vector(1, 0.2), [1.0])
    np.testing.assert_allclose(basis_vector(2, 0.0), [1.0, -math.sqrt(3)], atol=1e-15)
    np.testing.assert_allclose(
        basis_vector(3, 0.5), [1.0, 0.0, -math.sqrt(5) / 2], atol=1e-15
    )


def test_gauss_rule_examples():
    r1 = gauss_rule(1)
    np.testing.assert_allclose(r1.nodes, [0.5])
    np.testing.assert_allclose(r1.weights, [1.0])
    r2 = gauss_rule(2)
    np.testing.assert_allclose(
        sorted(r2.nodes), [0.5 - 1 / (2 * math.sqrt(3)), 0.5 + 1 / (2 * math.sqrt(3))], atol=1e-15
    )
    np.testing.assert_allclose(r2.weights, [0.5, 0.5], atol=1e-15)
    assert r2.integrate(r2.nodes**3) == pytest.approx(0.25, abs=1e-16)
    with pytest.raises(ValueError):
        gauss_rule(0)


@pytest.mark.parametrize("Q", [1, 2, 5, 16, 64])
def test_gauss_rule_exactness(Q):
    rule = gauss_rule(Q)
    assert abs(rule.weights.sum() - 1.0) <= 1e-14
    assert np.all(rule.weights > 0)
    assert np.all((rule.nodes > 0) & (rule.nodes < 1))
    for d in range(2 * Q):
        exact = 1.0 / (d + 1)
        assert abs(rule.integrate(rule.nodes**d) - exact) <= 1e-13 * exact


def test_orthonormality_up_to_30():
    G = LegendreBasis(30).gram(Q=64)
    assert np.abs(G - np.eye(31)).max() <= 1e-12


def test_project_examples():
    np.testing.assert_allclose(project_univariate(lambda t: np.ones_like(t), 3), [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(
        project_univariate(lambda t: t, 3), [0.5, 1 / (2 * math.sqrt(3)), 0.0], atol=1e-15
    )


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_project_exp_against_adaptive_quadrature():
    alpha = project_univariate(np.exp, 8)
    oracle = [
        quad(lambda t, k=k: math.exp(t) * p_reference(k)(t), 0, 1, epsabs=1e-15, epsrel=1e-15)[0]
        for k in range(8)
    ]
    np.testing.assert_allclose(alpha, oracle, rtol=0, atol=1e-13)


def test_project_accepts_scalar_only_functions():
    alpha = project_univariate(lambda t: math.cos(t), 5)
    np.testing.assert_allclose(alpha, project_univariate(np.cos, 5), atol=1e-15)


def test_project_reports_bad_node():
    with np.errstate(divide="ignore"), pytest.raises(EvaluationError) as info:
        project_univariate(lambda t: 1.0 / (t - gauss_rule(64).nodes[3]), 4)
    assert info.value.node == pytest.approx(gauss_rule(64).nodes[3])


def test_exp_coefficients_decay_geometrically():
    alpha = np.abs(project_univariate(np.exp, 40))
    d = np.arange(14)  # past this the coefficients are at roundoff
    slope, _ = np.polyfit(d, np.log(alpha[:14]), 1)
    assert np.exp(slope) < 1.0
