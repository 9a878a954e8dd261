import numpy as np
import pytest

from tokscope.analysis.fisher import (ContextDistribution, bernoulli_cross_entropy, fisher_from_cross_entropy,
                                      fisher_matrix, parameter_subset, score_outer_product)
from tokscope.instances import seed0_params


@pytest.fixture(scope="module")
def seed0_case():
    p = seed0_params()
    ctx = ContextDistribution.uniform_prompts(p.n_tokens, 2)
    subset = parameter_subset(p, "B", 9) + parameter_subset(p, "A", 1)
    return p, ctx, subset


def test_bernoulli_fisher():
    res = fisher_from_cross_entropy(bernoulli_cross_entropy(0.0), np.array([0.0]))
    assert res.matrix[0, 0] == pytest.approx(0.25, abs=1e-6)


def test_quadratic_hessian_exact():
    H = np.array([[2.0, 0.5], [0.5, 1.0]])
    res = fisher_from_cross_entropy(lambda t: 0.5 * t @ H @ t, np.zeros(2))
    assert np.allclose(res.matrix, H, atol=1e-8)
    assert res.asymmetry <= 1e-12 and res.psd


def test_fd_matches_exact_score_outer_product(seed0_case):
    p, ctx, subset = seed0_case
    fd = fisher_matrix(p, ctx, subset)
    exact = score_outer_product(p, ctx, subset)
    assert np.max(np.abs(fd.matrix - exact)) <= 1e-6
    assert fd.asymmetry <= 1e-8 and fd.psd


def test_monte_carlo_score_estimate(seed0_case):
    p, ctx, subset = seed0_case
    exact = score_outer_product(p, ctx, subset)
    mc = score_outer_product(p, ctx, subset, num_samples=100_000, seed=0)
    assert np.max(np.abs(mc - exact)) <= 5e-3


def test_duplicate_direction_gives_singular_matrix():
    # theta1 and theta2 only enter through their sum
    ce_sum = bernoulli_cross_entropy(0.3)
    res = fisher_from_cross_entropy(lambda t: ce_sum(np.array([t[0] + t[1]])), np.array([0.1, 0.2]))
    assert abs(res.min_eigenvalue) <= 1e-6
    assert res.matrix[0, 1] == pytest.approx(res.matrix[0, 0], abs=1e-6)


def test_subset_validation(seed0_case):
    p, ctx, _ = seed0_case
    with pytest.raises(ValueError):
        fisher_matrix(p, ctx, [])
    with pytest.raises(ValueError):
        fisher_matrix(p, ctx, [("A", (0, 0)), ("A", (0, 0))])
    with pytest.raises(ValueError):
        fisher_from_cross_entropy(lambda t: 0.0, np.zeros(51))


def test_context_distribution_validation():
    with pytest.raises(ValueError):
        ContextDistribution(((1,), (2,)), np.array([0.5, 0.6]))
    ctx = ContextDistribution(((1,), (2, 3)), np.array([0.25, 0.75]))
    assert [X.shape for X, _ in ctx.groups()] == [(1, 1), (1, 2)]
