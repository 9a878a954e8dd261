import numpy as np
import pytest
from hypothesis import given, strategies as st

from tokscope.analysis.elbo import (elbo_inference, elbo_training, log_marginal_direct,
                                    position_posterior)
from tokscope.instances import seed0_params
from tokscope.model.transformer import TransformerParams


def _random_case(seed):
    rng = np.random.default_rng(seed)
    N, d = int(rng.integers(2, 6)), int(rng.integers(1, 5))
    p = TransformerParams.random(N, d, seed=seed, scale=float(rng.uniform(0.1, 3.0)))
    hist = rng.integers(0, N, size=int(rng.integers(1, 6)))
    return p, hist, int(rng.integers(0, N))


def test_elbo_below_log_likelihood_many_configs():
    worst = -np.inf
    for seed in range(1000):
        p, h, v = _random_case(seed)
        res = elbo_training(p, [(h, v)])
        worst = max(worst, res.elbo - res.log_likelihood)
    assert worst <= 1e-12


@given(st.integers(0, 100_000))
def test_posterior_closes_gap(seed):
    p, h, v = _random_case(seed)
    res = elbo_training(p, [(h, v)], q="posterior")
    assert abs(res.gap) <= 1e-10


@given(st.integers(0, 100_000))
def test_log_likelihood_matches_explicit_loop(seed):
    p, h, v = _random_case(seed)
    assert elbo_training(p, [(h, v)]).log_likelihood == pytest.approx(log_marginal_direct(p, h, v), abs=1e-12)


def test_single_position_elbo_is_exact():
    p = seed0_params()
    res = elbo_training(p, [([2], 1), ([3], 0)])
    assert abs(res.gap) <= 1e-15


def test_posterior_is_distribution():
    q = position_posterior(seed0_params(), [1, 2, 3], 2)
    assert q.shape == (3,) and q.sum() == pytest.approx(1.0) and np.all(q >= 0)


def test_custom_q_and_validation():
    p = seed0_params()
    res = elbo_training(p, [([1, 2], 3)], q=lambda h, v: np.array([0.5, 0.5]))
    assert res.gap >= -1e-12
    with pytest.raises(ValueError):
        elbo_training(p, [([1, 2], 3)], q=lambda h, v: np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        elbo_training(p, [([], 3)])


def test_batch_sums_per_example():
    p = seed0_params()
    res = elbo_training(p, [([1, 2], 3), ([3, 3, 1], 0)])
    assert res.per_example.shape == (2, 3)
    assert res.elbo == pytest.approx(res.per_example[:, 0].sum())
    assert res.gap == pytest.approx(res.log_likelihood - res.elbo)


def test_inference_table():
    p = seed0_params()
    tab = elbo_inference(p, [1, 2, 3])
    assert np.all(tab.elbo <= tab.log_marginal + 1e-12)
    assert np.exp(tab.log_marginal).sum() == pytest.approx(1.0, abs=1e-12)
    assert tab.argmax_agree == (np.argmax(tab.elbo) == np.argmax(tab.log_marginal))
