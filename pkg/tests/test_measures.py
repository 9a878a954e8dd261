import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp

from tokscope._validation import EnsembleSizeError, ZeroProbabilityPathError
from tokscope.instances import (CopySource, copy_ensemble, independent_ensemble, seed0_ensemble,
                                seed0_params)
from tokscope.language import sequence_logprob, transformer_teacher, uniform_teacher
from tokscope.measures import (backward_directed_information, backward_directed_information_joint,
                               build_ensemble, conditional_mutual_information, directed_information,
                               directed_information_terms, ensemble_from_conditional,
                               expected_information_density, freedman_bound, freedman_check,
                               information_density, mutual_information, optional_stopping_check,
                               semantic_flow, step_densities, submartingale_check)
from tokscope.measures.directed import full_joint_tensor
from tokscope.measures.ensemble import CallableSource
from tokscope.measures.flow import sample_paths

LN2 = math.log(2)


# ---------------------------------------------------------------- ensembles

def test_uniform_binary_ensemble():
    ens = build_ensemble(uniform_teacher(2, prompt_length=1), 1, 2)
    assert np.allclose(ens.joint(), 0.25)
    assert ens.joint().shape == (2, 2)


def test_deterministic_model_one_continuation_per_prompt():
    ens = copy_ensemble(n=2, T=4)
    P = ens.joint()
    assert np.all((P > 0).sum(axis=1) == 1)
    assert np.allclose(P.sum(axis=1), ens.prompt_prior)


def test_mass_rechecked_by_logsumexp():
    p = seed0_params(n_tokens=3)
    teacher = transformer_teacher(p, prompt_length=2)
    ens = build_ensemble(teacher, 2, 4)
    logs = []
    for s in itertools.product(range(3), repeat=2):
        for u in itertools.product(range(3), repeat=2):
            logs.append(math.log(1 / 9) + sequence_logprob(teacher, s, u, absorb_stop=True))
    assert abs(logsumexp(logs)) <= 1e-10
    assert abs(ens.total_mass() - 1) <= 1e-10


def test_ensemble_size_limit():
    with pytest.raises(EnsembleSizeError):
        build_ensemble(uniform_teacher(10), 1, 8)


def test_bad_horizon_rejected():
    with pytest.raises(ValueError):
        build_ensemble(uniform_teacher(2), 2, 2)


# ---------------------------------------------------------------- directed information

def test_prompt_independent_zero():
    assert abs(directed_information(independent_ensemble())) <= 1e-12


def test_copy_model_ln2():
    assert directed_information(copy_ensemble()) == pytest.approx(LN2, abs=1e-12)


def test_seed0_di_equals_independent_term_sum():
    ens = seed0_ensemble()
    P = full_joint_tensor(ens)
    n, m = ens.n, ens.m
    terms = [conditional_mutual_information(P, tuple(range(n)), (n + t,), tuple(range(n, n + t)))
             for t in range(m)]
    assert abs(directed_information(ens) - sum(terms)) <= 1e-10
    assert np.allclose(directed_information_terms(ens), terms, atol=1e-10)


def test_expected_density_equals_di():
    ens = seed0_ensemble()
    assert abs(expected_information_density(ens) - directed_information(ens)) <= 1e-10


def test_di_not_above_mi():
    ens = seed0_ensemble()
    assert directed_information(ens) <= mutual_information(ens) + 1e-10


def test_mi_of_invertible_copy_is_prompt_entropy():
    def copy_prompt(prefix):
        out = np.zeros(2)
        out[prefix[len(prefix) - 2]] = 1.0    # u_k repeats s_k for n = 2
        return out
    ens = ensemble_from_conditional(copy_prompt, 2, 2, 4, absorb_stop=False)
    assert mutual_information(ens) == pytest.approx(2 * LN2, abs=1e-12)
    assert mutual_information(independent_ensemble()) == pytest.approx(0, abs=1e-12)


def test_backward_di_identity_shift_channel():
    # Y_t = X_{t+1}, X uniform on {0,1}^3; terms with t < n give ln 2 each
    n, N = 3, 2
    P = np.zeros((N,) * n + (N,) * n)
    for x in itertools.product(range(N), repeat=n):
        y = x[1:] + (0,)
        P[x + y] += 1 / N ** n
    assert backward_directed_information_joint(P, n) == pytest.approx((n - 1) * LN2, abs=1e-12)


def test_backward_di_independent_zero():
    P = np.einsum("a,b,c,d->abcd", [0.3, 0.7], [0.5, 0.5], [0.1, 0.9], [0.6, 0.4])
    assert abs(backward_directed_information_joint(P, 2)) <= 1e-12


def _brute_cmi(P, a, b, c):
    # direct sum of p(a,b,c) log p(a,b,c) p(c) / (p(a,c) p(b,c)) over the support
    def marg(keep):
        out = {}
        for idx in np.ndindex(P.shape):
            key = tuple(idx[k] for k in keep)
            out[key] = out.get(key, 0.0) + P[idx]
        return out
    pabc, pac, pbc, pc = marg(a + b + c), marg(a + c), marg(b + c), marg(c)
    total = 0.0
    for key, p in pabc.items():
        if p == 0:
            continue
        ka, kb, kc = key[:len(a)], key[len(a):len(a) + len(b)], key[len(a) + len(b):]
        total += p * math.log(p * pc[kc] / (pac[ka + kc] * pbc[kb + kc]))
    return total


@given(st.integers(0, 10_000))
def test_backward_di_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    P = rng.random((2, 2, 2, 2)) * (rng.random((2, 2, 2, 2)) > 0.3)
    if P.sum() == 0:
        P[0, 0, 0, 0] = 1
    P /= P.sum()
    n = 2
    brute = _brute_cmi(P, (1,), (2,), ())   # t=1: I(X_2; Y_1); t=2 term has empty future
    assert abs(backward_directed_information_joint(P, n) - brute) <= 1e-12


def test_backward_di_on_ensemble_runs():
    assert backward_directed_information(copy_ensemble()) >= -1e-12


# ---------------------------------------------------------------- densities and flow

def test_density_zero_for_prompt_independent():
    ens = independent_ensemble()
    P = ens.joint()
    U = ens.continuation_tokens(ens.m)
    for i, s in enumerate(ens.prompts):
        for j, u in enumerate(U):
            if P[i, j] > 0:
                assert abs(information_density(ens, s, u)) <= 1e-12


def test_copy_path_density_ln2():
    ens = copy_ensemble()
    d = step_densities(ens, [0, 1], [1, 0])
    assert d[0] == pytest.approx(LN2, abs=1e-12)


def test_zero_probability_path_raises():
    with pytest.raises(ZeroProbabilityPathError):
        step_densities(copy_ensemble(), [0, 1], [0, 0])


def test_flow_prompt_independent_all_zero():
    tr = semantic_flow(independent_ensemble(), [0, 1], [1, 1])
    for arr in (tr.densities, tr.cumulative, tr.M, tr.A, tr.V):
        assert np.allclose(arr, 0, atol=1e-12)


@given(st.integers(0, 10_000))
def test_flow_trace_invariants(seed):
    ens = seed0_ensemble()
    s, toks = sample_paths(ens, 1, seed)
    tr = semantic_flow(ens, ens.prompts[s[0]], toks[0])
    assert np.allclose(tr.cumulative, np.cumsum(tr.densities), atol=1e-12)
    assert np.max(np.abs(tr.M + tr.A - tr.cumulative)) <= 1e-10
    assert np.all(np.diff(tr.A) >= -1e-10)
    assert np.all(np.diff(tr.V) >= -1e-12)


def test_submartingale_seed0():
    rep = submartingale_check(seed0_ensemble(), 1000, seed=0)
    assert rep.violations == 0
    assert rep.max_compensator_error <= 1e-10
    assert rep.min_increment >= 0


def test_submartingale_margins_zero_when_independent():
    rep = submartingale_check(independent_ensemble(), 200, seed=0)
    assert abs(rep.min_margin) <= 1e-12 and rep.max_compensator_error <= 1e-12


def test_copy_margin_ln2():
    ens = copy_ensemble()
    tr = semantic_flow(ens, [1, 1], [1, 0])
    assert tr.A[0] == pytest.approx(LN2, abs=1e-12)


def test_flow_csv(tmp_path):
    tr = semantic_flow(seed0_ensemble(), [1, 2], [3, 1, 0])
    tr.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "step,density,cumulative,M,A,V"
    assert len(lines) == 4


def test_freedman_bound_values():
    assert freedman_bound(1, 1) == pytest.approx(math.exp(-0.25))
    assert freedman_bound(1e6, 1) < 1e-100


def test_freedman_large_alpha_empirical_zero():
    table = freedman_check(seed0_ensemble(), alpha_grid=(1e3,), beta_grid=(1.0,), num_paths=2000)
    assert table[0]["empirical"] == 0.0


def test_optional_stopping():
    full, first = optional_stopping_check(seed0_ensemble())
    assert full >= first - 1e-12
    full, first = optional_stopping_check(build_ensemble(seed0_params(), 2, 3))
    assert full == pytest.approx(first, abs=1e-15)
    full, first = optional_stopping_check(independent_ensemble())
    assert abs(full) <= 1e-12 and abs(first) <= 1e-12


# ---------------------------------------------------------------- Donsker-Varadhan

from tokscope.measures.dv import DVEstimator, dv_estimate, dv_objective, one_hot_pairs  # noqa: E402


def test_dv_objective_weighted_equals_expanded():
    fj, fr = np.array([0.5, -1.0, 2.0]), np.array([0.1, 0.3])
    wj, wr = np.array([1, 2, 3.0]), np.array([4.0, 1.0])
    expanded = dv_objective(np.repeat(fj, wj.astype(int)), np.repeat(fr, wr.astype(int)))
    assert dv_objective(fj, fr, wj, wr) == pytest.approx(expanded, abs=1e-12)


def test_one_hot_layout():
    X = one_hot_pairs([[1, 0]], [[1]], 2)
    assert X.tolist() == [[0, 1, 1, 0, 0, 1]]


@pytest.mark.parametrize("factory", [independent_ensemble, copy_ensemble, seed0_ensemble])
def test_dv_close_to_exact(factory):
    ens = factory()
    exact = directed_information(ens)
    res = dv_estimate(ens, num_samples=20_000, seed=0)
    assert not res.diverged
    assert res.estimate <= exact + 0.05
    assert abs(res.estimate - exact) <= max(0.1 * exact, 0.05)


def test_dv_rejects_small_sample():
    with pytest.raises(ValueError):
        dv_estimate(copy_ensemble(), num_samples=10)


def test_dv_estimator_score_api():
    ens = copy_ensemble()
    from tokscope.measures.dv import sample_joint, sample_reference
    Xj = one_hot_pairs(*sample_joint(ens, 3000, 0), ens.N)
    Xr = one_hot_pairs(*sample_reference(ens, 3000, 1), ens.N)
    est = DVEstimator(train_steps=300, random_state=0).fit(Xj, Xr)
    assert np.isfinite(est.estimate_) and np.isfinite(est.score(Xj, Xr))
