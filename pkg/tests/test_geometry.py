import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import ortho_group

from tokscope._validation import MarginalMismatchError, OracleScopeError
from tokscope.geometry import (Coupling, GWAligner, SemanticVectorSpace, cosine, gw_cost, gw_cost_bruteforce,
                               gw_distance_entropic, gw_distance_oracle, identity_coupling, load_space,
                               permutation_coupling, random_space, save_space, sinkhorn)


def _space(rows):
    return SemanticVectorSpace(np.array(rows, dtype=float))


def test_cosine_cases():
    S = _space([[1, 0], [0, 1], [-1, 0]])
    assert cosine(S, 0, 0) == 1.0
    assert cosine(S, 0, 1) == 0.0
    assert cosine(S, 0, 2) == -1.0
    with pytest.raises(IndexError):
        cosine(S, 0, 3)


def test_non_unit_rows_rejected():
    with pytest.raises(ValueError):
        _space([[2.0, 0.0]])


def test_identity_and_rotation_cost_zero():
    S = random_space(5, 4, seed=1)
    assert gw_cost(S, S, identity_coupling(S)) == 0.0
    Q = ortho_group.rvs(4, random_state=3)
    assert gw_cost(S, S.rotated(Q), identity_coupling(S)) <= 1e-10


def test_two_point_hand_expansion():
    A = _space([[1, 0], [0, 1]])
    B = _space([[1, 0], [0.6, 0.8]])
    plan = np.full((2, 2), 0.25)
    # sixteen (i, j, k, l) terms with weight 1/16: diagonal/off-diagonal pairings
    # contribute 0, 0.16, 1 and 0.36 four times each
    expected = 4 * (0.0 + 0.16 + 1.0 + 0.36) / 16
    assert gw_cost(A, B, plan) == pytest.approx(expected, abs=1e-12)
    assert gw_cost_bruteforce(A.gram, B.gram, plan) == pytest.approx(expected, abs=1e-12)


@given(st.integers(0, 10_000))
def test_closed_form_matches_quadruple_sum(seed):
    rng = np.random.default_rng(seed)
    A, B = random_space(3, 3, seed), random_space(4, 3, seed + 1)
    plan = sinkhorn(rng.random((3, 4)), A.weights, B.weights, 0.3).plan
    plan = plan * (A.weights / plan.sum(axis=1))[:, None]
    assert gw_cost(A, B, plan, atol=1e-5) == pytest.approx(gw_cost_bruteforce(A.gram, B.gram, plan), abs=1e-10)


def test_marginal_mismatch():
    S = random_space(3, 2, seed=0)
    with pytest.raises(MarginalMismatchError):
        gw_cost(S, S, np.eye(3))


@given(st.integers(0, 10_000))
def test_relabeling_invariance(seed):
    rng = np.random.default_rng(seed)
    A, B = random_space(4, 3, seed), random_space(4, 3, seed + 7)
    plan = sinkhorn(rng.random((4, 4)), A.weights, B.weights, 0.2).plan
    p, q = rng.permutation(4), rng.permutation(4)
    base = gw_cost(A, B, plan, atol=1e-5)
    moved = gw_cost(A.permuted(p), B.permuted(q), plan[np.ix_(p, q)], atol=1e-5)
    assert abs(base - moved) <= 1e-10


def test_oracle_identical_and_shuffled():
    S = random_space(5, 3, seed=2)
    cost, c = gw_distance_oracle(S, S)
    assert cost <= 1e-15 and np.allclose(c.plan, np.eye(5) / 5)
    p = np.array([2, 0, 4, 1, 3])
    cost, c = gw_distance_oracle(S, S.permuted(p))
    assert cost <= 1e-15
    # row i of S is matched with the row of S[p] that holds it
    assert np.array_equal(np.argmax(c.plan, axis=1), np.argsort(p))


def test_oracle_matches_reenumeration():
    import itertools
    A, B = random_space(4, 3, seed=10), random_space(4, 3, seed=11)
    cost, _ = gw_distance_oracle(A, B)
    brute = min(gw_cost_bruteforce(A.gram, B.gram, permutation_coupling(p, A.weights).plan)
                for p in itertools.permutations(range(4)))
    assert cost == pytest.approx(brute, abs=1e-12)


def test_oracle_scope():
    with pytest.raises(OracleScopeError):
        gw_distance_oracle(random_space(7, 2, 0), random_space(7, 2, 1))
    with pytest.raises(OracleScopeError):
        gw_distance_oracle(random_space(3, 2, 0), random_space(4, 2, 1))


def test_entropic_identical_spaces():
    S = random_space(4, 3, seed=4)
    res = gw_distance_entropic(S, S)
    assert res.cost <= 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_entropic_against_oracle(seed):
    A, B = random_space(4, 3, 100 + seed), random_space(4, 3, 200 + seed)
    oracle, _ = gw_distance_oracle(A, B)
    res = gw_distance_entropic(A, B)
    assert res.cost <= oracle + 1e-3
    assert res.coupling.marginal_error(A.weights, B.weights) <= 1e-6
    assert res.cost == pytest.approx(gw_cost(A, B, res.coupling), abs=1e-12)
    assert np.all(np.diff(res.history) <= 1e-9)


def test_sinkhorn_zero_cost_and_large_epsilon():
    mu, nu = np.full(3, 1 / 3), np.full(4, 0.25)
    assert np.allclose(sinkhorn(np.zeros((3, 4)), mu, nu, 0.1).plan, np.outer(mu, nu), atol=1e-12)
    C = np.random.default_rng(0).random((3, 4))
    assert np.max(np.abs(sinkhorn(C, mu, nu, 1e8).plan - np.outer(mu, nu))) <= 1e-6


def test_sinkhorn_two_by_two():
    plan = sinkhorn(np.array([[0.0, 1.0], [1.0, 0.0]]), np.full(2, 0.5), np.full(2, 0.5), 0.01).plan
    assert plan[0, 0] >= 0.49 and plan[1, 1] >= 0.49


def test_sinkhorn_equivariance_and_determinism():
    rng = np.random.default_rng(5)
    C = rng.random((4, 4))
    mu = rng.dirichlet(np.ones(4))
    nu = rng.dirichlet(np.ones(4))
    p = rng.permutation(4)
    base = sinkhorn(C, mu, nu, 0.05).plan
    assert np.allclose(sinkhorn(C[p], mu[p], nu, 0.05).plan, base[p], atol=1e-9)
    assert np.array_equal(base, sinkhorn(C, mu, nu, 0.05).plan)


def test_sinkhorn_marginals_many_instances():
    rng = np.random.default_rng(0)
    tol = 1e-8
    for _ in range(1000):
        M, K = rng.integers(2, 6, size=2)
        mu, nu = rng.dirichlet(np.ones(M)), rng.dirichlet(np.ones(K))
        c = sinkhorn(rng.random((M, K)), mu, nu, 0.1, tol=tol)
        assert c.converged and c.marginal_error(mu, nu) <= tol


def test_sinkhorn_rejects_bad_input():
    mu = np.full(2, 0.5)
    with pytest.raises(ValueError):
        sinkhorn(np.array([[0, np.inf], [0, 0]]), mu, mu, 0.1)
    with pytest.raises(ValueError):
        sinkhorn(np.zeros((2, 2)), mu, mu, 0.0)


def test_space_file_roundtrip_and_normalization(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"vectors": [[3, 4], [0, 2]], "dim": 2, "count": 2}))
    S = load_space(path)
    assert S.normalized
    assert np.allclose(S.vectors, [[0.6, 0.8], [0, 1]])
    save_space(S, tmp_path / "t.json")
    T = load_space(tmp_path / "t.json")
    assert not T.normalized and np.allclose(T.vectors, S.vectors)


def test_space_file_errors(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"vectors": [[1, 0]], "dim": 3}))
    with pytest.raises(ValueError):
        load_space(path)
    path.write_text(json.dumps({"vectors": [[1, 0]], "colour": 1}))
    with pytest.raises(ValueError):
        load_space(path)


def test_gw_aligner_recovers_permutation():
    S = random_space(4, 3, seed=8)
    p = np.array([3, 1, 0, 2])
    al = GWAligner().fit(S.vectors, S.vectors[p])
    assert al.cost_ <= 1e-4
    assert np.allclose(al.transform(S.vectors), S.vectors, atol=1e-2)
    assert isinstance(Coupling(al.coupling_), Coupling)


def test_row_distribution_cost_uniform_is_sorted_difference():
    from tokscope.geometry import row_distribution_cost
    A, B = random_space(4, 3, 30), random_space(4, 3, 31)
    C = row_distribution_cost(A.gram, B.gram, A.weights, B.weights)
    for i in range(4):
        for k in range(4):
            expected = np.mean((np.sort(A.gram[i]) - np.sort(B.gram[k])) ** 2)
            assert C[i, k] == pytest.approx(expected, abs=1e-12)


def test_row_distribution_cost_unequal_weights():
    from tokscope.geometry import _quantile_w2
    # point mass at 0 against {-1 w.p. 1/4, 1 w.p. 3/4}: W2^2 = 1
    assert _quantile_w2(np.array([0.0]), np.array([1.0]), np.array([-1.0, 1.0]),
                        np.array([0.25, 0.75])) == pytest.approx(1.0)
    # {0: .5, 1: .5} against {0: .25, 1: .75}: a quarter of the mass moves by 1
    assert _quantile_w2(np.array([0.0, 1.0]), np.array([0.5, 0.5]), np.array([0.0, 1.0]),
                        np.array([0.25, 0.75])) == pytest.approx(0.25)


@given(st.integers(0, 10_000))
def test_cycle_descent_keeps_marginals_and_never_increases(seed):
    from tokscope.geometry import _cycle_descent, gram_cost
    rng = np.random.default_rng(seed)
    A, B = random_space(4, 3, [seed, 1]), random_space(5, 3, [seed, 2])
    plan = sinkhorn(rng.random((4, 5)), A.weights, B.weights, 0.1).plan
    out = _cycle_descent(A.gram, B.gram, plan)
    assert np.all(out >= 0)
    assert np.allclose(out.sum(axis=1), plan.sum(axis=1), atol=1e-12)
    assert np.allclose(out.sum(axis=0), plan.sum(axis=0), atol=1e-12)
    assert gram_cost(A.gram, B.gram, out) <= gram_cost(A.gram, B.gram, plan) + 1e-15


def test_cycle_descent_escapes_swap():
    from tokscope.geometry import _cycle_descent
    S = random_space(4, 3, seed=40)
    swapped = np.eye(4)[[1, 0, 2, 3]] / 4
    out = _cycle_descent(S.gram, S.gram, swapped)
    assert gw_cost(S, S, out) <= 1e-12
