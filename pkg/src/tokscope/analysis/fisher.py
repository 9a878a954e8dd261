"""Fisher information as the curvature of cross-entropy at the true parameters.

``F_ij = d^2/dθ'_i dθ'_j H(P_θ, P_θ')`` at ``θ' = θ``, taken by central second
differences. For a correctly specified model this equals the expected outer
product of the score, which serves as the independent check.
"""

import itertools
from dataclasses import dataclass, replace
from types import SimpleNamespace

import numpy as np

from .._sequences import all_sequences
from ..model.transformer import backward_batch, forward_batch

MAX_SUBSET = 50
DEFAULT_STEP = 1e-3


@dataclass(frozen=True)
class FisherResult:
    matrix: np.ndarray        # symmetrized
    asymmetry: float          # max |F - F^T| before symmetrization
    eigenvalues: np.ndarray

    @property
    def min_eigenvalue(self):
        return float(self.eigenvalues.min())

    @property
    def psd(self):
        return self.min_eigenvalue >= -1e-6


def fisher_from_cross_entropy(ce, theta, h=DEFAULT_STEP):
    """Second-difference Hessian of ``ce`` at ``theta`` (1-D array of parameters)."""
    theta = np.asarray(theta, dtype=float)
    k = theta.size
    if k > MAX_SUBSET:
        raise ValueError(f"at most {MAX_SUBSET} parameters, got {k}")
    F = np.zeros((k, k))
    f0 = ce(theta)
    basis = np.eye(k) * h
    for i in range(k):
        F[i, i] = (ce(theta + basis[i]) - 2 * f0 + ce(theta - basis[i])) / h ** 2
    for i, j in itertools.permutations(range(k), 2):
        ei, ej = basis[i], basis[j]
        F[i, j] = (ce(theta + ei + ej) - ce(theta + ei - ej)
                   - ce(theta - ei + ej) + ce(theta - ei - ej)) / (4 * h ** 2)
    asym = float(np.max(np.abs(F - F.T))) if k else 0.0
    S = 0.5 * (F + F.T)
    return FisherResult(S, asym, np.linalg.eigvalsh(S))


def bernoulli_cross_entropy(theta0):
    """Cross-entropy of a Bernoulli(sigmoid(θ)) head against the one at ``theta0``."""
    p = 1.0 / (1.0 + np.exp(-float(np.ravel(theta0)[0])))

    def ce(theta):
        x = float(np.ravel(theta)[0])
        return p * np.logaddexp(0.0, -x) + (1 - p) * np.logaddexp(0.0, x)
    return ce


@dataclass(frozen=True)
class ContextDistribution:
    """Finite distribution over token prefixes."""

    prefixes: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.prefixes) != w.size or w.size == 0 or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("weights must be a distribution over the prefixes")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform_prompts(cls, n_tokens, length):
        P = all_sequences(n_tokens, length)
        return cls(tuple(tuple(int(t) for t in p) for p in P), np.full(len(P), 1.0 / len(P)))

    def groups(self):
        """``(X, w)`` per prefix length."""
        out = {}
        for pre, w in zip(self.prefixes, self.weights):
            out.setdefault(len(pre), ([], []))
            out[len(pre)][0].append(pre)
            out[len(pre)][1].append(w)
        return [(np.array(X, dtype=np.int64), np.array(w)) for _, (X, w) in sorted(out.items())]


def parameter_subset(params, name, count=None):
    """The first ``count`` entries (row-major) of parameter ``name`` as ``(name, index)`` pairs."""
    arr = getattr(params, name)
    idx = list(np.ndindex(arr.shape))
    return [(name, i) for i in idx[:count]]


def _flatten(params, subset):
    return np.array([getattr(params, name)[i] for name, i in subset])


def _perturbed(params, subset, theta):
    # plain namespace: embedding rows may leave the sphere under perturbation
    arrs = {k: np.array(getattr(params, k), dtype=float) for k in ("embedding", "A", "B")}
    for (name, i), x in zip(subset, theta):
        arrs[name][i] = x
    return SimpleNamespace(xi=params.xi, **arrs)


def transformer_cross_entropy(params, contexts, subset):
    """``θ -> E_context H(P_params(.|c), P_θ(.|c))`` over the parameters in ``subset``."""
    groups = contexts.groups()
    targets = [np.exp(forward_batch(params, X).logp) for X, _ in groups]

    def ce(theta):
        p2 = _perturbed(params, subset, theta)
        total = 0.0
        for (X, w), P in zip(groups, targets):
            total -= float(np.sum(w[:, None] * P * forward_batch(p2, X).logp))
        return total
    return ce


def fisher_matrix(params, contexts, subset, h=DEFAULT_STEP):
    """Fisher matrix of the attention model over ``subset`` at ``params``."""
    if not subset:
        raise ValueError("subset must be non-empty")
    if len(set(subset)) != len(subset):
        raise ValueError("subset entries must be distinct")
    return fisher_from_cross_entropy(transformer_cross_entropy(params, contexts, subset),
                                     _flatten(params, subset), h)


def _scores(params, X, subset):
    """``d log p(v | X_p) / dθ`` for every prefix p and token v: shape ``(P, N, k)``."""
    cache = forward_batch(params, X)
    P, N = cache.logp.shape
    out = np.zeros((P, N, len(subset)))
    for v in range(N):
        for p in range(P):
            W = np.zeros((P, N))
            W[p, v] = -1.0      # backward returns d(-sum W log p), so this is +grad log p
            g = backward_batch(params, _single(cache, p), W[p:p + 1])
            out[p, v] = [g[name][i] for name, i in subset]
    return out, np.exp(cache.logp)


def _single(cache, p):
    sl = slice(p, p + 1)
    return replace(cache, X=cache.X[sl], U=cache.U[sl], q=cache.q[sl], pi=cache.pi[sl], c=cache.c[sl],
                   h=cache.h[sl], z=cache.z[sl], logp=cache.logp[sl])


def score_outer_product(params, contexts, subset, num_samples=None, seed=0):
    """``E[∇log p ∇log p^T]`` with analytic scores.

    Exact expectation when ``num_samples`` is None, otherwise a Monte-Carlo
    average over sampled (context, token) pairs.
    """
    k = len(subset)
    F = np.zeros((k, k))
    rng = np.random.default_rng(seed)
    for X, w in contexts.groups():
        S, P = _scores(params, X, subset)
        if num_samples is None:
            F += np.einsum("p,pv,pvi,pvj->ij", w, P, S, S)
        else:
            mass = (w[:, None] * P).ravel()
            share = int(round(num_samples * w.sum()))
            idx = rng.choice(mass.size, size=share, p=mass / mass.sum())
            G = S.reshape(-1, k)[idx]
            F += w.sum() * G.T @ G / max(share, 1)
    return F
