"""Exhaustive search for the best finite-state semantic encoder.

An encoder maps each token through a codebook ``g: Ω -> Z`` and folds the codes
into a state ``S_t = δ(S_{t-1}, Z_t)`` with ``S_0 = 0``. Its score on a teacher
is the backward directed information ``sum_t I(X_{t+1:n}; S_t | S_{1:t-1})``.
The contrastive (CPC) quantity ``sum_t sum_k max_f I(X_{t+k}; S_t)`` is
computed over the same family.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .._sequences import all_sequences
from ..language import sequence_distribution
from ..measures.directed import backward_directed_information_joint, conditional_mutual_information

MAX_FAMILY = 100_000


@dataclass(frozen=True)
class Encoder:
    codebook: tuple     # token -> code
    transition: tuple   # transition[s][z] -> next state

    def states(self, X):
        """State sequences ``S_{1:n}`` for a batch of token sequences ``(P, n)``."""
        X = np.asarray(X)
        Z = np.asarray(self.codebook)[X]
        delta = np.asarray(self.transition)
        S = np.zeros_like(X)
        s = np.zeros(X.shape[0], dtype=np.int64)
        for t in range(X.shape[1]):
            s = delta[s, Z[:, t]]
            S[:, t] = s
        return S


@dataclass(frozen=True)
class EncoderFamily:
    """All (codebook, transition) pairs over ``n_tokens`` tokens, ``n_codes`` codes, ``n_states`` states.

    ``members`` may instead list explicit encoders.
    """

    n_tokens: int
    n_codes: int
    n_states: int
    members: tuple = None

    def __post_init__(self):
        if self.size > MAX_FAMILY:
            raise ValueError(f"family has {self.size} members, above the limit {MAX_FAMILY}")

    @property
    def size(self):
        if self.members is not None:
            return len(self.members)
        return self.n_codes ** self.n_tokens * self.n_states ** (self.n_states * self.n_codes)

    def __iter__(self):
        if self.members is not None:
            yield from self.members
            return
        K, C = self.n_states, self.n_codes
        for code in itertools.product(range(C), repeat=self.n_tokens):
            for flat in itertools.product(range(K), repeat=K * C):
                yield Encoder(code, tuple(tuple(flat[s * C:(s + 1) * C]) for s in range(K)))

    @staticmethod
    def identity(n_tokens):
        """``S_t = X_t``."""
        return Encoder(tuple(range(n_tokens)), tuple(tuple(range(n_tokens)) for _ in range(n_tokens)))

    @staticmethod
    def constant(n_tokens):
        return Encoder((0,) * n_tokens, ((0,),))


def _entropy(probs, keys):
    if keys.shape[1] == 0:
        return 0.0
    base = int(keys.max()) + 1
    code = keys @ (base ** np.arange(keys.shape[1], dtype=np.int64))
    _, inv = np.unique(code, return_inverse=True)
    m = np.bincount(inv, weights=probs)
    m = m[m > 0]
    return float(-(m * np.log(m)).sum())


def _cmi(probs, A, B, C):
    return (_entropy(probs, np.hstack([A, C])) + _entropy(probs, np.hstack([B, C]))
            - _entropy(probs, np.hstack([A, B, C])) - _entropy(probs, C))


def _sequences(teacher, n):
    probs = sequence_distribution(teacher, n)
    X = all_sequences(teacher.n_tokens, n)
    keep = probs > 0
    return X[keep], probs[keep]


def backward_di_score(encoder, X, probs):
    """``sum_t I(X_{t+1:n}; S_t | S_{1:t-1})`` from the path list."""
    S = encoder.states(X)
    n = X.shape[1]
    return sum(_cmi(probs, X[:, t + 1:], S[:, t:t + 1], S[:, :t]) for t in range(n - 1))


def cpc_terms(encoder, X, probs):
    """``I(X_{t+k}; S_t)`` for every ``t < t + k <= n`` as an ``(n, n)`` array (zeros elsewhere)."""
    S = encoder.states(X)
    n = X.shape[1]
    out = np.zeros((n, n))
    empty = np.zeros((len(X), 0), dtype=np.int64)
    for t in range(n):
        for u in range(t + 1, n):
            out[t, u] = _cmi(probs, X[:, u:u + 1], S[:, t:t + 1], empty)
    return out


@dataclass(frozen=True)
class EmbeddingResult:
    best: Encoder
    objective: float
    cpc_upper_bound: float
    scores: np.ndarray          # objective of every member, family order
    bound_holds: bool

    @property
    def max_violation(self):
        return float(np.max(self.scores) - self.cpc_upper_bound)


def embedding_objective(family, teacher, n):
    """Best encoder in ``family`` for length-``n`` teacher sequences, with the CPC bound.

    Ties keep the first member in family order.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    X, probs = _sequences(teacher, n)
    scores, cpc = [], np.zeros((n, n))
    best, best_val = None, -np.inf
    for enc in family:
        v = backward_di_score(enc, X, probs)
        scores.append(v)
        cpc = np.maximum(cpc, cpc_terms(enc, X, probs))
        if v > best_val + 1e-13:
            best, best_val = enc, v
    scores = np.array(scores)
    bound = float(cpc.sum())
    return EmbeddingResult(best, float(best_val), bound, scores, bool(np.all(scores <= bound + 1e-10)))


def encoder_joint(encoder, teacher, n):
    """Dense joint tensor over ``(X_1..X_n, S_1..S_n)``."""
    probs = sequence_distribution(teacher, n)
    X = all_sequences(teacher.n_tokens, n)
    K = max(int(encoder.states(X).max()) + 1, len(encoder.transition))
    P = np.zeros((teacher.n_tokens,) * n + (K,) * n)
    S = encoder.states(X)
    for x, s, p in zip(X, S, probs):
        P[tuple(x) + tuple(s)] += p
    return P


def embedding_bruteforce(family, teacher, n):
    """Independent rerun: dense joints and the generic conditional-MI routine, scored member by member."""
    best, best_val, scores = None, -np.inf, []
    for enc in family:
        P = encoder_joint(enc, teacher, n)
        v = backward_directed_information_joint(P, n, n)
        scores.append(v)
        if v > best_val + 1e-13:
            best, best_val = enc, v
    return best, float(best_val), np.array(scores)


def cpc_term_joint(P, n, t, u):
    """``I(X_u; S_t)`` (0-based positions) from a dense joint."""
    return conditional_mutual_information(P, (u,), (n + t,))
