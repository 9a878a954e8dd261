"""Latent-position reading of the attention step.

The next token ``v`` at position ``t`` is generated by first drawing a history
position ``J`` uniformly from ``1..t-1`` and then ``v ~ softmax(E A u_J / xi)``.
The attention weights act as the variational posterior over ``J``, so

    log P(v) = ELBO(q) + KL(q || P(J | v)).
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, logsumexp

from .._validation import check_tokens
from ..model.transformer import attention_weights


def _log_emissions(params, U):
    # row j: log P(v | J=j) over the alphabet
    return log_softmax(U @ params.A.T @ params.embedding.T / params.xi, axis=1)


def _history(params, history):
    tokens = check_tokens(history, params.n_tokens, "history")
    if tokens.ndim != 1 or tokens.size == 0:
        raise ValueError("history must be a non-empty token sequence")
    return params.embedding[tokens]


def _terms(log_prior, log_em, q):
    """ELBO and log marginal for each candidate token (vectors over the alphabet)."""
    log_joint = log_prior[:, None] + log_em            # (L, N)
    log_marg = logsumexp(log_joint, axis=0)
    q = np.asarray(q, dtype=float)
    pos = q > 0
    ent = -np.sum(q[pos] * np.log(q[pos]))
    elbo = q[pos] @ log_joint[pos] + ent
    return elbo, log_marg


def position_posterior(params, history, target):
    """Exact ``P(J = j | v = target)`` by normalizing prior times emission."""
    U = _history(params, history)
    log_em = _log_emissions(params, U)[:, int(target)]
    w = log_em - np.log(len(U))
    return np.exp(w - logsumexp(w))


@dataclass(frozen=True)
class ELBOResult:
    elbo: float
    log_likelihood: float
    gap: float
    per_example: np.ndarray   # (B, 3): elbo, log-likelihood, gap


def elbo_training(params, batch, q=None):
    """Summed ELBO, log-likelihood and their gap over a labeled batch.

    ``batch`` is a sequence of ``(history, target)`` pairs. ``q`` selects the
    variational distribution: ``None`` uses the attention weights,
    ``"posterior"`` the exact position posterior, and a callable
    ``q(history, target)`` anything else.
    """
    rows = []
    for history, target in batch:
        U = _history(params, history)
        L = len(U)
        if q is None:
            qj = attention_weights(params, U)
        elif isinstance(q, str) and q == "posterior":
            qj = position_posterior(params, history, target)
        else:
            qj = np.asarray(q(history, target), dtype=float)
        if qj.shape != (L,) or np.any(qj < 0) or abs(qj.sum() - 1) > 1e-9:
            raise ValueError("q must be a distribution over history positions")
        elbo, log_marg = _terms(np.full(L, -np.log(L)), _log_emissions(params, U), qj)
        v = int(target)
        rows.append((elbo[v], log_marg[v], log_marg[v] - elbo[v]))
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    return ELBOResult(float(arr[:, 0].sum()), float(arr[:, 1].sum()), float(arr[:, 2].sum()), arr)


@dataclass(frozen=True)
class InferenceTable:
    elbo: np.ndarray           # per candidate token
    log_marginal: np.ndarray   # exact log P(v) under the latent-position model
    argmax_agree: bool


def elbo_inference(params, prefix):
    """ELBO (attention weights as q) and exact log marginal for every candidate next token."""
    U = _history(params, prefix)
    L = len(U)
    elbo, log_marg = _terms(np.full(L, -np.log(L)), _log_emissions(params, U),
                            attention_weights(params, U))
    return InferenceTable(elbo, log_marg, bool(np.argmax(elbo) == np.argmax(log_marg)))


def log_marginal_direct(params, prefix, target):
    """``log sum_j P(j) P(target | j)`` by an explicit loop."""
    U = _history(params, prefix)
    total = 0.0
    for j in range(len(U)):
        z = params.embedding @ (params.A @ U[j]) / params.xi
        p = np.exp(z - z.max())
        total += p[int(target)] / p.sum() / len(U)
    return float(np.log(total))
