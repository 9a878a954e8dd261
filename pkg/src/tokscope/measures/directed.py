"""Directed information, backward directed information and information densities.

Everything is computed by exact enumeration in nats, with 0 log 0 := 0.
"""

import numpy as np

from .._validation import ZeroProbabilityPathError, check_tokens
from ..language import sequence_index


def _xlogy_ratio(p, q):
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * (np.log(p[pos]) - np.log(q[pos]))
    return out


def directed_information_terms(ens):
    """Per-step terms ``I(S; U_t | U_{n+1:t-1})`` for t = n+1..T."""
    terms = []
    for k, cond in enumerate(ens.conditionals):
        pk = ens.joint(k)
        qbar = ens.marginal_conditionals[k]
        joint_next = pk[:, :, None] * cond
        pos = joint_next > 0
        log_ratio = np.log(cond[pos]) - np.log(np.broadcast_to(qbar, cond.shape)[pos])
        terms.append(float(np.sum(joint_next[pos] * log_ratio)))
    return np.array(terms)


def directed_information(ens):
    """``I(S_{1:n} -> U_{n+1:T})`` in nats."""
    return float(directed_information_terms(ens).sum())


def mutual_information(ens):
    """``I(S_{1:n}; U_{n+1:T})`` from the full joint table."""
    P = ens.joint()
    ps = P.sum(axis=1, keepdims=True)
    pu = P.sum(axis=0, keepdims=True)
    return float(_xlogy_ratio(P, ps * pu).sum())


def full_joint_tensor(ens):
    """Joint over all T positions as an array of shape ``(N,) * T``."""
    return ens.joint().reshape((ens.N,) * ens.T)


def conditional_mutual_information(P, a_axes, b_axes, c_axes=()):
    """``I(A; B | C)`` of a joint probability tensor, via marginal entropies."""
    a_axes, b_axes, c_axes = tuple(a_axes), tuple(b_axes), tuple(c_axes)
    if not a_axes or not b_axes:
        return 0.0
    all_axes = set(range(P.ndim))

    def H(keep):
        drop = tuple(sorted(all_axes - set(keep)))
        m = P.sum(axis=drop) if drop else P
        m = m[m > 0]
        return float(-(m * np.log(m)).sum())

    return H(a_axes + c_axes) + H(b_axes + c_axes) - H(a_axes + b_axes + c_axes) - H(c_axes)


def backward_directed_information_joint(P, n, m=None):
    """``sum_t I(X_{t+1:n}; Y_t | Y_{1:t-1})`` for a joint tensor over (X_1..X_n, Y_1..Y_m)."""
    m = P.ndim - n if m is None else m
    total = 0.0
    for t in range(1, m + 1):
        future_x = tuple(range(t, n))          # X_{t+1:n}
        y_t = (n + t - 1,)
        y_past = tuple(range(n, n + t - 1))
        total += conditional_mutual_information(P, future_x, y_t, y_past)
    return total


def backward_directed_information(ens):
    """Backward directed information from the prompt (read backwards) to the continuation."""
    return backward_directed_information_joint(full_joint_tensor(ens), ens.n, ens.m)


def _path_indices(ens, prompt, continuation):
    prompt = check_tokens(list(prompt), ens.N, "prompt")
    cont = check_tokens(list(continuation), ens.N, "continuation")
    if len(cont) > ens.m:
        raise ValueError("continuation longer than the ensemble horizon")
    s = ens.prompt_index(prompt)
    prefixes = [sequence_index(cont[:k], ens.N) for k in range(len(cont))]
    return s, cont, prefixes


def step_densities(ens, prompt, continuation):
    """Per-step densities ``log P(u_t | u_<t, s) / P(u_t | u_<t)`` along one path."""
    s, cont, prefixes = _path_indices(ens, prompt, continuation)
    if ens.prompt_prior[s] <= 0:
        raise ZeroProbabilityPathError("prompt has zero prior mass")
    out = []
    for k, (a, v) in enumerate(zip(prefixes, cont)):
        q = ens.conditionals[k][s, a, v]
        qbar = ens.marginal_conditionals[k][a, v]
        if q <= 0:
            raise ZeroProbabilityPathError(f"token {v} has zero probability at step {k + 1}")
        out.append(np.log(q) - np.log(qbar))
    return np.array(out)


def information_density(ens, prompt, continuation):
    """Directed information density along the path (sum of step densities)."""
    return float(step_densities(ens, prompt, continuation).sum())


def full_path_densities(ens):
    """Density ``log P(u|s) - log P(u)`` for every full path, shape ``(Np, N**m)``.

    Zero-probability paths hold NaN.
    """
    lj = ens.log_joint
    with np.errstate(divide="ignore", invalid="ignore"):
        log_pu = np.log(np.exp(lj).sum(axis=0))[None, :]
        out = lj - np.log(ens.prompt_prior)[:, None] - log_pu
    out[~np.isfinite(lj)] = np.nan
    return out


def expected_information_density(ens):
    P = ens.joint()
    dens = full_path_densities(ens)
    pos = P > 0
    return float((P[pos] * dens[pos]).sum())
