"""Exhaustive joint distribution over (prompt, continuation) pairs.

Continuation prefixes of length ``k`` are indexed in base N; the child of
prefix ``a`` extended by token ``v`` has index ``a * N + v``. After a generated
stop token the chain is absorbed (every further token is the stop token with
probability one), so every path has the same horizon ``T``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .._validation import EnsembleSizeError, check_distribution, readonly
from ..language import TeacherProcess, all_sequences, sequence_index, uniform_prompt_prior
from ..model.transformer import TransformerParams, next_token_distribution_batch

MAX_SEQUENCES = 10 ** 7


def _conditional_fn(source):
    if isinstance(source, TeacherProcess):
        return source.conditional_batch, source.n_tokens, source.stop_token
    if isinstance(source, TransformerParams):
        return (lambda X: next_token_distribution_batch(source, X)), source.n_tokens, source.stop_token
    fn = getattr(source, "conditional_batch", None)
    if fn is None:
        raise TypeError("source must be a TeacherProcess, TransformerParams or expose conditional_batch")
    return fn, source.n_tokens, source.stop_token


class CallableSource:
    """Adapter turning a per-prefix function ``f(prefix) -> probs`` into a source."""

    def __init__(self, fn, n_tokens, stop_token=0):
        self.fn = fn
        self.n_tokens = n_tokens
        self.stop_token = stop_token

    def conditional_batch(self, X):
        return np.array([self.fn(list(row)) for row in np.asarray(X)], dtype=float).reshape(len(X), -1)


@dataclass(frozen=True, eq=False)
class SequenceEnsemble:
    n: int
    T: int
    N: int
    stop_token: int
    prompts: np.ndarray
    prompt_prior: np.ndarray
    conditionals: tuple
    absorb_stop: bool = True

    @property
    def m(self):
        """Continuation length ``T - n``."""
        return self.T - self.n

    @cached_property
    def log_joint_levels(self):
        """``log P(s, u_{1:k})`` for k = 0..m, each of shape ``(Np, N**k)``."""
        with np.errstate(divide="ignore"):
            lj = np.log(self.prompt_prior)[:, None]
            levels = [lj]
            for cond in self.conditionals:
                lj = (lj[:, :, None] + np.log(cond)).reshape(lj.shape[0], -1)
                levels.append(lj)
        return tuple(readonly(x) for x in levels)

    @property
    def log_joint(self):
        return self.log_joint_levels[-1]

    def joint(self, k=None):
        k = self.m if k is None else k
        return np.exp(self.log_joint_levels[k])

    @cached_property
    def marginal_conditionals(self):
        """``P(u_{k+1} | u_{1:k})`` with the prompt marginalized, shape ``(N**k, N)`` per level.

        Prefixes of zero marginal mass get a uniform row (never used in expectations).
        """
        out = []
        for k, cond in enumerate(self.conditionals):
            pk = self.joint(k)
            mass = pk.sum(axis=0)
            nxt = np.einsum("sa,sav->av", pk, cond)
            qbar = np.full_like(nxt, 1.0 / self.N)
            pos = mass > 0
            qbar[pos] = nxt[pos] / mass[pos, None]
            out.append(readonly(qbar))
        return tuple(out)

    def continuation_tokens(self, k):
        return all_sequences(self.N, k)

    def prompt_index(self, prompt):
        if len(prompt) != self.n:
            raise ValueError(f"prompt must have length {self.n}")
        return sequence_index(prompt, self.N)

    def total_mass(self):
        return float(np.exp(self.log_joint).sum())


def build_ensemble(source, n, T, prompt_prior=None, absorb_stop=True, max_sequences=MAX_SEQUENCES):
    """Enumerate every (prompt, continuation) pair of ``source`` exactly.

    ``source`` is a :class:`TeacherProcess`, :class:`TransformerParams` or any
    object with ``conditional_batch``, ``n_tokens`` and ``stop_token``.
    The prompt prior defaults to the teacher's own (when its prompt length is
    ``n``) and otherwise to uniform.
    """
    cond_fn, N, stop = _conditional_fn(source)
    if not 1 <= n < T:
        raise ValueError("need 1 <= n < T")
    if N ** T > max_sequences:
        raise EnsembleSizeError(f"N**T = {N ** T} exceeds the enumeration limit {max_sequences}")
    if prompt_prior is None:
        if isinstance(source, TeacherProcess) and source.prompt_length == n:
            prompt_prior = source.prompt_prior
        else:
            prompt_prior = uniform_prompt_prior(N, n)
    prior = check_distribution(np.asarray(prompt_prior, dtype=float).ravel(), "prompt_prior", atol=1e-10)
    if prior.size != N ** n:
        raise ValueError("prompt_prior must have N**n entries")
    prompts = all_sequences(N, n)
    conds = []
    for k in range(T - n):
        conts = all_sequences(N, k)
        X = np.concatenate([np.repeat(prompts, len(conts), axis=0),
                            np.tile(conts, (len(prompts), 1))], axis=1)
        cond = np.asarray(cond_fn(X), dtype=float).reshape(len(prompts), len(conts), N)
        if absorb_stop and k > 0:
            stopped = np.any(conts == stop, axis=1)
            cond[:, stopped, :] = 0.0
            cond[:, stopped, stop] = 1.0
        check_distribution(cond, "model conditionals", atol=1e-10)
        conds.append(readonly(cond))
    return SequenceEnsemble(n, T, N, stop, prompts, readonly(prior), tuple(conds), absorb_stop)


def ensemble_from_conditional(fn, n_tokens, n, T, stop_token=0, prompt_prior=None, absorb_stop=True):
    """Build an ensemble from a plain per-prefix function ``fn(prefix) -> probs``."""
    return build_ensemble(CallableSource(fn, n_tokens, stop_token), n, T,
                          prompt_prior=prompt_prior, absorb_stop=absorb_stop)
