"""Canonical desk-scale instances shared by tests, the CLI and the acceptance suite."""

import numpy as np

from .language import transformer_teacher, uniform_teacher
from .measures.ensemble import CallableSource, build_ensemble
from .model.transformer import TransformerParams

SEED0_N, SEED0_D, SEED0_SCALE = 4, 3, 2.0


def seed0_params(n_tokens=SEED0_N, dim=SEED0_D, scale=SEED0_SCALE, xi=1.0, stop_token=0):
    return TransformerParams.random(n_tokens, dim, seed=0, scale=scale, xi=xi, stop_token=stop_token)


def seed0_teacher(prompt_length=2, **kw):
    return transformer_teacher(seed0_params(**kw), prompt_length=prompt_length)


def seed0_ensemble(n=2, T=5):
    """The seed-0 transformer instance: N=4, d=3, uniform prompts."""
    return build_ensemble(seed0_params(), n, T)


class CopySource(CallableSource):
    """Deterministic model: the first generated token repeats the last prompt token, then stop."""

    def __init__(self, prompt_length, n_tokens=2, stop_token=0):
        super().__init__(None, n_tokens, stop_token)
        self.prompt_length = prompt_length

    def conditional_batch(self, X):
        X = np.asarray(X)
        out = np.zeros((X.shape[0], self.n_tokens))
        if X.shape[1] == self.prompt_length:
            out[np.arange(X.shape[0]), X[:, -1]] = 1.0
        else:
            out[:, self.stop_token] = 1.0
        return out


def copy_ensemble(n=2, T=4, n_tokens=2, stop_token=0):
    return build_ensemble(CopySource(n, n_tokens, stop_token), n, T)


def independent_ensemble(n=2, T=4, n_tokens=2, stop_token=0):
    return build_ensemble(uniform_teacher(n_tokens, stop_token, prompt_length=n), n, T)
