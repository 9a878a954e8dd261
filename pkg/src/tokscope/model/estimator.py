"""scikit-learn style wrapper around the attention model."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import NonFiniteLossError
from .training import cross_entropy_loss, gd_step
from .transformer import TransformerParams, next_token_distribution


def _pairs(X, min_prefix):
    prefixes, targets = [], []
    for seq in X:
        seq = [int(t) for t in seq]
        for t in range(min_prefix, len(seq)):
            prefixes.append(seq[:t])
            targets.append(seq[t])
    if not prefixes:
        raise ValueError(f"no sequence is longer than {min_prefix} tokens")
    return prefixes, targets


class TransformerLM(BaseEstimator):
    """Next-token attention model fit by full-batch gradient descent on sample sequences.

    Parameters
    ----------
    n_tokens : int or None
        Alphabet size; inferred from the data when None.
    dim : int, default=3
    steps : int, default=500
    lr : float, default=0.5
    min_prefix : int, default=1
        Targets start at this position, so prompts of this length are never predicted.
    xi : float, default=1.0
    stop_token : int, default=0
    init_scale : float, default=0.5
    random_state : int, default=0
    """

    def __init__(self, n_tokens=None, dim=3, steps=500, lr=0.5, min_prefix=1, xi=1.0,
                 stop_token=0, init_scale=0.5, random_state=0):
        self.n_tokens = n_tokens
        self.dim = dim
        self.steps = steps
        self.lr = lr
        self.min_prefix = min_prefix
        self.xi = xi
        self.stop_token = stop_token
        self.init_scale = init_scale
        self.random_state = random_state

    def fit(self, X, y=None):
        prefixes, targets = _pairs(X, self.min_prefix)
        N = self.n_tokens or max(max(max(p) for p in prefixes), max(targets)) + 1
        params = TransformerParams.random(N, self.dim, seed=self.random_state, scale=self.init_scale,
                                          xi=self.xi, stop_token=self.stop_token)
        trace = []
        for step in range(self.steps):
            loss, grads = cross_entropy_loss(params, prefixes, targets)
            if not np.isfinite(loss):
                raise NonFiniteLossError(f"non-finite loss at step {step}")
            trace.append(loss)
            params = gd_step(params, grads, self.lr)
        trace.append(cross_entropy_loss(params, prefixes, targets)[0])
        self.params_ = params
        self.loss_trace_ = np.array(trace)
        self.n_tokens_ = N
        return self

    def predict_proba(self, prefixes):
        check_is_fitted(self, "params_")
        return np.array([next_token_distribution(self.params_, p) for p in prefixes])

    def predict(self, prefixes):
        # argmax keeps the lowest token id on ties
        return np.argmax(self.predict_proba(prefixes), axis=1)

    def score(self, X, y=None):
        """Mean next-token log-likelihood of the sequences in ``X``."""
        check_is_fitted(self, "params_")
        prefixes, targets = _pairs(X, self.min_prefix)
        return -cross_entropy_loss(self.params_, prefixes, targets)[0]
