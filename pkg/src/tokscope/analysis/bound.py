"""Rademacher-style generalization bound for next-token cross-entropy."""

import math
from dataclasses import dataclass

import numpy as np

from ..model.training import ExactProblem
from ..model.transformer import forward_batch


@dataclass(frozen=True)
class BoundResult:
    empirical_loss: float
    logit_term: float
    deviation_term: float
    true_cross_entropy: float

    @property
    def bound(self):
        return self.empirical_loss + self.logit_term + self.deviation_term

    @property
    def margin(self):
        return self.bound - self.true_cross_entropy


def _step_tables(params, teacher, n, step, prompt_prior):
    """Teacher mass over (prefix, target) pairs and the model's log-probs and logits there.

    ``step`` counts generated positions from 0; prefixes have length ``n + step``.
    Conditionals are the raw ones (no stop absorption) on both sides.
    """
    prior = teacher.prompt_prior if prompt_prior is None else np.asarray(prompt_prior, dtype=float)
    problem = ExactProblem(params.n_tokens, n, n + step + 1, params.stop_token, prior, absorb_stop=False)
    tconds = problem.teacher_conditionals(teacher)
    mass = problem.prefix_masses(tconds)[step]
    X = problem.levels[step][0]
    P = (mass[:, :, None] * tconds[step]).reshape(len(X), -1)
    cache = forward_batch(params, X)
    return P, cache.logp, cache.z


def generalization_bound(params, teacher, M, delta, seed=0, n=None, step=0, prompt_prior=None):
    """Empirical loss on ``M`` teacher samples, the bound, and the exact cross-entropy.

    bound = L_hat + (2 sqrt 2 / M) sum_m |z_m| + 3 sqrt(log(2/delta) / (2M)),
    where ``z_m`` is the model logit of the sample's ground-truth token.
    """
    if int(M) != M or M < 2:
        raise ValueError("M must be an integer >= 2")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    n = teacher.prompt_length if n is None else n
    P, logp, z = _step_tables(params, teacher, n, step, prompt_prior)
    truth = float(-np.sum(P[P > 0] * logp[P > 0]))
    rng = np.random.default_rng(seed)
    flat = P.ravel() / P.sum()
    idx = rng.choice(flat.size, size=int(M), p=flat)
    rows, tokens = np.divmod(idx, P.shape[1])
    emp = float(-np.mean(logp[rows, tokens]))
    logit = 2.0 * math.sqrt(2.0) / M * float(np.sum(np.abs(z[rows, tokens])))
    dev = 3.0 * math.sqrt(math.log(2.0 / delta) / (2.0 * M))
    return BoundResult(emp, logit, dev, truth)


def bound_resamples(params, teacher, M, delta, num_resamples, seed=0, **kw):
    """Run the bound over ``num_resamples`` independent sample sets; seeds are ``seed + r``."""
    return [generalization_bound(params, teacher, M, delta, seed + r, **kw) for r in range(num_resamples)]
