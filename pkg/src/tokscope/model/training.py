"""Cross-entropy and directed-information objectives with analytic gradients.

All objectives reduce to weighted sums ``-sum W[p, v] log Q(v | prefix_p)``
over groups of equal-length prefixes, so a single forward/backward routine
serves cross-entropy, the directed-information term and the reward term.

For the information terms the weights come from the exact identity

    grad E_P[g] = sum_{s,u} P(s,u) g(s,u) grad log P(u|s)

which holds for the directed information with ``g = log P(u|s) - log P(u)``
(the remaining term vanishes because probabilities sum to one) and for the
expected reward with ``g = w``.
"""

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .._validation import NonFiniteLossError, check_tokens
from .._sequences import all_sequences
from .transformer import backward_batch, forward_batch

PARAM_NAMES = ("embedding", "A", "B")


def _zero_grads(params):
    return {"embedding": np.zeros_like(params.embedding), "A": np.zeros_like(params.A),
            "B": np.zeros_like(params.B)}


def weighted_nll(params, groups):
    """Value and gradient of ``-sum W log Q`` over ``groups`` of ``(X, W)`` pairs."""
    loss = 0.0
    grads = _zero_grads(params)
    for X, W in groups:
        cache = forward_batch(params, X)
        nz = W != 0
        loss -= float(np.sum(W[nz] * cache.logp[nz]))
        g = backward_batch(params, cache, W)
        for k in PARAM_NAMES:
            grads[k] += g[k]
    return loss, grads


def cross_entropy_loss(params, prefixes, targets, weights=None):
    """Mean ``-log Q(target | prefix)`` over a batch and its gradient w.r.t. (embedding, A, B).

    Prefixes may have different lengths (each at least one token).
    """
    if len(prefixes) == 0 or len(prefixes) != len(targets):
        raise ValueError("need a non-empty batch of matching prefixes and targets")
    N = params.n_tokens
    w = np.ones(len(prefixes)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    by_len = defaultdict(list)
    for i, pre in enumerate(prefixes):
        by_len[len(pre)].append(i)
    groups = []
    for L in sorted(by_len):
        idx = by_len[L]
        X = check_tokens(np.array([prefixes[i] for i in idx]).reshape(len(idx), L), N, "prefixes")
        tg = check_tokens(np.array([targets[i] for i in idx]), N, "targets")
        W = np.zeros((len(idx), N))
        W[np.arange(len(idx)), tg] = w[idx]
        groups.append((X, W))
    return weighted_nll(params, groups)


def project_tangent(embedding, grad):
    """Remove the radial component of each embedding-row gradient."""
    return grad - np.sum(grad * embedding, axis=1, keepdims=True) * embedding


@dataclass
class ExactProblem:
    """Cached prefix enumeration for exact full-batch objectives at dims (N, n, T)."""

    N: int
    n: int
    T: int
    stop_token: int
    prompt_prior: np.ndarray
    absorb_stop: bool = True

    def __post_init__(self):
        self.prompts = all_sequences(self.N, self.n)
        self.levels = []
        for k in range(self.T - self.n):
            conts = all_sequences(self.N, k)
            X = np.concatenate([np.repeat(self.prompts, len(conts), axis=0),
                                np.tile(conts, (len(self.prompts), 1))], axis=1)
            stopped = (np.any(conts == self.stop_token, axis=1) if (self.absorb_stop and k > 0)
                       else np.zeros(len(conts), dtype=bool))
            self.levels.append((X, stopped))

    @property
    def m(self):
        return self.T - self.n

    def model_conditionals(self, params):
        """Model conditionals per level, ``(Np, N**k, N)``, with absorption applied."""
        out, caches = [], []
        for X, stopped in self.levels:
            cache = forward_batch(params, X)
            cond = np.exp(cache.logp).reshape(len(self.prompts), -1, self.N)
            if stopped.any():
                cond[:, stopped, :] = 0.0
                cond[:, stopped, self.stop_token] = 1.0
            out.append(cond)
            caches.append(cache)
        return out, caches

    def teacher_conditionals(self, teacher):
        out = []
        for X, stopped in self.levels:
            cond = np.asarray(teacher.conditional_batch(X), dtype=float).reshape(len(self.prompts), -1, self.N)
            if stopped.any():
                cond[:, stopped, :] = 0.0
                cond[:, stopped, self.stop_token] = 1.0
            out.append(cond)
        return out

    def prefix_masses(self, conds):
        """Joint mass ``P(s, u_{1:k})`` for k = 0..m."""
        pk = self.prompt_prior[:, None].astype(float)
        out = [pk]
        for cond in conds:
            pk = (pk[:, :, None] * cond).reshape(len(self.prompts), -1)
            out.append(pk)
        return out

    def ce_groups(self, teacher):
        """Weights for the exact expected cross-entropy under teacher-labeled prefixes.

        Absorbed prefixes (after a stop) carry no weight, and the weights are
        normalized by the total live prefix mass, so the loss is the average
        cross-entropy ``H(P_t, Q_t)`` per generated (non-absorbed) position.
        """
        tconds = self.teacher_conditionals(teacher)
        masses = self.prefix_masses(tconds)
        groups, live = [], 0.0
        for k, ((X, stopped), cond) in enumerate(zip(self.levels, tconds)):
            W = masses[k][:, :, None] * cond
            W[:, stopped, :] = 0.0
            live += W.sum()
            groups.append((X, W.reshape(len(X), self.N)))
        return [(X, W / live) for X, W in groups], tconds

    def information_weights(self, conds, leaf_score):
        """Per-level weights ``G`` with ``grad E[g] = sum G grad log Q``.

        ``G`` at node (s, u_{1:k+1}) is the mass-weighted sum of ``leaf_score``
        over all completions of that node.
        """
        P = self.prefix_masses(conds)[-1]
        contrib = np.where(P > 0, P * np.nan_to_num(leaf_score, nan=0.0, posinf=0.0, neginf=0.0), 0.0)
        Np = len(self.prompts)
        groups = []
        for k, (X, stopped) in enumerate(self.levels):
            G = contrib.reshape(Np, self.N ** (k + 1), -1).sum(axis=2).reshape(Np, -1, self.N)
            G[:, stopped, :] = 0.0
            groups.append(G.reshape(len(X), self.N))
        return groups


def di_leaf_score(problem, conds):
    """``log P(u|s) - log P(u)`` for every full path (NaN where P(s,u) = 0)."""
    P = problem.prefix_masses(conds)[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        log_cond = np.log(P) - np.log(problem.prompt_prior)[:, None]
        log_marg = np.log(P.sum(axis=0))[None, :]
        return np.where(P > 0, log_cond - log_marg, np.nan)


def _combine(params, caches, problem, level_weights):
    grads = _zero_grads(params)
    for (X, _), cache, W in zip(problem.levels, caches, level_weights):
        if not np.any(W):
            continue
        g = backward_batch(params, cache, W)
        for k in PARAM_NAMES:
            grads[k] += g[k]
    return grads


def exact_objective(params, problem, teacher_groups=None, lam=1.0, variant="ce", reward_table=None):
    """Loss value, gradients and diagnostics for one training variant.

    * ``ce``: mean per-step cross-entropy against the teacher.
    * ``ce_plus_di``: ``DI/(T-n) + lam * CE`` (``lam = inf`` means CE only).
    * ``di_minus_reward``: ``DI/(T-n) - lam * E[w]``.
    """
    conds, caches = problem.model_conditionals(params)
    info = {}
    grads = _zero_grads(params)
    loss = 0.0
    if variant in ("ce", "ce_plus_di"):
        ce_w = 1.0 if (variant == "ce" or np.isinf(lam)) else lam
        ce_val = 0.0
        for (X, W), cache in zip(teacher_groups, caches):
            nz = W != 0
            ce_val -= float(np.sum(W[nz] * cache.logp[nz]))
        info["ce"] = ce_val
        loss += ce_w * ce_val
        g = _combine(params, caches, problem, [W for _, W in teacher_groups])
        for k in PARAM_NAMES:
            grads[k] += ce_w * g[k]
    if variant in ("ce_plus_di", "di_minus_reward"):
        score = di_leaf_score(problem, conds)
        P = problem.prefix_masses(conds)[-1]
        di = float(np.nansum(np.where(P > 0, P * score, 0.0)))
        info["di"] = di
        di_w = 0.0 if (variant == "ce_plus_di" and np.isinf(lam)) else 1.0 / problem.m
        if di_w:
            loss += di_w * di
            G = problem.information_weights(conds, score)
            g = _combine(params, caches, problem, [-di_w * x for x in G])
            for k in PARAM_NAMES:
                grads[k] += g[k]
    if variant == "di_minus_reward":
        P = problem.prefix_masses(conds)[-1]
        ew = float(np.sum(P * reward_table))
        info["reward"] = ew
        loss -= lam * ew
        G = problem.information_weights(conds, reward_table)
        g = _combine(params, caches, problem, [lam * x for x in G])
        for k in PARAM_NAMES:
            grads[k] += g[k]
    if variant not in ("ce", "ce_plus_di", "di_minus_reward"):
        raise ValueError(f"unknown loss variant {variant!r}")
    return loss, grads, info


def reward_table(problem, reward):
    """Evaluate ``reward(prompt, continuation)`` on every full (absorbed) path."""
    conts = all_sequences(problem.N, problem.m)
    table = np.array([[float(reward(tuple(s), tuple(u))) for u in conts] for s in problem.prompts])
    if not np.all(np.isfinite(table)):
        raise ValueError("reward must be finite on every path")
    return table


@dataclass
class TrainResult:
    params: object
    losses: np.ndarray
    info: list


def gd_step(params, grads, lr):
    gE = project_tangent(params.embedding, grads["embedding"])
    E = params.embedding - lr * gE
    E = E / np.linalg.norm(E, axis=1, keepdims=True)
    return params.replace(embedding=E, A=params.A - lr * grads["A"], B=params.B - lr * grads["B"])


def train(params, teacher, steps, lr, loss="ce", lam=1.0, reward=None, T=None, n=None,
          prompt_prior=None, record_every=1, callback=None):
    """Full-batch gradient descent on an exact objective.

    ``n`` defaults to the teacher's prompt length and ``T`` to ``n + 3``.
    Embedding gradients are projected to the sphere's tangent space and rows
    are renormalized after every step.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not hasattr(teacher, "conditional_batch"):
        raise TypeError("teacher must expose conditional_batch")
    n = teacher.prompt_length if n is None else n
    T = n + 3 if T is None else T
    prior = teacher.prompt_prior if prompt_prior is None else np.asarray(prompt_prior, dtype=float)
    problem = ExactProblem(params.n_tokens, n, T, params.stop_token, prior)
    groups = None
    if loss in ("ce", "ce_plus_di"):
        groups, _ = problem.ce_groups(teacher)
    table = None
    if loss == "di_minus_reward":
        if reward is None:
            raise ValueError("di_minus_reward needs a reward function")
        table = reward_table(problem, reward)
    losses, infos = [], []
    for step in range(steps):
        val, grads, info = exact_objective(params, problem, groups, lam, loss, table)
        if not np.isfinite(val) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NonFiniteLossError(f"non-finite loss {val!r} at step {step} (variant {loss})")
        if step % record_every == 0:
            losses.append(val)
            infos.append(info)
        if callback is not None:
            callback(step, params, val, info)
        params = gd_step(params, grads, lr)
    val, _, info = exact_objective(params, problem, groups, lam, loss, table)
    losses.append(val)
    infos.append(info)
    return TrainResult(params, np.array(losses), infos)
