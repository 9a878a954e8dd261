"""Semantic information capacity: directed information maximized over prompt priors.

Prompt-to-continuation conditionals do not depend on the prior, so the model
is a fixed channel ``P(u | s)`` and, with the whole prompt visible at every
step, the directed information equals ``I(S; U)`` under the prior. The reward
constraint is read as ``E[w] >= W``.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .._validation import OracleScopeError
from ..measures.ensemble import build_ensemble
from ..model.training import ExactProblem, reward_table

GRID_MAX_PROMPTS = 4


@dataclass(frozen=True)
class CapacityProblem:
    channel: np.ndarray          # (num_prompts, num_continuations), rows sum to 1
    prompt_reward: np.ndarray    # E[w | s] per prompt
    prompts: np.ndarray

    @property
    def size(self):
        return self.channel.shape[0]


def capacity_problem(source, n, T, reward=None, prompt_family=None):
    """Tabulate the channel ``P(u|s)`` and the per-prompt mean reward of ``source``.

    ``prompt_family`` restricts the admissible prompts (default: all ``N**n``).
    """
    # a uniform prior only fixes the enumeration; the channel does not depend on it
    ens = build_ensemble(source, n, T, prompt_prior=np.full(_n_tokens(source) ** n, 1.0 / _n_tokens(source) ** n))
    channel = ens.joint() / ens.prompt_prior[:, None]
    if reward is None:
        w = np.zeros(len(ens.prompts))
    else:
        problem = ExactProblem(ens.N, n, T, ens.stop_token, ens.prompt_prior)
        w = np.sum(channel * reward_table(problem, reward), axis=1)
    rows = np.arange(len(ens.prompts))
    if prompt_family is not None:
        rows = np.array([ens.prompt_index(p) for p in prompt_family], dtype=int)
        if len(rows) == 0 or len(set(rows.tolist())) != len(rows):
            raise ValueError("prompt_family must be a non-empty list of distinct prompts")
    return CapacityProblem(channel[rows], w[rows], ens.prompts[rows])


def _n_tokens(source):
    return source.n_tokens


def _kl_rows(channel, prior):
    q = prior @ channel
    out = np.zeros(channel.shape[0])
    for s in range(channel.shape[0]):
        p = channel[s]
        pos = p > 0
        if np.any(q[pos] == 0):
            out[s] = np.inf   # only reachable from prompts the prior excludes
            continue
        out[s] = np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos])))
    return out


def information(channel, prior):
    """``I(S; U)`` in nats for prompt prior ``prior``."""
    prior = np.asarray(prior, dtype=float)
    used = prior > 0
    return float(prior[used] @ _kl_rows(channel, prior)[used])


@dataclass(frozen=True)
class CapacityResult:
    capacity: float
    prior: np.ndarray
    expected_reward: float
    feasible: bool
    method: str
    iterations: int = 0


def _infeasible(problem, W, method):
    return CapacityResult(float("nan"), None, float(np.max(problem.prompt_reward)), False, method)


def _feasible(problem, W):
    return W is None or np.max(problem.prompt_reward) >= W


def _simplex_points(k, steps):
    for cut in itertools.combinations(range(steps + k - 1), k - 1):
        parts = np.diff((-1,) + cut + (steps + k - 1,)) - 1
        yield parts / steps


def grid_capacity(problem, W=None, resolution=0.05, refine=4):
    """Exhaustive search on a simplex grid, then ``refine`` rounds of a ten-times finer local grid."""
    K = problem.size
    if K > GRID_MAX_PROMPTS:
        raise OracleScopeError(f"grid search supports at most {GRID_MAX_PROMPTS} prompts, got {K}")
    if not _feasible(problem, W):
        return _infeasible(problem, W, "grid")
    steps = int(round(1.0 / resolution))

    def ok(p):
        return W is None or p @ problem.prompt_reward >= W - 1e-12

    best_val, best_p = -np.inf, None
    for p in _simplex_points(K, steps):
        if ok(p):
            v = information(problem.channel, p)
            if v > best_val:
                best_val, best_p = v, p
    if best_p is None:
        # the feasible set is thinner than the grid; fall back to the best single prompt
        s = int(np.argmax(problem.prompt_reward))
        best_p = np.eye(K)[s]
        best_val = information(problem.channel, best_p)
    h = resolution
    for _ in range(refine):
        offsets = np.linspace(-h, h, 21)
        for delta in itertools.product(offsets, repeat=K - 1):
            p = best_p.copy()
            p[:-1] += delta
            p[-1] = 1.0 - p[:-1].sum()
            if np.any(p < -1e-15) or not ok(p):
                continue
            p = np.clip(p, 0.0, None)
            v = information(problem.channel, p)
            if v > best_val:
                best_val, best_p = v, p
        h /= 10
    return CapacityResult(best_val, best_p, float(best_p @ problem.prompt_reward), True, "grid")


def _tilted_blahut_arimoto(channel, w, nu, tol, max_iters):
    K = channel.shape[0]
    p = np.full(K, 1.0 / K)
    it = 0
    for it in range(1, max_iters + 1):
        d = _kl_rows(channel, p)
        # I(p) <= max_s d_s for the unconstrained problem; same gap test on the tilted one
        score = d + nu * w
        lower = p @ score
        if np.max(score) - lower < tol:
            break
        logits = np.log(np.maximum(p, 1e-300)) + score
        p = np.exp(logits - logits.max())
        p /= p.sum()
    return p, it


def alternating_capacity(problem, W=None, tol=1e-12, max_iters=100_000):
    """Blahut-Arimoto alternating maximization with a reward multiplier found by bisection."""
    if not _feasible(problem, W):
        return _infeasible(problem, W, "alternating")
    w = problem.prompt_reward
    p, it = _tilted_blahut_arimoto(problem.channel, w, 0.0, tol, max_iters)
    if W is not None and p @ w < W:
        lo, hi = 0.0, 1.0
        while _tilted_blahut_arimoto(problem.channel, w, hi, tol, max_iters)[0] @ w < W:
            hi *= 2.0
            if hi > 1e8:
                break
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            q, it = _tilted_blahut_arimoto(problem.channel, w, mid, tol, max_iters)
            if q @ w < W:
                lo = mid
            else:
                hi, p = mid, q
            if hi - lo < 1e-12 * max(1.0, hi):
                break
        p, it = _tilted_blahut_arimoto(problem.channel, w, hi, tol, max_iters)
    return CapacityResult(information(problem.channel, p), p, float(p @ w), True, "alternating", it)


def semantic_capacity(source, n, T, reward=None, W=None, method="grid", prompt_family=None, **kw):
    """Maximize directed information over prompt priors subject to ``E[w] >= W``.

    Returns a :class:`CapacityResult`; an unreachable ``W`` gives
    ``feasible=False`` and ``capacity = nan``.
    """
    problem = capacity_problem(source, n, T, reward, prompt_family)
    if method == "grid":
        return grid_capacity(problem, W, **kw)
    if method == "alternating":
        return alternating_capacity(problem, W, **kw)
    raise ValueError("method must be 'grid' or 'alternating'")
