"""Semantic vector spaces on the unit sphere and Gromov-Wasserstein comparison.

The discrepancy between two weighted vector sets under a coupling ``pi`` is

    sum_{i,j,k,l} (x_i . x_j - y_k . y_l)^2 pi_ik pi_jl

i.e. the square-loss GW objective with raw inner products as the similarity
kernel. Two solvers are provided: an exhaustive search over permutation
couplings for small equal-size uniform instances, and an entropic solver
that alternates a linearized transport problem (solved by log-domain
Sinkhorn) with an exact line search, so the objective never increases.
A final descent along two-by-two cycles of the plan catches the swaps that
a linearized step cannot see.
"""

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import MarginalMismatchError, OracleScopeError, check_distribution, normalize_rows, readonly

ORACLE_MAX_POINTS = 6
CYCLE_MAX_POINTS = 30   # the cycle descent holds all M^2 K^2 moves in memory


@dataclass(frozen=True)
class SemanticVectorSpace:
    """Unit-norm vectors with a probability weight per vector.

    ``normalized`` records whether the loader had to rescale rows.
    """

    vectors: np.ndarray
    weights: np.ndarray = None
    normalized: bool = False

    def __post_init__(self):
        X = np.asarray(self.vectors, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("vectors must be a non-empty (M, d) array")
        if not np.all(np.isfinite(X)):
            raise ValueError("vectors contain non-finite entries")
        if np.any(np.abs(np.linalg.norm(X, axis=1) - 1.0) > 1e-9):
            raise ValueError("vector rows must have unit norm")
        w = np.full(X.shape[0], 1.0 / X.shape[0]) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (X.shape[0],):
            raise ValueError("weights must have one entry per vector")
        check_distribution(w, "weights")
        object.__setattr__(self, "vectors", readonly(X))
        object.__setattr__(self, "weights", readonly(w))

    @property
    def count(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def gram(self):
        return self.vectors @ self.vectors.T

    @classmethod
    def from_unnormalized(cls, vectors, weights=None, tol=1e-6):
        X = np.asarray(vectors, dtype=float)
        if X.ndim != 2:
            raise ValueError("vectors must be a 2-D array")
        fix = bool(np.any(np.abs(np.linalg.norm(X, axis=1) - 1.0) > tol))
        # rows within tol of unit norm are still snapped exactly onto the sphere
        return cls(normalize_rows(X), weights, normalized=fix)

    def permuted(self, perm):
        perm = np.asarray(perm)
        return SemanticVectorSpace(self.vectors[perm], self.weights[perm], self.normalized)

    def rotated(self, Q):
        return SemanticVectorSpace(normalize_rows(self.vectors @ np.asarray(Q, dtype=float).T),
                                   self.weights, self.normalized)

    def to_dict(self):
        return {"vectors": self.vectors.tolist(), "weights": self.weights.tolist(),
                "dim": self.dim, "count": self.count}


_SPACE_KEYS = {"vectors", "weights", "dim", "count"}


def space_from_dict(obj):
    unknown = set(obj) - _SPACE_KEYS
    if unknown:
        raise ValueError(f"unknown space keys: {sorted(unknown)}")
    X = np.asarray(obj["vectors"], dtype=float)
    if X.ndim != 2:
        raise ValueError("vectors must be a nested (count, dim) array")
    if "dim" in obj and obj["dim"] != X.shape[1]:
        raise ValueError("declared dim does not match vectors")
    if "count" in obj and obj["count"] != X.shape[0]:
        raise ValueError("declared count does not match vectors")
    return SemanticVectorSpace.from_unnormalized(X, obj.get("weights"))


def load_space(path):
    with open(path) as fh:
        return space_from_dict(json.load(fh))


def save_space(space, path):
    with open(path, "w") as fh:
        json.dump(space.to_dict(), fh, indent=1)


def random_space(count, dim, seed):
    rng = np.random.default_rng(seed)
    return SemanticVectorSpace(normalize_rows(rng.standard_normal((count, dim))))


@dataclass(frozen=True)
class Coupling:
    """Transport plan between two weight vectors."""

    plan: np.ndarray
    converged: bool = True
    iterations: int = 0

    @property
    def source_marginal(self):
        return self.plan.sum(axis=1)

    @property
    def target_marginal(self):
        return self.plan.sum(axis=0)

    def marginal_error(self, mu, nu):
        return max(float(np.max(np.abs(self.source_marginal - mu))),
                   float(np.max(np.abs(self.target_marginal - nu))))


def identity_coupling(space):
    return Coupling(np.diag(space.weights))


def permutation_coupling(perm, weights):
    P = np.zeros((len(perm), len(perm)))
    P[np.arange(len(perm)), np.asarray(perm)] = weights
    return Coupling(P)


def cosine(space, i, j):
    M = space.count
    if not (0 <= i < M and 0 <= j < M):
        raise IndexError(f"indices ({i}, {j}) outside [0, {M})")
    return float(space.vectors[i] @ space.vectors[j])


def _plan_of(coupling):
    return np.asarray(coupling.plan if isinstance(coupling, Coupling) else coupling, dtype=float)


def gram_cost(GA, GB, plan):
    """GW square-loss objective for Gram matrices ``GA`` (M, M), ``GB`` (M', M')."""
    mu, nu = plan.sum(axis=1), plan.sum(axis=0)
    value = mu @ (GA ** 2) @ mu + nu @ (GB ** 2) @ nu - 2.0 * np.sum(plan * (GA @ plan @ GB.T))
    return max(float(value), 0.0)


def gw_cost(space_a, space_b, coupling, atol=1e-6):
    plan = _plan_of(coupling)
    if plan.shape != (space_a.count, space_b.count):
        raise MarginalMismatchError(f"plan shape {plan.shape} does not match spaces")
    if np.any(plan < 0):
        raise MarginalMismatchError("plan has negative entries")
    err = max(np.max(np.abs(plan.sum(axis=1) - space_a.weights)),
              np.max(np.abs(plan.sum(axis=0) - space_b.weights)))
    if err > atol:
        raise MarginalMismatchError(f"plan marginals deviate from space weights by {err:.3e}")
    return gram_cost(space_a.gram, space_b.gram, plan)


def gw_cost_bruteforce(GA, GB, plan):
    """The quadruple sum evaluated term by term; a reference for :func:`gram_cost`."""
    M, K = plan.shape
    total = 0.0
    for i in range(M):
        for j in range(M):
            for k in range(K):
                for l in range(K):
                    total += (GA[i, j] - GB[k, l]) ** 2 * plan[i, k] * plan[j, l]
    return total


def _check_oracle_scope(M, K, weights_a, weights_b):
    if M != K or M > ORACLE_MAX_POINTS:
        raise OracleScopeError(f"permutation oracle needs equal sizes <= {ORACLE_MAX_POINTS}, got {M} and {K}")
    if not (np.allclose(weights_a, 1.0 / M, atol=1e-12) and np.allclose(weights_b, 1.0 / M, atol=1e-12)):
        raise OracleScopeError("permutation oracle needs uniform weights")


def permutation_oracle(GA, GB):
    """Minimum of the GW objective over permutation plans with uniform weights."""
    M = GA.shape[0]
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(M)):
        p = np.array(perm)
        # with plan = I_perm / M the objective is a plain mean over index pairs
        value = float(np.mean((GA - GB[np.ix_(p, p)]) ** 2))
        if value < best - 1e-15:
            best, best_perm = value, p
    return best, best_perm


def gw_distance_oracle(space_a, space_b):
    """Exhaustive minimum over permutation couplings; returns ``(cost, Coupling)``."""
    _check_oracle_scope(space_a.count, space_b.count, space_a.weights, space_b.weights)
    _, perm = permutation_oracle(space_a.gram, space_b.gram)
    coupling = permutation_coupling(perm, space_a.weights)
    return gw_cost(space_a, space_b, coupling), coupling


def _lse(X, axis):
    # scipy's logsumexp carries array-API overhead that dominates on tiny plans
    m = X.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(X - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def _sinkhorn_log(C, mu, nu, epsilon, tol, max_iters, beta=None):
    """Log-domain Sinkhorn with epsilon scaling.

    Dual potentials are kept in cost units, so they carry over between
    regularization levels. A cold solve runs through ``range(C), range(C)/2,
    ...`` down to ``epsilon`` (loosely at intermediate levels); a solve warm
    started from a previous ``beta`` goes straight to ``epsilon``. Returns ``(plan, beta, converged, iters)``.
    """
    with np.errstate(divide="ignore"):
        log_mu, log_nu = np.log(mu), np.log(nu)
    if beta is None:
        beta = np.zeros_like(nu)
        levels = anneal_epsilons(epsilon, max(float(C.max() - C.min()), epsilon), 0.5)
    else:
        levels = [epsilon]
    total = 0
    for k, eps in enumerate(levels):
        final = k == len(levels) - 1
        level_tol = tol if final else max(tol, 1e-3)
        converged = False
        for _ in range(max_iters):
            total += 1
            alpha = eps * (log_mu - _lse((beta[None, :] - C) / eps, axis=1))
            beta = eps * (log_nu - _lse((alpha[:, None] - C) / eps, axis=0))
            plan = np.exp((alpha[:, None] + beta[None, :] - C) / eps)
            # column marginals are exact after the beta update; rows carry the error
            if np.max(np.abs(plan.sum(axis=1) - mu)) <= level_tol:
                converged = True
                break
    return plan, beta, converged, total


def round_to_marginals(plan, mu, nu):
    """Project a nearly feasible plan onto the exact marginal constraints.

    Rows and columns exceeding their targets are scaled down, then the
    remaining deficit is filled with a rank-one correction; entries stay
    nonnegative.
    """
    P = np.asarray(plan, dtype=float)
    r = P.sum(axis=1)
    P = P * np.minimum(1.0, np.divide(mu, r, out=np.ones_like(r), where=r > 0))[:, None]
    c = P.sum(axis=0)
    P = P * np.minimum(1.0, np.divide(nu, c, out=np.ones_like(c), where=c > 0))[None, :]
    er, ec = mu - P.sum(axis=1), nu - P.sum(axis=0)
    total = er.sum()
    if total > 0:
        P = P + np.outer(er, ec) / total
    return P


def sinkhorn(cost, mu, nu, epsilon, tol=1e-9, max_iters=10_000):
    """Entropic optimal transport in the log domain.

    Returns a :class:`Coupling` whose ``converged`` flag reports whether the
    marginal violation dropped below ``tol`` within ``max_iters`` sweeps; on
    failure the last iterate is returned.
    """
    C = np.asarray(cost, dtype=float)
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix must be finite")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    check_distribution(mu, "mu", atol=1e-9)
    check_distribution(nu, "nu", atol=1e-9)
    plan, _, converged, it = _sinkhorn_log(C, mu, nu, epsilon, tol, max_iters)
    return Coupling(plan, converged, it)


def _linear_cost(GA, GB, plan):
    # gradient of the GW objective at `plan` with its marginals held fixed
    mu, nu = plan.sum(axis=1), plan.sum(axis=0)
    const = (GA ** 2) @ mu
    const = const[:, None] + ((GB ** 2) @ nu)[None, :]
    return 2.0 * (const - 2.0 * GA @ plan @ GB.T)


def anneal_epsilons(epsilon, start=1.0, factor=0.5):
    """Geometric schedule ``start, start*factor, ...`` ending exactly at ``epsilon``."""
    if not 0 < factor < 1:
        raise ValueError("anneal factor must lie in (0, 1)")
    eps = []
    e = start
    while e > epsilon * (1 + 1e-12):
        eps.append(e)
        e *= factor
    eps.append(epsilon)
    return eps


@dataclass(frozen=True)
class GWResult:
    cost: float
    coupling: Coupling
    converged: bool
    history: np.ndarray = field(default=None)


def _line_search(GA, GB, plan, target, current):
    # exact minimization of the quadratic f(plan + tau * (target - plan)) over [0, 1]
    delta = target - plan
    grad = _linear_cost(GA, GB, plan)
    b = float(np.sum(grad * delta))
    dr, dc = delta.sum(axis=1), delta.sum(axis=0)
    a = dr @ (GA ** 2) @ dr + dc @ (GB ** 2) @ dc - 2.0 * float(np.sum(delta * (GA @ delta @ GB.T)))
    taus = [1.0] + ([min(max(-b / (2 * a), 0.0), 1.0)] if a > 0 else [])
    values = [gram_cost(GA, GB, plan + t * delta) for t in taus]
    k = int(np.argmin(values))
    if values[k] < current:
        return plan + taus[k] * delta, values[k]
    return plan, current


def _entropic_run(GA, GB, mu, nu, plan, schedule, final_eps, max_iters, tol, sinkhorn_iters):
    """Follow the entropic GW solution path down the schedule, then polish.

    At each epsilon the plan is updated by the fixed-point iteration
    ``plan <- sinkhorn(L(plan), eps)`` where ``L`` is the linearized cost.
    Afterwards conditional-gradient steps with exact line search descend the
    unregularized objective. ``history`` records the best objective seen so
    far after every outer iteration.
    """
    best_plan, best = plan, gram_cost(GA, GB, plan)
    history = [best]
    g = None
    for eps in schedule:
        # the path only has to be tracked roughly; rounding keeps plans feasible
        for _ in range(max_iters):
            L = 0.5 * _linear_cost(GA, GB, plan)
            target, g, _, _ = _sinkhorn_log(L - L.min(), mu, nu, eps, max(tol, 1e-6), sinkhorn_iters // 5, g)
            new = round_to_marginals(target, mu, nu)
            step = float(np.max(np.abs(new - plan)))
            plan = new
            value = gram_cost(GA, GB, plan)
            if value < best:
                best_plan, best = plan, value
            history.append(best)
            if step < 1e-6:
                break
    converged = True
    plan = best_plan
    for _ in range(max_iters):
        L = _linear_cost(GA, GB, plan)
        target, g, ok, _ = _sinkhorn_log(L - L.min(), mu, nu, final_eps, tol, sinkhorn_iters, g)
        converged &= ok
        plan, value = _line_search(GA, GB, plan, round_to_marginals(target, mu, nu), best)
        improved = best - value
        best = value
        history.append(best)
        if improved < 1e-12:
            break
    return plan, history, converged


def _quantile_w2(x, wx, y, wy):
    """Squared 2-Wasserstein distance between two weighted point sets on the line."""
    ix, iy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    x, y = x[ix], y[iy]
    cx, cy = np.cumsum(wx[ix]), np.cumsum(wy[iy])
    cuts = np.unique(np.concatenate([[0.0], cx, cy]))
    cuts = cuts[cuts <= min(cx[-1], cy[-1])]
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    qx = x[np.minimum(np.searchsorted(cx, mids), len(x) - 1)]
    qy = y[np.minimum(np.searchsorted(cy, mids), len(y) - 1)]
    return float(np.sum(np.diff(cuts) * (qx - qy) ** 2))


def row_distribution_cost(GA, GB, mu, nu):
    """``C[i, k]`` = W2^2 between the inner-product profiles of point i and point k.

    Transporting with this cost gives the usual lower-bound initialization for GW.
    """
    return np.array([[_quantile_w2(GA[i], mu, GB[k], nu) for k in range(GB.shape[0])]
                     for i in range(GA.shape[0])])


def _cycle_descent(GA, GB, plan, max_moves=1000):
    """Exact line search along the best two-by-two cycle ``+ik +jl -il -jk`` until none improves.

    The objective restricted to a cycle ``t (e_i - e_j)(e_k - e_l)^T`` is the quadratic
    ``b t + a t^2`` with ``a = -2 (u' GA u)(v' GB v)``; where it is concave the step runs to
    the end of the feasible segment, which is how assignment swaps are found.
    """
    M, K = plan.shape
    if M < 2 or K < 2 or max(M, K) > CYCLE_MAX_POINTS:
        return plan
    qa = np.diag(GA)[:, None] + np.diag(GA)[None, :] - 2 * GA
    qb = np.diag(GB)[:, None] + np.diag(GB)[None, :] - 2 * GB
    a = -2.0 * qa[:, :, None, None] * qb[None, None, :, :]
    pairs = np.triu(np.ones((M, M), bool), 1)[:, :, None, None] & np.triu(np.ones((K, K), bool), 1)[None, None]
    P = plan.copy()
    for _ in range(max_moves):
        G = _linear_cost(GA, GB, P)
        b = G[:, None, :, None] - G[:, None, None, :] - G[None, :, :, None] + G[None, :, None, :]
        lo = -np.minimum(P[:, None, :, None], P[None, :, None, :])
        hi = np.minimum(P[:, None, None, :], P[None, :, :, None])
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.where(a > 0, np.clip(-b / (2 * a), lo, hi), 0.0)
        steps = np.stack([inner, lo, hi])
        gains = b * steps + a * steps ** 2
        pick = np.argmin(gains, axis=0)
        gain = np.where(pairs, np.take_along_axis(gains, pick[None], 0)[0], 0.0)
        idx = np.unravel_index(np.argmin(gain), gain.shape)
        if gain[idx] > -1e-14:
            break
        i, j, k, l = idx
        t = np.take_along_axis(steps, pick[None], 0)[0][idx]
        trial = P.copy()
        trial[i, k] += t
        trial[j, l] += t
        trial[i, l] -= t
        trial[j, k] -= t
        trial = np.maximum(trial, 0.0)
        if gram_cost(GA, GB, trial) >= gram_cost(GA, GB, P):
            break
        P = trial
    return P


def gw_distance_entropic(space_a, space_b, epsilon=1e-3, max_iters=20, anneal_schedule=(1.0, 0.5),
                         n_init=8, seed=0, tol=1e-9, sinkhorn_iters=500):
    """Entropic GW with annealed regularization.

    Starts from the product coupling and anneals. Further starts skip the
    annealed path and go straight to the descent phase: the transport plan
    for :func:`row_distribution_cost`, and ``n_init - 1`` sharp random plans.
    Every start ends with the cycle descent; the best result is kept.
    Inner targets are rounded onto the exact marginals, so the returned plan
    is feasible even when a Sinkhorn solve stops early; ``converged`` reports
    whether every inner solve met ``tol``. ``history`` (best objective so far
    per outer iteration) is non-increasing.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    GA, GB = space_a.gram, space_b.gram
    mu, nu = space_a.weights, space_b.weights
    schedule = anneal_epsilons(epsilon, *anneal_schedule)
    rng = np.random.default_rng(seed)
    starts = [(np.outer(mu, nu), schedule)]
    lower = sinkhorn(row_distribution_cost(GA, GB, mu, nu), mu, nu, schedule[-1], tol=tol, max_iters=2000)
    starts.append((round_to_marginals(lower.plan, mu, nu), []))
    for _ in range(n_init - 1):
        # sharp random plans, descended at the final epsilon only
        noise = rng.random((len(mu), len(nu)))
        plan0 = round_to_marginals(sinkhorn(noise, mu, nu, 0.05, tol=1e-6, max_iters=200).plan, mu, nu)
        starts.append((plan0, []))
    best = None
    for plan0, sched in starts:
        plan, history, converged = _entropic_run(GA, GB, mu, nu, plan0, sched, schedule[-1], max_iters,
                                                 tol, sinkhorn_iters)
        plan = _cycle_descent(GA, GB, plan)
        history.append(min(history[-1], gram_cost(GA, GB, plan)))
        if best is None or history[-1] < best[1][-1]:
            best = (plan, history, converged)
    plan, history, converged = best
    return GWResult(gram_cost(GA, GB, plan), Coupling(plan, converged), converged, np.array(history))


class GWAligner(BaseEstimator):
    """Align a source vector set to a target set with entropic GW.

    ``fit(X, Y)`` takes row vectors (normalized on entry) and stores the
    coupling; ``transform(X)`` maps each source point to the plan-weighted
    barycenter of the target points.
    """

    def __init__(self, epsilon=1e-3, max_iters=20, anneal_start=1.0, anneal_factor=0.5, n_init=8,
                 random_state=0):
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.anneal_start = anneal_start
        self.anneal_factor = anneal_factor
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, Y, sample_weight=None, target_weight=None):
        A = SemanticVectorSpace.from_unnormalized(X, sample_weight)
        B = SemanticVectorSpace.from_unnormalized(Y, target_weight)
        res = gw_distance_entropic(A, B, self.epsilon, self.max_iters, (self.anneal_start, self.anneal_factor),
                                   self.n_init, self.random_state)
        self.coupling_ = res.coupling.plan
        self.cost_ = res.cost
        self.converged_ = res.converged
        self.source_weights_ = A.weights
        self.target_vectors_ = B.vectors
        return self

    def transform(self, X=None):
        check_is_fitted(self, "coupling_")
        if X is not None and len(X) != self.coupling_.shape[0]:
            raise ValueError("transform expects the fitted source points")
        return (self.coupling_ / self.source_weights_[:, None]) @ self.target_vectors_

    def fit_transform(self, X, Y, **kw):
        return self.fit(X, Y, **kw).transform(X)
