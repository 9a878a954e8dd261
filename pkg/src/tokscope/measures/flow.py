"""Semantic information flow along generated paths and its Doob decomposition.

The filtration is generated by (prompt, continuation prefix). Given the past,
the expected density increment is the KL divergence between the prompt-aware
and prompt-marginalized next-token distributions, which is the predictable
compensator ``A``; ``M = flow - A`` is the martingale part and ``V`` accumulates
the conditional variances of the increments.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import rel_entr

from .._validation import ZeroProbabilityPathError
from .directed import _path_indices, directed_information_terms


@dataclass(frozen=True)
class FlowTrace:
    densities: np.ndarray
    cumulative: np.ndarray
    M: np.ndarray
    A: np.ndarray
    V: np.ndarray

    def rows(self):
        for i in range(len(self.densities)):
            yield (i + 1, self.densities[i], self.cumulative[i], self.M[i], self.A[i], self.V[i])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "density", "cumulative", "M", "A", "V"])
            for r in self.rows():
                w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])


def _step_stats(q, qbar):
    """KL(q || qbar), per-token log ratios and conditional variance, batched over rows."""
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.where(q > 0, np.log(q) - np.log(qbar), 0.0)
    kl = np.sum(q * lr, axis=-1)
    var = np.sum(q * (lr - kl[..., None]) ** 2, axis=-1)
    return lr, kl, var


def semantic_flow(ens, prompt, continuation):
    s, cont, prefixes = _path_indices(ens, prompt, continuation)
    if ens.prompt_prior[s] <= 0:
        raise ZeroProbabilityPathError("prompt has zero prior mass")
    dens, kls, vars_ = [], [], []
    for k, (a, v) in enumerate(zip(prefixes, cont)):
        q = ens.conditionals[k][s, a]
        if q[v] <= 0:
            raise ZeroProbabilityPathError(f"token {v} has zero probability at step {k + 1}")
        lr, kl, var = _step_stats(q, ens.marginal_conditionals[k][a])
        dens.append(lr[v])
        kls.append(kl)
        vars_.append(var)
    dens = np.array(dens)
    flow = np.cumsum(dens)
    A = np.cumsum(kls)
    return FlowTrace(dens, flow, flow - A, A, np.cumsum(vars_))


def sample_paths(ens, num_paths, seed):
    """Sample (prompt index, continuation tokens) pairs from the ensemble's joint law."""
    rng = np.random.default_rng(seed)
    s = rng.choice(len(ens.prompt_prior), size=num_paths, p=ens.prompt_prior)
    a = np.zeros(num_paths, dtype=np.int64)
    toks = np.zeros((num_paths, ens.m), dtype=np.int64)
    for k, cond in enumerate(ens.conditionals):
        q = cond[s, a]
        u = rng.random(num_paths)[:, None]
        v = np.minimum((np.cumsum(q, axis=1) < u * q.sum(axis=1, keepdims=True)).sum(axis=1), ens.N - 1)
        toks[:, k] = v
        a = a * ens.N + v
    return s, toks


def _batched_flow(ens, s, toks):
    P, m = toks.shape
    dens = np.zeros((P, m))
    kl = np.zeros((P, m))
    var = np.zeros((P, m))
    expected_next = np.zeros((P, m))
    a = np.zeros(P, dtype=np.int64)
    for k in range(m):
        q = ens.conditionals[k][s, a]
        qbar = ens.marginal_conditionals[k][a]
        lr, _, var[:, k] = _step_stats(q, qbar)
        kl[:, k] = rel_entr(q, qbar).sum(axis=1)
        flow_prev = dens[:, :k].sum(axis=1)
        # enumerate every next token: E[flow_t | past] - flow_{t-1}
        expected_next[:, k] = np.einsum("pv,pv->p", q, flow_prev[:, None] + lr) - flow_prev
        dens[:, k] = lr[np.arange(P), toks[:, k]]
        a = a * ens.N + toks[:, k]
    return dens, kl, var, expected_next


@dataclass(frozen=True)
class SubmartingaleReport:
    num_paths: int
    min_margin: float
    violations: int
    max_compensator_error: float
    min_increment: float


def submartingale_check(ens, num_paths=1000, seed=0, tol=1e-10):
    """Check ``E[flow_t | past] >= flow_{t-1}`` on sampled paths by exact enumeration.

    ``max_compensator_error`` compares the enumerated expected increment with
    the closed-form KL compensator.
    """
    s, toks = sample_paths(ens, num_paths, seed)
    dens, kl, _, expected_next = _batched_flow(ens, s, toks)
    margins = expected_next
    return SubmartingaleReport(
        num_paths=num_paths,
        min_margin=float(margins.min()),
        violations=int(np.sum(margins < -tol)),
        max_compensator_error=float(np.max(np.abs(expected_next - kl))),
        min_increment=float(kl.min()),
    )


def freedman_bound(alpha, beta):
    return float(np.exp(-alpha ** 2 / (2.0 * (alpha + beta))))


def freedman_check(ens, alpha_grid=(0.5, 1.0, 2.0), beta_grid=(0.5, 1.0, 2.0), num_paths=10_000, seed=0):
    """Empirical ``Pr{M_T > alpha, V_T < beta}`` at the horizon versus Freedman's bound.

    Returns a list of dicts with keys alpha, beta, empirical, bound.
    """
    s, toks = sample_paths(ens, num_paths, seed)
    dens, kl, var, _ = _batched_flow(ens, s, toks)
    M = dens.sum(axis=1) - kl.sum(axis=1)
    V = var.sum(axis=1)
    table = []
    for alpha in alpha_grid:
        for beta in beta_grid:
            freq = float(np.mean((M > alpha) & (V < beta)))
            table.append({"alpha": float(alpha), "beta": float(beta), "empirical": freq,
                          "bound": freedman_bound(alpha, beta)})
    return table


def optional_stopping_check(ens):
    """Return ``(I(S -> U_{n+1:T}), I(S -> U_{n+1}))``."""
    terms = directed_information_terms(ens)
    return float(terms.sum()), float(terms[0])
