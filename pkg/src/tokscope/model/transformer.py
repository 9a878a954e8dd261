"""Single-head, single-layer attention language model written as a TV-VAR.

The next-token logits are

    z_i = (1/xi) * e_i^T sum_j pi_j A u_j,
    pi_j = softmax_j(u_last^T B u_j),

where ``u_j`` are embedding rows of the history tokens and ``e_i`` are the
rows of the same embedding table. All batched routines operate on equal-length
histories ``X`` of shape ``(P, L)``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from .._validation import check_positive, check_tokens, normalize_rows, readonly


@dataclass(frozen=True)
class TransformerParams:
    """Parameters of the attention model.

    ``embedding`` is ``(N, d)`` with unit-norm rows, ``A`` and ``B`` are
    ``(d, d)``, ``xi`` is the sampling temperature.
    """

    embedding: np.ndarray
    A: np.ndarray
    B: np.ndarray
    xi: float = 1.0
    stop_token: int = 0

    def __post_init__(self):
        E = np.asarray(self.embedding, dtype=float)
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if E.ndim != 2 or E.shape[0] < 2:
            raise ValueError("embedding must be (N, d) with N >= 2")
        d = E.shape[1]
        if A.shape != (d, d) or B.shape != (d, d):
            raise ValueError(f"A and B must be ({d}, {d})")
        for name, arr in (("embedding", E), ("A", A), ("B", B)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        if np.any(np.abs(np.linalg.norm(E, axis=1) - 1.0) > 1e-9):
            raise ValueError("embedding rows must have unit norm")
        check_positive(self.xi, "xi")
        if not 0 <= int(self.stop_token) < E.shape[0]:
            raise ValueError("stop_token out of range")
        object.__setattr__(self, "embedding", readonly(E))
        object.__setattr__(self, "A", readonly(A))
        object.__setattr__(self, "B", readonly(B))
        object.__setattr__(self, "xi", float(self.xi))
        object.__setattr__(self, "stop_token", int(self.stop_token))

    @property
    def n_tokens(self):
        return self.embedding.shape[0]

    @property
    def dim(self):
        return self.embedding.shape[1]

    @classmethod
    def random(cls, n_tokens, dim, seed=0, scale=1.0, xi=1.0, stop_token=0):
        """Draw Gaussian parameters; ``scale`` sets the std of ``A`` and ``B`` entries."""
        rng = np.random.default_rng(seed)
        E = normalize_rows(rng.standard_normal((n_tokens, dim)))
        A = scale * rng.standard_normal((dim, dim))
        B = scale * rng.standard_normal((dim, dim))
        return cls(E, A, B, xi=xi, stop_token=stop_token)

    def replace(self, **changes):
        kw = dict(embedding=self.embedding, A=self.A, B=self.B, xi=self.xi,
                  stop_token=self.stop_token)
        kw.update(changes)
        return TransformerParams(**kw)

    def to_dict(self):
        return {
            "version": "v1",
            "N": self.n_tokens,
            "d": self.dim,
            "xi": self.xi,
            "stop_token": self.stop_token,
            "embedding": self.embedding.tolist(),
            "A": self.A.tolist(),
            "B": self.B.tolist(),
        }

    @classmethod
    def from_dict(cls, obj):
        if obj.get("version") != "v1":
            raise ValueError("unsupported model version")
        params = cls(np.asarray(obj["embedding"], dtype=float), obj["A"], obj["B"],
                     xi=obj["xi"], stop_token=obj["stop_token"])
        if params.n_tokens != obj["N"] or params.dim != obj["d"]:
            raise ValueError("declared N/d do not match arrays")
        return params


@dataclass
class _Cache:
    X: np.ndarray
    U: np.ndarray
    q: np.ndarray
    pi: np.ndarray
    c: np.ndarray
    h: np.ndarray
    z: np.ndarray
    logp: np.ndarray = field(default=None)


def _attention_from_vectors(B, U):
    # U: (P, L, d); query is the last vector of each history
    q = U[:, -1, :]
    scores = np.einsum("pd,de,ple->pl", q, B, U)
    return q, softmax(scores, axis=1)


def forward_batch(params, X):
    """Run the model on a batch of equal-length token histories ``X`` (P, L)."""
    X = np.asarray(X, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("histories must be non-empty")
    U = params.embedding[X]
    q, pi = _attention_from_vectors(params.B, U)
    c = np.einsum("pl,pld->pd", pi, U)
    h = c @ params.A.T
    z = h @ params.embedding.T / params.xi
    cache = _Cache(X, U, q, pi, c, h, z)
    cache.logp = log_softmax(z, axis=1)
    return cache


def backward_batch(params, cache, W):
    """Gradients of ``-sum(W * log p)`` with respect to (embedding, A, B).

    ``W`` has shape ``(P, N)``; entries may be signed.
    """
    E, A, B, xi = params.embedding, params.A, params.B, params.xi
    p = np.exp(cache.logp)
    dz = W.sum(axis=1, keepdims=True) * p - W
    dE = dz.T @ cache.h / xi
    dh = dz @ E / xi
    dA = dh.T @ cache.c
    dc = dh @ A
    U, q, pi = cache.U, cache.q, cache.pi
    dpi = np.einsum("pld,pd->pl", U, dc)
    ds = pi * (dpi - np.sum(pi * dpi, axis=1, keepdims=True))
    dB = np.einsum("pl,pd,ple->de", ds, q, U)
    dU = pi[:, :, None] * dc[:, None, :] + ds[:, :, None] * (q @ B)[:, None, :]
    dU[:, -1, :] += np.einsum("pl,pld->pd", ds, U @ B.T)
    np.add.at(dE, cache.X, dU)
    return {"embedding": dE, "A": dA, "B": dB}


def _history_array(params, history):
    h = np.asarray(history)
    if h.ndim == 2 and np.issubdtype(h.dtype, np.floating):
        return None, h.astype(float)
    tokens = check_tokens(h, params.n_tokens, "history")
    if tokens.ndim != 1 or tokens.size == 0:
        raise ValueError("history must be a non-empty token sequence")
    return tokens, params.embedding[tokens]


def attention_weights(params, history):
    """Attention weights over history positions, query = most recent vector.

    ``history`` is either a token sequence or an ``(L, d)`` array of vectors.
    """
    _, U = _history_array(params, history)
    if U.shape[0] == 0:
        raise ValueError("empty history")
    return _attention_from_vectors(params.B, U[None])[1][0]


def next_token_logits(params, history):
    _, U = _history_array(params, history)
    pi = attention_weights(params, U)
    context = pi @ U
    return params.embedding @ (params.A @ context) / params.xi


def next_token_distribution(params, history):
    return softmax(next_token_logits(params, history))


def next_token_distribution_batch(params, X):
    return np.exp(forward_batch(params, X).logp)


def greedy_token(p):
    # np.argmax returns the first maximum, i.e. ties go to the lowest id
    return int(np.argmax(p))


@dataclass(frozen=True)
class Generation:
    tokens: list
    distributions: np.ndarray
    stopped: bool


def _run_generation(step_fn, prompt, max_T, mode, seed, stop_token):
    if len(prompt) < 1:
        raise ValueError("prompt must contain at least one token")
    if mode not in ("greedy", "sample"):
        raise ValueError("mode must be 'greedy' or 'sample'")
    rng = np.random.default_rng(seed)
    seq = list(int(t) for t in prompt)
    out, dists = [], []
    stopped = False
    while len(seq) < max_T:
        p = step_fn(seq)
        tok = greedy_token(p) if mode == "greedy" else int(rng.choice(p.size, p=p))
        dists.append(p)
        out.append(tok)
        seq.append(tok)
        if tok == stop_token:
            stopped = True
            break
    n_tok = dists[0].size if dists else 0
    return Generation(out, np.array(dists).reshape(len(dists), n_tok), stopped)


def generate(params, prompt, max_T, mode="greedy", seed=0):
    """Autoregressive generation until the stop token or total length ``max_T``."""
    prompt = check_tokens(prompt, params.n_tokens, "prompt")
    return _run_generation(lambda s: next_token_distribution(params, s),
                           prompt.tolist(), max_T, mode, seed, params.stop_token)


def tvvar_next(provider, embedding, xi, history):
    """Next-token distribution of a general TV-VAR model.

    ``provider(t, j, history)`` returns the ``(d, d)`` coefficient matrix for
    lag position ``j`` (1-based) when predicting position ``t``.
    ``history`` is an ``(t-1, d)`` array of vectors.
    """
    U = np.asarray(history, dtype=float)
    t = U.shape[0] + 1
    acc = np.zeros(U.shape[1])
    for j in range(1, t):
        Atj = np.asarray(provider(t, j, U), dtype=float)
        if not np.all(np.isfinite(Atj)):
            raise ValueError(f"provider returned non-finite matrix at (t={t}, j={j})")
        acc += Atj @ U[j - 1]
    return softmax(np.asarray(embedding) @ acc / xi)


def attention_provider(params):
    """Coefficient provider ``A_tj = pi_tj * A`` reproducing the attention model."""
    def provider(t, j, history):
        pi = attention_weights(params, history)
        return pi[j - 1] * params.A
    return provider
