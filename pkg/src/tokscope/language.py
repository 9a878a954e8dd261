"""Token alphabets and ground-truth teacher processes.

A teacher exposes exact next-token conditionals for any prefix. Prompts are
length-``prompt_length`` token sequences drawn from ``prompt_prior``, a flat
vector indexed by the base-N value of the prompt (first token most significant,
the same order as ``itertools.product``).
"""

import json
from dataclasses import dataclass

import numpy as np

from ._sequences import all_sequences, sequence_index
from ._validation import check_distribution, check_tokens, readonly
from .model.transformer import TransformerParams, next_token_distribution_batch


@dataclass(frozen=True)
class TokenAlphabet:
    size: int
    stop_token: int

    def __post_init__(self):
        if int(self.size) < 2:
            raise ValueError("alphabet size must be >= 2")
        if not 0 <= int(self.stop_token) < int(self.size):
            raise ValueError("stop_token must lie in [0, size)")


def uniform_prompt_prior(n_tokens, prompt_length):
    return np.full(n_tokens ** prompt_length, 1.0 / n_tokens ** prompt_length)


@dataclass(frozen=True)
class TeacherProcess:
    """Ground-truth generator.

    ``kind`` is ``"markov"`` (``transitions`` has shape ``(N,)*order + (N,)``)
    or ``"teacher_transformer"`` (``params`` holds a :class:`TransformerParams`).
    Prefixes shorter than the context a kernel needs (fewer than ``order``
    tokens, or an empty prefix for the transformer) use ``initial``.
    """

    alphabet: TokenAlphabet
    kind: str
    prompt_length: int = 1
    prompt_prior: np.ndarray = None
    order: int = 1
    transitions: np.ndarray = None
    params: TransformerParams = None
    initial: np.ndarray = None

    def __post_init__(self):
        N = self.alphabet.size
        if self.kind == "markov":
            T = np.asarray(self.transitions, dtype=float)
            if self.order < 0 or T.shape != (N,) * self.order + (N,):
                raise ValueError(f"transitions must have shape {(N,) * self.order + (N,)}")
            check_distribution(T, "transition rows")
            object.__setattr__(self, "transitions", readonly(T))
        elif self.kind == "teacher_transformer":
            if not isinstance(self.params, TransformerParams) or self.params.n_tokens != N:
                raise ValueError("teacher_transformer needs TransformerParams over the same alphabet")
            if self.params.stop_token != self.alphabet.stop_token:
                raise ValueError("teacher params disagree on stop_token")
        else:
            raise ValueError(f"unknown teacher kind {self.kind!r}")
        if self.prompt_length < 1:
            raise ValueError("prompt_length must be >= 1")
        prior = (uniform_prompt_prior(N, self.prompt_length) if self.prompt_prior is None
                 else np.asarray(self.prompt_prior, dtype=float).ravel())
        if prior.size != N ** self.prompt_length:
            raise ValueError("prompt_prior must have N**prompt_length entries")
        check_distribution(prior, "prompt_prior")
        object.__setattr__(self, "prompt_prior", readonly(prior))
        init = np.full(N, 1.0 / N) if self.initial is None else np.asarray(self.initial, dtype=float)
        check_distribution(init, "initial")
        object.__setattr__(self, "initial", readonly(init))

    @property
    def n_tokens(self):
        return self.alphabet.size

    @property
    def stop_token(self):
        return self.alphabet.stop_token

    def conditional_batch(self, X):
        """Exact next-token distributions for a batch of equal-length prefixes."""
        X = np.asarray(X, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError("prefix batch must be 2-D")
        P, L = X.shape
        if self.kind == "markov":
            if L < self.order:
                return np.tile(self.initial, (P, 1))
            if self.order == 0:
                return np.tile(self.transitions, (P, 1))
            ctx = tuple(X[:, L - self.order + i] for i in range(self.order))
            return np.array(self.transitions[ctx])
        if L == 0:
            return np.tile(self.initial, (P, 1))
        return next_token_distribution_batch(self.params, X)


def markov_teacher(transitions, stop_token, prompt_length=1, prompt_prior=None, initial=None):
    T = np.asarray(transitions, dtype=float)
    N = T.shape[-1]
    return TeacherProcess(TokenAlphabet(N, stop_token), "markov", prompt_length, prompt_prior,
                          order=T.ndim - 1, transitions=T, initial=initial)


def uniform_teacher(n_tokens, stop_token=0, prompt_length=1):
    """Order-0 process emitting every token with probability 1/N."""
    return markov_teacher(np.full(n_tokens, 1.0 / n_tokens), stop_token, prompt_length)


def transformer_teacher(params, prompt_length=1, prompt_prior=None):
    return TeacherProcess(TokenAlphabet(params.n_tokens, params.stop_token), "teacher_transformer",
                          prompt_length, prompt_prior, order=0, params=params)


def exact_conditional(process, prefix):
    """Next-token distribution of ``process`` after ``prefix``."""
    prefix = check_tokens(prefix, process.n_tokens, "prefix").reshape(1, -1)
    return process.conditional_batch(prefix)[0]


def sample_sequence(process, max_len, seed, prompt=(), until_stop=True):
    """Sample up to ``max_len`` tokens after ``prompt``.

    Stops early when the stop token is emitted (unless ``until_stop`` is false).
    Returns the generated tokens only.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    rng = np.random.default_rng(seed)
    seq = check_tokens(list(prompt), process.n_tokens, "prompt").tolist()
    out = []
    uniforms = rng.random(max_len)
    # a Markov kernel only reads its last `order` tokens
    ctx = process.order if process.kind == "markov" else None
    for i in range(max_len):
        window = seq if ctx is None or len(seq) < ctx else seq[len(seq) - ctx:]
        p = process.conditional_batch(np.array(window, dtype=np.int64).reshape(1, -1))[0]
        tok = int(np.searchsorted(np.cumsum(p), uniforms[i] * p.sum(), side="right"))
        tok = min(tok, p.size - 1)
        seq.append(tok)
        out.append(tok)
        if until_stop and tok == process.stop_token:
            break
    return out


def sequence_logprob(process, prompt, continuation, absorb_stop=False):
    """Log-probability (nats) of ``continuation`` given ``prompt``.

    With ``absorb_stop`` every token after an emitted stop token must itself be
    the stop token (probability one), matching the ensemble convention.
    """
    seq = check_tokens(list(prompt), process.n_tokens, "prompt").tolist()
    cont = check_tokens(list(continuation), process.n_tokens, "continuation").tolist()
    total = 0.0
    stopped = False
    for tok in cont:
        if absorb_stop and stopped:
            p_tok = 1.0 if tok == process.stop_token else 0.0
        else:
            p_tok = process.conditional_batch(np.array([seq], dtype=np.int64))[0][tok]
        if p_tok <= 0:
            return -np.inf
        total += np.log(p_tok)
        seq.append(tok)
        stopped = stopped or tok == process.stop_token
    return total


def sequence_distribution(process, length):
    """Exact joint distribution of the first ``length`` tokens, flat in base-N order."""
    N = process.n_tokens
    probs = np.ones(1)
    for L in range(length):
        cond = process.conditional_batch(all_sequences(N, L))
        probs = (probs[:, None] * cond).ravel()
    return probs


def markov_prompt_prior(process, prompt_length):
    """Prompt prior generated by running ``process`` from an empty prefix."""
    return sequence_distribution(process, prompt_length)


def stationary_distribution(transitions):
    """Stationary distribution of an order-1 chain via the leading left eigenvector."""
    P = np.asarray(transitions, dtype=float)
    vals, vecs = np.linalg.eig(P.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


def teacher_to_dict(process):
    obj = {
        "version": "v1",
        "alphabet_size": process.n_tokens,
        "stop_token": process.stop_token,
        "kind": process.kind,
        "prompt_length": process.prompt_length,
        "prompt_prior": process.prompt_prior.tolist(),
        "initial": process.initial.tolist(),
    }
    if process.kind == "markov":
        obj["order"] = process.order
        obj["transitions"] = process.transitions.tolist()
    else:
        obj["order"] = None
        obj["transitions"] = None
        obj["params"] = process.params.to_dict()
    return obj


_TEACHER_KEYS = {"version", "alphabet_size", "stop_token", "kind", "order", "transitions",
                 "prompt_prior", "prompt_length", "initial", "params"}


def teacher_from_dict(obj):
    unknown = set(obj) - _TEACHER_KEYS
    if unknown:
        raise ValueError(f"unknown teacher keys: {sorted(unknown)}")
    if obj.get("version") != "v1":
        raise ValueError("teacher file must declare version 'v1'")
    N = int(obj["alphabet_size"])
    alphabet = TokenAlphabet(N, int(obj["stop_token"]))
    prior = obj.get("prompt_prior")
    if isinstance(prior, str):
        if prior != "uniform":
            raise ValueError("prompt_prior must be 'uniform' or a probability list")
        prior = None
    kw = dict(prompt_length=int(obj.get("prompt_length", 1)), prompt_prior=prior,
              initial=obj.get("initial"))
    if obj["kind"] == "markov":
        T = np.asarray(obj["transitions"], dtype=float)
        order = int(obj.get("order", T.ndim - 1))
        return TeacherProcess(alphabet, "markov", order=order, transitions=T, **kw)
    if obj["kind"] == "teacher_transformer":
        params = TransformerParams.from_dict(obj["params"])
        return TeacherProcess(alphabet, "teacher_transformer", params=params, order=0, **kw)
    raise ValueError(f"unknown teacher kind {obj['kind']!r}")


def save_teacher(process, path):
    with open(path, "w") as fh:
        json.dump(teacher_to_dict(process), fh, indent=1)


def load_teacher(path):
    with open(path) as fh:
        return teacher_from_dict(json.load(fh))
