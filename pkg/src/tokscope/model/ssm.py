"""Linear state-space variant: u_t = A_t u_{t-1} + B_t s_t, readout y_t = C u_t."""

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .._validation import check_positive, check_tokens, readonly
from .transformer import _run_generation


@dataclass(frozen=True)
class SSMParams:
    A_state: np.ndarray
    B_in: np.ndarray
    C_out: np.ndarray
    A_overrides: tuple = ()
    B_overrides: tuple = ()

    def __post_init__(self):
        A = np.asarray(self.A_state, dtype=float)
        d = A.shape[0]
        for name in ("A_state", "B_in", "C_out"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (d, d):
                raise ValueError(f"{name} must be ({d}, {d})")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, readonly(arr))
        for name in ("A_overrides", "B_overrides"):
            mats = tuple(readonly(m) for m in getattr(self, name))
            if any(m.shape != (d, d) or not np.all(np.isfinite(m)) for m in mats):
                raise ValueError(f"{name} entries must be finite ({d}, {d}) matrices")
            object.__setattr__(self, name, mats)

    @property
    def dim(self):
        return self.A_state.shape[0]

    @classmethod
    def random(cls, dim, seed=0, scale=0.5):
        rng = np.random.default_rng(seed)
        return cls(scale * rng.standard_normal((dim, dim)),
                   rng.standard_normal((dim, dim)),
                   rng.standard_normal((dim, dim)))

    def A_at(self, t):
        """State matrix applied at step ``t`` (1-based)."""
        return self.A_overrides[t - 1] if t - 1 < len(self.A_overrides) else self.A_state

    def B_at(self, t):
        return self.B_overrides[t - 1] if t - 1 < len(self.B_overrides) else self.B_in


def ssm_states(ssm, inputs):
    """Run the recursion from a zero initial state over input vectors ``s_1..s_L``."""
    S = np.asarray(inputs, dtype=float)
    u = np.zeros(ssm.dim)
    states = []
    for t in range(1, S.shape[0] + 1):
        u = ssm.A_at(t) @ u + ssm.B_at(t) @ S[t - 1]
        states.append(u)
    return np.array(states)


def ssm_next_distribution(ssm, embedding, xi, tokens):
    E = np.asarray(embedding, dtype=float)
    tokens = check_tokens(tokens, E.shape[0])
    u = ssm_states(ssm, E[tokens])[-1]
    return softmax(E @ (ssm.C_out @ u) / xi)


def ssm_generate(ssm, embedding, xi, prompt, max_T, stop_token=0, mode="greedy", seed=0):
    """Generate with the SSM, feeding back the embedding of each emitted token."""
    check_positive(xi, "xi")
    E = np.asarray(embedding, dtype=float)
    prompt = check_tokens(prompt, E.shape[0], "prompt").tolist()
    return _run_generation(lambda s: ssm_next_distribution(ssm, E, xi, s),
                           prompt, max_T, mode, seed, stop_token)


def ssm_provider(ssm):
    """TV-VAR coefficients of the unrolled SSM.

    Predicting position ``t`` uses the state after ``t-1`` inputs:
    ``C u_{t-1} = sum_j C (A_{t-1} ... A_{j+1}) B_j s_j``.
    """
    def provider(t, j, history):
        M = ssm.B_at(j)
        for k in range(j + 1, t):
            M = ssm.A_at(k) @ M
        return ssm.C_out @ M
    return provider
