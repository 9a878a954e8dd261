"""Random projections of semantic vector spaces and the distortion they cause.

Gaussian operators have iid N(0, 1/m) entries. Structured operators apply a
random sign flip followed by a subset of rows of an orthonormal DCT or
Hadamard matrix, scaled by sqrt(N/m) so that keeping every row is an isometry.
Projected vectors are compared raw (no renormalization) unless asked.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct
from scipy.linalg import hadamard
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import normalize_rows, readonly
from .geometry import ORACLE_MAX_POINTS, gram_cost, permutation_oracle

KINDS = ("gaussian", "partial_dct", "partial_hadamard")


@dataclass(frozen=True)
class ProjectionOperator:
    """Linear map R^N -> R^m stored as a dense ``(m, N)`` matrix.

    For structured kinds ``matrix = sqrt(N/m) * F[rows] @ diag(signs)``.
    ``kind == "explicit"`` wraps a user-supplied matrix.
    """

    kind: str
    in_dim: int
    out_dim: int
    seed: int
    matrix: np.ndarray
    signs: np.ndarray = None
    rows: np.ndarray = None

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.shape != (self.out_dim, self.in_dim):
            raise ValueError(f"matrix must be ({self.out_dim}, {self.in_dim})")
        object.__setattr__(self, "matrix", readonly(M))
        if self.signs is not None:
            s = np.asarray(self.signs, dtype=float)
            if s.shape != (self.in_dim,) or not np.all(np.abs(s) == 1):
                raise ValueError("signs must be a +-1 vector of length in_dim")
            object.__setattr__(self, "signs", readonly(s))

    def apply(self, X):
        """Project a vector ``(N,)`` or a batch of row vectors ``(M, N)``."""
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.in_dim:
            raise ValueError(f"expected vectors of dimension {self.in_dim}, got {X.shape[-1]}")
        return X @ self.matrix.T

    __call__ = apply

    @property
    def gram_operator(self):
        """``P = A^T A``."""
        return self.matrix.T @ self.matrix

    @classmethod
    def from_matrix(cls, A):
        A = np.asarray(A, dtype=float)
        return cls("explicit", A.shape[1], A.shape[0], -1, A)

    @classmethod
    def identity(cls, N):
        return cls.from_matrix(np.eye(N))


def _orthonormal_basis(kind, N):
    if kind == "partial_dct":
        # rows are the orthonormal DCT-II basis vectors
        return dct(np.eye(N), norm="ortho", axis=0)
    if N & (N - 1):
        raise ValueError("partial_hadamard needs N to be a power of two")
    return hadamard(N) / math.sqrt(N)


def make_projection(kind, N, m, seed, signs=None):
    """Draw a projection operator; ``signs`` overrides the Rademacher draw."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if not (isinstance(N, (int, np.integer)) and isinstance(m, (int, np.integer))) or not 1 <= m <= N:
        raise ValueError(f"need integers 1 <= m <= N, got m={m}, N={N}")
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        return ProjectionOperator(kind, N, m, seed, rng.standard_normal((m, N)) / math.sqrt(m))
    F = _orthonormal_basis(kind, N)
    sigma = rng.choice([-1.0, 1.0], size=N) if signs is None else np.asarray(signs, dtype=float)
    rows = np.sort(rng.choice(N, size=m, replace=False))
    A = math.sqrt(N / m) * F[rows] * sigma[None, :]
    return ProjectionOperator(kind, N, m, seed, A, sigma, rows)


def jl_dimension(M, eps, C=4.0, eta=None, N=None):
    """Smallest integer m meeting the JL bound, or its RIP variant when ``eta`` is given.

    JL: ``m >= C / eps^2 * ln M``.  RIP: ``m >= C / eps^2 * ln(M / eta) * ln N``.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if M < 2 or C <= 0:
        raise ValueError("need M >= 2 and C > 0")
    if eta is None:
        bound = C / eps ** 2 * math.log(M)
    else:
        if not 0 < eta < 1 or N is None or N < 2:
            raise ValueError("RIP variant needs eta in (0, 1) and N >= 2")
        bound = C / eps ** 2 * math.log(M / eta) * math.log(N)
    # absorb floating-point noise so exact integers are not bumped up
    return max(1, math.ceil(bound - 1e-9))


def _vectors(space):
    return space.vectors if hasattr(space, "vectors") else np.asarray(space, dtype=float)


def _weights(space, M):
    return space.weights if hasattr(space, "weights") else np.full(M, 1.0 / M)


@dataclass(frozen=True)
class JLReport:
    max_deviation: float
    violating_pairs: list


def jl_check(space, op, eps):
    """Largest ``|s_i.s_j - (A s_i).(A s_j)|`` over all pairs ``i <= j`` and the pairs above ``eps``."""
    X = _vectors(space)
    if X.shape[1] != op.in_dim:
        raise ValueError(f"space dimension {X.shape[1]} does not match operator input {op.in_dim}")
    Y = op.apply(X)
    dev = np.abs(X @ X.T - Y @ Y.T)
    iu = np.triu_indices(X.shape[0])
    vals = dev[iu]
    bad = vals > eps
    pairs = [(int(i), int(j)) for i, j in zip(iu[0][bad], iu[1][bad])]
    return JLReport(float(vals.max()), pairs)


@dataclass(frozen=True)
class DistortionReport:
    identity_coupling: float
    optimal_coupling: float = None


def compression_distortion(space, op):
    """Weighted squared inner-product distortion between a space and its projection.

    ``identity_coupling`` pairs every point with its own image; for uniform
    spaces with at most six points ``optimal_coupling`` is the minimum over
    permutation couplings.
    """
    X = _vectors(space)
    if X.shape[1] != op.in_dim:
        raise ValueError(f"space dimension {X.shape[1]} does not match operator input {op.in_dim}")
    Y = op.apply(X)
    G, H = X @ X.T, Y @ Y.T
    w = _weights(space, X.shape[0])
    ident = float(w @ ((G - H) ** 2) @ w)
    best = None
    if X.shape[0] <= ORACLE_MAX_POINTS and np.allclose(w, 1.0 / len(w), atol=1e-12):
        best = permutation_oracle(G, H)[0]
    return DistortionReport(ident, best)


def distortion_bruteforce(space, op):
    """Identity-coupling distortion by an explicit double loop."""
    X = _vectors(space)
    w = _weights(space, X.shape[0])
    P = op.gram_operator
    total = 0.0
    for i in range(X.shape[0]):
        for j in range(X.shape[0]):
            total += w[i] * w[j] * (X[i] @ X[j] - X[i] @ P @ X[j]) ** 2
    return total


def coupled_distortion(space, op, plan):
    """Distortion under an arbitrary coupling between the space and its image."""
    X = _vectors(space)
    Y = op.apply(X)
    return gram_cost(X @ X.T, Y @ Y.T, np.asarray(plan, dtype=float))


class SemanticProjection(TransformerMixin, BaseEstimator):
    """Random projection as a scikit-learn transformer.

    Parameters
    ----------
    n_components : int
        Output dimension ``m``.
    kind : {"gaussian", "partial_dct", "partial_hadamard"}
    renormalize : bool, default=False
        Rescale projected rows to unit norm.
    random_state : int, default=0
    """

    def __init__(self, n_components=8, kind="gaussian", renormalize=False, random_state=0):
        self.n_components = n_components
        self.kind = kind
        self.renormalize = renormalize
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X)
        self.operator_ = make_projection(self.kind, X.shape[1], self.n_components, self.random_state)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "operator_")
        Y = self.operator_.apply(check_array(X))
        return normalize_rows(Y) if self.renormalize else Y
