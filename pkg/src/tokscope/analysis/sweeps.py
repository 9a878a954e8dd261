"""Directed rate-distortion and rate-reward sweeps, and the pre-training endpoint check.

Rates are ``DI / T`` and distortions are ``(1/T) sum_t E[KL(P_t || Q_t)]``
with the expectation over teacher prefixes, both by exact enumeration.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .._validation import NonFiniteLossError
from ..measures.directed import directed_information
from ..measures.ensemble import build_ensemble
from ..model.training import ExactProblem, reward_table, train
from ..model.transformer import TransformerParams


@dataclass(frozen=True)
class RewardFunction:
    """Reward ``w(prompt, continuation)`` with a declared range ``[low, high]``."""

    fn: object
    low: float = -math.inf
    high: float = math.inf
    name: str = "reward"

    def __call__(self, prompt, continuation):
        value = float(self.fn(tuple(prompt), tuple(continuation)))
        if not math.isfinite(value):
            raise ValueError(f"{self.name} returned a non-finite value")
        if not self.low - 1e-12 <= value <= self.high + 1e-12:
            raise ValueError(f"{self.name} value {value} outside declared range [{self.low}, {self.high}]")
        return value


def no_token_reward(token, stop_token=None):
    """Indicator that ``token`` never appears in the continuation.

    With ``stop_token`` given, tokens after the first stop are ignored.
    """
    def fn(prompt, cont):
        for v in cont:
            if v == token:
                return 0.0
            if stop_token is not None and v == stop_token:
                break
        return 1.0
    return RewardFunction(fn, 0.0, 1.0, f"no_token_{token}")


def constant_reward(value=1.0):
    return RewardFunction(lambda s, u: value, value, value, "constant")


@dataclass(frozen=True)
class SweepConfig:
    """Grid and budget for a sweep.

    ``grid`` holds lambda values (``math.inf`` allowed for the CE-only
    endpoint of the rate-distortion sweep).
    """

    grid: tuple
    steps: int = 300
    lr: float = 0.5
    seed: int = 0
    n: int = 1
    T: int = 3
    dim: int = 2
    init_scale: float = 0.5

    def __post_init__(self):
        if len(self.grid) == 0:
            raise ValueError("grid must be non-empty")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 1 <= self.n < self.T:
            raise ValueError("need 1 <= n < T")
        if any(g < 0 or math.isnan(g) for g in self.grid):
            raise ValueError("grid values must be nonnegative")


def mean_kl(teacher, student, n, T, prompt_prior=None, normalizer=None):
    """Expected per-step KL from teacher to student conditionals.

    The sum over generated positions is divided by ``normalizer`` (default
    ``T - n``). Prefixes come from the teacher's own path measure.
    """
    prior = teacher.prompt_prior if prompt_prior is None else np.asarray(prompt_prior, dtype=float)
    problem = ExactProblem(student.n_tokens, n, T, student.stop_token, prior)
    pconds = problem.teacher_conditionals(teacher)
    qconds, _ = problem.model_conditionals(student)
    masses = problem.prefix_masses(pconds)
    total = 0.0
    for k, (p, q) in enumerate(zip(pconds, qconds)):
        pos = p > 0
        ratio = np.zeros_like(p)
        ratio[pos] = p[pos] * (np.log(p[pos]) - np.log(q[pos]))
        total += float(np.sum(masses[k][:, :, None] * ratio))
    return total / (T - n if normalizer is None else normalizer)


def exact_reward(source, n, T, reward, prompt_prior=None):
    """``E[w]`` over the exact ensemble of ``source``."""
    ens = build_ensemble(source, n, T, prompt_prior)
    problem = ExactProblem(ens.N, n, T, ens.stop_token, ens.prompt_prior)
    return float(np.sum(ens.joint() * reward_table(problem, reward)))


@dataclass
class SweepPoint:
    lam: float
    D: float = None
    R: float = None
    W: float = None
    di: float = None
    final_loss: float = None
    flagged: bool = False
    message: str = ""

    def as_dict(self):
        return {k: getattr(self, k) for k in ("lam", "D", "R", "W", "di", "final_loss", "flagged", "message")}


@dataclass
class SweepResult:
    points: list
    n: int
    T: int
    pareto: list = field(default_factory=list)

    def rows(self):
        return [p.as_dict() for p in self.points]


def pareto_front(points):
    """Points not dominated in (D, R), sorted by D; R is then non-increasing."""
    good = sorted((p for p in points if not p.flagged), key=lambda p: (p.D, p.R))
    front = []
    for p in good:
        if not front or p.R < front[-1].R:
            front.append(p)
    return front


def _student(teacher, cfg):
    return TransformerParams.random(teacher.n_tokens, cfg.dim, seed=cfg.seed, scale=cfg.init_scale,
                                    stop_token=teacher.stop_token)


def rd_sweep(teacher, config, student=None):
    """Train with ``DI/(T-n) + lam * CE`` at every grid value and record exact (D, R).

    ``lam = inf`` trains on cross-entropy alone. Points whose training
    diverges are flagged and the sweep continues.
    """
    init = _student(teacher, config) if student is None else student
    points = []
    for lam in config.grid:
        pt = SweepPoint(float(lam))
        try:
            res = train(init, teacher, config.steps, config.lr, loss="ce_plus_di", lam=lam,
                        T=config.T, n=config.n)
            ens = build_ensemble(res.params, config.n, config.T, teacher.prompt_prior)
            pt.di = directed_information(ens)
            pt.R = pt.di / config.T
            pt.D = mean_kl(teacher, res.params, config.n, config.T, normalizer=config.T)
            pt.final_loss = float(res.losses[-1])
        except (NonFiniteLossError, FloatingPointError, ValueError) as exc:
            pt.flagged, pt.message = True, str(exc)
        points.append(pt)
    points.sort(key=lambda p: (p.flagged, math.inf if p.D is None else p.D))
    return SweepResult(points, config.n, config.T, pareto_front(points))


def rr_sweep(teacher, config, reward, student=None):
    """Train with ``DI/(T-n) - lam * E[w]`` at every grid value and record exact (W, R).

    The student starts from the same initialization at every point;
    ``monotone_in_lambda`` is reported on the result, not enforced.
    """
    init = _student(teacher, config) if student is None else student
    points = []
    for lam in config.grid:
        pt = SweepPoint(float(lam))
        try:
            res = train(init, teacher, config.steps, config.lr, loss="di_minus_reward", lam=lam,
                        reward=reward, T=config.T, n=config.n)
            ens = build_ensemble(res.params, config.n, config.T, teacher.prompt_prior)
            pt.di = directed_information(ens)
            pt.R = pt.di / config.T
            pt.W = exact_reward(res.params, config.n, config.T, reward, teacher.prompt_prior)
            pt.final_loss = float(res.losses[-1])
        except (NonFiniteLossError, FloatingPointError, ValueError) as exc:
            pt.flagged, pt.message = True, str(exc)
        points.append(pt)
    return SweepResult(points, config.n, config.T)


def reward_monotone_in_lambda(result, tol=1e-9):
    good = sorted((p for p in result.points if not p.flagged), key=lambda p: p.lam)
    return all(b.W >= a.W - tol for a, b in zip(good, good[1:]))


@dataclass(frozen=True)
class Theorem1Report:
    mean_kl: float
    di_teacher: float
    di_student: float
    losses: np.ndarray
    student: TransformerParams

    @property
    def gap(self):
        return abs(self.di_student - self.di_teacher)


def verify_theorem1(teacher_params, student_init, steps, lr=1.0, n=2, T=5, prompt_prior=None):
    """Train a student on exact cross-entropy against a transformer teacher.

    Returns the final mean KL (per generated step) and both directed
    informations, each computed by enumeration.
    """
    from ..language import transformer_teacher

    teacher = transformer_teacher(teacher_params, prompt_length=n, prompt_prior=prompt_prior)
    res = train(student_init, teacher, steps, lr, loss="ce", T=T, n=n, record_every=max(1, steps // 100))
    di_t = directed_information(build_ensemble(teacher, n, T))
    di_s = directed_information(build_ensemble(res.params, n, T, teacher.prompt_prior))
    kl = mean_kl(teacher, res.params, n, T)
    return Theorem1Report(kl, di_t, di_s, res.losses, res.params)
