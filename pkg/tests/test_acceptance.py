"""The thirteen acceptance criteria, each run at its stated tolerance and time budget.

Every criterion prints one PASS/FAIL line (collected in the terminal summary).
The JL criterion is run as written; it does not hold for a faithful Gaussian
operator at the prescribed dimension and is reported as FAIL and marked xfail.
"""

import json
import time
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.stats import ortho_group

from conftest import ACCEPTANCE_LINES
from tokscope.analysis.bound import bound_resamples
from tokscope.analysis.elbo import elbo_training
from tokscope.analysis.embedding import EncoderFamily, embedding_bruteforce, embedding_objective
from tokscope.analysis.sweeps import verify_theorem1
from tokscope.cli import run
from tokscope.geometry import gw_cost, gw_distance_entropic, gw_distance_oracle, identity_coupling, random_space
from tokscope.instances import copy_ensemble, independent_ensemble, seed0_ensemble, seed0_params, seed0_teacher
from tokscope.language import markov_teacher
from tokscope.measures import (build_ensemble, directed_information, expected_information_density,
                               freedman_check, submartingale_check)
from tokscope.measures.dv import dv_estimate
from tokscope.model.training import cross_entropy_loss
from tokscope.model.transformer import (TransformerParams, attention_provider, next_token_distribution,
                                        tvvar_next)
from tokscope.projection import jl_check, jl_dimension, make_projection


def _report(number, title, passed, elapsed, budget, detail):
    ok = passed and elapsed < budget
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  "
                            f"({detail}; {elapsed:.1f}s of {budget}s)")
    print(ACCEPTANCE_LINES[-1])
    return ok


def test_01_exactness_substrate():
    t0 = time.perf_counter()
    ens = build_ensemble(seed0_params(), 2, 5)
    mass_err = abs(ens.total_mass() - 1)
    di_err = abs(expected_information_density(ens) - directed_information(ens))
    ok = _report(1, "ensemble mass and E[density] = DI (N=4, n=2, T=5)", mass_err <= 1e-10 and di_err <= 1e-10,
                 time.perf_counter() - t0, 5, f"mass err {mass_err:.1e}, DI err {di_err:.1e}")
    assert ok


def test_02_submartingale():
    t0 = time.perf_counter()
    rep = submartingale_check(seed0_ensemble(), 1000, seed=0)
    passed = rep.max_compensator_error <= 1e-10 and rep.violations == 0 and rep.min_increment >= 0
    ok = _report(2, "flow increments equal the KL compensator and are >= 0 (1000 paths)", passed,
                 time.perf_counter() - t0, 30,
                 f"compensator err {rep.max_compensator_error:.1e}, min increment {rep.min_increment:.3g}")
    assert ok


def test_03_pretraining_endpoint():
    t0 = time.perf_counter()
    teacher = TransformerParams.random(5, 4, seed=0, scale=2.0)
    student = TransformerParams.random(5, 4, seed=1, scale=0.5)
    rep = verify_theorem1(teacher, student, steps=5000, lr=1.0, n=2, T=5)
    ok = _report(3, "CE training drives KL < 1e-3 and DI gap < 5e-3 (N=5, d=4)",
                 rep.mean_kl < 1e-3 and rep.gap < 5e-3, time.perf_counter() - t0, 180,
                 f"KL {rep.mean_kl:.2e}, gap {rep.gap:.2e}, 5000 steps")
    assert ok


def test_04_tvvar_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        N, d = int(rng.integers(2, 7)), int(rng.integers(1, 6))
        p = TransformerParams.random(N, d, seed=seed, scale=float(rng.uniform(0.1, 3.0)),
                                     xi=float(rng.uniform(0.5, 2.0)))
        hist = rng.integers(0, N, size=int(rng.integers(1, 8)))
        a = tvvar_next(attention_provider(p), p.embedding, p.xi, p.embedding[hist])
        worst = max(worst, float(np.max(np.abs(a - next_token_distribution(p, hist)))))
    ok = _report(4, "attention forward = TV-VAR forward (1000 configs)", worst <= 1e-12,
                 time.perf_counter() - t0, 5, f"max diff {worst:.1e}")
    assert ok


def _free(p, **changes):
    # perturbed embeddings leave the sphere, so bypass the parameter checks
    arrs = {k: np.array(getattr(p, k)) for k in ("embedding", "A", "B")}
    arrs.update(changes)
    return SimpleNamespace(xi=p.xi, stop_token=p.stop_token, n_tokens=p.n_tokens, **arrs)


def test_05_gradients():
    t0 = time.perf_counter()
    worst, h = 0.0, 1e-5
    for seed in range(20):
        rng = np.random.default_rng(seed)
        N, d = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        p = TransformerParams.random(N, d, seed=seed, scale=float(rng.uniform(0.3, 2.0)))
        prefixes = [list(rng.integers(0, N, size=int(rng.integers(1, 5)))) for _ in range(4)]
        targets = list(rng.integers(0, N, size=4))
        _, g = cross_entropy_loss(p, prefixes, targets)
        for name in ("embedding", "A", "B"):
            base = getattr(p, name)
            for idx in np.ndindex(base.shape):
                up, dn = np.array(base), np.array(base)
                up[idx] += h
                dn[idx] -= h
                fd = (cross_entropy_loss(_free(p, **{name: up}), prefixes, targets)[0]
                      - cross_entropy_loss(_free(p, **{name: dn}), prefixes, targets)[0]) / (2 * h)
                worst = max(worst, abs(fd - g[name][idx]) / max(abs(fd), abs(g[name][idx]), 1e-8))
    ok = _report(5, "analytic vs central-difference gradients for u, A, B (20 points)", worst < 1e-5,
                 time.perf_counter() - t0, 10, f"max rel err {worst:.1e}")
    assert ok


def test_06_elbo():
    t0 = time.perf_counter()
    worst_excess, worst_gap = -np.inf, 0.0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        N, d = int(rng.integers(2, 6)), int(rng.integers(1, 5))
        p = TransformerParams.random(N, d, seed=seed, scale=float(rng.uniform(0.1, 3.0)))
        batch = [(rng.integers(0, N, size=int(rng.integers(1, 6))), int(rng.integers(0, N)))]
        res = elbo_training(p, batch)
        worst_excess = max(worst_excess, res.elbo - res.log_likelihood)
        worst_gap = max(worst_gap, abs(elbo_training(p, batch, q="posterior").gap))
    ok = _report(6, "ELBO <= log-likelihood, gap closes at the exact posterior (1000 configs)",
                 worst_excess <= 1e-12 and worst_gap < 1e-10, time.perf_counter() - t0, 10,
                 f"max ELBO - LL {worst_excess:.1e}, max posterior gap {worst_gap:.1e}")
    assert ok


def test_07_generalization_bound():
    t0 = time.perf_counter()
    results = bound_resamples(seed0_params(), seed0_teacher(prompt_length=2), 50, 0.1, 100, seed=0)
    held = sum(r.margin >= 0 for r in results)
    ok = _report(7, "bound >= exact cross-entropy (M=50, delta=0.1)", held == 100, time.perf_counter() - t0, 30,
                 f"{held}/100 resamples, min margin {min(r.margin for r in results):.3f}")
    assert ok


def test_08_jl():
    t0 = time.perf_counter()
    m = jl_dimension(100, 0.5, C=4)
    passed = 0
    for seed in range(100):
        space = random_space(100, 1024, [seed, 1])
        passed += jl_check(space, make_projection("gaussian", 1024, m, seed), 0.5).max_deviation <= 0.5
    ok = _report(8, f"JL deviation <= 0.5 at m={m}, N=1024, M=100", m == 74 and passed >= 95,
                 time.perf_counter() - t0, 30, f"{passed}/100 seeds")
    assert m == 74
    if not ok:
        pytest.xfail(f"only {passed}/100 seeds within 0.5 at m=74; see the decisions ledger")


def test_09_gw():
    t0 = time.perf_counter()
    S = random_space(6, 4, seed=0)
    self_cost = gw_cost(S, S, identity_coupling(S))
    Q = ortho_group.rvs(4, random_state=1)
    rot = gw_cost(S, S.rotated(Q), identity_coupling(S))
    excess = -np.inf
    for i in range(20):
        a, b = random_space(4, 3, 1000 + 2 * i), random_space(4, 3, 1001 + 2 * i)
        excess = max(excess, gw_distance_entropic(a, b).cost - gw_distance_oracle(a, b)[0])
    ok = _report(9, "GW self-distance, rotation invariance, entropic <= oracle + 1e-3 (20 instances)",
                 self_cost <= 1e-9 and rot <= 1e-6 and excess <= 1e-3, time.perf_counter() - t0, 30,
                 f"d(S,S) {self_cost:.1e}, rotated {rot:.1e}, max excess {excess:.1e}")
    assert ok


def test_10_dv():
    t0 = time.perf_counter()
    errs = []
    for ens in (independent_ensemble(), copy_ensemble(), seed0_ensemble()):
        exact = directed_information(ens)
        est = dv_estimate(ens, num_samples=20_000, seed=0)
        errs.append((abs(est.estimate - exact), max(0.1 * exact, 0.05)))
    ok = _report(10, "DV estimate within max(10%, 0.05) on independent, copy, seed-0",
                 all(e <= tol for e, tol in errs), time.perf_counter() - t0, 120,
                 "errors " + ", ".join(f"{e:.3f}" for e, _ in errs))
    assert ok


def test_11_freedman():
    t0 = time.perf_counter()
    table = freedman_check(seed0_ensemble(), (0.5, 1.0, 2.0), (0.5, 1.0, 2.0), num_paths=10_000, seed=0)
    worst = max(r["empirical"] - r["bound"] for r in table)
    ok = _report(11, "empirical joint frequency <= Freedman bound on the 3x3 grid (10^4 paths)",
                 len(table) == 9 and worst <= 0, time.perf_counter() - t0, 60, f"max excess {worst:.3f}")
    assert ok


def test_12_embedding():
    t0 = time.perf_counter()
    P = np.random.default_rng(0).dirichlet(np.full(3, 0.7), size=3)
    teacher = markov_teacher(P, 0, initial=np.full(3, 1 / 3))
    family = EncoderFamily(3, 2, 3)
    res = embedding_objective(family, teacher, 4)
    best, val, scores = embedding_bruteforce(family, teacher, 4)
    same = best == res.best and abs(val - res.objective) <= 1e-12 and np.max(np.abs(scores - res.scores)) <= 1e-12
    ok = _report(12, f"search optimum = brute-force rerun, objective <= CPC bound ({family.size} members)",
                 family.size <= 10_000 and same and res.max_violation <= 1e-10, time.perf_counter() - t0, 60,
                 f"objective {res.objective:.6f}, bound {res.cpc_upper_bound:.6f}")
    assert ok


DETERMINISM_RUNS = {
    "gen-teacher": ["--kind", "transformer", "--N", "3", "--d", "2"],
    "train": ["--steps", "20"],
    "flow": ["--num-paths", "100"],
    "di": ["--dv", "true", "--dv-samples", "2000"],
    "rd-sweep": ["--grid", "0,1,inf", "--steps", "20"],
    "rr-sweep": ["--grid", "0,10", "--steps", "20"],
    "capacity": ["--reward-token", "1", "--W", "0.9"],
    "elbo": ["--num-configs", "50"],
    "bound": ["--resamples", "10"],
    "fisher": ["--count", "4", "--mc-samples", "2000"],
    "jl": ["--N", "64", "--M", "10", "--trials", "5"],
    "gw": ["--instances", "2"],
    "embed-opt": ["--n", "3"],
}


def test_13_determinism(tmp_path):
    t0 = time.perf_counter()
    mismatched = []
    for command, extra in DETERMINISM_RUNS.items():
        dirs = [tmp_path / f"{command}-{k}" for k in range(2)]
        codes = [run([command, *extra, "--seed", "7", "--out", str(d)]) for d in dirs]
        for d in dirs:
            run(["report", str(d)])
        names = sorted(p.name for p in dirs[0].iterdir() if p.name != "meta.json")
        if codes[0] != codes[1] or codes[0] == 2 or names != sorted(p.name for p in dirs[1].iterdir()
                                                                    if p.name != "meta.json"):
            mismatched.append(command)
            continue
        if any((dirs[0] / n).read_bytes() != (dirs[1] / n).read_bytes() for n in names):
            mismatched.append(command)
        json.loads((dirs[0] / "meta.json").read_text())
    ok = _report(13, "byte-identical artifacts on rerun for every CLI experiment", not mismatched,
                 time.perf_counter() - t0, 600, f"{len(DETERMINISM_RUNS) - len(mismatched)}/"
                 f"{len(DETERMINISM_RUNS)} commands identical")
    assert ok, mismatched
