"""Command-line experiment runner.

Every subcommand resolves its configuration from built-in defaults, an
optional ``--config`` JSON file and command-line flags (flags win), runs one
library experiment and writes ``config.json``, ``result.json``, any curve CSVs
and a ``meta.json`` sidecar into ``--out``. Only ``meta.json`` carries
timestamps, so the other artifacts are byte-identical across reruns.

Exit codes: 0 success, 2 bad configuration or input file, 3 a checked
invariant failed.
"""

import argparse
import csv
import json
import math
import os
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT = 0, 2, 3
SEED_ENV = "TOKSCOPE_SEED"


class ConfigError(ValueError):
    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


# ---------------------------------------------------------------- option types

def _int_list(v):
    if isinstance(v, str):
        v = [x for x in v.split(",") if x.strip()]
    return [int(x) for x in v]


def _float_list(v):
    if isinstance(v, str):
        v = [x for x in v.split(",") if x.strip()]
    return [float(x) for x in v]


def _str_list(v):
    if isinstance(v, str):
        v = [x.strip() for x in v.split(",") if x.strip()]
    return [str(x) for x in v]


def _bool(v):
    if isinstance(v, bool):
        return v
    if str(v).lower() in ("1", "true", "yes", "on"):
        return True
    if str(v).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_int(v):
    return None if v is None or v == "" else int(v)


def _opt_float(v):
    return None if v is None or v == "" else float(v)


# name -> (converter, default, help); every command also takes seed/out/threads
SCHEMAS = {
    "gen-teacher": {
        "kind": (str, "markov", "markov or transformer"),
        "N": (int, 3, "alphabet size"),
        "order": (int, 1, "Markov order"),
        "d": (int, 3, "transformer embedding dimension"),
        "scale": (float, 2.0, "std of transformer A, B entries"),
        "concentration": (float, 1.0, "Dirichlet concentration of Markov rows"),
        "prompt_length": (int, 2, "prompt length n"),
        "stop_token": (int, 0, "stop token id"),
    },
    "train": {
        "teacher": (str, "", "teacher JSON (default: seed-0 transformer)"),
        "model": (str, "", "initial model JSON (default: random)"),
        "dim": (int, 3, "student dimension when drawn at random"),
        "init_scale": (float, 0.5, "std of random A, B"),
        "steps": (int, 200, "gradient steps"),
        "lr": (float, 0.5, "learning rate"),
        "loss": (str, "ce", "ce, ce-di or di-reward"),
        "lambda": (float, 1.0, "trade-off weight"),
        "reward_token": (int, 1, "di-reward: reward 1 when this token never appears"),
        "n": (_opt_int, None, "prompt length (default: teacher's)"),
        "T": (_opt_int, None, "horizon (default n + 3)"),
    },
    "flow": {
        "model": (str, "", "model JSON (default: seed-0 transformer)"),
        "n": (int, 2, "prompt length"),
        "T": (int, 5, "horizon"),
        "prompt": (_int_list, [], "prompt tokens (default: sampled)"),
        "continuation": (_int_list, [], "continuation tokens (default: sampled)"),
        "num_paths": (int, 1000, "paths for the sub-martingale check"),
    },
    "di": {
        "teacher": (str, "", "teacher JSON (supplies the prompt prior)"),
        "model": (str, "", "model JSON (default: the teacher itself)"),
        "n": (int, 2, "prompt length"),
        "T": (int, 5, "horizon"),
        "dv": (_bool, False, "also run the DV estimator"),
        "dv_samples": (int, 20000, "DV sample count"),
    },
    "rd-sweep": {
        "teacher": (str, "", "teacher JSON (default: seed-0 transformer, N=3, d=2)"),
        "grid": (_float_list, [0.0, 0.5, 1.0, 2.0, 5.0, math.inf], "lambda grid; inf = CE only"),
        "steps": (int, 300, "steps per grid point"),
        "lr": (float, 0.5, "learning rate"),
        "n": (int, 1, "prompt length"),
        "T": (int, 3, "horizon"),
        "dim": (int, 2, "student dimension"),
        "init_scale": (float, 0.5, "student init scale"),
    },
    "rr-sweep": {
        "teacher": (str, "", "teacher JSON (default: seed-0 transformer, N=3, d=2)"),
        "grid": (_float_list, [0.0, 1.0, 10.0, 50.0], "lambda grid"),
        "reward_token": (int, 1, "reward 1 when this token never appears"),
        "steps": (int, 300, "steps per grid point"),
        "lr": (float, 0.5, "learning rate"),
        "n": (int, 1, "prompt length"),
        "T": (int, 3, "horizon"),
        "dim": (int, 2, "student dimension"),
        "init_scale": (float, 0.5, "student init scale"),
    },
    "capacity": {
        "model": (str, "", "model JSON (default: seed-0 transformer)"),
        "n": (int, 1, "prompt length"),
        "T": (int, 3, "horizon"),
        "prompts": (_str_list, [], "admissible prompts, e.g. '01,12' (default: all)"),
        "reward_token": (_opt_int, None, "reward 1 when this token never appears"),
        "W": (_opt_float, None, "reward threshold"),
        "method": (str, "both", "grid, alternating or both"),
        "resolution": (float, 0.05, "grid resolution"),
    },
    "elbo": {
        "model": (str, "", "model JSON (default: seed-0 transformer)"),
        "num_configs": (int, 1000, "random (history, target) pairs"),
        "max_len": (int, 5, "longest history"),
        "prefix": (_int_list, [1, 2, 3, 0], "prefix for the inference table"),
    },
    "bound": {
        "model": (str, "", "model JSON (default: seed-0 transformer)"),
        "teacher": (str, "", "teacher JSON (default: seed-0 transformer)"),
        "M": (int, 50, "samples per resample"),
        "delta": (float, 0.1, "confidence parameter"),
        "resamples": (int, 100, "independent resamples"),
        "step": (int, 0, "generated position (0 = first)"),
    },
    "fisher": {
        "model": (str, "", "model JSON (default: seed-0 transformer)"),
        "param": (str, "B", "embedding, A or B"),
        "count": (int, 10, "leading entries of the parameter"),
        "prefix_length": (int, 2, "contexts: all prefixes of this length, uniform"),
        "h": (float, 1e-3, "finite-difference step"),
        "mc_samples": (int, 0, "Monte-Carlo score samples (0 = exact expectation)"),
    },
    "jl": {
        "N": (int, 1024, "ambient dimension"),
        "M": (int, 100, "number of vectors"),
        "eps": (float, 0.5, "distortion tolerance"),
        "C": (float, 4.0, "bound constant"),
        "m": (int, 0, "target dimension (0 = JL bound)"),
        "kinds": (_str_list, ["gaussian"], "projection kinds"),
        "trials": (int, 100, "seeds per kind"),
        "min_pass_fraction": (float, 0.95, "required fraction of trials within eps"),
    },
    "gw": {
        "space_a": (str, "", "space JSON (default: random)"),
        "space_b": (str, "", "space JSON (default: random)"),
        "count": (int, 4, "points per random space"),
        "dim": (int, 3, "dimension of random spaces"),
        "instances": (int, 20, "random instances when no files are given"),
        "epsilon": (float, 1e-3, "entropic regularization"),
        "n_init": (int, 8, "random solver starts"),
        "tol": (float, 1e-3, "allowed excess over the permutation oracle"),
    },
    "embed-opt": {
        "teacher": (str, "", "Markov teacher JSON (default: binary order-1 chain)"),
        "n": (int, 4, "sequence length"),
        "n_codes": (int, 2, "codebook size"),
        "n_states": (int, 2, "state-machine size"),
        "verify": (_bool, True, "rerun with the dense brute-force scorer"),
    },
    "report": {
        "run_dir": (str, "", "directory holding result.json"),
    },
}

COMMON = ("seed", "out", "threads")


# ---------------------------------------------------------------- config

def _parse_seed(v, source):
    try:
        s = int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"seed from {source} is not an integer: {v!r}")
    if not 0 <= s < 2 ** 64:
        raise ConfigError(f"seed from {source} must be an unsigned 64-bit value")
    return s


def resolve_config(command, file_cfg, flags):
    """Merge defaults, file values and flag values; reject unknown keys."""
    schema = SCHEMAS[command]
    unknown = set(file_cfg) - set(schema) - set(COMMON)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = {k: default for k, (_, default, _) in schema.items()}
    for source in (file_cfg, flags):
        for k, v in source.items():
            if k in COMMON or v is None:
                continue
            conv = schema[k][0]
            try:
                cfg[k] = conv(v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {k!r}: {exc}")
    if flags.get("seed") is not None:
        seed = _parse_seed(flags["seed"], "--seed")
    elif file_cfg.get("seed") is not None:
        seed = _parse_seed(file_cfg["seed"], "config file")
    elif os.environ.get(SEED_ENV):
        seed = _parse_seed(os.environ[SEED_ENV], SEED_ENV)
    else:
        seed = 0
    return cfg, seed


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{what} not found", path)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{what} is not valid JSON: {exc}", path)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def _dump(obj, path):
    # json writes floats via repr: shortest round-trip form
    Path(path).write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# ---------------------------------------------------------------- loaders

def _load_model(path):
    from .model.transformer import TransformerParams
    obj = _load_json(path, "model file")
    try:
        return TransformerParams.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model file: {exc}", path)


def _load_teacher(path):
    from .language import teacher_from_dict
    obj = _load_json(path, "teacher file")
    try:
        return teacher_from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid teacher file: {exc}", path)


def _load_space(path):
    from .geometry import space_from_dict
    obj = _load_json(path, "space file")
    try:
        return space_from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid space file: {exc}", path)


def _model_or_default(cfg):
    from .instances import seed0_params
    return _load_model(cfg["model"]) if cfg["model"] else seed0_params()


def _sweep_teacher(cfg, n):
    from .language import transformer_teacher
    from .model.transformer import TransformerParams
    if cfg["teacher"]:
        return _load_teacher(cfg["teacher"])
    return transformer_teacher(TransformerParams.random(3, 2, seed=0, scale=2.0), prompt_length=n)


def _check(name, passed, detail=None):
    return {"name": name, "passed": bool(passed), "detail": detail}


# ---------------------------------------------------------------- commands

def cmd_gen_teacher(cfg, seed, out):
    from .language import markov_teacher, save_teacher, transformer_teacher
    from .model.transformer import TransformerParams
    rng = np.random.default_rng(seed)
    N = cfg["N"]
    if cfg["kind"] == "markov":
        shape = (N,) * cfg["order"]
        trans = rng.dirichlet(np.full(N, cfg["concentration"]), size=shape or None)
        teacher = markov_teacher(trans, cfg["stop_token"], cfg["prompt_length"])
    elif cfg["kind"] == "transformer":
        params = TransformerParams.random(N, cfg["d"], seed=seed, scale=cfg["scale"],
                                          stop_token=cfg["stop_token"])
        teacher = transformer_teacher(params, prompt_length=cfg["prompt_length"])
    else:
        raise ConfigError("kind must be 'markov' or 'transformer'")
    save_teacher(teacher, out / "teacher.json")
    return {"points": [], "assertions": [], "teacher_file": "teacher.json"}


def cmd_train(cfg, seed, out):
    from .analysis.sweeps import no_token_reward
    from .instances import seed0_teacher
    from .model.training import train
    from .model.transformer import TransformerParams
    teacher = _load_teacher(cfg["teacher"]) if cfg["teacher"] else seed0_teacher()
    loss = {"ce": "ce", "ce-di": "ce_plus_di", "di-reward": "di_minus_reward"}.get(cfg["loss"])
    if loss is None:
        raise ConfigError("loss must be ce, ce-di or di-reward")
    if cfg["model"]:
        init = _load_model(cfg["model"])
    else:
        init = TransformerParams.random(teacher.n_tokens, cfg["dim"], seed=seed, scale=cfg["init_scale"],
                                        stop_token=teacher.stop_token)
    reward = no_token_reward(cfg["reward_token"]) if loss == "di_minus_reward" else None
    res = train(init, teacher, cfg["steps"], cfg["lr"], loss=loss, lam=cfg["lambda"], reward=reward,
                T=cfg["T"], n=cfg["n"])
    _dump(res.params.to_dict(), out / "model.json")
    rows = [(i, float(v)) for i, v in enumerate(res.losses)]
    _write_csv(out / "loss.csv", ["step", "loss"], rows)
    finite = bool(np.all(np.isfinite(res.losses)))
    return {"points": [{"step": i, "loss": v} for i, v in rows],
            "assertions": [_check("loss_finite", finite)],
            "final_loss": float(res.losses[-1]), "model_file": "model.json"}


def cmd_flow(cfg, seed, out):
    from .measures.ensemble import build_ensemble
    from .measures.flow import sample_paths, semantic_flow, submartingale_check
    ens = build_ensemble(_model_or_default(cfg), cfg["n"], cfg["T"])
    if cfg["prompt"] and cfg["continuation"]:
        prompt, cont = cfg["prompt"], cfg["continuation"]
    else:
        s, toks = sample_paths(ens, 1, seed)
        prompt, cont = ens.prompts[s[0]].tolist(), toks[0].tolist()
    trace = semantic_flow(ens, prompt, cont)
    trace.to_csv(out / "flow.csv")
    rep = submartingale_check(ens, cfg["num_paths"], seed)
    doob = float(np.max(np.abs(trace.M + trace.A - trace.cumulative)))
    mono = bool(np.all(np.diff(trace.A) >= -1e-10))
    points = [dict(zip(("step", "density", "cumulative", "M", "A", "V"), r)) for r in trace.rows()]
    return {"points": points, "prompt": prompt, "continuation": cont,
            "assertions": [_check("doob_decomposition", doob <= 1e-10, doob),
                           _check("compensator_nondecreasing", mono),
                           _check("submartingale", rep.violations == 0, rep.min_margin),
                           _check("compensator_matches_kl", rep.max_compensator_error <= 1e-10,
                                  rep.max_compensator_error)]}


def cmd_di(cfg, seed, out):
    from .measures.directed import backward_directed_information, directed_information, mutual_information
    from .measures.dv import dv_estimate
    from .measures.ensemble import build_ensemble
    teacher = _load_teacher(cfg["teacher"]) if cfg["teacher"] else None
    if cfg["model"]:
        source = _load_model(cfg["model"])
    elif teacher is not None:
        source = teacher
    else:
        from .instances import seed0_params
        source = seed0_params()
    prior = teacher.prompt_prior if teacher is not None and teacher.prompt_length == cfg["n"] else None
    ens = build_ensemble(source, cfg["n"], cfg["T"], prior)
    di = directed_information(ens)
    mi = mutual_information(ens)
    res = {"points": [], "directed_information": di, "mutual_information": mi,
           "backward_directed_information": backward_directed_information(ens),
           "assertions": [_check("di_le_mi", di <= mi + 1e-10, mi - di),
                          _check("mass_one", abs(ens.total_mass() - 1) <= 1e-10)]}
    if cfg["dv"]:
        est = dv_estimate(ens, num_samples=cfg["dv_samples"], seed=seed)
        res["dv_estimate"] = est.estimate
        res["assertions"].append(_check("dv_within_tolerance",
                                        abs(est.estimate - di) <= max(0.1 * abs(di), 0.05),
                                        est.estimate - di))
    return res


def _sweep_csv(out, name, result, key):
    rows = [(p.lam, p.D if key == "D" else p.W, p.R, p.di, p.flagged) for p in result.points]
    _write_csv(out / name, ["lam", key, "R", "di", "flagged"],
               [(r[0], r[1] if r[1] is not None else "", r[2] if r[2] is not None else "",
                 r[3] if r[3] is not None else "", int(r[4])) for r in rows])


def cmd_rd_sweep(cfg, seed, out):
    from .analysis.sweeps import SweepConfig, rd_sweep
    teacher = _sweep_teacher(cfg, cfg["n"])
    sc = SweepConfig(tuple(cfg["grid"]), cfg["steps"], cfg["lr"], seed, cfg["n"], cfg["T"], cfg["dim"],
                     cfg["init_scale"])
    res = rd_sweep(teacher, sc)
    _sweep_csv(out, "rd.csv", res, "D")
    front = [(p.D, p.R) for p in res.pareto]
    mono = all(b[1] <= a[1] + 1e-12 for a, b in zip(front, front[1:]))
    return {"points": res.rows(), "pareto": [p.as_dict() for p in res.pareto], "n": res.n, "T": res.T,
            "assertions": [_check("pareto_nonincreasing", mono)]}


def cmd_rr_sweep(cfg, seed, out):
    from .analysis.sweeps import SweepConfig, no_token_reward, reward_monotone_in_lambda, rr_sweep
    teacher = _sweep_teacher(cfg, cfg["n"])
    sc = SweepConfig(tuple(cfg["grid"]), cfg["steps"], cfg["lr"], seed, cfg["n"], cfg["T"], cfg["dim"],
                     cfg["init_scale"])
    res = rr_sweep(teacher, sc, no_token_reward(cfg["reward_token"]))
    _sweep_csv(out, "rr.csv", res, "W")
    return {"points": res.rows(), "n": res.n, "T": res.T,
            "reward_monotone_in_lambda": reward_monotone_in_lambda(res), "assertions": []}


def cmd_capacity(cfg, seed, out):
    from .analysis.capacity import semantic_capacity
    from .analysis.sweeps import no_token_reward
    model = _model_or_default(cfg)
    reward = None if cfg["reward_token"] is None else no_token_reward(cfg["reward_token"])
    family = [tuple(int(c) for c in p) for p in cfg["prompts"]] or None
    methods = ("grid", "alternating") if cfg["method"] == "both" else (cfg["method"],)
    if any(m not in ("grid", "alternating") for m in methods):
        raise ConfigError("method must be grid, alternating or both")
    points, assertions = [], []
    for m in methods:
        kw = {"resolution": cfg["resolution"]} if m == "grid" else {}
        r = semantic_capacity(model, cfg["n"], cfg["T"], reward=reward, W=cfg["W"], method=m,
                              prompt_family=family, **kw)
        points.append({"method": m, "capacity": r.capacity, "feasible": r.feasible,
                       "prior": r.prior, "expected_reward": r.expected_reward})
    if len(points) == 2 and all(p["feasible"] for p in points):
        gap = abs(points[0]["capacity"] - points[1]["capacity"])
        assertions.append(_check("grid_alternating_agree", gap <= 1e-3, gap))
    return {"points": points, "assertions": assertions}


def cmd_elbo(cfg, seed, out):
    from .analysis.elbo import elbo_inference, elbo_training
    model = _model_or_default(cfg)
    rng = np.random.default_rng(seed)
    batch = []
    for _ in range(cfg["num_configs"]):
        L = int(rng.integers(1, cfg["max_len"] + 1))
        batch.append((rng.integers(0, model.n_tokens, L), int(rng.integers(model.n_tokens))))
    att = elbo_training(model, batch)
    post = elbo_training(model, batch, q="posterior")
    table = elbo_inference(model, cfg["prefix"])
    points = [{"token": v, "elbo": float(e), "log_marginal": float(l)}
              for v, (e, l) in enumerate(zip(table.elbo, table.log_marginal))]
    min_gap = float(att.per_example[:, 2].min())
    max_post = float(np.abs(post.per_example[:, 2]).max())
    return {"points": points, "elbo": att.elbo, "log_likelihood": att.log_likelihood, "gap": att.gap,
            "argmax_agree": table.argmax_agree,
            "assertions": [_check("elbo_le_loglik", min_gap >= -1e-12, min_gap),
                           _check("posterior_gap_zero", max_post < 1e-10, max_post),
                           _check("inference_elbo_le_marginal",
                                  bool(np.all(table.elbo <= table.log_marginal + 1e-12)))]}


def cmd_bound(cfg, seed, out):
    from .analysis.bound import bound_resamples
    from .instances import seed0_teacher
    model = _model_or_default(cfg)
    teacher = _load_teacher(cfg["teacher"]) if cfg["teacher"] else seed0_teacher()
    if not 0 < cfg["delta"] < 1:
        raise ConfigError("delta must lie in (0, 1)")
    rs = bound_resamples(model, teacher, cfg["M"], cfg["delta"], cfg["resamples"], seed, step=cfg["step"])
    points = [{"resample": i, "empirical_loss": r.empirical_loss, "bound": r.bound,
               "true_cross_entropy": r.true_cross_entropy, "margin": r.margin} for i, r in enumerate(rs)]
    _write_csv(out / "bound.csv", ["resample", "empirical_loss", "bound", "true_cross_entropy"],
               [(p["resample"], p["empirical_loss"], p["bound"], p["true_cross_entropy"]) for p in points])
    violations = sum(r.margin < 0 for r in rs)
    return {"points": points, "assertions": [_check("bound_ge_truth", violations == 0, violations)]}


def cmd_fisher(cfg, seed, out):
    from .analysis.fisher import ContextDistribution, fisher_matrix, parameter_subset, score_outer_product
    model = _model_or_default(cfg)
    if cfg["param"] not in ("embedding", "A", "B"):
        raise ConfigError("param must be embedding, A or B")
    ctx = ContextDistribution.uniform_prompts(model.n_tokens, cfg["prefix_length"])
    subset = parameter_subset(model, cfg["param"], cfg["count"])
    F = fisher_matrix(model, ctx, subset, cfg["h"])
    S = score_outer_product(model, ctx, subset, num_samples=cfg["mc_samples"] or None, seed=seed)
    err = float(np.max(np.abs(F.matrix - S)))
    return {"points": [], "matrix": F.matrix, "eigenvalues": F.eigenvalues, "score_outer_product": S,
            "subset": [[name, list(i)] for name, i in subset],
            "assertions": [_check("symmetric", F.asymmetry <= 1e-8, F.asymmetry),
                           _check("psd", F.psd, F.min_eigenvalue),
                           _check("matches_score_outer_product", err <= 5e-3, err)]}


def cmd_jl(cfg, seed, out):
    from .geometry import random_space
    from .projection import compression_distortion, jl_check, jl_dimension, make_projection
    m = cfg["m"] or jl_dimension(cfg["M"], cfg["eps"], cfg["C"])
    rows, points, assertions = [], [], []
    for kind in cfg["kinds"]:
        passed = 0
        for trial in range(cfg["trials"]):
            s = seed + trial
            # spaces get their own stream; a shared seed would align A's rows with the vectors
            space = random_space(cfg["M"], cfg["N"], [s, 1])
            op = make_projection(kind, cfg["N"], m, s)
            dev = jl_check(space, op, cfg["eps"]).max_deviation
            dist = compression_distortion(space, op).identity_coupling
            passed += dev <= cfg["eps"]
            rows.append((s, kind, cfg["N"], m, cfg["eps"], dev, dist))
            points.append({"seed": s, "kind": kind, "m": m, "max_deviation": dev, "distortion": dist})
        frac = passed / cfg["trials"]
        assertions.append(_check(f"jl_{kind}_pass_fraction", frac >= cfg["min_pass_fraction"], frac))
    _write_csv(out / "jl.csv", ["seed", "kind", "N", "m", "eps", "max_deviation", "distortion"], rows)
    return {"points": points, "m": m, "assertions": assertions}


def cmd_gw(cfg, seed, out):
    from .geometry import gw_distance_entropic, gw_distance_oracle, random_space, ORACLE_MAX_POINTS
    if bool(cfg["space_a"]) != bool(cfg["space_b"]):
        raise ConfigError("give both space_a and space_b, or neither")
    if cfg["space_a"]:
        pairs = [(_load_space(cfg["space_a"]), _load_space(cfg["space_b"]))]
    else:
        pairs = [(random_space(cfg["count"], cfg["dim"], seed + 2 * i),
                  random_space(cfg["count"], cfg["dim"], seed + 2 * i + 1)) for i in range(cfg["instances"])]
    points, worst = [], -math.inf
    for i, (a, b) in enumerate(pairs):
        r = gw_distance_entropic(a, b, epsilon=cfg["epsilon"], n_init=cfg["n_init"], seed=seed)
        p = {"instance": i, "cost": r.cost, "converged": r.converged, "oracle": None}
        uniform = np.allclose(a.weights, 1 / a.count) and np.allclose(b.weights, 1 / b.count)
        if a.count == b.count <= ORACLE_MAX_POINTS and uniform:
            p["oracle"] = gw_distance_oracle(a, b)[0]
            worst = max(worst, r.cost - p["oracle"])
        points.append(p)
    _write_csv(out / "gw.csv", ["instance", "cost", "oracle"],
               [(p["instance"], p["cost"], "" if p["oracle"] is None else p["oracle"]) for p in points])
    assertions = []
    if worst > -math.inf:
        assertions.append(_check("entropic_le_oracle_plus_tol", worst <= cfg["tol"], worst))
    return {"points": points, "assertions": assertions}


def cmd_embed_opt(cfg, seed, out):
    from .analysis.embedding import EncoderFamily, embedding_bruteforce, embedding_objective
    from .language import markov_teacher
    if cfg["teacher"]:
        teacher = _load_teacher(cfg["teacher"])
    else:
        teacher = markov_teacher(np.array([[0.8, 0.2], [0.3, 0.7]]), 0, initial=[0.5, 0.5])
    try:
        family = EncoderFamily(teacher.n_tokens, cfg["n_codes"], cfg["n_states"])
    except ValueError as exc:
        raise ConfigError(str(exc))
    r = embedding_objective(family, teacher, cfg["n"])
    assertions = [_check("objective_le_cpc_bound", r.bound_holds, r.max_violation)]
    if cfg["verify"]:
        best, val, scores = embedding_bruteforce(family, teacher, cfg["n"])
        same = best == r.best and abs(val - r.objective) <= 1e-12
        assertions.append(_check("bruteforce_agrees", same, float(np.max(np.abs(scores - r.scores)))))
    return {"points": [{"member": i, "objective": float(v)} for i, v in enumerate(r.scores)],
            "best": {"codebook": list(r.best.codebook), "transition": [list(t) for t in r.best.transition]},
            "objective": r.objective, "cpc_upper_bound": r.cpc_upper_bound, "family_size": family.size,
            "assertions": assertions}


COMMANDS = {
    "gen-teacher": cmd_gen_teacher, "train": cmd_train, "flow": cmd_flow, "di": cmd_di,
    "rd-sweep": cmd_rd_sweep, "rr-sweep": cmd_rr_sweep, "capacity": cmd_capacity, "elbo": cmd_elbo,
    "bound": cmd_bound, "fisher": cmd_fisher, "jl": cmd_jl, "gw": cmd_gw, "embed-opt": cmd_embed_opt,
}


# ---------------------------------------------------------------- driver

def build_parser():
    parser = argparse.ArgumentParser(prog="tokscope", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        if name == "report":
            p.add_argument("run_dir", nargs="?", default=None)
            continue
        p.add_argument("--config", default=None, help="JSON config file; flags override it")
        p.add_argument("--seed", default=None, help=f"unsigned 64-bit seed (fallback: ${SEED_ENV}, then 0)")
        p.add_argument("--out", default=None, help="output directory (default: runs/<command>)")
        p.add_argument("--threads", type=int, default=None, help="cap on numeric threads")
        for key, (_, _, help_) in schema.items():
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, help=help_)
    return parser


def _error(code, message, path=None, **extra):
    payload = {"error": message, "exit_code": code}
    if path is not None:
        payload["path"] = str(path)
    payload.update(extra)
    print(json.dumps(_jsonable(payload), sort_keys=True))
    return code


def _run_report(run_dir):
    from .report import ReportError, render_report
    if not run_dir:
        return _error(EXIT_CONFIG, "report needs a run directory")
    try:
        summary = render_report(run_dir)
    except ReportError as exc:
        return _error(EXIT_CONFIG, str(exc), exc.path)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def run(argv=None):
    """Parse ``argv``, run one experiment and return the exit code."""
    args = build_parser().parse_args(argv)
    if args.command == "report":
        return _run_report(args.run_dir)
    schema = SCHEMAS[args.command]
    flags = {k: getattr(args, k) for k in schema}
    flags["seed"] = args.seed
    try:
        file_cfg = {}
        if args.config:
            file_cfg = _load_json(args.config, "config file")
            if not isinstance(file_cfg, dict):
                raise ConfigError("config file must hold a JSON object", args.config)
        cfg, seed = resolve_config(args.command, file_cfg, flags)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, str(exc), exc.path)
    out = Path(args.out or file_cfg.get("out") or Path("runs") / args.command)
    threads = args.threads or file_cfg.get("threads") or os.cpu_count() or 1
    started = datetime.now(timezone.utc).isoformat()
    try:
        out.mkdir(parents=True, exist_ok=True)
        _dump({"command": args.command, "seed": seed, **cfg}, out / "config.json")
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=int(threads)):
            result = COMMANDS[args.command](cfg, seed, out)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, str(exc), exc.path)
    except (ValueError, OSError) as exc:
        return _error(EXIT_CONFIG, f"{type(exc).__name__}: {exc}", getattr(exc, "filename", None))
    result = {"command": args.command, "config": cfg, "seed": seed, **result}
    _dump(result, out / "result.json")
    _dump({"started": started, "finished": datetime.now(timezone.utc).isoformat(),
           "version": __version__, "threads": int(threads), "python": platform.python_version()},
          out / "meta.json")
    failed = [a["name"] for a in result["assertions"] if not a["passed"]]
    if failed:
        return _error(EXIT_ASSERT, "assertion failed", failed=failed)
    print(json.dumps({"ok": True, "out": str(out)}))
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
