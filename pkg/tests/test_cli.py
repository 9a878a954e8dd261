import json

import numpy as np
import pytest

from tokscope.cli import SCHEMAS, resolve_config, run
from tokscope.language import load_teacher
from tokscope.measures import build_ensemble, directed_information
from tokscope.model.transformer import TransformerParams


def _last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


@pytest.fixture
def files(tmp_path):
    assert run(["gen-teacher", "--kind", "transformer", "--N", "3", "--d", "2", "--seed", "4",
                "--out", str(tmp_path / "t")]) == 0
    assert run(["train", "--teacher", str(tmp_path / "t" / "teacher.json"), "--steps", "20",
                "--out", str(tmp_path / "m")]) == 0
    return tmp_path / "t" / "teacher.json", tmp_path / "m" / "model.json"


def test_di_matches_library(files, tmp_path):
    teacher_path, model_path = files
    out = tmp_path / "di"
    assert run(["di", "--teacher", str(teacher_path), "--model", str(model_path), "--n", "2", "--T", "5",
                "--out", str(out)]) == 0
    result = json.loads((out / "result.json").read_text())
    teacher = load_teacher(teacher_path)
    model = TransformerParams.from_dict(json.loads(model_path.read_text()))
    expected = directed_information(build_ensemble(model, 2, 5, teacher.prompt_prior))
    assert result["directed_information"] == expected


def test_missing_file_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert run(["di", "--teacher", str(missing), "--out", str(tmp_path / "o")]) == 2
    err = _last_json(capsys)
    assert err["exit_code"] == 2 and err["path"] == str(missing)


def test_unknown_config_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 2, "colour": "blue"}))
    assert run(["di", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "colour" in _last_json(capsys)["error"]


@pytest.mark.parametrize("seed", ["-1", str(2 ** 64), "abc"])
def test_bad_seed_exit_2(tmp_path, seed):
    assert run(["di", "--seed", seed, "--out", str(tmp_path / "o")]) == 2


def test_malformed_config_exit_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert run(["di", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_seed_precedence(monkeypatch):
    schema_flags = {k: None for k in SCHEMAS["di"]}
    monkeypatch.setenv("TOKSCOPE_SEED", "17")
    assert resolve_config("di", {}, {**schema_flags, "seed": None})[1] == 17
    assert resolve_config("di", {"seed": 5}, {**schema_flags, "seed": None})[1] == 5
    assert resolve_config("di", {"seed": 5}, {**schema_flags, "seed": "9"})[1] == 9
    monkeypatch.delenv("TOKSCOPE_SEED")
    assert resolve_config("di", {}, {**schema_flags, "seed": None})[1] == 0


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 1, "T": 3}))
    out = tmp_path / "o"
    assert run(["di", "--config", str(cfg), "--T", "4", "--out", str(out)]) == 0
    echoed = json.loads((out / "config.json").read_text())
    assert echoed["n"] == 1 and echoed["T"] == 4


def test_rerun_is_byte_identical(tmp_path):
    args = ["rd-sweep", "--grid", "0,1,inf", "--steps", "30", "--seed", "3"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("rd.csv", "result.json", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    meta = json.loads((tmp_path / "a" / "meta.json").read_text())
    assert {"started", "finished", "version", "threads"} <= set(meta)


def test_failed_assertion_exit_3(tmp_path, capsys):
    assert run(["jl", "--trials", "3", "--m", "2", "--out", str(tmp_path / "j")]) == 3
    assert _last_json(capsys)["failed"]


def test_nan_and_inf_serialize(tmp_path):
    out = tmp_path / "cap"
    assert run(["capacity", "--reward-token", "1", "--W", "0.99", "--out", str(out)]) in (0, 3)
    text = (out / "result.json").read_text()
    assert "NaN" not in text and "Infinity" not in text
    json.loads(text)


def test_parser_knows_every_command():
    assert set(SCHEMAS) == {"gen-teacher", "train", "flow", "di", "rd-sweep", "rr-sweep", "capacity", "elbo",
                            "bound", "fisher", "jl", "gw", "embed-opt", "report"}


def test_report_from_cli_run(tmp_path, capsys):
    out = tmp_path / "f"
    assert run(["flow", "--num-paths", "50", "--out", str(out)]) == 0
    assert run(["report", str(out)]) == 0
    summary = _last_json(capsys)
    assert summary["plots"] == ["flow.svg"] and summary["failed"] == 0
    assert np.all([line.startswith(("PASS", "command", "seed", "4/4"))
                   for line in (out / "summary.txt").read_text().splitlines()])
