from __future__ import annotations

import argparse
import json

import pytest

from behaviorsynth.cli import build_parser, main, resolve_config
from behaviorsynth.config import ConfigError, RunConfig
from behaviorsynth.core import render_text
from behaviorsynth.ingest import FixtureSpec, load_dataset, save_dataset, simulate_fixture

from conftest import DICT, SPRING

FAST = ["--set", "sppc.autoencoder.epochs=3", "--set", "fixture.copies_per_pattern=4"]


def run(argv):
    return main([str(a) for a in argv])


# -- config -------------------------------------------------------------------------------

def test_config_round_trip():
    cfg = RunConfig().with_overrides({"sppc.rho": 0.3, "eval.rho_grid": [0.5, 1.0], "seed": 9})
    again = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert again.eval.rho_grid == (0.5, 1.0)


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="sppc.autoencoder"):
        RunConfig.from_dict({"sppc": {"autoencoder": {"epochz": 3}}})


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"generation.provider.timeout": 0})


def test_config_paths_validated(tmp_path):
    cfg = RunConfig().with_overrides({"paths.dictionary": str(tmp_path / "missing.json")})
    with pytest.raises(ConfigError, match="missing.json"):
        cfg.validate_paths()


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"sppc": {"rho": 0.2, "k": 4}, "seed": 3}))
    args = build_parser().parse_args(["compress", "--config", str(path), "--rho", "0.7",
                                      "--set", "sppc.k=6"])
    cfg = resolve_config(args)
    assert cfg.sppc.rho == 0.7  # flag beats file
    assert cfg.sppc.k == 6  # --set beats file
    assert cfg.seed == 3  # untouched file value survives


def test_explicit_flag_beats_set():
    args = build_parser().parse_args(["compress", "--set", "sppc.rho=0.1", "--rho", "0.9"])
    assert resolve_config(args).sppc.rho == 0.9


# -- help ----------------------------------------------------------------------------------

@pytest.mark.parametrize("sub", ["simulate", "compress", "generate", "evaluate", "pipeline"])
def test_help_documents_every_flag(sub, capsys):
    with pytest.raises(SystemExit) as exc:
        main([sub, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    parser = build_parser()
    subparser = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[sub]
    for action in subparser._actions:
        for flag in action.option_strings:
            assert flag in text
        assert action.help, f"{sub} {action.option_strings} has no help text"


# -- simulate / compress ------------------------------------------------------------------------------

def test_simulate_writes_fixture(tmp_path):
    out = tmp_path / "fx.jsonl"
    assert run(["simulate", "--out", out, "--patterns", 3, "--copies", 2, "--noise", 0, "--seed", 7]) == 0
    ds = load_dataset(out, DICT)
    assert ds == simulate_fixture(FixtureSpec(3, 2, 0.0, 7), DICT)
    assert (tmp_path / "fx.meta.json").exists()


def test_compress_half(tmp_path):
    fx = tmp_path / "fx.jsonl"
    save_dataset(simulate_fixture(FixtureSpec(pattern_count=3, copies_per_pattern=3), DICT), fx)
    assert run(["compress", "--dataset", fx, "--rho", 0.5, "--k", 3, "--out", tmp_path / "c", *FAST]) == 0
    lines = (tmp_path / "c" / "compressed.jsonl").read_text().splitlines()
    assert len(lines) == 5  # ceil(9 / 2)
    header = (tmp_path / "c" / "importance.csv").read_text().splitlines()[0]
    assert header == "id,score,rank,method,seed"
    assert len(json.loads((tmp_path / "c" / "dropped_ids.json").read_text())) == 4


def test_missing_dictionary_is_a_config_error(tmp_path, capsys):
    assert run(["compress", "--dict", tmp_path / "nope.json", "--out", tmp_path]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_exact_loo_guardrail(tmp_path, capsys):
    fx = tmp_path / "fx.jsonl"
    save_dataset(simulate_fixture(FixtureSpec(pattern_count=5, copies_per_pattern=100), DICT), fx)
    assert run(["compress", "--dataset", fx, "--method", "exact-loo", "--out", tmp_path / "c"]) == 2
    err = capsys.readouterr().err
    assert "500" in err and "--force" in err
    assert not (tmp_path / "c").exists()


def test_bad_set_syntax_exits_2(tmp_path):
    assert run(["compress", "--set", "sppc.rho", "--out", tmp_path]) == 2
    assert run(["compress", "--set", "sppc.nope=1", "--out", tmp_path]) == 2


def test_invalid_dataset_is_a_runtime_error(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert run(["compress", "--dataset", bad, "--out", tmp_path / "c"]) == 1


# -- generate ----------------------------------------------------------------------------------------

@pytest.fixture()
def kept_file(tmp_path):
    path = tmp_path / "kept.jsonl"
    save_dataset(simulate_fixture(FixtureSpec(pattern_count=2, copies_per_pattern=1), DICT), path)
    return path


def script_file(tmp_path, replies):
    path = tmp_path / "script.json"
    path.write_text(json.dumps(replies))
    return path


def test_generate_scripted_valid(tmp_path, kept_file):
    ds = load_dataset(kept_file, DICT)
    reply = "[" + ", ".join(render_text(s) for s in ds) + "] adapted"
    code = run(["generate", "--dataset", kept_file, "--out", tmp_path / "g",
                "--mock-script", script_file(tmp_path, [reply])])
    assert code == 0
    out = load_dataset(tmp_path / "g" / "synthetic.jsonl", DICT)
    assert len(out) == 2
    assert (tmp_path / "g" / "transcripts" / "run-001.jsonl").exists()


def test_generate_persistent_violations_exit_1(tmp_path, kept_file):
    bad = "[" + render_text(SPRING).replace("Light, on", "Light, heating", 1) + "]"
    script = script_file(tmp_path, [bad])
    argv = ["generate", "--dataset", kept_file, "--out", tmp_path / "g", "--mock-script", script]
    assert run(argv) == 1
    report = json.loads((tmp_path / "g" / "validation_report.json").read_text())
    assert report["clean"] is False and report["repair_rounds"] == 2
    assert run(argv + ["--allow-violations"]) == 0
    assert (tmp_path / "g" / "transcripts" / "run-002.jsonl").exists()


def test_generate_http_without_credential_exits_2(tmp_path, kept_file, monkeypatch, capsys):
    monkeypatch.delenv("BS_ABSENT_KEY", raising=False)
    import httpx

    def forbid(*a, **k):
        raise AssertionError("network used")

    monkeypatch.setattr(httpx.Client, "post", forbid)
    code = run(["generate", "--dataset", kept_file, "--out", tmp_path / "g", "--provider", "http",
                "--credential-env", "BS_ABSENT_KEY"])
    assert code == 2
    assert "BS_ABSENT_KEY" in capsys.readouterr().err


# -- pipeline --------------------------------------------------------------------------------------

def pipeline_args(out, *extra):
    return ["pipeline", "--out", out, "--mock-corrupt-first", *FAST, *extra]


def test_pipeline_without_eval(tmp_path):
    assert run(pipeline_args(tmp_path / "r", "--no-eval")) == 0
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["completed"] == ["compress", "generate"]
    assert manifest["status"] == "completed"


def test_pipeline_with_eval(tmp_path):
    argv = pipeline_args(tmp_path / "r", "--set", "eval.rho_grid=[0.5, 1.0]", "--k", 2)
    assert run(argv) == 0
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["completed"] == ["compress", "generate", "evaluate"]


def test_pipeline_manifest_covers_every_artifact_once(tmp_path):
    root = tmp_path / "r"
    assert run(pipeline_args(root, "--no-eval")) == 0
    manifest = json.loads((root / "manifest.json").read_text())
    listed = [a["path"] for s in manifest["stages"] for a in s["artifacts"]]
    on_disk = sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file())
    assert sorted(listed) == [p for p in on_disk if p != "manifest.json"]
    assert len(listed) == len(set(listed))


def test_pipeline_is_reproducible(tmp_path):
    assert run(pipeline_args(tmp_path / "a", "--no-eval")) == 0
    assert run(pipeline_args(tmp_path / "b", "--no-eval")) == 0
    assert run(pipeline_args(tmp_path / "a", "--no-eval")) == 0  # rerun in place
    a = (tmp_path / "a" / "manifest.json").read_bytes()
    assert a == (tmp_path / "b" / "manifest.json").read_bytes()


def test_pipeline_records_partial_completion(tmp_path, monkeypatch):
    monkeypatch.delenv("BS_ABSENT_KEY", raising=False)
    code = run(pipeline_args(tmp_path / "r", "--provider", "http", "--credential-env", "BS_ABSENT_KEY"))
    assert code == 2
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["completed"] == ["compress"]
    assert manifest["status"] == "failed"
    assert manifest["stages"][-1]["name"] == "generate"
