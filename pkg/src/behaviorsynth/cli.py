"""Command-line entry point.

Subcommands: simulate, compress, generate, evaluate, pipeline.  Every
subcommand reads an optional JSON config (``--config``); explicit flags and
``--set dotted.key=value`` override it.  Exit codes: 0 success, 1 runtime
failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from .config import ConfigError, RunConfig
from .core import BehaviorDataset, DeviceDictionary, build_vocabulary, default_dictionary
from .errors import BehaviorSynthError, InvalidDictionary, InvalidSpec, MissingCredential
from .evaluation import EvalRun, export_figure_data, file_sha256, run_comparison, write_run_manifest
from .generation import SceneSpec, Transcript, generate_dataset, make_provider, write_generation_outputs
from .generation.providers import mock_script_from, resolve_credential
from .ingest import FixtureSpec, load_dataset, save_dataset, save_fixture, simulate_fixture
from .sppc import MAX_EXACT_LOO, compress, score_exact_loo, score_kfold, score_similarity

log = logging.getLogger("behaviorsynth")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
COMPRESS_METHODS = {"sppc-loo": "sppc-loo", "exact-loo": "sppc-loo", "sppc-kfold": "sppc-kfold",
                    "kfold": "sppc-kfold", "similarity": "similarity"}


class StageFailed(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


# -- shared helpers ---------------------------------------------------------------

def load_dictionary(cfg: RunConfig) -> DeviceDictionary:
    if cfg.paths.dictionary is None:
        return default_dictionary()
    if not Path(cfg.paths.dictionary).is_file():
        raise ConfigError(f"dictionary path does not exist: {cfg.paths.dictionary}")
    try:
        return DeviceDictionary.load(cfg.paths.dictionary)
    except (InvalidDictionary, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad dictionary {cfg.paths.dictionary}: {exc}") from None


def load_source(cfg: RunConfig, dictionary: DeviceDictionary) -> BehaviorDataset:
    if cfg.paths.dataset is not None:
        if not Path(cfg.paths.dataset).is_file():
            raise ConfigError(f"dataset path does not exist: {cfg.paths.dataset}")
        return load_dataset(cfg.paths.dataset, dictionary, strict=True)
    if cfg.fixture is None:
        raise ConfigError("no dataset path and no fixture spec configured")
    return simulate_fixture(_fixture_with_seed(cfg), dictionary)


def _fixture_with_seed(cfg: RunConfig) -> FixtureSpec:
    f = cfg.fixture
    return FixtureSpec(f.pattern_count, f.copies_per_pattern, f.noise_rate, cfg.seed, f.sequence_length)


# -- stages -----------------------------------------------------------------------------

def run_compress(cfg: RunConfig, out_dir: Path) -> tuple[BehaviorDataset, dict[str, Path]]:
    method = COMPRESS_METHODS.get(cfg.sppc.method)
    if method is None:
        raise ConfigError(f"unknown compression method {cfg.sppc.method!r}")
    dictionary = load_dictionary(cfg)
    ds = load_source(cfg, dictionary)
    if method == "sppc-loo" and len(ds) > MAX_EXACT_LOO and not cfg.sppc.force:
        raise ConfigError(
            f"exact leave-one-out on {len(ds)} sequences means {len(ds)} autoencoder trainings "
            f"(limit {MAX_EXACT_LOO}); use --method sppc-kfold or pass --force")
    if not 0 < cfg.sppc.rho <= 1:
        raise ConfigError(f"rho must lie in (0, 1], got {cfg.sppc.rho}")
    vocab = build_vocabulary(dictionary)
    ae = cfg.sppc.autoencoder.replace(seed=cfg.seed)
    if method == "similarity":
        report = score_similarity(ds)
    elif method == "sppc-kfold":
        if not 2 <= cfg.sppc.k <= len(ds):
            raise ConfigError(f"k must satisfy 2 <= k <= {len(ds)}, got {cfg.sppc.k}")
        report = score_kfold(ds, vocab, ae, cfg.sppc.k, n_jobs=cfg.sppc.n_jobs)
    else:
        report = score_exact_loo(ds, vocab, ae, n_jobs=cfg.sppc.n_jobs)
    result = compress(report, ds, cfg.sppc.rho)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "importance": out_dir / "importance.csv",
        "compressed": out_dir / "compressed.jsonl",
        "dropped": out_dir / "dropped_ids.json",
    }
    report.save_csv(files["importance"])
    save_dataset(result.kept, files["compressed"])
    files["dropped"].write_text(json.dumps(list(result.dropped), indent=1) + "\n", encoding="utf-8")
    log.info("compress: kept %d of %d sequences (%s, rho=%s)", len(result.kept), len(ds), method, cfg.sppc.rho)
    return result.kept, files


def _next_transcript(out_dir: Path) -> Path:
    tdir = out_dir / "transcripts"
    n = 1
    while (tdir / f"run-{n:03d}.jsonl").exists():
        n += 1
    return tdir / f"run-{n:03d}.jsonl"


def run_generate(cfg: RunConfig, out_dir: Path, kept: BehaviorDataset | None = None):
    dictionary = load_dictionary(cfg)
    gen = cfg.generation
    try:
        scene = SceneSpec(gen.previous_env, gen.new_env)
    except InvalidSpec as exc:
        raise ConfigError(str(exc)) from None
    pcfg = gen.provider.__class__(**{**gen.provider.to_dict(), "seed": cfg.seed})
    if pcfg.kind == "http":
        resolve_credential(pcfg)  # fail before any network traffic
    if kept is None:
        if cfg.paths.dataset is None:
            raise ConfigError("generate needs --dataset (the compressed sequences)")
        kept = load_source(cfg, dictionary)
    provider = make_provider(pcfg, dictionary)
    transcript = Transcript(_next_transcript(out_dir))
    result = generate_dataset(kept, dictionary, scene, provider, pcfg, max_rounds=gen.rounds,
                              token_budget=gen.token_budget, transcript=transcript)
    files = write_generation_outputs(result, out_dir, provenance=f"generated {gen.previous_env} -> {gen.new_env}")
    rep = result.report
    log.info("generate: %d accepted, %d rejected, %d repair round(s)", rep.accepted, len(rep.rejected),
             rep.repair_rounds)
    for w in rep.warnings:
        log.warning(w)
    return result, files


def run_evaluate(cfg: RunConfig, out_dir: Path, n_jobs: int = 1) -> dict[str, Path]:
    dictionary = load_dictionary(cfg)
    ev = cfg.eval
    if cfg.paths.dataset is not None:
        if not Path(cfg.paths.dataset).is_file():
            raise ConfigError(f"dataset path does not exist: {cfg.paths.dataset}")
        fixture, dataset = None, cfg.paths.dataset
    elif cfg.fixture is not None:
        fixture, dataset = _fixture_with_seed(cfg), None
    else:
        raise ConfigError("evaluate needs --dataset or a fixture spec")
    try:
        run = EvalRun(fixture=fixture, dataset_path=dataset, methods=ev.methods, rho_grid=ev.rho_grid,
                      train_fraction=ev.train_fraction, k=cfg.sppc.k, top_k=ev.top_k, seed=cfg.seed,
                      autoencoder=cfg.sppc.autoencoder)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    result = run_comparison(run, dictionary, n_jobs=n_jobs)
    files = export_figure_data(result, out_dir)
    files["manifest"] = write_run_manifest(result, files, out_dir)
    for row in result.table_rows():
        log.info("evaluate: %-11s rho=%.2f mean=%.4f var=%.4f", row["method"], row["rho"], row["mean"],
                 row["variance"])
    return files


# -- argument parsing -------------------------------------------------------------------

def _parse_copies(text: str):
    if "-" in text:
        lo, hi = text.split("-", 1)
        return [int(lo), int(hi)]
    return int(text)


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_common(p: argparse.ArgumentParser, out_help: str = "output directory") -> None:
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field by dotted path (value parsed as JSON when possible)")
    p.add_argument("--seed", type=int, dest="seed", help="global seed (propagates to every stage)")
    p.add_argument("--dict", dest="paths.dictionary", help="device dictionary JSON (default: built-in)")
    p.add_argument("--out", dest="paths.out_dir", help=out_help)
    p.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING or ERROR")


def _add_autoencoder(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, dest="sppc.autoencoder.epochs", help="autoencoder training epochs")
    p.add_argument("--learning-rate", type=float, dest="sppc.autoencoder.learning_rate", help="SGD step size")
    p.add_argument("--n-jobs", type=int, dest="sppc.n_jobs", help="parallel training processes")


def _add_generation(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene-from", dest="generation.previous_env", help="previous environment description")
    p.add_argument("--scene-to", dest="generation.new_env", help="changed environment description")
    p.add_argument("--provider", choices=["mock", "http"], dest="generation.provider.kind",
                   help="LLM provider")
    p.add_argument("--model", dest="generation.provider.model", help="model name for the http provider")
    p.add_argument("--endpoint", dest="generation.provider.endpoint", help="chat-completions base URL")
    p.add_argument("--credential-env", dest="generation.provider.credential_env",
                   help="environment variable holding the API key")
    p.add_argument("--rounds", type=int, dest="generation.rounds", help="maximum repair rounds")
    p.add_argument("--token-budget", type=float, dest="generation.token_budget",
                   help="estimated prompt tokens per chunk")
    p.add_argument("--mock-script", dest="mock_script_file",
                   help="JSON list of canned responses for the mock provider (switches it to script mode)")
    p.add_argument("--mock-corrupt-first", action="store_const", const=True,
                   dest="generation.provider.mock_corrupt_first",
                   help="mock echo mode: corrupt one sequence in the first reply")
    p.add_argument("--allow-violations", action="store_const", const=True,
                   dest="generation.allow_violations", help="exit 0 even if invalid sequences remain")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="behaviorsynth",
        description="Compress smart-home behavior datasets and synthesize sequences for new scenes.",
        epilog="Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic fixture dataset")
    _add_common(p, out_help="output JSON Lines file (a .meta.json sidecar is written next to it)")
    p.add_argument("--patterns", type=int, dest="fixture.pattern_count", help="number of base patterns")
    p.add_argument("--copies", type=_parse_copies, dest="fixture.copies_per_pattern",
                   help="copies per pattern, N or LO-HI")
    p.add_argument("--noise", type=float, dest="fixture.noise_rate", help="per-behavior perturbation rate")

    p = sub.add_parser("compress", help="score sequences and keep the top fraction")
    _add_common(p)
    p.add_argument("--dataset", dest="paths.dataset", help="input JSON Lines dataset (default: fixture)")
    p.add_argument("--method", choices=sorted(COMPRESS_METHODS), dest="sppc.method", help="scoring method")
    p.add_argument("--rho", type=float, dest="sppc.rho", help="retention fraction in (0, 1]")
    p.add_argument("--k", type=int, dest="sppc.k", help="number of folds for sppc-kfold")
    p.add_argument("--force", action="store_const", const=True, dest="sppc.force",
                   help="allow exact leave-one-out on more than 200 sequences")
    _add_autoencoder(p)

    p = sub.add_parser("generate", help="synthesize sequences for a changed scene")
    _add_common(p)
    p.add_argument("--dataset", dest="paths.dataset", help="compressed JSON Lines dataset")
    _add_generation(p)

    p = sub.add_parser("evaluate", help="compare full vs compressed training on held-out data")
    _add_common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--fixture-spec", dest="fixture_spec_file", help="JSON fixture spec file")
    src.add_argument("--dataset", dest="paths.dataset", help="JSON Lines dataset")
    p.add_argument("--rho-grid", type=_float_list, dest="eval.rho_grid", help="comma-separated retention grid")
    p.add_argument("--methods", type=_str_list, dest="eval.methods",
                   help="comma-separated: full, similarity, sppc-kfold, sppc-loo")
    p.add_argument("--k", type=int, dest="sppc.k", help="folds for sppc-kfold")
    p.add_argument("--top-k", type=int, dest="eval.top_k", help="length of the top-K loss curve")
    _add_autoencoder(p)

    p = sub.add_parser("pipeline", help="compress -> generate -> evaluate in one run directory")
    _add_common(p, out_help="run directory")
    p.add_argument("--dataset", dest="paths.dataset", help="input JSON Lines dataset (default: fixture)")
    p.add_argument("--method", choices=sorted(COMPRESS_METHODS), dest="sppc.method", help="scoring method")
    p.add_argument("--rho", type=float, dest="sppc.rho", help="retention fraction in (0, 1]")
    p.add_argument("--k", type=int, dest="sppc.k", help="number of folds for sppc-kfold")
    p.add_argument("--force", action="store_const", const=True, dest="sppc.force",
                   help="allow exact leave-one-out on more than 200 sequences")
    p.add_argument("--no-eval", action="store_const", const=False, dest="eval.enabled",
                   help="skip the evaluation stage")
    _add_autoencoder(p)
    _add_generation(p)
    for sp in sub.choices.values():
        for action in sp._actions:
            if action.metavar is None and action.choices is None and action.nargs != 0 and "." in action.dest:
                action.metavar = action.dest.rsplit(".", 1)[-1].upper()
    return parser


_NON_CONFIG = {"command", "config", "set", "mock_script_file", "fixture_spec_file"}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file, then ``--set`` overrides, then explicit flags (flags win)."""
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides: dict = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            overrides[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key.strip()] = raw
    for dest, value in vars(args).items():
        if dest in _NON_CONFIG or value is None:
            continue
        overrides[dest] = value
    if getattr(args, "fixture_spec_file", None):
        try:
            overrides["fixture"] = json.loads(Path(args.fixture_spec_file).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"fixture spec not found: {args.fixture_spec_file}") from None
        overrides.pop("paths.dataset", None)
    if getattr(args, "mock_script_file", None):
        try:
            overrides["generation.provider.mock_script"] = list(mock_script_from(args.mock_script_file))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"bad mock script {args.mock_script_file}: {exc}") from None
        overrides["generation.provider.mock_mode"] = "script"
    if "seed" in overrides and "fixture.seed" not in overrides and args.command == "simulate":
        overrides["fixture.seed"] = overrides["seed"]
    return cfg.with_overrides(overrides)


# -- commands ----------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args) -> int:
    if cfg.fixture is None:
        raise ConfigError("no fixture spec configured")
    dictionary = load_dictionary(cfg)
    ds = simulate_fixture(_fixture_with_seed(cfg), dictionary)
    out = Path(cfg.paths.out_dir)
    if out.suffix != ".jsonl":
        out = out / "fixture.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = save_fixture(ds, out)
    log.info("simulate: wrote %d sequences to %s (metadata %s)", len(ds), out, meta)
    return EXIT_OK


def cmd_compress(cfg: RunConfig, args) -> int:
    run_compress(cfg, Path(cfg.paths.out_dir))
    return EXIT_OK


def cmd_generate(cfg: RunConfig, args) -> int:
    result, _ = run_generate(cfg, Path(cfg.paths.out_dir))
    if result.report.clean or cfg.generation.allow_violations:
        return EXIT_OK
    log.error("generate: %d invalid sequence(s) and %d parse error(s) remain after %d repair round(s); "
              "see validation_report.json", len(result.report.rejected), len(result.report.parse_errors),
              result.report.repair_rounds)
    return EXIT_RUNTIME


def cmd_evaluate(cfg: RunConfig, args) -> int:
    run_evaluate(cfg, Path(cfg.paths.out_dir), n_jobs=cfg.sppc.n_jobs)
    return EXIT_OK


def _manifest_config(cfg: RunConfig) -> dict:
    d = cfg.to_dict()
    d["paths"].pop("out_dir", None)  # run location must not affect the manifest
    return d


PIPELINE_STAGES = ("compress", "generate", "evaluate")


def cmd_pipeline(cfg: RunConfig, args) -> int:
    run_dir = Path(cfg.paths.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    for stale in PIPELINE_STAGES:  # a rerun replaces the previous run's stage artifacts
        if (run_dir / stale).is_dir():
            shutil.rmtree(run_dir / stale)
    manifest = {"config": _manifest_config(cfg), "stages": [], "completed": [], "status": "running"}
    stages = ["compress", "generate"] + (["evaluate"] if cfg.eval.enabled else [])

    def record(name: str, files: dict[str, Path], status: str = "completed", error: str | None = None):
        entry = {"name": name, "status": status, "artifacts": []}
        for key, path in sorted(files.items()):
            entry["artifacts"].append({"key": key, "path": path.relative_to(run_dir).as_posix(),
                                       "sha256": file_sha256(path)})
        if error:
            entry["error"] = error
        manifest["stages"].append(entry)
        if status == "completed":
            manifest["completed"].append(name)

    code = EXIT_OK
    kept = None
    for name in stages:
        try:
            if name == "compress":
                kept, files = run_compress(cfg, run_dir / "compress")
            elif name == "generate":
                result, files = run_generate(cfg, run_dir / "generate", kept=kept)
                if not (result.report.clean or cfg.generation.allow_violations):
                    record(name, files, "failed", "invalid sequences remain after repair")
                    code = EXIT_RUNTIME
                    break
            else:
                files = run_evaluate(cfg, run_dir / "evaluate", n_jobs=cfg.sppc.n_jobs)
            record(name, files)
        except (ConfigError, MissingCredential) as exc:
            record(name, {}, "failed", str(exc))
            code = EXIT_USAGE
            break
        except (BehaviorSynthError, OSError) as exc:
            record(name, {}, "failed", str(exc))
            code = EXIT_RUNTIME
            break
    manifest["status"] = "completed" if code == EXIT_OK else "failed"
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if code != EXIT_OK:
        failed = manifest["stages"][-1]
        print(f"behaviorsynth: pipeline stopped at {failed['name']}: {failed.get('error', '')}", file=sys.stderr)
    return code


COMMANDS = {
    "simulate": cmd_simulate,
    "compress": cmd_compress,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        logging.basicConfig(level=getattr(logging, str(cfg.log_level).upper(), logging.INFO),
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, MissingCredential, InvalidSpec) as exc:
        print(f"behaviorsynth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BehaviorSynthError, OSError) as exc:
        print(f"behaviorsynth: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
