"""Generate, validate and repair synthetic sequences; write the outputs."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

from ..core import SEQUENCE_LENGTH, BehaviorDataset, BehaviorSequence, DeviceDictionary, render_text
from ..errors import NoSequenceBlock, MalformedList
from ..ingest import save_dataset
from .parsing import (
    NO_SEQUENCE_BLOCK,
    GenerationResult,
    Rejection,
    ValidationReport,
    count_warning,
    parse_response,
    validate_candidates,
)
from .prompt import PromptBundle, SceneSpec, chunk_prompts
from .providers import ChatProvider, ProviderConfig, Transcript, generate

log = logging.getLogger(__name__)


def repair_request(rejected: list[Rejection], parse_error: str | None = None) -> str:
    if parse_error:
        return ("Your previous answer could not be used: " + parse_error + ". Answer again with the "
                "sequences in the format [[...], [...], ...], 40 elements per sequence.")
    lines = ["The following sequences were invalid because of the listed problems; regenerate only those, "
             "in the format [[...], [...], ...]:"]
    for n, r in enumerate(rejected, start=1):
        reasons = "; ".join(f"{v.code}: {v.detail}" for v in r.violations)
        lines.append(f"{n}. {r.rendering} -- {reasons}")
    return "\n".join(lines)


def _parse_round(raw: str, dictionary: DeviceDictionary, expected: int, expected_behaviors: int):
    try:
        cands, explanation = parse_response(raw, dictionary)
    except (NoSequenceBlock, MalformedList) as exc:
        return None, str(exc)
    return validate_candidates(cands, dictionary, expected, expected_behaviors, explanation=explanation), None


def repair_loop(bundle: PromptBundle, provider: ChatProvider, cfg: ProviderConfig, dictionary: DeviceDictionary,
                expected_count: int, max_rounds: int, transcript: Transcript | None = None,
                expected_behaviors: int = SEQUENCE_LENGTH, call_offset: int = 0,
                sleep: Callable[[float], None] = time.sleep) -> GenerationResult:
    """Generate once, then re-prompt with the violations until clean or out of rounds.

    Accepted sequences from every round are merged, deduplicated by
    rendering.  The final report carries the latest round's rejections.
    """
    if max_rounds < 0:
        raise ValueError("max_rounds must be >= 0")
    transcript = transcript or Transcript()
    accepted: dict[str, BehaviorSequence] = {}
    explanations: list[str] = []
    report = ValidationReport(expected_count=expected_count)
    prompt = bundle
    rounds = 0
    while True:
        raw = generate(prompt, provider, cfg, transcript, call_index=call_offset + rounds, sleep=sleep)
        result, parse_error = _parse_round(raw, dictionary, expected_count, expected_behaviors)
        if result is None:
            report.parse_errors = [f"{NO_SEQUENCE_BLOCK}: {parse_error}"]
            rejected: list[Rejection] = report.rejected  # nothing new; earlier rejections stand
        else:
            report.parse_errors = []
            report.candidates += result.report.candidates
            for seq in result.sequences:
                key = render_text(seq)
                if key in accepted:
                    report.duplicates += 1
                else:
                    accepted[key] = seq
            report.duplicates += result.report.duplicates
            rejected = result.report.rejected
            if result.explanation:
                explanations.append(result.explanation)
        report.rejected = rejected
        if report.clean or rounds >= max_rounds:
            break
        rounds += 1
        prompt = bundle.with_appendix(repair_request(rejected, parse_error))
        if parse_error:
            log.info("repair round %d: previous reply had no usable sequence block", rounds)
        else:
            log.info("repair round %d: %d invalid sequence(s)", rounds, len(rejected))
    report.repair_rounds = rounds
    sequences = [seq.with_id(f"gen-{i:05d}") for i, seq in enumerate(accepted.values())]
    report.accepted = len(sequences)
    w = count_warning(len(sequences), expected_count)
    report.warnings = [w] if w else []
    return GenerationResult(sequences, "\n\n".join(explanations), report,
                            str(transcript.path) if transcript.path else None)


def generate_dataset(kept: BehaviorDataset, dictionary: DeviceDictionary, scene: SceneSpec,
                     provider: ChatProvider, cfg: ProviderConfig, max_rounds: int = 2,
                     token_budget: float = 8000, transcript: Transcript | None = None,
                     sleep: Callable[[float], None] = time.sleep) -> GenerationResult:
    """Chunk the prompt to the token budget, run the repair loop per chunk and merge."""
    transcript = transcript or Transcript()
    bundles = chunk_prompts(kept, dictionary, scene, token_budget)

    def run(n: int) -> GenerationResult:
        # call indices are reserved per chunk so numbering does not depend on scheduling
        return repair_loop(bundles[n], provider, cfg, dictionary, bundles[n].sequence_count, max_rounds,
                           transcript, call_offset=n * (max_rounds + 1), sleep=sleep)

    if cfg.concurrency > 1 and len(bundles) > 1:
        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            results = list(pool.map(run, range(len(bundles))))
    else:
        results = [run(n) for n in range(len(bundles))]

    merged: dict[str, BehaviorSequence] = {}
    total = ValidationReport(expected_count=len(kept))
    explanations = []
    for n, res in enumerate(results):
        for seq in res.sequences:
            key = render_text(seq)
            if key in merged:
                total.duplicates += 1
            else:
                merged[key] = seq
        total.candidates += res.report.candidates
        total.duplicates += res.report.duplicates
        total.rejected.extend(res.report.rejected)
        total.parse_errors.extend(f"chunk {n}: {e}" for e in res.report.parse_errors)
        total.repair_rounds = max(total.repair_rounds, res.report.repair_rounds)
        if res.explanation:
            explanations.append(res.explanation)
    sequences = [seq.with_id(f"gen-{i:05d}") for i, seq in enumerate(merged.values())]
    total.accepted = len(sequences)
    w = count_warning(len(sequences), len(kept))
    if w:
        total.warnings.append(w)
    return GenerationResult(sequences, "\n\n".join(explanations), total,
                            str(transcript.path) if transcript.path else None)


def write_generation_outputs(result: GenerationResult, out_dir: str | Path,
                             provenance: str = "synthetic") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "synthetic": out / "synthetic.jsonl",
        "explanation": out / "explanation.txt",
        "validation_report": out / "validation_report.json",
    }
    save_dataset(BehaviorDataset(tuple(result.sequences), provenance), files["synthetic"])
    files["explanation"].write_text(result.explanation + ("\n" if result.explanation else ""), encoding="utf-8")
    files["validation_report"].write_text(json.dumps(result.report.to_dict(), indent=2) + "\n", encoding="utf-8")
    if result.transcript:
        files["transcript"] = Path(result.transcript)
    return files
