"""Dataset I/O, prompt-size estimation and the synthetic fixture simulator."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    SEQUENCE_LENGTH,
    Behavior,
    BehaviorDataset,
    BehaviorSequence,
    DeviceDictionary,
    Timestamp,
    normalize_element,
    render_text,
    timestamp_from_datetime,
)
from .errors import BehaviorSynthError, InvalidSpec, ParseError, ValidationError

log = logging.getLogger(__name__)

CHARS_PER_TOKEN = 4


# -- JSON Lines datasets ---------------------------------------------------------

def _behavior_from_row(row, dictionary: DeviceDictionary) -> Behavior:
    if not isinstance(row, (list, tuple)):
        raise ValueError(f"behavior must be a list, got {type(row).__name__}")
    if len(row) == 4:
        return Behavior.of(*(normalize_element(x) for x in row))
    if len(row) == 3:
        # absolute datetime form, e.g. ["2022-08-04 18:30", "Airconditioner", "switch on"]
        ts = timestamp_from_datetime(str(row[0]), dictionary)
        return Behavior(ts, normalize_element(row[1]), normalize_element(row[2]))
    raise ValueError(f"behavior must have 3 or 4 fields, got {len(row)}")


def sequence_from_record(obj, dictionary: DeviceDictionary,
                         expected_behaviors: int | None = SEQUENCE_LENGTH) -> BehaviorSequence:
    if not isinstance(obj, dict) or "id" not in obj or "seq" not in obj:
        raise ValueError('record must be an object with "id" and "seq"')
    seq = BehaviorSequence(tuple(_behavior_from_row(r, dictionary) for r in obj["seq"]), str(obj["id"]))
    return dictionary.validate(seq, expected_behaviors)


def load_dataset(path: str | Path, dictionary: DeviceDictionary, strict: bool = True,
                 expected_behaviors: int | None = SEQUENCE_LENGTH) -> BehaviorDataset:
    """Read a JSON Lines dataset and validate every sequence.

    In strict mode the first bad line raises.  Otherwise bad lines are
    skipped and listed under ``metadata["load_report"]``.
    """
    sequences: list[BehaviorSequence] = []
    skipped: list[dict] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                if strict:
                    raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
                skipped.append({"line": lineno, "reason": f"parse: {exc.msg}"})
                continue
            try:
                seq = sequence_from_record(obj, dictionary, expected_behaviors)
                if seq.id in seen:
                    raise ValidationError(f"duplicate sequence id {seq.id!r}")
            except (ValidationError, ValueError, BehaviorSynthError) as exc:
                if strict:
                    raise ValidationError(str(exc), getattr(exc, "violations", ()), line=lineno) from None
                skipped.append({"line": lineno, "reason": str(exc)})
                continue
            seen.add(seq.id)
            sequences.append(seq)
    if skipped:
        log.warning("%s: skipped %d invalid line(s)", path, len(skipped))
    return BehaviorDataset(tuple(sequences), provenance=str(path),
                           metadata={"load_report": {"loaded": len(sequences), "skipped": skipped}})


def dataset_to_jsonl(ds: BehaviorDataset) -> str:
    return "".join(
        json.dumps({"id": s.id, "seq": [list(b.elements()) for b in s.behaviors]}, ensure_ascii=False) + "\n"
        for s in ds.sequences
    )


def save_dataset(ds: BehaviorDataset, path: str | Path) -> None:
    Path(path).write_text(dataset_to_jsonl(ds), encoding="utf-8")


# -- token budgeting ---------------------------------------------------------------

@dataclass(frozen=True)
class TokenEstimate:
    tokens: float
    characters: int
    elements: int
    sequences: int = 0

    @property
    def per_sequence(self) -> float:
        return self.tokens / self.sequences if self.sequences else 0.0


def estimate_tokens(ds: BehaviorDataset) -> TokenEstimate:
    """Rough prompt footprint: rendered characters / 4, plus exact element count."""
    chars = sum(len(render_text(s)) for s in ds.sequences)
    elements = sum(4 * len(s) for s in ds.sequences)
    return TokenEstimate(chars / CHARS_PER_TOKEN, chars, elements, len(ds.sequences))


# -- fixture simulator --------------------------------------------------------------

@dataclass(frozen=True)
class FixtureSpec:
    pattern_count: int = 5
    copies_per_pattern: int | tuple[int, int] = 40
    noise_rate: float = 0.05
    seed: int = 0
    sequence_length: int = SEQUENCE_LENGTH

    def __post_init__(self):
        if isinstance(self.copies_per_pattern, list):
            object.__setattr__(self, "copies_per_pattern", tuple(self.copies_per_pattern))
        if int(self.pattern_count) < 1:
            raise InvalidSpec("pattern_count must be a positive integer")
        cp = self.copies_per_pattern
        if isinstance(cp, tuple):
            if len(cp) != 2 or not 1 <= cp[0] <= cp[1]:
                raise InvalidSpec(f"copies_per_pattern range must be (lo, hi) with 1 <= lo <= hi, got {cp}")
        elif int(cp) < 1:
            raise InvalidSpec("copies_per_pattern must be a positive integer")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise InvalidSpec(f"noise_rate must lie in [0, 1], got {self.noise_rate}")
        if self.sequence_length < 1:
            raise InvalidSpec("sequence_length must be positive")

    @classmethod
    def from_json_obj(cls, obj: dict) -> "FixtureSpec":
        try:
            return cls(**obj)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from None


def _base_pattern(rng: np.random.Generator, dictionary: DeviceDictionary, length: int,
                  pairs: list[tuple[str, str]]) -> tuple[Behavior, ...]:
    day = int(rng.integers(len(dictionary.days)))
    slots = np.sort(rng.integers(len(dictionary.slots), size=length))
    picks = rng.integers(len(pairs), size=length)
    return tuple(
        Behavior(Timestamp(dictionary.days[day], dictionary.slots[int(s)]), *pairs[int(p)])
        for s, p in zip(slots, picks)
    )


def simulate_fixture(spec: FixtureSpec, dictionary: DeviceDictionary) -> BehaviorDataset:
    """Duplicate-heavy dataset: ``pattern_count`` base routines, each copied
    with a per-behavior chance ``noise_rate`` of swapping in a different
    (device, control) pair.  Timestamps are never perturbed.

    ``metadata["pattern_of"]`` maps sequence id to its pattern index and
    ``metadata["noise_of"]`` to the number of perturbed behaviors.
    """
    if len(dictionary.devices) < 2:
        raise InvalidSpec("fixture simulation needs a dictionary with at least two devices")
    rng = np.random.default_rng(spec.seed)
    pairs = dictionary.pairs()

    patterns: list[tuple[Behavior, ...]] = []
    for _ in range(spec.pattern_count):
        for _attempt in range(1000):
            pat = _base_pattern(rng, dictionary, spec.sequence_length, pairs)
            if pat not in patterns:
                break
        else:
            raise InvalidSpec("could not draw distinct base patterns; dictionary too small")
        patterns.append(pat)

    sequences: list[BehaviorSequence] = []
    pattern_of: dict[str, int] = {}
    noise_of: dict[str, int] = {}
    for p, pat in enumerate(patterns):
        cp = spec.copies_per_pattern
        n_copies = int(rng.integers(cp[0], cp[1] + 1)) if isinstance(cp, tuple) else int(cp)
        for _ in range(n_copies):
            behaviors = list(pat)
            flips = rng.random(len(behaviors)) < spec.noise_rate
            for i in np.flatnonzero(flips):
                old = pairs.index((behaviors[i].device, behaviors[i].control))
                # uniform over the other pairs, so every flip is a real change
                new = int(rng.integers(len(pairs) - 1))
                new += new >= old
                behaviors[i] = Behavior(behaviors[i].when, *pairs[new])
            sid = f"s{len(sequences):05d}"
            sequences.append(BehaviorSequence(tuple(behaviors), sid))
            pattern_of[sid] = p
            noise_of[sid] = int(flips.sum())
    return BehaviorDataset(
        tuple(sequences),
        provenance=f"fixture(patterns={spec.pattern_count}, copies={spec.copies_per_pattern}, "
                   f"noise={spec.noise_rate}, seed={spec.seed})",
        metadata={"pattern_of": pattern_of, "noise_of": noise_of},
    )


def save_fixture(ds: BehaviorDataset, path: str | Path) -> Path:
    """Write the dataset plus a ``<stem>.meta.json`` sidecar (id -> pattern)."""
    path = Path(path)
    save_dataset(ds, path)
    meta_path = path.with_name(path.stem + ".meta.json")
    meta_path.write_text(
        json.dumps({"provenance": ds.provenance, "pattern_of": dict(ds.metadata.get("pattern_of", {}))},
                   indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return meta_path
