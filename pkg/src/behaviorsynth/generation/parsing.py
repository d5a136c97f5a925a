"""Extract ``[[...], [...], ...]`` sequence blocks from free-form LLM output
and validate the candidates against the device dictionary."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..core import SEQUENCE_LENGTH, BehaviorSequence, DeviceDictionary, Violation, normalize_element, render_text
from ..errors import MalformedList, NoSequenceBlock

_FENCE = re.compile(r"^[ \t]*```[^\n]*$", re.MULTILINE)
_ELLIPSIS = {"...", "…"}

COUNT_DEVIATION = "CountDeviation"
NO_SEQUENCE_BLOCK = "NO_SEQUENCE_BLOCK"


def _match_bracket(text: str, start: int) -> int:
    """Index of the ']' closing the '[' at ``start``."""
    depth = 0
    for i in range(start, len(text)):
        c = text[i]
        if c == "[":
            depth += 1
        elif c == "]":
            depth -= 1
            if depth == 0:
                return i
    raise MalformedList("unbalanced '['", start)


def _top_level_lists(text: str):
    """Yield (start, end) of every top-level bracketed span."""
    i = 0
    while i < len(text):
        if text[i] == "[":
            end = _match_bracket(text, i)
            yield i, end
            i = end + 1
        else:
            i += 1


def _split_elements(body: str, offset: int) -> list[str]:
    if "[" in body or "]" in body:
        raise MalformedList("unexpected nested bracket in a behavior list", offset)
    items = [normalize_element(x) for x in body.split(",")]
    while items and not items[-1]:
        items.pop()
    if any(not x for x in items):
        raise MalformedList("empty element in a behavior list", offset)
    return items


def _inner_lists(block: str, offset: int) -> list[list[str]]:
    """Parse ``[ [..], [..] ]``; inner lists may themselves hold 4-element behavior lists."""
    inner = block[1:-1]
    out: list[list[str]] = []
    pos = 0
    for s, e in _top_level_lists(inner):
        gap = inner[pos:s].replace(",", " ").split()
        if any(g not in _ELLIPSIS for g in gap):
            raise MalformedList(f"unexpected text {' '.join(gap)!r} between sequences", offset + 1 + pos)
        body = inner[s + 1 : e]
        if "[" in body:
            # [[Monday, (18-21), Light, on], [...], ...] style: flatten one level
            elements: list[str] = []
            for bs, be in _top_level_lists(body):
                elements.extend(_split_elements(body[bs + 1 : be], offset + 2 + s + bs))
            out.append(elements)
        else:
            out.append(_split_elements(body, offset + 1 + s))
        pos = e + 1
    tail = inner[pos:].replace(",", " ").split()
    if any(g not in _ELLIPSIS for g in tail):
        raise MalformedList(f"unexpected text {' '.join(tail)!r} after the last sequence", offset + 1 + pos)
    return out


def _is_list_of_lists(text: str, start: int, end: int) -> bool:
    return text[start + 1 : end].lstrip().startswith("[")


def parse_response(raw: str, dictionary: DeviceDictionary | None = None) -> tuple[list[list[str]], str]:
    """Split raw model output into candidate element lists and explanation prose.

    The first top-level list-of-lists is the sequence block.  Failing that,
    top-level flat lists of at least 4 elements are taken one candidate each.
    Candidates are not validated here.
    """
    text = _FENCE.sub("", raw)
    spans = []
    try:
        spans = list(_top_level_lists(text))
    except MalformedList:
        # a stray '[' in the prose; retry from the first list-of-lists opener
        m = re.search(r"\[\s*\[", text)
        if m is None:
            raise
        end = _match_bracket(text, m.start())
        spans = [(m.start(), end)]
    blocks = [(s, e) for s, e in spans if _is_list_of_lists(text, s, e)]
    if blocks:
        s, e = blocks[0]
        candidates = _inner_lists(text[s : e + 1], s)
        prose = text[:s] + " " + text[e + 1 :]
    else:
        candidates, cut = [], []
        for s, e in spans:
            try:
                items = _split_elements(text[s + 1 : e], s)
            except MalformedList:
                continue
            if len(items) >= 4:
                candidates.append(items)
                cut.append((s, e))
        if not candidates:
            raise NoSequenceBlock("no [[...], [...]] sequence block found in the response")
        pieces, last = [], 0
        for s, e in cut:
            pieces.append(text[last:s])
            last = e + 1
        pieces.append(text[last:])
        prose = " ".join(pieces)
    return candidates, " ".join(prose.split())


@dataclass
class Rejection:
    index: int
    rendering: str
    violations: list[Violation]

    def to_dict(self) -> dict:
        return {"index": self.index, "rendering": self.rendering,
                "violations": [v.to_dict() for v in self.violations]}


@dataclass
class ValidationReport:
    candidates: int = 0
    accepted: int = 0
    duplicates: int = 0
    rejected: list[Rejection] = field(default_factory=list)
    expected_count: int = 0
    warnings: list[str] = field(default_factory=list)
    repair_rounds: int = 0
    parse_errors: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.rejected and not self.parse_errors

    def to_dict(self) -> dict:
        return {
            "clean": self.clean,
            "candidates": self.candidates,
            "accepted": self.accepted,
            "duplicates": self.duplicates,
            "expected_count": self.expected_count,
            "repair_rounds": self.repair_rounds,
            "warnings": list(self.warnings),
            "parse_errors": list(self.parse_errors),
            "rejected": [r.to_dict() for r in self.rejected],
        }


@dataclass
class GenerationResult:
    sequences: list[BehaviorSequence]
    explanation: str
    report: ValidationReport
    transcript: str | None = None


def count_warning(accepted: int, expected: int, tolerance: float = 0.2) -> str | None:
    if expected <= 0:
        return None
    if abs(accepted - expected) > tolerance * expected:
        return (f"{COUNT_DEVIATION}: {accepted} sequences accepted, expected {expected} "
                f"(+/-{tolerance:.0%})")
    return None


def validate_candidates(cands: list[list[str]], dictionary: DeviceDictionary, expected_count: int,
                        expected_behaviors: int = SEQUENCE_LENGTH, id_prefix: str = "gen",
                        explanation: str = "") -> GenerationResult:
    """Check shape, vocabulary, device/control correspondence and time order.

    Uses the same validator as the dataset loaders.  Exact duplicates (by
    rendering) are kept once.
    """
    report = ValidationReport(candidates=len(cands), expected_count=expected_count)
    accepted: list[BehaviorSequence] = []
    seen: set[str] = set()
    for i, elements in enumerate(cands):
        violations = dictionary.check_elements(elements, expected_behaviors)
        rendering = "[" + ", ".join(normalize_element(e) for e in elements) + "]"
        if violations:
            report.rejected.append(Rejection(i, rendering, violations))
            continue
        seq = BehaviorSequence.from_elements(elements, f"{id_prefix}-{len(accepted):05d}")
        key = render_text(seq)
        if key in seen:
            report.duplicates += 1
            continue
        seen.add(key)
        accepted.append(seq)
    report.accepted = len(accepted)
    w = count_warning(len(accepted), expected_count)
    if w:
        report.warnings.append(w)
    return GenerationResult(accepted, explanation, report)
