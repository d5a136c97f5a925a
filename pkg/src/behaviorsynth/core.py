"""Domain types for smart-home behavior sequences and their codecs.

A behavior is one timestamped device interaction.  Timestamps are
discretized to (day of week, 3-hour slot).  Every sequence is rendered as a
flat list of 4 elements per behavior: day, slot, device, control.
"""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    DictionaryConflict,
    InvalidDictionary,
    ShapeError,
    UnknownToken,
    ValidationError,
)

DAYS = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")
SEQUENCE_LENGTH = 10
ELEMENTS_PER_BEHAVIOR = 4

PAD, BOS, EOS = 0, 1, 2
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>")

_FORBIDDEN_CHARS = set(",[]\"'")
_SLOT_RE = re.compile(r"^\((\d{1,2})-(\d{1,2})\)$")


def normalize_element(text: str) -> str:
    """Collapse internal whitespace and strip surrounding quotes/space."""
    text = " ".join(str(text).split())
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'`":
        text = " ".join(text[1:-1].split())
    return text


@dataclass(frozen=True, order=False)
class Timestamp:
    day: str
    slot: str


@dataclass(frozen=True)
class Behavior:
    when: Timestamp
    device: str
    control: str

    @classmethod
    def of(cls, day: str, slot: str, device: str, control: str) -> "Behavior":
        return cls(Timestamp(day, slot), device, control)

    def elements(self) -> tuple[str, str, str, str]:
        return (self.when.day, self.when.slot, self.device, self.control)


@dataclass(frozen=True)
class BehaviorSequence:
    behaviors: tuple[Behavior, ...]
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "behaviors", tuple(self.behaviors))

    def __len__(self) -> int:
        return len(self.behaviors)

    def elements(self) -> list[str]:
        return [e for b in self.behaviors for e in b.elements()]

    def with_id(self, new_id: str) -> "BehaviorSequence":
        return BehaviorSequence(self.behaviors, new_id)

    @classmethod
    def from_elements(cls, elements: Sequence[str], seq_id: str = "") -> "BehaviorSequence":
        """Group a flat element list into behaviors (no dictionary validation)."""
        if len(elements) % ELEMENTS_PER_BEHAVIOR:
            raise ShapeError(
                f"{len(elements)} elements is not a multiple of {ELEMENTS_PER_BEHAVIOR}"
            )
        items = [normalize_element(e) for e in elements]
        behaviors = tuple(
            Behavior.of(*items[i : i + ELEMENTS_PER_BEHAVIOR])
            for i in range(0, len(items), ELEMENTS_PER_BEHAVIOR)
        )
        return cls(behaviors, seq_id)


@dataclass(frozen=True)
class BehaviorDataset:
    sequences: tuple[BehaviorSequence, ...]
    provenance: str = field(default="", compare=False)
    # e.g. fixture pattern ids; never part of equality
    metadata: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        seen = set()
        for s in self.sequences:
            if s.id in seen:
                raise ValidationError(f"duplicate sequence id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.sequences]

    def by_id(self) -> dict[str, BehaviorSequence]:
        return {s.id: s for s in self.sequences}

    def subset(self, ids: Iterable[str], provenance: str | None = None) -> "BehaviorDataset":
        """Sequences whose id is in ``ids``, in this dataset's order."""
        wanted = set(ids)
        return BehaviorDataset(
            tuple(s for s in self.sequences if s.id in wanted),
            self.provenance if provenance is None else provenance,
        )

    def __add__(self, other: "BehaviorDataset") -> "BehaviorDataset":
        return BehaviorDataset(self.sequences + other.sequences, self.provenance)


@dataclass(frozen=True)
class Violation:
    """One machine-readable validation failure.

    ``behavior`` is the 0-based behavior index, or None for whole-sequence
    problems such as SHAPE.
    """

    code: str
    detail: str
    behavior: int | None = None

    def to_dict(self) -> dict:
        return {"code": self.code, "behavior": self.behavior, "detail": self.detail}


# Violation codes
SHAPE = "SHAPE"
UNKNOWN_DAY = "UNKNOWN_DAY"
UNKNOWN_SLOT = "UNKNOWN_SLOT"
UNKNOWN_DEVICE = "UNKNOWN_DEVICE"
UNKNOWN_CONTROL = "UNKNOWN_CONTROL"
DEVICE_CONTROL_MISMATCH = "DEVICE_CONTROL_MISMATCH"
TIMESTAMP_ORDER = "TIMESTAMP_ORDER"


@dataclass(frozen=True)
class DeviceDictionary:
    days: tuple[str, ...]
    slots: tuple[str, ...]
    devices: tuple[str, ...]
    controls: Mapping[str, tuple[str, ...]]
    permissive: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "days", tuple(self.days))
        object.__setattr__(self, "slots", tuple(self.slots))
        object.__setattr__(self, "devices", tuple(self.devices))
        ctrl = {d: tuple(self.controls.get(d, ())) for d in self.devices}
        extra = set(self.controls) - set(self.devices)
        if extra:
            raise InvalidDictionary(f"controls listed for undeclared devices: {sorted(extra)}")
        object.__setattr__(self, "controls", ctrl)
        self._check()
        object.__setattr__(self, "_day_index", {d: i for i, d in enumerate(self.days)})
        object.__setattr__(self, "_slot_index", {s: i for i, s in enumerate(self.slots)})
        object.__setattr__(self, "_control_sets", {d: frozenset(c) for d, c in ctrl.items()})
        owners: dict[str, list[str]] = {}
        for d, cs in ctrl.items():
            for c in cs:
                owners.setdefault(c, []).append(d)
        object.__setattr__(self, "_owners", owners)

    def _check(self) -> None:
        if len(self.days) != len(DAYS) or set(self.days) != set(DAYS):
            raise InvalidDictionary(f"days must be exactly the seven weekdays, got {list(self.days)}")
        if not self.slots:
            raise InvalidDictionary("slot list is empty")
        if not self.devices and not self.permissive:
            raise InvalidDictionary("device list is empty")
        for name, items in (("days", self.days), ("slots", self.slots), ("devices", self.devices)):
            _check_unique(items, name)
        for d, cs in self.controls.items():
            if not cs:
                raise InvalidDictionary(f"device {d!r} has no controls")
            _check_unique(cs, f"controls of {d!r}")
        for tok in (*self.days, *self.slots, *self.devices, *(c for cs in self.controls.values() for c in cs)):
            if not tok or tok != normalize_element(tok) or _FORBIDDEN_CHARS & set(tok) or ":" in tok:
                raise InvalidDictionary(f"token {tok!r} is empty, padded, or contains a reserved character")
        # controls are qualified by device, so only days/slots/devices can collide
        seen: dict[str, str] = {}
        for cat, items in (("days", self.days), ("slots", self.slots), ("devices", self.devices)):
            for tok in items:
                if tok in seen:
                    raise DictionaryConflict(tok, (seen[tok], cat))
                seen[tok] = cat

    # -- lookups ----------------------------------------------------------
    def day_index(self, day: str) -> int:
        return self._day_index[day]

    def slot_index(self, slot: str) -> int:
        return self._slot_index[slot]

    def timestamp_key(self, ts: Timestamp) -> tuple[int, int]:
        return (self._day_index[ts.day], self._slot_index[ts.slot])

    def controls_of(self, device: str) -> tuple[str, ...]:
        return self.controls[device]

    def devices_with_control(self, control: str) -> list[str]:
        return list(self._owners.get(control, ()))

    def pairs(self) -> list[tuple[str, str]]:
        """All valid (device, control) pairs in declaration order."""
        return [(d, c) for d in self.devices for c in self.controls[d]]

    # -- validation --------------------------------------------------------
    def check_elements(self, elements: Sequence[str], expected_behaviors: int | None = SEQUENCE_LENGTH) -> list[Violation]:
        """Validate a flat rendered element list.

        This is the single validator used by loaders, the decoder and the
        generation pipeline.
        """
        out: list[Violation] = []
        items = [normalize_element(e) for e in elements]
        n = len(items)
        if n % ELEMENTS_PER_BEHAVIOR:
            out.append(Violation(SHAPE, f"{n} elements is not a multiple of {ELEMENTS_PER_BEHAVIOR}"))
        elif expected_behaviors is not None and n != expected_behaviors * ELEMENTS_PER_BEHAVIOR:
            out.append(Violation(
                SHAPE,
                f"{n // ELEMENTS_PER_BEHAVIOR} behaviors ({n} elements), "
                f"expected {expected_behaviors} ({expected_behaviors * ELEMENTS_PER_BEHAVIOR} elements)",
            ))
        prev_key = None
        for b in range(n // ELEMENTS_PER_BEHAVIOR):
            day, slot, device, control = items[b * 4 : b * 4 + 4]
            key_ok = True
            if day not in self._day_index:
                out.append(Violation(UNKNOWN_DAY, f"unknown day {day!r}", b))
                key_ok = False
            if slot not in self._slot_index:
                out.append(Violation(UNKNOWN_SLOT, f"unknown time slot {slot!r}", b))
                key_ok = False
            if device not in self._control_sets:
                out.append(Violation(UNKNOWN_DEVICE, f"unknown device {device!r}", b))
                if control not in self._owners:
                    out.append(Violation(UNKNOWN_CONTROL, f"unknown control {control!r}", b))
            elif control not in self._control_sets[device]:
                if control in self._owners:
                    out.append(Violation(
                        DEVICE_CONTROL_MISMATCH,
                        f"control {control!r} does not belong to device {device!r} "
                        f"(belongs to {', '.join(self._owners[control])})",
                        b,
                    ))
                else:
                    out.append(Violation(UNKNOWN_CONTROL, f"unknown control {control!r} for device {device!r}", b))
            if key_ok:
                key = (self._day_index[day], self._slot_index[slot])
                if prev_key is not None and key < prev_key:
                    out.append(Violation(TIMESTAMP_ORDER, f"timestamp ({day}, {slot}) precedes the previous behavior", b))
                prev_key = key
        return out

    def check_sequence(self, seq: BehaviorSequence, expected_behaviors: int | None = SEQUENCE_LENGTH) -> list[Violation]:
        return self.check_elements(seq.elements(), expected_behaviors)

    def validate(self, seq: BehaviorSequence, expected_behaviors: int | None = SEQUENCE_LENGTH) -> BehaviorSequence:
        violations = self.check_sequence(seq, expected_behaviors)
        if violations:
            raise ValidationError(
                f"sequence {seq.id!r} is invalid: " + "; ".join(f"{v.code}: {v.detail}" for v in violations),
                violations,
            )
        return seq

    # -- (de)serialization -------------------------------------------------
    def to_json_obj(self) -> dict:
        return {
            "days": list(self.days),
            "slots": list(self.slots),
            "devices": list(self.devices),
            "controls": {d: list(self.controls[d]) for d in self.devices},
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping, permissive: bool = False) -> "DeviceDictionary":
        try:
            return cls(obj["days"], obj["slots"], obj["devices"], obj["controls"], permissive=permissive)
        except KeyError as exc:
            raise InvalidDictionary(f"dictionary is missing field {exc.args[0]!r}") from None
        except (TypeError, AttributeError) as exc:
            raise InvalidDictionary(f"malformed dictionary: {exc}") from None

    @classmethod
    def load(cls, path: str | Path, permissive: bool = False) -> "DeviceDictionary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_obj(json.load(fh), permissive=permissive)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_obj(), indent=2) + "\n", encoding="utf-8")

    def render_text(self) -> str:
        """Device → controls association in a compact prompt-friendly form."""
        return "{" + ", ".join(f"{d}: [{', '.join(self.controls[d])}]" for d in self.devices) + "}"


def _check_unique(items: Sequence[str], what: str) -> None:
    seen = set()
    for x in items:
        if x in seen:
            raise InvalidDictionary(f"duplicate entry {x!r} in {what}")
        seen.add(x)


def default_dictionary() -> DeviceDictionary:
    """A small smart-home dictionary in the style of the rendered examples."""
    return DeviceDictionary(
        days=DAYS,
        slots=tuple(f"({h}-{h + 3})" for h in range(0, 24, 3)),
        devices=(
            "Light", "Airconditioner", "Heater", "Fan", "TV",
            "Curtain", "CoffeeMachine", "WashingMachine", "Speaker", "RobotVacuum",
        ),
        controls={
            "Light": ("on", "off"),
            "Airconditioner": ("switch on", "switch off", "cooling"),
            "Heater": ("switch on", "switch off", "heating"),
            "Fan": ("switch on", "switch off"),
            "TV": ("switch on", "switch off", "setVolume"),
            "Curtain": ("open", "close"),
            "CoffeeMachine": ("switch on", "brew"),
            "WashingMachine": ("switch on", "switch off", "start"),
            "Speaker": ("switch on", "play music"),
            "RobotVacuum": ("start", "dock"),
        },
    )


def timestamp_from_datetime(when: _dt.datetime | str, dictionary: DeviceDictionary) -> Timestamp:
    """Normalize an absolute datetime (e.g. "2022-08-04 18:30") to (day, slot)."""
    if isinstance(when, str):
        when = _dt.datetime.fromisoformat(when.strip())
    hour = when.hour + when.minute / 60
    for slot in dictionary.slots:
        m = _SLOT_RE.match(slot)
        if m and int(m.group(1)) <= hour < int(m.group(2)):
            return Timestamp(DAYS[when.weekday()], slot)
    raise ValidationError(f"no time slot in the dictionary covers {when.isoformat()}")


# -- vocabulary ----------------------------------------------------------------

DAY, SLOT, DEVICE, CONTROL, RESERVED = "day", "slot", "device", "control", "reserved"


@dataclass(frozen=True)
class Vocabulary:
    """Token ↔ id bijection derived from a dictionary.

    Control tokens are qualified by their device (``"Light:on"``), so the id
    of a control also identifies the device it belongs to.
    """

    tokens: tuple[str, ...]
    kinds: tuple[str, ...]
    dictionary: DeviceDictionary

    def __post_init__(self):
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._ids[token]

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def dump(self) -> bytes:
        return json.dumps({"tokens": list(self.tokens), "kinds": list(self.kinds)}, separators=(",", ":")).encode()

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.dump()).hexdigest()[:16]


def control_token(device: str, control: str) -> str:
    return f"{device}:{control}"


def build_vocabulary(dictionary: DeviceDictionary) -> Vocabulary:
    tokens: list[str] = list(RESERVED_TOKENS)
    kinds: list[str] = [RESERVED] * len(RESERVED_TOKENS)
    for kind, items in (
        (DAY, dictionary.days),
        (SLOT, dictionary.slots),
        (DEVICE, dictionary.devices),
        (CONTROL, [control_token(d, c) for d, c in dictionary.pairs()]),
    ):
        tokens.extend(items)
        kinds.extend([kind] * len(items))
    seen: dict[str, str] = {}
    for tok, kind in zip(tokens, kinds):
        if tok in seen:
            raise DictionaryConflict(tok, (seen[tok], kind))
        seen[tok] = kind
    return Vocabulary(tuple(tokens), tuple(kinds), dictionary)


_POSITION_KINDS = (DAY, SLOT, DEVICE, CONTROL)


def encode_sequence(seq: BehaviorSequence, vocab: Vocabulary) -> list[int]:
    out: list[int] = []
    for b, beh in enumerate(seq.behaviors):
        toks = (beh.when.day, beh.when.slot, beh.device, control_token(beh.device, beh.control))
        for k, (tok, kind) in enumerate(zip(toks, _POSITION_KINDS)):
            idx = vocab._ids.get(tok)
            if idx is None or vocab.kinds[idx] != kind:
                raise UnknownToken(tok, 4 * b + k, f"not a {kind} of the dictionary")
            out.append(idx)
    return out


def decode_sequence(ids: Sequence[int], vocab: Vocabulary, seq_id: str = "",
                    expected_behaviors: int | None = None) -> BehaviorSequence:
    if len(ids) % ELEMENTS_PER_BEHAVIOR:
        raise ShapeError(f"{len(ids)} ids is not a multiple of {ELEMENTS_PER_BEHAVIOR}")
    elements: list[str] = []
    for pos, raw in enumerate(ids):
        idx = int(raw)
        want = _POSITION_KINDS[pos % 4]
        if not 0 <= idx < len(vocab) or vocab.kinds[idx] == RESERVED:
            raise UnknownToken(raw, pos, "id outside the non-reserved vocabulary")
        if vocab.kinds[idx] != want:
            raise UnknownToken(vocab.tokens[idx], pos, f"expected a {want} token")
        tok = vocab.tokens[idx]
        elements.append(tok.split(":", 1)[1] if want == CONTROL else tok)
    for b in range(0, len(ids), 4):
        owner = vocab.tokens[int(ids[b + 3])].split(":", 1)[0]
        if owner != elements[b + 2]:
            raise ValidationError(
                f"control {elements[b + 3]!r} (of {owner!r}) paired with device {elements[b + 2]!r} "
                f"at behavior {b // 4}",
                [Violation(DEVICE_CONTROL_MISMATCH, f"{elements[b + 2]}/{elements[b + 3]}", b // 4)],
            )
    seq = BehaviorSequence.from_elements(elements, seq_id)
    return vocab.dictionary.validate(seq, expected_behaviors)


def render_text(seq: BehaviorSequence) -> str:
    return "[" + ", ".join(seq.elements()) + "]"


def split_flat_list(text: str) -> list[str]:
    """Elements of a single bracketed, comma-separated list."""
    body = text.strip()
    if not (body.startswith("[") and body.endswith("]")):
        raise ShapeError("rendered sequence must be enclosed in brackets")
    body = body[1:-1]
    if "[" in body or "]" in body:
        raise ShapeError("nested brackets inside a flat sequence")
    if not body.strip():
        return []
    return [normalize_element(e) for e in body.split(",")]


def parse_text(text: str, dictionary: DeviceDictionary | None = None, seq_id: str = "",
               expected_behaviors: int | None = None) -> BehaviorSequence:
    """Inverse of :func:`render_text`; validates when a dictionary is given."""
    seq = BehaviorSequence.from_elements(split_flat_list(text), seq_id)
    if dictionary is not None:
        dictionary.validate(seq, expected_behaviors)
    return seq


def render_dataset_text(sequences: Iterable[BehaviorSequence]) -> str:
    return "[" + ", ".join(render_text(s) for s in sequences) + "]"
