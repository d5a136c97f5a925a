from __future__ import annotations

import pytest
from hypothesis import strategies as st

from behaviorsynth.core import (
    SEQUENCE_LENGTH,
    Behavior,
    BehaviorDataset,
    BehaviorSequence,
    DeviceDictionary,
    Timestamp,
    build_vocabulary,
    default_dictionary,
)

DICT = default_dictionary()


@pytest.fixture(scope="session")
def dictionary() -> DeviceDictionary:
    return DICT


@pytest.fixture(scope="session")
def vocab():
    return build_vocabulary(DICT)


def make_sequence(rows, seq_id: str = "x") -> BehaviorSequence:
    return BehaviorSequence(tuple(Behavior.of(*r) for r in rows), seq_id)


def replicate(seq: BehaviorSequence, n: int, prefix: str = "a") -> BehaviorDataset:
    return BehaviorDataset(tuple(seq.with_id(f"{prefix}{i:03d}") for i in range(n)))


@st.composite
def valid_sequences(draw, dictionary: DeviceDictionary = DICT, length: int = SEQUENCE_LENGTH):
    """Random dictionary-valid sequence with nondecreasing timestamps."""
    keys = sorted(
        draw(st.lists(
            st.tuples(st.integers(0, len(dictionary.days) - 1), st.integers(0, len(dictionary.slots) - 1)),
            min_size=length, max_size=length,
        ))
    )
    pairs = dictionary.pairs()
    picks = draw(st.lists(st.integers(0, len(pairs) - 1), min_size=length, max_size=length))
    behaviors = tuple(
        Behavior(Timestamp(dictionary.days[d], dictionary.slots[s]), *pairs[p])
        for (d, s), p in zip(keys, picks)
    )
    return BehaviorSequence(behaviors, draw(st.from_regex(r"[a-z][a-z0-9-]{0,8}", fullmatch=True)))


SPRING = make_sequence([
    ("Monday", "(18-21)", "Light", "on"),
    ("Monday", "(18-21)", "Airconditioner", "switch on"),
    ("Monday", "(18-21)", "Airconditioner", "cooling"),
    ("Monday", "(21-24)", "Airconditioner", "switch off"),
    ("Monday", "(21-24)", "Fan", "switch on"),
    ("Monday", "(21-24)", "TV", "switch on"),
    ("Monday", "(21-24)", "TV", "setVolume"),
    ("Tuesday", "(6-9)", "CoffeeMachine", "switch on"),
    ("Tuesday", "(6-9)", "Curtain", "open"),
    ("Tuesday", "(9-12)", "Light", "off"),
], "spring")


# shares no device with SPRING
UNIQUE = make_sequence([
    ("Sunday", "(9-12)", "Heater", "switch on"),
    ("Sunday", "(9-12)", "Heater", "heating"),
    ("Sunday", "(9-12)", "Speaker", "switch on"),
    ("Sunday", "(9-12)", "Speaker", "play music"),
    ("Sunday", "(12-15)", "RobotVacuum", "start"),
    ("Sunday", "(12-15)", "WashingMachine", "start"),
    ("Sunday", "(15-18)", "RobotVacuum", "dock"),
    ("Sunday", "(15-18)", "Heater", "switch off"),
    ("Sunday", "(18-21)", "Speaker", "play music"),
    ("Sunday", "(21-24)", "WashingMachine", "switch off"),
], "b")


# -- acceptance summary ----------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
