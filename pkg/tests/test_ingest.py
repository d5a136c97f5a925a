from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from behaviorsynth.core import BehaviorDataset, render_text
from behaviorsynth.errors import InvalidSpec, ParseError, ValidationError
from behaviorsynth.ingest import (
    FixtureSpec,
    dataset_to_jsonl,
    estimate_tokens,
    load_dataset,
    save_dataset,
    save_fixture,
    simulate_fixture,
)

from conftest import SPRING, replicate


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def record(seq, seq_id):
    return {"id": seq_id, "seq": [list(b.elements()) for b in seq.behaviors]}


def test_load_three_valid_lines(tmp_path, dictionary):
    p = tmp_path / "d.jsonl"
    write_lines(p, [record(SPRING, f"r{i}") for i in range(3)])
    ds = load_dataset(p, dictionary)
    assert ds.ids == ["r0", "r1", "r2"]
    assert load_dataset(p, dictionary) == ds


def test_strict_mismatch_names_the_line(tmp_path, dictionary):
    bad = record(SPRING, "bad")
    bad["seq"][2][3] = "heating"  # Airconditioner cannot heat
    p = tmp_path / "d.jsonl"
    write_lines(p, [record(SPRING, "ok"), bad])
    with pytest.raises(ValidationError) as err:
        load_dataset(p, dictionary)
    assert err.value.line == 2
    assert "heating" in str(err.value)


def test_strict_parse_error_names_the_line(tmp_path, dictionary):
    p = tmp_path / "d.jsonl"
    p.write_text(json.dumps(record(SPRING, "ok")) + "\n{not json\n", encoding="utf-8")
    with pytest.raises(ParseError) as err:
        load_dataset(p, dictionary)
    assert err.value.line == 2


def test_permissive_skips_and_reports(tmp_path, dictionary):
    short = record(SPRING, "short")
    short["seq"] = short["seq"][:9]
    p = tmp_path / "d.jsonl"
    write_lines(p, [record(SPRING, "a"), short, record(SPRING, "a"), record(SPRING, "b")])
    ds = load_dataset(p, dictionary, strict=False)
    assert ds.ids == ["a", "b"]
    assert [s["line"] for s in ds.metadata["load_report"]["skipped"]] == [2, 3]


def test_datetime_records_are_normalized(tmp_path, dictionary):
    rec = record(SPRING, "dt")
    rec["seq"][0] = ["2022-08-01 18:30", "Light", "on"]  # a Monday
    p = tmp_path / "d.jsonl"
    write_lines(p, [rec])
    assert load_dataset(p, dictionary).sequences[0] == SPRING.with_id("dt")


def test_fixture_zero_noise_has_exact_patterns(dictionary):
    ds = simulate_fixture(FixtureSpec(pattern_count=5, copies_per_pattern=20, noise_rate=0.0, seed=7), dictionary)
    assert len(ds) == 100
    assert len({render_text(s) for s in ds}) == 5
    assert sorted(set(ds.metadata["pattern_of"].values())) == [0, 1, 2, 3, 4]


def test_fixture_single_sequence(dictionary):
    assert len(simulate_fixture(FixtureSpec(pattern_count=1, copies_per_pattern=1), dictionary)) == 1


def test_fixture_copy_range(dictionary):
    ds = simulate_fixture(FixtureSpec(pattern_count=4, copies_per_pattern=(2, 5), seed=3), dictionary)
    counts = np.bincount(list(ds.metadata["pattern_of"].values()))
    assert len(ds) == counts.sum() and all(2 <= c <= 5 for c in counts)


def test_fixture_noise_matches_binomial_mean(dictionary):
    spec = FixtureSpec(pattern_count=1, copies_per_pattern=10_000, noise_rate=0.1, seed=11)
    ds = simulate_fixture(spec, dictionary)
    base = simulate_fixture(FixtureSpec(pattern_count=1, copies_per_pattern=1, noise_rate=0.0, seed=11),
                            dictionary).sequences[0]
    diffs = [sum(a != b for a, b in zip(s.behaviors, base.behaviors)) for s in ds]
    assert abs(np.mean(diffs) - 1.0) <= 0.05
    assert all(a.when == b.when for s in ds for a, b in zip(s.behaviors, base.behaviors))


def test_fixture_is_byte_deterministic(dictionary):
    spec = FixtureSpec(seed=5)
    assert dataset_to_jsonl(simulate_fixture(spec, dictionary)) == dataset_to_jsonl(simulate_fixture(spec, dictionary))


@pytest.mark.parametrize("kw", [
    dict(pattern_count=0), dict(copies_per_pattern=0), dict(copies_per_pattern=(3, 2)), dict(noise_rate=1.5),
])
def test_invalid_fixture_spec(kw):
    with pytest.raises(InvalidSpec):
        FixtureSpec(**kw)


def test_fixture_needs_two_devices():
    from behaviorsynth.core import DAYS, DeviceDictionary
    one = DeviceDictionary(DAYS, ("(0-3)",), ("Light",), {"Light": ("on",)})
    with pytest.raises(InvalidSpec):
        simulate_fixture(FixtureSpec(), one)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(0, 1), st.integers(0, 2**32))
def test_fixture_round_trips_through_strict_load(tmp_path_factory, dictionary, patterns, copies, noise, seed):
    ds = simulate_fixture(FixtureSpec(patterns, copies, noise, seed), dictionary)
    p = tmp_path_factory.mktemp("fx") / "fx.jsonl"
    save_dataset(ds, p)
    assert load_dataset(p, dictionary, strict=True) == ds


def test_fixture_sidecar(tmp_path, dictionary):
    ds = simulate_fixture(FixtureSpec(pattern_count=2, copies_per_pattern=3), dictionary)
    meta = save_fixture(ds, tmp_path / "fx.jsonl")
    assert meta.name == "fx.meta.json"
    assert json.loads(meta.read_text())["pattern_of"] == ds.metadata["pattern_of"]


def test_estimate_tokens_basics(dictionary):
    assert estimate_tokens(BehaviorDataset(())).tokens == 0
    ds = replicate(SPRING, 3)
    est = estimate_tokens(ds)
    assert est.elements == 120
    assert est.tokens == 3 * len(render_text(SPRING)) / 4


def test_estimate_tokens_is_additive(dictionary):
    a = simulate_fixture(FixtureSpec(seed=1), dictionary)
    b = simulate_fixture(FixtureSpec(seed=2, copies_per_pattern=7), dictionary)
    b = BehaviorDataset(tuple(s.with_id("b" + s.id) for s in b))
    assert estimate_tokens(a + b).tokens == estimate_tokens(a).tokens + estimate_tokens(b).tokens
    doubled = BehaviorDataset(a.sequences + tuple(s.with_id("d" + s.id) for s in a))
    assert estimate_tokens(doubled).tokens == 2 * estimate_tokens(a).tokens
