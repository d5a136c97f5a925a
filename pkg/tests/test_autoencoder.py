from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from behaviorsynth.autoencoder import (
    AutoencoderConfig,
    TrainedModel,
    forward_backward,
    gradient_check,
    init_params,
    reconstruction_loss,
    reconstruction_losses,
    stable_hash,
    train,
)
from behaviorsynth.core import BehaviorDataset, DAYS, DeviceDictionary, build_vocabulary
from behaviorsynth.errors import EmptyDataset, NonFiniteLoss, VocabMismatch
from behaviorsynth.ingest import FixtureSpec, simulate_fixture

from conftest import SPRING, make_sequence, replicate

TINY = AutoencoderConfig(epochs=2)


@pytest.fixture(scope="module")
def memorized(vocab):
    return train(replicate(SPRING, 50), vocab, AutoencoderConfig())


def test_gradient_check_default():
    assert gradient_check(AutoencoderConfig(), probe_count=50) < 1e-3


def test_gradient_check_without_teacher_forcing():
    assert gradient_check(AutoencoderConfig(teacher_forcing=False), probe_count=50) < 1e-3


def test_gradient_check_zero_init_is_finite():
    assert np.isfinite(gradient_check(probe_count=30, zero_init=True))


def test_gradient_check_step_stability():
    a = gradient_check(probe_count=50, step=1e-4)
    b = gradient_check(probe_count=50, step=2e-4)
    assert max(a, b) / max(min(a, b), 1e-12) < 10


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_check_across_seeds(seed):
    assert gradient_check(AutoencoderConfig(embed_dim=4, hidden_dim=5), probe_count=20, seed=seed) < 1e-3


def test_masked_batch_matches_individual_losses():
    rng = np.random.default_rng(1)
    params = init_params(23, AutoencoderConfig(), rng)
    seqs = [list(rng.integers(3, 23, size=n)) for n in (8, 4, 12)]
    _, per_seq, _ = forward_backward(params, seqs, need_grad=False)
    alone = [forward_backward(params, [s], need_grad=False)[0] for s in seqs]
    np.testing.assert_allclose(per_seq, alone, rtol=1e-12)


def test_memorization(memorized, vocab):
    assert memorized.history[-1] < 0.05
    assert reconstruction_loss(memorized, SPRING, vocab) < 0.05


def test_memorization_pin(memorized, vocab):
    # seed-0 regression value for 50 copies of the spring routine
    assert reconstruction_loss(memorized, SPRING, vocab) == pytest.approx(0.007204, abs=1e-4)


def test_loss_ignores_sequence_id(memorized, vocab):
    assert reconstruction_loss(memorized, SPRING.with_id("other"), vocab) == reconstruction_loss(
        memorized, SPRING, vocab)


def test_training_is_bit_identical(vocab):
    ds = simulate_fixture(FixtureSpec(pattern_count=2, copies_per_pattern=5), vocab.dictionary)
    a, b = train(ds, vocab, AutoencoderConfig(epochs=3)), train(ds, vocab, AutoencoderConfig(epochs=3))
    assert a.weight_dump() == b.weight_dump()
    assert a.weight_dump() != train(ds, vocab, AutoencoderConfig(epochs=3, seed=1)).weight_dump()


def test_history_monotone_on_duplicate_heavy_fixture(vocab):
    ds = simulate_fixture(FixtureSpec(pattern_count=5, copies_per_pattern=40, noise_rate=0.0), vocab.dictionary)
    h = train(ds, vocab, AutoencoderConfig()).history
    assert all(np.isfinite(h))
    assert all(h[i] <= 1.05 * h[i - 1] for i in range(3, len(h)))
    assert h[-1] < h[0]


def test_unseen_devices_score_higher(vocab):
    d = vocab.dictionary
    familiar = DeviceDictionary(DAYS, d.slots, ("Light", "Airconditioner", "Fan", "TV", "Curtain"),
                                {k: d.controls[k] for k in ("Light", "Airconditioner", "Fan", "TV", "Curtain")})
    ds = simulate_fixture(FixtureSpec(pattern_count=5, copies_per_pattern=10, noise_rate=0.0), familiar)
    model = train(ds, vocab, AutoencoderConfig())
    stranger = make_sequence([("Wednesday", "(9-12)", "RobotVacuum", "start")] * 5
                             + [("Wednesday", "(12-15)", "Speaker", "play music")] * 5)
    seen = reconstruction_losses(model, list(ds.sequences), vocab)
    assert reconstruction_loss(model, stranger, vocab) > seen.max()


def test_empty_dataset(vocab):
    with pytest.raises(EmptyDataset):
        train(BehaviorDataset(()), vocab, TINY)


def test_divergence_is_reported(vocab):
    cfg = AutoencoderConfig(epochs=3, learning_rate=1e308, clip_norm=0.0)
    with np.errstate(all="ignore"), pytest.raises(NonFiniteLoss) as err:
        train(replicate(SPRING, 4), vocab, cfg)
    assert 1 <= err.value.epoch <= 3


def test_vocab_mismatch(vocab):
    model = train(replicate(SPRING, 2), vocab, TINY)
    other = build_vocabulary(DeviceDictionary(DAYS, vocab.dictionary.slots, ("Light",), {"Light": ("on", "off")}))
    with pytest.raises(VocabMismatch):
        reconstruction_losses(model, [SPRING], other)


def test_save_load_round_trip(tmp_path, vocab):
    model = train(replicate(SPRING, 3), vocab, TINY)
    model.save(tmp_path / "m.json")
    again = TrainedModel.load(tmp_path / "m.json")
    assert again.weight_dump() == model.weight_dump()
    assert again.config == model.config and again.vocab_fingerprint == model.vocab_fingerprint
    assert reconstruction_loss(again, SPRING, vocab) == reconstruction_loss(model, SPRING, vocab)


def test_losses_nonnegative_and_finite(vocab):
    model = train(replicate(SPRING, 2), vocab, TINY)
    ds = simulate_fixture(FixtureSpec(pattern_count=4, copies_per_pattern=3, noise_rate=0.3), vocab.dictionary)
    losses = reconstruction_losses(model, list(ds.sequences), vocab)
    assert np.all(np.isfinite(losses)) and np.all(losses >= 0)


def test_stable_hash_is_fixed():
    assert stable_hash("s00001") == stable_hash("s00001")
    assert 0 <= stable_hash("x") < 2**63
    assert stable_hash("a") != stable_hash("b")


@pytest.mark.parametrize("kw", [dict(embed_dim=0), dict(hidden_dim=0), dict(learning_rate=0), dict(batch_size=0)])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        AutoencoderConfig(**kw)
