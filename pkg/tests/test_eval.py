from __future__ import annotations

import csv
import json

import pytest

from behaviorsynth.autoencoder import AutoencoderConfig
from behaviorsynth.errors import KTooLarge
from behaviorsynth.evaluation import (
    EvalRun,
    canonical_method,
    export_figure_data,
    run_comparison,
    split_train_test,
    top_k_losses,
    write_run_manifest,
)
from behaviorsynth.ingest import FixtureSpec, save_dataset, simulate_fixture

SMALL = EvalRun(
    fixture=FixtureSpec(pattern_count=3, copies_per_pattern=8, noise_rate=0.1, seed=1),
    rho_grid=(0.5, 1.0),
    k=3,
    top_k=50,
    autoencoder=AutoencoderConfig(epochs=4),
)


@pytest.fixture(scope="module")
def small_result():
    return run_comparison(SMALL)


def test_split_is_disjoint_and_seeded(dictionary):
    ds = simulate_fixture(FixtureSpec(), dictionary)
    tr, te = split_train_test(ds, 0.8, 0)
    assert len(tr) == 160 and len(te) == 40
    assert not set(tr.ids) & set(te.ids)
    assert split_train_test(ds, 0.8, 0)[1] == te
    assert split_train_test(ds, 0.8, 1)[1] != te


def test_kept_sets_stay_inside_train_split(small_result):
    train = set(small_result.train_ids)
    assert not train & set(small_result.test_ids)
    for ids in small_result.kept_ids.values():
        assert set(ids) <= train


def test_full_retention_gives_identical_metrics(small_result):
    cells = [small_result.cell(m, 1.0) for m in ("full", "similarity", "sppc-kfold")]
    assert cells[0].losses == cells[1].losses == cells[2].losses


def test_losses_sorted_and_sized(small_result):
    for cell in small_result.cells.values():
        assert list(cell.losses) == sorted(cell.losses, reverse=True)
        assert len(cell.losses) == len(small_result.test_ids)
    assert small_result.cell("sppc", 0.5).train_size == 10  # ceil(0.5 * 19)


def test_top_k(small_result):
    n = len(small_result.test_ids)
    assert top_k_losses(small_result, "full", 1.0, n) == list(small_result.cell("full", 1.0).losses)
    assert top_k_losses(small_result, "similarity", 0.5, 0) == []
    with pytest.raises(KTooLarge):
        top_k_losses(small_result, "full", 1.0, n + 1)


def test_export_row_counts_and_headers(tmp_path, small_result):
    files = export_figure_data(small_result, tmp_path)
    with open(files["mean_loss"]) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["method", "rho", "train_size", "mean_loss"]
    for method in SMALL.methods:
        assert sum(r["method"] == method for r in rows) == len(SMALL.rho_grid)
    with open(files["top_losses"]) as fh:
        top = list(csv.DictReader(fh))
    assert len(top) == len(SMALL.methods) * len(SMALL.rho_grid) * len(small_result.test_ids)
    with open(files["variance_loss"]) as fh:
        assert next(csv.reader(fh)) == ["method", "rho", "train_size", "loss_variance"]


def test_rerun_is_byte_identical(tmp_path, small_result):
    a = export_figure_data(small_result, tmp_path / "a")
    b = export_figure_data(run_comparison(SMALL), tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()


def test_manifest_checksums(tmp_path, small_result):
    files = export_figure_data(small_result, tmp_path)
    doc = json.loads(write_run_manifest(small_result, files, tmp_path).read_text())
    assert set(doc["files"]) == set(files)
    assert doc["test_size"] == len(small_result.test_ids)


def test_dataset_path_input(tmp_path, dictionary):
    ds = simulate_fixture(SMALL.fixture, dictionary)
    save_dataset(ds, tmp_path / "d.jsonl")
    run = EvalRun(fixture=None, dataset_path=str(tmp_path / "d.jsonl"), methods=("full",), rho_grid=(1.0,),
                  autoencoder=SMALL.autoencoder)
    assert run_comparison(run).cell("full", 1.0).losses == run_comparison(
        EvalRun(fixture=SMALL.fixture, methods=("full",), rho_grid=(1.0,), autoencoder=SMALL.autoencoder)
    ).cell("full", 1.0).losses


@pytest.mark.parametrize("kw", [
    dict(rho_grid=()), dict(rho_grid=(0.0,)), dict(methods=("magic",)), dict(train_fraction=1.0),
    dict(dataset_path="x.jsonl"),
])
def test_invalid_runs(kw):
    with pytest.raises(ValueError):
        EvalRun(**kw)


def test_method_aliases():
    assert canonical_method("sppc") == "sppc-kfold"
    assert canonical_method(" similarity ") == "similarity"
