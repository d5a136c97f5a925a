"""Importance scoring by held-out reconstruction error, plus the
edit-distance similarity baseline, and top-k compression."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autoencoder import AutoencoderConfig, reconstruction_losses, stable_hash, train
from .core import BehaviorDataset, BehaviorSequence, Vocabulary
from .errors import BehaviorSynthError, DatasetTooSmall, InvalidK, ReportMismatch

log = logging.getLogger(__name__)

EXACT_LOO = "exact-loo"
SIMILARITY = "similarity"
MAX_EXACT_LOO = 200


class ScoringError(BehaviorSynthError):
    """A training/scoring job failed; ``key`` names the held-out id or fold."""

    def __init__(self, key: str, cause: Exception):
        self.key = key
        self.cause = cause
        super().__init__(f"while scoring {key}: {cause}")


def kfold_method(k: int) -> str:
    return f"kfold({k})"


@dataclass(frozen=True)
class ReportEntry:
    id: str
    score: float
    rank: int


@dataclass(frozen=True)
class ImportanceReport:
    entries: tuple[ReportEntry, ...]
    method: str
    seed: int
    config: dict = field(default_factory=dict, compare=False)
    # model key -> ids it was trained on; scored id -> model key
    training_log: dict = field(default_factory=dict, compare=False, repr=False)
    scored_by: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def ids_by_rank(self) -> list[str]:
        return [e.id for e in self.entries]

    def score_of(self, seq_id: str) -> float:
        return self._lookup()[seq_id].score

    def rank_of(self, seq_id: str) -> int:
        return self._lookup()[seq_id].rank

    def _lookup(self) -> dict[str, ReportEntry]:
        return {e.id: e for e in self.entries}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "score", "rank", "method", "seed"])
        for e in self.entries:
            w.writerow([e.id, repr(e.score), e.rank, self.method, self.seed])
        return buf.getvalue()

    def save_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def read_csv(cls, path: str | Path) -> "ImportanceReport":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        entries = tuple(ReportEntry(r["id"], float(r["score"]), int(r["rank"])) for r in rows)
        method = rows[0]["method"] if rows else ""
        seed = int(rows[0]["seed"]) if rows else 0
        return cls(tuple(sorted(entries, key=lambda e: e.rank)), method, seed)


def rank_scores(scores: dict[str, float]) -> tuple[ReportEntry, ...]:
    """Descending by score; ties broken by ascending id."""
    order = sorted(scores, key=lambda i: (-scores[i], i))
    return tuple(ReportEntry(i, float(scores[i]), r) for r, i in enumerate(order, start=1))


def _fit_and_score(train_ds: BehaviorDataset, held_out: Sequence[BehaviorSequence], vocab: Vocabulary,
                   cfg: AutoencoderConfig) -> np.ndarray:
    model = train(train_ds, vocab, cfg)
    return reconstruction_losses(model, list(held_out), vocab)


def _run_jobs(jobs, vocab, n_jobs: int):
    """jobs: list of (key, train_ds, held_out, cfg).  Returns {key: losses}."""
    results = {}
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futs = {key: pool.submit(_fit_and_score, tr, ho, vocab, c) for key, tr, ho, c in jobs}
            for key, fut in futs.items():
                results[key] = _annotated(key, fut.result)
    else:
        for key, tr, ho, c in jobs:
            results[key] = _annotated(key, lambda: _fit_and_score(tr, ho, vocab, c))
    return results


def _annotated(key, fn):
    try:
        return fn()
    except BehaviorSynthError as exc:
        raise ScoringError(key, exc) from exc


def score_exact_loo(ds: BehaviorDataset, vocab: Vocabulary, cfg: AutoencoderConfig = AutoencoderConfig(),
                    n_jobs: int = 1) -> ImportanceReport:
    """Train one model per sequence on everything else and score the held-out one."""
    n = len(ds)
    if n < 2:
        raise DatasetTooSmall(f"leave-one-out scoring needs at least 2 sequences, got {n}")
    jobs = []
    training_log = {}
    for i, seq in enumerate(ds.sequences):
        rest = BehaviorDataset(ds.sequences[:i] + ds.sequences[i + 1 :])
        key = f"loo:{seq.id}"
        jobs.append((key, rest, [seq], cfg.replace(seed=(cfg.seed ^ stable_hash(seq.id)) & (2**63 - 1))))
        training_log[key] = tuple(rest.ids)
    losses = _run_jobs(jobs, vocab, n_jobs)
    scores = {seq.id: float(losses[f"loo:{seq.id}"][0]) for seq in ds.sequences}
    return ImportanceReport(rank_scores(scores), EXACT_LOO, cfg.seed, cfg.to_dict(), training_log,
                            {seq.id: f"loo:{seq.id}" for seq in ds.sequences})


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def kfold_partition(ids: Sequence[str], k: int, seed: int) -> list[list[str]]:
    order = np.random.default_rng(seed).permutation(len(ids))
    return [[ids[int(i)] for i in part] for part in np.array_split(order, k)]


def score_kfold(ds: BehaviorDataset, vocab: Vocabulary, cfg: AutoencoderConfig = AutoencoderConfig(),
                k: int = 5, n_jobs: int = 1) -> ImportanceReport:
    """K trainings; each fold is scored by a model trained on the other folds."""
    n = len(ds)
    if not 2 <= k <= n:
        raise InvalidK(f"K must satisfy 2 <= K <= {n}, got {k}")
    folds = kfold_partition(ds.ids, k, cfg.seed)
    by_id = ds.by_id()
    jobs, training_log, scored_by = [], {}, {}
    for f, fold in enumerate(folds):
        held = set(fold)
        rest = BehaviorDataset(tuple(s for s in ds.sequences if s.id not in held))
        key = f"fold:{f}"
        jobs.append((key, rest, [by_id[i] for i in fold], cfg.replace(seed=fold_seed(cfg.seed, f))))
        training_log[key] = tuple(rest.ids)
        scored_by.update({i: key for i in fold})
    losses = _run_jobs(jobs, vocab, n_jobs)
    scores = {}
    for f, fold in enumerate(folds):
        for i, loss in zip(fold, losses[f"fold:{f}"]):
            scores[i] = float(loss)
    return ImportanceReport(rank_scores(scores), kfold_method(k), cfg.seed, cfg.to_dict(), training_log, scored_by)


# -- similarity baseline --------------------------------------------------------------

def token_edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance over token lists (unit costs)."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def pairwise_edit_distance(rows: np.ndarray) -> np.ndarray:
    """All-pairs Levenshtein distance for an (N, L) integer token matrix.

    The DP runs over the L x L grid once, vectorized across all N x N pairs.
    """
    n, L = rows.shape
    a = rows[:, None, :]
    b = rows[None, :, :]
    prev = np.broadcast_to(np.arange(L + 1, dtype=np.int32), (n, n, L + 1)).copy()
    for i in range(1, L + 1):
        cur = np.empty_like(prev)
        cur[:, :, 0] = i
        sub = prev[:, :, :-1] + (a[:, :, i - 1 : i] != b).astype(np.int32)
        best = np.minimum(prev[:, :, 1:] + 1, sub)
        # insertion term depends on the cell to the left, so sweep columns
        for j in range(1, L + 1):
            cur[:, :, j] = np.minimum(best[:, :, j - 1], cur[:, :, j - 1] + 1)
        prev = cur
    return prev[:, :, L]


def similarity_matrix(ds: BehaviorDataset) -> np.ndarray:
    """sim = 1 - edit distance / max length over rendered element lists."""
    element_lists = [s.elements() for s in ds.sequences]
    n = len(element_lists)
    lengths = np.array([len(e) for e in element_lists])
    if n and np.all(lengths == lengths[0]):
        table: dict[str, int] = {}
        rows = np.array([[table.setdefault(t, len(table)) for t in e] for e in element_lists], dtype=np.int32)
        if lengths[0] == 0:
            dist = np.zeros((n, n))
        else:
            dist = pairwise_edit_distance(rows.reshape(n, -1))
    else:
        dist = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                dist[i, j] = dist[j, i] = token_edit_distance(element_lists[i], element_lists[j])
    denom = np.maximum(np.maximum.outer(lengths, lengths), 1)
    return 1.0 - dist / denom


def score_similarity(ds: BehaviorDataset) -> ImportanceReport:
    """Uniqueness = 1 - similarity to the nearest other sequence."""
    if len(ds) < 2:
        raise DatasetTooSmall(f"similarity scoring needs at least 2 sequences, got {len(ds)}")
    sim = similarity_matrix(ds)
    np.fill_diagonal(sim, -np.inf)
    nearest = sim.max(axis=1)
    scores = {s.id: float(max(0.0, 1.0 - nearest[i])) for i, s in enumerate(ds.sequences)}
    return ImportanceReport(rank_scores(scores), SIMILARITY, 0)


# -- compression -------------------------------------------------------------------------

@dataclass(frozen=True)
class CompressionResult:
    kept: BehaviorDataset
    dropped: tuple[str, ...]
    retention: float
    report: ImportanceReport = field(repr=False)


def keep_count(n: int, retention: float) -> int:
    # guard against 0.1 * 30 = 3.0000000000000004 style round-up
    return min(n, math.ceil(round(retention * n, 9)))


def compress(report: ImportanceReport, ds: BehaviorDataset, retention: float) -> CompressionResult:
    if not 0.0 < retention <= 1.0:
        raise ValueError(f"retention must lie in (0, 1], got {retention}")
    if sorted(report.ids_by_rank) != sorted(ds.ids):
        raise ReportMismatch("importance report does not cover exactly the dataset's sequence ids")
    k = keep_count(len(ds), retention)
    keep = set(report.ids_by_rank[:k])
    kept = ds.subset(keep, provenance=f"{ds.provenance} | {report.method} top {k}/{len(ds)}")
    dropped = tuple(i for i in ds.ids if i not in keep)
    return CompressionResult(kept, dropped, retention, report)
