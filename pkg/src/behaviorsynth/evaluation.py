"""Train the stand-in anomaly detector on full vs compressed training sets
and compare held-out reconstruction losses."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autoencoder import AutoencoderConfig, reconstruction_losses, stable_hash, train
from .core import BehaviorDataset, DeviceDictionary, build_vocabulary, default_dictionary
from .errors import BehaviorSynthError, KTooLarge
from .ingest import FixtureSpec, load_dataset, simulate_fixture
from .sppc import MAX_EXACT_LOO, ImportanceReport, compress, score_exact_loo, score_kfold, score_similarity

log = logging.getLogger(__name__)

FULL = "full"
SIMILARITY = "similarity"
SPPC_KFOLD = "sppc-kfold"
SPPC_LOO = "sppc-loo"
METHODS = (FULL, SIMILARITY, SPPC_KFOLD, SPPC_LOO)
_ALIASES = {"sppc": SPPC_KFOLD}


def canonical_method(name: str) -> str:
    name = _ALIASES.get(name.strip(), name.strip())
    if name not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return name


@dataclass(frozen=True)
class EvalRun:
    fixture: FixtureSpec | None = field(default_factory=FixtureSpec)
    dataset_path: str | None = None
    methods: tuple[str, ...] = (FULL, SIMILARITY, SPPC_KFOLD)
    rho_grid: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    train_fraction: float = 0.8
    k: int = 5
    top_k: int = 50
    seed: int = 0
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(canonical_method(m) for m in self.methods))
        object.__setattr__(self, "rho_grid", tuple(float(r) for r in self.rho_grid))
        if not self.rho_grid:
            raise ValueError("rho grid must not be empty")
        if any(not 0.0 < r <= 1.0 for r in self.rho_grid):
            raise ValueError(f"every rho must lie in (0, 1], got {self.rho_grid}")
        if not self.methods:
            raise ValueError("at least one method is required")
        if (self.fixture is None) == (self.dataset_path is None):
            raise ValueError("exactly one of fixture / dataset_path must be given")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["rho_grid"] = list(self.rho_grid)
        return d


@dataclass(frozen=True)
class CellMetrics:
    method: str
    rho: float
    train_size: int
    losses: tuple[float, ...]  # per test sequence, sorted descending

    @property
    def mean(self) -> float:
        return float(np.mean(self.losses))

    @property
    def variance(self) -> float:
        return float(np.var(self.losses))


@dataclass
class EvalResult:
    run: EvalRun
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    cells: dict[tuple[str, float], CellMetrics]
    kept_ids: dict[tuple[str, float], tuple[str, ...]]

    def cell(self, method: str, rho: float) -> CellMetrics:
        method = canonical_method(method)
        if method == FULL:
            rho = 1.0
        return self.cells[(method, float(rho))]

    def table_rows(self) -> list[dict]:
        rows = []
        for method in self.run.methods:
            for rho in self.run.rho_grid:
                c = self.cell(method, rho)
                rows.append({"method": method, "rho": rho, "train_size": c.train_size,
                             "mean": c.mean, "variance": c.variance})
        return rows

    def metrics_csv(self) -> str:
        return _csv(["method", "rho", "train_size", "mean", "variance"],
                    ([r["method"], r["rho"], r["train_size"], repr(r["mean"]), repr(r["variance"])]
                     for r in self.table_rows()))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def split_train_test(ds: BehaviorDataset, train_fraction: float, seed: int) -> tuple[BehaviorDataset, BehaviorDataset]:
    order = np.random.default_rng(seed).permutation(len(ds))
    n_train = int(round(train_fraction * len(ds)))
    train_ids = {ds.sequences[int(i)].id for i in order[:n_train]}
    return (ds.subset(train_ids), ds.subset(set(ds.ids) - train_ids))


def detector_seed(seed: int) -> int:
    return stable_hash(f"detector:{seed}")


def _load(run: EvalRun, dictionary: DeviceDictionary) -> BehaviorDataset:
    if run.fixture is not None:
        return simulate_fixture(run.fixture, dictionary)
    return load_dataset(run.dataset_path, dictionary)


def run_comparison(run: EvalRun, dictionary: DeviceDictionary | None = None, n_jobs: int = 1) -> EvalResult:
    """Score, compress, retrain and evaluate every (method, rho) cell.

    The detector is a fresh autoencoder with a seed independent of the
    scorer's; the same detector seed is used in every cell, so cells with
    identical training sets yield identical metrics.
    """
    dictionary = dictionary or default_dictionary()
    vocab = build_vocabulary(dictionary)
    ds = _load(run, dictionary)
    train_ds, test_ds = split_train_test(ds, run.train_fraction, run.seed)
    scorer_cfg = run.autoencoder.replace(seed=run.seed)
    detector_cfg = run.autoencoder.replace(seed=detector_seed(run.seed))
    test_seqs = list(test_ds.sequences)

    cells: dict[tuple[str, float], CellMetrics] = {}
    kept_ids: dict[tuple[str, float], tuple[str, ...]] = {}
    trained: dict[tuple[str, ...], tuple[float, ...]] = {}

    def evaluate(method: str, rho: float, subset: BehaviorDataset) -> None:
        key = tuple(subset.ids)
        if key not in trained:
            try:
                model = train(subset, vocab, detector_cfg)
            except BehaviorSynthError as exc:
                raise BehaviorSynthError(f"[{method}, rho={rho}] {exc}") from exc
            losses = reconstruction_losses(model, test_seqs, vocab)
            trained[key] = tuple(float(x) for x in sorted(losses, reverse=True))
        cells[(method, rho)] = CellMetrics(method, rho, len(subset), trained[key])
        kept_ids[(method, rho)] = key
        log.info("%-11s rho=%.2f n=%d mean=%.4f", method, rho, len(subset), cells[(method, rho)].mean)

    for method in run.methods:
        if method == FULL:
            evaluate(FULL, 1.0, train_ds)
            continue
        report = _score(method, train_ds, vocab, scorer_cfg, run.k, n_jobs)
        for rho in run.rho_grid:
            evaluate(method, rho, compress(report, train_ds, rho).kept)
    return EvalResult(run, tuple(train_ds.ids), tuple(test_ds.ids), cells, kept_ids)


def _score(method: str, ds: BehaviorDataset, vocab, cfg: AutoencoderConfig, k: int, n_jobs: int) -> ImportanceReport:
    if method == SIMILARITY:
        return score_similarity(ds)
    if method == SPPC_KFOLD:
        return score_kfold(ds, vocab, cfg, k=min(k, len(ds)), n_jobs=n_jobs)
    if method == SPPC_LOO:
        if len(ds) > MAX_EXACT_LOO:
            raise ValueError(f"exact leave-one-out on {len(ds)} sequences exceeds the {MAX_EXACT_LOO} limit")
        return score_exact_loo(ds, vocab, cfg, n_jobs=n_jobs)
    raise ValueError(method)


def top_k_losses(result: EvalResult, method: str, rho: float, k: int) -> list[float]:
    cell = result.cell(method, rho)
    if k > len(cell.losses):
        raise KTooLarge(f"K={k} exceeds the test-set size {len(cell.losses)}")
    return list(cell.losses[: max(k, 0)])


def export_figure_data(result: EvalResult, out_dir: str | Path) -> dict[str, Path]:
    """Write the top-K loss curves, mean-vs-rho and variance-vs-rho tables.

    The full-data model is trained once and repeated at every rho so each
    method has one row per grid point.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = result.run
    k = min(run.top_k, len(result.test_ids))
    top_rows, mean_rows, var_rows = [], [], []
    for method in run.methods:
        for rho in run.rho_grid:
            cell = result.cell(method, rho)
            top_rows.extend([method, rho, pos, repr(loss)]
                            for pos, loss in enumerate(top_k_losses(result, method, rho, k), start=1))
            mean_rows.append([method, rho, cell.train_size, repr(cell.mean)])
            var_rows.append([method, rho, cell.train_size, repr(cell.variance)])
    files = {
        "top_losses": out / "top_losses.csv",
        "mean_loss": out / "mean_loss.csv",
        "variance_loss": out / "variance_loss.csv",
        "metrics": out / "metrics.csv",
    }
    files["top_losses"].write_text(_csv(["method", "rho", "position", "loss"], top_rows), encoding="utf-8")
    files["mean_loss"].write_text(_csv(["method", "rho", "train_size", "mean_loss"], mean_rows), encoding="utf-8")
    files["variance_loss"].write_text(_csv(["method", "rho", "train_size", "loss_variance"], var_rows), encoding="utf-8")
    files["metrics"].write_text(result.metrics_csv(), encoding="utf-8")
    return files


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_run_manifest(result: EvalResult, files: dict[str, Path], out_dir: str | Path) -> Path:
    path = Path(out_dir) / "eval_manifest.json"
    doc = {
        "run": result.run.to_dict(),
        "train_size": len(result.train_ids),
        "test_size": len(result.test_ids),
        "files": {name: {"path": p.name, "sha256": file_sha256(p)} for name, p in sorted(files.items())},
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
