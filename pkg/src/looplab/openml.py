"""Tabular binary-classification pipeline: CSV ingestion, in-context
classification prompts, leave-one-dataset-out evaluation.

Ingestion is offline-first: datasets are local CSVs (UTF-8, header row,
final column ``label`` in {0,1}, all other columns numeric). A fetch
helper that downloads by OpenML dataset id exists for convenience but no
test or pipeline step requires the network.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evalsuite import Predictor, bootstrap_ci
from .tasks import PromptBatch, TaskInstance, TaskSpec


class DatasetError(Exception):
    pass


@dataclass
class Dataset:
    id: str
    name: str
    features: np.ndarray      # (n, f) z-scored
    labels: np.ndarray        # (n,) in {0, 1}
    mean: np.ndarray          # per-feature ingestion stats, frozen
    std: np.ndarray

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def row_hashes(self) -> set[bytes]:
        return {hashlib.sha256(row.tobytes()).digest() for row in self.features}


def load_dataset(path: str | Path, d_max: int = 20,
                 dataset_id: str | None = None) -> Dataset:
    """Parse one CSV into a z-scored Dataset; rejects non-numeric
    features, non-binary labels and empty files."""
    path = Path(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or len(rows) < 2:
        raise DatasetError(f"{path.name}: empty dataset")
    header, data_rows = rows[0], rows[1:]
    if header[-1].strip().lower() != "label":
        raise DatasetError(f"{path.name}: final column must be 'label', got {header[-1]!r}")
    n_feat = len(header) - 1
    if n_feat < 1:
        raise DatasetError(f"{path.name}: no feature columns")
    if n_feat > d_max:
        raise DatasetError(f"{path.name}: {n_feat} features exceed d_max={d_max}")
    X = np.zeros((len(data_rows), n_feat))
    y = np.zeros(len(data_rows), dtype=np.int64)
    for i, row in enumerate(data_rows):
        if len(row) != n_feat + 1:
            raise DatasetError(f"{path.name}: row {i + 2} has {len(row)} columns")
        for j, cell in enumerate(row[:-1]):
            try:
                X[i, j] = float(cell)
            except ValueError as e:
                raise DatasetError(
                    f"{path.name}: non-numeric feature {header[j]!r} in row {i + 2}") from e
        if row[-1].strip() not in ("0", "1"):
            raise DatasetError(
                f"{path.name}: non-binary label {row[-1]!r} in row {i + 2}")
        y[i] = int(row[-1])
    if not np.isfinite(X).all():
        raise DatasetError(f"{path.name}: non-finite feature values")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    X = (X - mean) / std
    return Dataset(id=dataset_id or path.stem, name=path.stem,
                   features=X, labels=y, mean=mean, std=std)


def load_data_dir(root: str | Path, d_max: int = 20) -> list[Dataset]:
    """`data/<id>/<name>.csv` layout, one dataset per id directory."""
    root = Path(root)
    datasets = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        csvs = sorted(sub.glob("*.csv"))
        if not csvs:
            continue
        datasets.append(load_dataset(csvs[0], d_max=d_max, dataset_id=sub.name))
    if not datasets:
        raise DatasetError(f"no datasets found under {root}")
    return datasets


def _encode_rows(X: np.ndarray, y_ctx: np.ndarray, d_max: int) -> np.ndarray:
    kp1, f = X.shape
    tokens = np.zeros((2 * kp1 - 1, d_max))
    tokens[0::2, :f] = X
    tokens[1::2, 0] = y_ctx
    return tokens


def sample_classification_prompt(datasets: list[Dataset], k: int,
                                 rng: np.random.Generator,
                                 exclude_index: int | None = None,
                                 d_max: int = 20) -> tuple[np.ndarray, int, int]:
    """Training prompt: pick a dataset uniformly (skipping the held-out
    index), then k+1 rows without replacement. Returns (tokens, query
    label, dataset index)."""
    pool = [i for i in range(len(datasets)) if i != exclude_index]
    if not pool:
        raise DatasetError("no datasets to sample from")
    di = pool[rng.integers(0, len(pool))]
    ds = datasets[di]
    if ds.n_instances < k + 1:
        raise DatasetError(
            f"dataset {ds.id} has {ds.n_instances} rows, needs k+1={k + 1}")
    idx = rng.choice(ds.n_instances, size=k + 1, replace=False)
    tokens = _encode_rows(ds.features[idx], ds.labels[idx][:-1].astype(float), d_max)
    return tokens, int(ds.labels[idx[-1]]), di


def sample_eval_prompt(test_dataset: Dataset, k: int, rng: np.random.Generator,
                       d_max: int = 20,
                       query_index: int | None = None) -> tuple[np.ndarray, int, int]:
    """Test prompt: in-context rows come from the test dataset but never
    include the query row itself."""
    n = test_dataset.n_instances
    if n < k + 1:
        raise DatasetError(f"dataset {test_dataset.id} too small for k={k}")
    qi = int(rng.integers(0, n)) if query_index is None else query_index
    others = np.delete(np.arange(n), qi)
    ctx = rng.choice(others, size=k, replace=False)
    X = np.vstack([test_dataset.features[ctx], test_dataset.features[qi][None]])
    tokens = _encode_rows(X, test_dataset.labels[ctx].astype(float), d_max)
    return tokens, int(test_dataset.labels[qi]), qi


def classification_batch(datasets: list[Dataset], batch_size: int, k: int,
                         rng: np.random.Generator, d_max: int = 20,
                         exclude_index: int | None = None) -> PromptBatch:
    """Batch of training prompts in the regression PromptBatch layout so
    the trainer consumes them unchanged (labels are 0/1 targets)."""
    tokens = np.zeros((batch_size, 2 * k + 1, d_max))
    targets = np.zeros((batch_size, k + 1))
    xs = np.zeros((batch_size, k + 1, d_max))
    tasks: list[TaskInstance] = []
    for i in range(batch_size):
        tok, q_label, di = sample_classification_prompt(
            datasets, k, rng, exclude_index=exclude_index, d_max=d_max)
        tokens[i] = tok
        targets[i, :-1] = tok[1::2, 0]
        targets[i, -1] = q_label
        xs[i] = tok[0::2]
        tasks.append(TaskInstance(TaskSpec("linear", d=d_max, k=k)))
    return PromptBatch(tokens=tokens, targets=targets, xs=xs, tasks=tasks)


def eval_accuracy(predictor: Predictor, test_dataset: Dataset, k: int,
                  n_prompts: int, seed: int = 0, d_max: int = 20,
                  n_bootstrap: int = 1000,
                  level: float = 0.90) -> tuple[float, tuple[float, float]]:
    """Thresholded accuracy over sampled test prompts with bootstrap CI."""
    from .rng import derive_rng
    rng = derive_rng(seed, "openml_eval")
    tokens = np.zeros((n_prompts, 2 * k + 1, d_max))
    labels = np.zeros(n_prompts)
    for i in range(n_prompts):
        tok, label, _ = sample_eval_prompt(test_dataset, k, rng, d_max=d_max)
        tokens[i] = tok
        labels[i] = label
    preds = predictor.predict(tokens)[:, -1]
    correct = ((preds > 0.5).astype(float) == labels).astype(np.float64)
    acc = float(correct.mean())
    ci = bootstrap_ci(correct, n_trials=n_bootstrap, level=level, seed=seed)
    return acc, ci


def fetch_dataset(dataset_id: int, out_dir: str | Path) -> Path:
    """Optional convenience: download an OpenML dataset by id into
    data/<id>/<name>.csv (numeric features only, binary labels).

    Network access is never required by the pipeline or its tests.
    """
    import json
    import urllib.request

    meta_url = f"https://www.openml.org/api/v1/json/data/{dataset_id}"
    with urllib.request.urlopen(meta_url) as resp:
        meta = json.loads(resp.read())["data_set_description"]
    name = meta["name"]
    csv_url = meta.get("url", "").replace(".arff", ".csv")
    out = Path(out_dir) / str(dataset_id)
    out.mkdir(parents=True, exist_ok=True)
    dest = out / f"{name}.csv"
    with urllib.request.urlopen(csv_url) as resp:
        dest.write_bytes(resp.read())
    return dest
