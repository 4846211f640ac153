"""Datasets, synthetic task generators, and client partitioning."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .streams import stream

__all__ = [
    "Example",
    "LocalDataset",
    "gen_synthetic",
    "planted_logistic_params",
    "partition_noniid",
    "load_csv",
    "merge",
]

SYNTHETIC_TASKS = ("gauss-blobs", "logistic-planted", "quadratic")

# Fraction of logistic-planted labels flipped after thresholding, so the
# planted model's own accuracy is exactly 1 - LABEL_FLIP_FRACTION.
LABEL_FLIP_FRACTION = 0.05


@dataclass(frozen=True)
class Example:
    """A single record: fixed-width feature vector plus a label."""

    features: np.ndarray
    label: float


@dataclass
class LocalDataset:
    """An ordered collection of examples with consistent feature width.

    ``labels`` with an integer dtype mark a classification task; float labels
    mark regression-style targets.  Every dataset holds at least one example.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array (n, p)")
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise ValueError("labels must be 1-D with one entry per example")
        if self.features.shape[0] < 1:
            raise ValueError("a dataset holds at least one example")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if not np.all(np.isfinite(self.labels.astype(np.float64))):
            raise ValueError("labels must be finite")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.labels.dtype.kind in ("i", "u")

    def example(self, i: int) -> Example:
        return Example(self.features[i], self.labels[i])

    def subset(self, indices: np.ndarray) -> "LocalDataset":
        return LocalDataset(self.features[indices], self.labels[indices])


def merge(datasets: list[LocalDataset]) -> LocalDataset:
    """Concatenate client datasets back into one dataset."""
    if not datasets:
        raise ValueError("merge needs at least one dataset")
    feats = np.concatenate([d.features for d in datasets], axis=0)
    labels = np.concatenate([d.labels for d in datasets], axis=0)
    return LocalDataset(feats, labels)


def planted_logistic_params(feature_dim: int, seed: int) -> np.ndarray:
    """Weights (norm 4, zero bias) of the model that labels logistic-planted data."""
    rng = stream(seed, "synthetic", "logistic-planted", "weights")
    w = rng.standard_normal(feature_dim)
    w *= 4.0 / np.linalg.norm(w)
    return np.concatenate([w, [0.0]])


def gen_synthetic(task: str, n: int, feature_dim: int, seed: int) -> LocalDataset:
    """Generate a deterministic synthetic dataset for one of the built-in tasks.

    gauss-blobs        two Gaussian classes at mirrored centers, unit noise.
    logistic-planted   labels from the sign of a hidden linear model, with a
                       fixed 5% of labels flipped.
    quadratic          placeholder records for models whose loss ignores data.
    """
    if task not in SYNTHETIC_TASKS:
        raise ValueError(f"unknown synthetic task {task!r}; choose from {SYNTHETIC_TASKS}")
    if n < 1:
        raise ValueError("n must be >= 1")
    if feature_dim < 1:
        raise ValueError("feature_dim must be >= 1")
    rng = stream(seed, "synthetic", task)
    if task == "gauss-blobs":
        labels = rng.integers(0, 2, size=n)
        center = np.full(feature_dim, 2.0 / np.sqrt(feature_dim))
        signs = np.where(labels == 1, 1.0, -1.0)[:, None]
        feats = signs * center[None, :] + rng.standard_normal((n, feature_dim))
        return LocalDataset(feats, labels.astype(np.int64))
    if task == "logistic-planted":
        w = planted_logistic_params(feature_dim, seed)[:feature_dim]
        feats = rng.standard_normal((n, feature_dim))
        labels = (feats @ w >= 0.0).astype(np.int64)
        n_flip = int(LABEL_FLIP_FRACTION * n)
        if n_flip > 0:
            flip = rng.choice(n, size=n_flip, replace=False)
            labels[flip] = 1 - labels[flip]
        return LocalDataset(feats, labels)
    feats = rng.standard_normal((n, feature_dim))
    return LocalDataset(feats, np.zeros(n, dtype=np.float64))


def _dirichlet_chunks(indices: np.ndarray, num_clients: int, alpha: float,
                      rng: np.random.Generator) -> list[np.ndarray]:
    props = rng.dirichlet(np.full(num_clients, alpha))
    cuts = np.floor(np.cumsum(props) * len(indices)).astype(int)
    cuts[-1] = len(indices)
    return np.split(indices, cuts[:-1])


def partition_noniid(data: LocalDataset, num_clients: int, skew: float,
                     seed: int) -> list[LocalDataset]:
    """Split a dataset across clients with label-proportion skew.

    ``skew`` is a single dial in [0, 1]: 0 gives a stratified near-uniform
    split, values toward 1 concentrate each label on few clients via a
    Dirichlet draw with concentration (1 - skew) / skew.  The example multiset
    is conserved exactly and every client receives at least one example.
    """
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if num_clients > len(data):
        raise ValueError(
            f"cannot split {len(data)} examples across {num_clients} clients")
    if not 0.0 <= skew <= 1.0:
        raise ValueError("skew must lie in [0, 1]")
    rng = stream(seed, "partition")
    assigned: list[list[int]] = [[] for _ in range(num_clients)]
    if data.is_classification:
        class_groups = [np.flatnonzero(data.labels == c) for c in np.unique(data.labels)]
    else:
        class_groups = [np.arange(len(data))]
    for group in class_groups:
        shuffled = rng.permutation(group)
        if skew == 0.0 or not data.is_classification:
            chunks = [shuffled[j::num_clients] for j in range(num_clients)]
        else:
            alpha = max((1.0 - skew) / skew, 1e-3)
            chunks = _dirichlet_chunks(shuffled, num_clients, alpha, rng)
        for j, chunk in enumerate(chunks):
            assigned[j].extend(chunk.tolist())
    # Extreme skew can starve a client; repair by moving one example from the
    # largest client so the n_i >= 1 invariant holds.
    for j in range(num_clients):
        if not assigned[j]:
            donor = max(range(num_clients), key=lambda i: len(assigned[i]))
            assigned[j].append(assigned[donor].pop())
    return [data.subset(np.sort(np.array(idx, dtype=int))) for idx in assigned]


def load_csv(path: str) -> LocalDataset:
    """Load a tabular dataset: header row, float features, final integer label."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header row and at least one data row")
    width = len(rows[0])
    if width < 2:
        raise ValueError(f"{path}: need at least one feature column plus a label")
    feats, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        try:
            values = [float(v) for v in row]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric value ({exc})") from None
        label = values[-1]
        if label != int(label):
            raise ValueError(f"{path}:{lineno}: label column must be integral, got {label}")
        feats.append(values[:-1])
        labels.append(int(label))
    return LocalDataset(np.array(feats), np.array(labels, dtype=np.int64))
