"""Datasets: container type, CSV ingestion, synthetic blobs, splitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetLoadError, EmptyDataset, ShapeMismatch

DARKNET_CLASSES = ("Non-Tor", "NonVPN", "Tor", "VPN")
# Non-Tor, NonVPN, Tor, VPN entry counts of CIC-Darknet 2020
DARKNET_COUNTS = (93356, 23863, 1392, 22919)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...] = DARKNET_CLASSES

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ShapeMismatch("features must be a 2-d matrix")
        if labels.ndim != 1 or len(labels) != len(features):
            raise ShapeMismatch(
                f"{len(features)} feature rows but {labels.shape} labels"
            )
        if len(labels) and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise ValueError("label outside [0, n_classes)")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.class_names)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def to_bytes(self) -> bytes:
        """Canonical row-ordered encoding (features then labels)."""
        header = np.array([len(self), self.n_features], dtype="<u8").tobytes()
        return (
            header
            + np.ascontiguousarray(self.features, dtype="<f8").tobytes()
            + np.ascontiguousarray(self.labels, dtype="<i8").tobytes()
        )


def require_nonempty(data: Dataset) -> None:
    if len(data) == 0:
        raise EmptyDataset("dataset has no samples")


def load_csv(
    path,
    label_column: str | None = None,
    class_names=DARKNET_CLASSES,
    delimiter: str = ",",
) -> Dataset:
    """Load a delimiter-separated file with a header row.

    Numeric columns become features; non-numeric columns other than the
    label are dropped. Label values are matched against ``class_names`` and
    mapped to their position in that sequence. Infinite or missing feature
    values are replaced with 0.
    """
    import pandas as pd

    try:
        frame = pd.read_csv(path, sep=delimiter, low_memory=False)
    except (OSError, ValueError) as exc:
        raise DatasetLoadError(f"cannot read {path}: {exc}") from exc
    frame.columns = [str(c).strip() for c in frame.columns]
    if label_column is None:
        candidates = [c for c in frame.columns if c.lower() == "label"]
        if not candidates:
            raise DatasetLoadError("no label column; pass label_column")
        label_column = candidates[0]
    if label_column not in frame.columns:
        raise DatasetLoadError(f"label column {label_column!r} not in header")

    lookup = {_norm_label(name): i for i, name in enumerate(class_names)}
    raw = frame[label_column].astype(str).map(_norm_label)
    unknown = sorted(set(raw) - set(lookup))
    if unknown:
        raise DatasetLoadError(f"unknown label values: {unknown[:5]}")
    labels = raw.map(lookup).to_numpy(dtype=np.int64)

    feats = frame.drop(columns=[label_column]).select_dtypes(include="number")
    if feats.shape[1] == 0:
        raise DatasetLoadError("no numeric feature columns")
    x = feats.to_numpy(dtype=np.float64)
    x[~np.isfinite(x)] = 0.0
    return Dataset(x, labels, tuple(class_names))


def _norm_label(value: str) -> str:
    return value.strip().lower().replace("-", "").replace("_", "").replace(" ", "")


def class_sizes(total: int, proportions=DARKNET_COUNTS) -> list[int]:
    """Split ``total`` into per-class counts in the given proportions.

    Largest-remainder rounding; every class keeps at least one sample.
    """
    w = np.asarray(proportions, dtype=np.float64)
    exact = total * w / w.sum()
    sizes = np.maximum(np.floor(exact).astype(int), 1)
    order = np.argsort(-(exact - np.floor(exact)), kind="stable")
    i = 0
    while sizes.sum() < total:
        sizes[order[i % len(order)]] += 1
        i += 1
    return sizes.tolist()


def default_means(n_features: int = 8, separation: float = 3.0, overlap: float = 1.6):
    """Blob centres: Non-Tor and Tor well apart; NonVPN and VPN close.

    ``overlap`` is the distance between the NonVPN and VPN centres; the
    smaller it is the more the two classes are confused.
    """
    means = np.zeros((4, n_features))
    means[0, 0] = separation
    means[2, 1] = separation
    means[1, 2] = separation
    means[3, 2] = separation
    means[3, 3] = overlap
    return means


def make_blobs(
    seed: int,
    total: int = 4000,
    proportions=DARKNET_COUNTS,
    n_features: int = 8,
    std: float = 1.0,
    means=None,
    class_names=DARKNET_CLASSES,
) -> Dataset:
    """Gaussian blobs, one per class, shuffled."""
    rng = np.random.default_rng(seed)
    sizes = class_sizes(total, proportions)
    if means is None:
        means = default_means(n_features)
    means = np.asarray(means, dtype=np.float64)
    xs, ys = [], []
    for c, n in enumerate(sizes):
        xs.append(means[c] + std * rng.standard_normal((n, n_features)))
        ys.append(np.full(n, c, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(len(y))
    return Dataset(x[perm], y[perm], tuple(class_names))


def train_test_split(data: Dataset, train_fraction: float, rng: np.random.Generator):
    """Stratified split, so small classes land on both sides."""
    train_idx, test_idx = [], []
    for c in range(data.n_classes):
        idx = np.flatnonzero(data.labels == c)
        idx = idx[rng.permutation(len(idx))]
        cut = int(round(train_fraction * len(idx)))
        train_idx.append(idx[:cut])
        test_idx.append(idx[cut:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return data.subset(tr), data.subset(te)


def iid_shards(data: Dataset, n_shards: int, rng: np.random.Generator) -> list[Dataset]:
    """Evenly divide ``data`` into ``n_shards`` IID shards (stratified round-robin)."""
    buckets: list[list[int]] = [[] for _ in range(n_shards)]
    offset = 0
    for c in range(data.n_classes):
        idx = np.flatnonzero(data.labels == c)
        idx = idx[rng.permutation(len(idx))]
        for j, sample in enumerate(idx):
            buckets[(offset + j) % n_shards].append(int(sample))
        offset += len(idx)
    return [data.subset(np.sort(np.array(b, dtype=np.int64))) for b in buckets]


@dataclass
class MinMaxScaler:
    lo: np.ndarray = field(default=None)
    span: np.ndarray = field(default=None)

    def fit(self, x: np.ndarray) -> "MinMaxScaler":
        self.lo = x.min(axis=0)
        span = x.max(axis=0) - self.lo
        span[span == 0] = 1.0
        self.span = span
        return self

    def transform(self, data: Dataset) -> Dataset:
        return Dataset((data.features - self.lo) / self.span, data.labels, data.class_names)
