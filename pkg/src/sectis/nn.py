"""Small ReLU classifier: init, minibatch SGD, inference, averaging, metrics.

Parameters are stored as float32; every forward/backward pass and every
sum runs in float64 and is cast back at the end.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .data import Dataset, require_nonempty
from .errors import (
    ArchitectureMismatch,
    EmptyDataset,
    EmptyInput,
    NoSourceSamples,
    ShapeMismatch,
)

HIDDEN = (64, 32)


@dataclass(frozen=True)
class ModelWeights:
    """Dense layers ``[(W, b), ...]`` with ``W`` shaped (fan_in, fan_out)."""

    layers: tuple

    def __post_init__(self):
        layers = []
        prev = None
        for w, b in self.layers:
            w = np.asarray(w, dtype=np.float32)
            b = np.asarray(b, dtype=np.float32)
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"bad layer shapes {w.shape}, {b.shape}")
            if prev is not None and w.shape[0] != prev:
                raise ShapeMismatch("layer shapes do not chain")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("non-finite parameter")
            w.setflags(write=False)
            b.setflags(write=False)
            layers.append((w, b))
            prev = w.shape[1]
        object.__setattr__(self, "layers", tuple(layers))

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.layers[0][0].shape[0],) + tuple(w.shape[1] for w, _ in self.layers)

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def n_classes(self) -> int:
        return self.dims[-1]

    def to_bytes(self) -> bytes:
        """Layer-major, row-major, weights before biases, little-endian f32.

        A header of layer dimensions (u32) precedes the parameters so the
        encoding round-trips.
        """
        dims = self.dims
        parts = [np.array([len(dims), *dims], dtype="<u4").tobytes()]
        for w, b in self.layers:
            parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelWeights":
        n = int(np.frombuffer(blob, dtype="<u4", count=1)[0])
        dims = np.frombuffer(blob, dtype="<u4", count=n + 1)[1:].astype(int)
        pos = 4 * (n + 1)
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(blob, dtype="<f4", count=fan_in * fan_out, offset=pos)
            pos += 4 * fan_in * fan_out
            b = np.frombuffer(blob, dtype="<f4", count=fan_out, offset=pos)
            pos += 4 * fan_out
            layers.append((w.reshape(fan_in, fan_out).copy(), b.copy()))
        if pos != len(blob):
            raise ValueError("trailing bytes in model blob")
        return cls(tuple(layers))

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    def same_architecture(self, other: "ModelWeights") -> bool:
        return self.dims == other.dims


@dataclass(frozen=True)
class Hyperparams:
    lr: float = 0.01
    local_epochs: int = 5
    batch_size: int = 32
    rounds: int = 50

    def __post_init__(self):
        if self.lr < 0 or self.local_epochs < 1 or self.batch_size < 1 or self.rounds < 0:
            raise ValueError(f"invalid hyperparameters {self}")


@dataclass(frozen=True)
class Metrics:
    f1_macro: float
    f1_micro: float
    ctmr: float
    source_recall: float
    confusion: np.ndarray


def init_model(seed: int, in_dim: int, n_classes: int, hidden=HIDDEN) -> ModelWeights:
    """He-normal weights, zero biases."""
    if in_dim < 1 or n_classes < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    dims = (in_dim, *hidden, n_classes)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        layers.append((w.astype(np.float32), np.zeros(fan_out, dtype=np.float32)))
    return ModelWeights(tuple(layers))


def _params64(w: ModelWeights) -> list[np.ndarray]:
    out = []
    for wm, b in w.layers:
        out.append(wm.astype(np.float64))
        out.append(b.astype(np.float64))
    return out


def _from_params(params: list[np.ndarray]) -> ModelWeights:
    return ModelWeights(tuple((params[i], params[i + 1]) for i in range(0, len(params), 2)))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(params, x):
    acts = [x]
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        z = h @ params[2 * i] + params[2 * i + 1]
        if i < n_layers - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    return acts, h


def loss_and_grads(params: list[np.ndarray], x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and its gradient per parameter array.

    ``params`` alternates weight and bias arrays (float64).
    """
    acts, logits = _forward(params, x)
    n = len(y)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), y]))

    delta = _softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(params)
    for i in reversed(range(len(params) // 2)):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[2 * i].T) * (acts[i] > 0)
    return loss, grads


def _check_input(w: ModelWeights, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != w.in_dim:
        raise ShapeMismatch(f"expected (*, {w.in_dim}) features, got {x.shape}")
    return x


def dataset_loss(w: ModelWeights, data: Dataset) -> float:
    x = _check_input(w, data.features)
    loss, _ = loss_and_grads(_params64(w), x, data.labels)
    return loss


def train_local(w: ModelWeights, data: Dataset, hp: Hyperparams, seed: int) -> ModelWeights:
    """Plain minibatch SGD on mean cross-entropy; returns new weights."""
    if len(data) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    x = _check_input(w, data.features)
    if data.n_classes != w.n_classes:
        raise ShapeMismatch("dataset classes do not match model outputs")
    y = data.labels
    params = _params64(w)
    rng = np.random.default_rng(seed)
    for _ in range(hp.local_epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), hp.batch_size):
            batch = order[start:start + hp.batch_size]
            _, grads = loss_and_grads(params, x[batch], y[batch])
            for p, g in zip(params, grads):
                p -= hp.lr * g
    return _from_params(params)


def predict_proba(w: ModelWeights, features) -> np.ndarray:
    """Softmax output rows, one per input row (float64)."""
    x = _check_input(w, features)
    _, logits = _forward(_params64(w), x)
    return _softmax(logits)


def predict(w: ModelWeights, features) -> np.ndarray:
    return predict_proba(w, features).argmax(axis=1)


def fedavg(models) -> ModelWeights:
    """Element-wise mean of the parameters.

    Models are summed in a canonical order (sorted by serialized bytes), so
    the result is bit-identical for any permutation of the input list.
    """
    models = list(models)
    if not models:
        raise EmptyInput("fedavg needs at least one model")
    first = models[0]
    for m in models[1:]:
        if not m.same_architecture(first):
            raise ArchitectureMismatch(f"{m.dims} != {first.dims}")
    ordered = sorted(models, key=lambda m: hashlib.sha256(m.to_bytes()).digest())
    acc = _params64(ordered[0])
    for m in ordered[1:]:
        for a, p in zip(acc, _params64(m)):
            a += p
    return _from_params([a / len(models) for a in acc])


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray, source: int, target: int) -> Metrics:
    n_src = int(cm[source].sum())
    if n_src == 0:
        raise NoSourceSamples(f"no samples of class {source}")
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    actual = cm.sum(axis=1).astype(np.float64)
    present = (predicted + actual) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(actual > 0, tp / actual, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    f1_macro = float(f1[present].mean())
    f1_micro = float(tp.sum() / cm.sum())
    ctmr = 100.0 * cm[source, target] / n_src
    correct = cm[source, source]
    missed = n_src - correct
    source_recall = 100.0 * correct / (correct + missed)
    return Metrics(f1_macro, f1_micro, float(ctmr), float(source_recall), cm)


def evaluate(w: ModelWeights, test: Dataset, source_class: int, target_class: int) -> Metrics:
    require_nonempty(test)
    for c in (source_class, target_class):
        if not 0 <= c < test.n_classes:
            raise ValueError(f"class index {c} out of range")
    cm = confusion_matrix(test.labels, predict(w, test.features), test.n_classes)
    return metrics_from_confusion(cm, source_class, target_class)
