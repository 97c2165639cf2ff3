"""Aggregator-side scoring: centroid consensus, error, trust, reputation, top-k."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, MissingCentroid, NoValidators

SIMPLEX_DIAMETER = math.sqrt(2.0)


def centroid(vectors, method: str = "mean") -> np.ndarray:
    """Consensus output for one data point.

    ``mean`` averages the vectors and renormalises; ``medoid`` picks the
    input vector with the smallest total distance to the others (lowest
    index on ties).
    """
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or len(v) == 0:
        raise EmptyInput("centroid needs at least one vector")
    if method == "mean":
        c = v.mean(axis=0)
        return c / c.sum()
    if method == "medoid":
        dist = np.linalg.norm(v[:, None, :] - v[None, :, :], axis=2).sum(axis=1)
        return v[int(np.argmin(dist))].copy()
    raise ValueError(f"unknown centroid method {method!r}")


def centroids(stack: np.ndarray, method: str = "mean") -> np.ndarray:
    """Per-point centroids of ``stack`` shaped (models, points, classes)."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] == 0:
        raise EmptyInput("need outputs of at least one model")
    if method == "mean":
        c = stack.mean(axis=0)
        return c / c.sum(axis=1, keepdims=True)
    return np.stack([centroid(stack[:, d, :], method) for d in range(stack.shape[1])])


def avg_error(outputs, cents) -> float:
    """Mean distance of one model's outputs from the per-point centroids,
    scaled by the simplex diameter so the result lies in [0, 1]."""
    outputs = np.asarray(outputs, dtype=np.float64)
    if cents is None:
        raise MissingCentroid("no centroids supplied")
    cents = np.asarray(cents, dtype=np.float64)
    if cents.shape != outputs.shape:
        raise MissingCentroid(f"centroids {cents.shape} do not cover outputs {outputs.shape}")
    if len(outputs) == 0:
        raise EmptyInput("empty test set")
    dist = np.sqrt(((outputs - cents) ** 2).sum(axis=1))
    return float(min(dist.mean() / SIMPLEX_DIAMETER, 1.0))


def model_error(per_validator) -> float:
    vals = list(per_validator)
    if not vals:
        raise NoValidators("no consistent validator scored this model")
    return float(sum(vals) / len(vals))


def trust(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"error {p} outside [0, 1]")
    return 1.0 - p


@dataclass
class ReputationState:
    alpha: float = 0.5
    r0: float = 1.0
    history: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.r0 <= 1.0:
            raise ValueError("initial reputation must lie in [0, 1]")

    def current(self, node_id: int) -> float:
        hist = self.history.get(node_id)
        return hist[-1][1] if hist else self.r0

    def update(self, node_id: int, k: int, t: float) -> float:
        prev = self.current(node_id)
        r = (1.0 - self.alpha) * prev + self.alpha * t
        r = min(max(r, 0.0), 1.0)
        self.history.setdefault(node_id, []).append((k, r))
        return r


def update_reputation(state: ReputationState, i: int, k: int, t: float) -> float:
    return state.update(i, k, t)


def top_k_count(n: int, fraction: float) -> int:
    # rounding guards against 0.7 * 10 = 7.000000000000001
    return max(1, min(n, math.ceil(round(fraction * n, 9))))


def rank_top_k(reputations: dict, fraction: float) -> set:
    """Highest-reputation nodes, ``ceil(fraction * N)`` of them; lower id wins ties."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if not reputations:
        raise EmptyInput("no reputations to rank")
    order = sorted(reputations, key=lambda n: (-reputations[n], n))
    return set(order[: top_k_count(len(order), fraction)])


@dataclass
class RoundScores:
    per_validator: dict  # (model_id, validator_id) -> P_ij
    error: dict          # model_id -> P_i
    trust: dict          # model_id -> T_i


def score_round(outputs_by_validator: dict, method: str = "mean") -> RoundScores:
    """Error and trust for every model from the validators' accepted outputs.

    ``outputs_by_validator`` maps validator id -> {model id -> (points, classes)}.
    Centroids are per validator, over the models that validator accepted.
    """
    per_validator = {}
    for v in sorted(outputs_by_validator):
        outs = outputs_by_validator[v]
        if not outs:
            continue
        ids = sorted(outs)
        cents = centroids(np.stack([outs[i] for i in ids]), method)
        for i in ids:
            per_validator[(i, v)] = avg_error(outs[i], cents)
    models = sorted({i for outs in outputs_by_validator.values() for i in outs})
    error, trusts = {}, {}
    for i in models:
        error[i] = model_error(p for (m, _), p in sorted(per_validator.items()) if m == i)
        trusts[i] = trust(error[i])
    return RoundScores(per_validator, error, trusts)
