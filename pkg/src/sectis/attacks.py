"""Label-flipping Byzantine clients and colluding validators."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_rng
from .data import Dataset
from .errors import ConfigInvalid, UnknownNode
from .validation import ValidatorTestSet

log = logging.getLogger(__name__)

VPN, NON_VPN = 3, 1


@dataclass(frozen=True)
class AttackConfig:
    """Which clients flip labels and which validators collude with whom.

    Defaults flip VPN samples to NonVPN.
    """

    byzantine_ids: frozenset = frozenset()
    flip_fraction: float = 0.0
    source_class: int = VPN
    target_class: int = NON_VPN
    faulty_validator_map: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "byzantine_ids", frozenset(int(i) for i in self.byzantine_ids))
        object.__setattr__(
            self, "faulty_validator_map",
            {int(v): int(c) for v, c in dict(self.faulty_validator_map).items()},
        )
        if not 0.0 <= self.flip_fraction <= 1.0:
            raise ConfigInvalid(f"flip fraction {self.flip_fraction} outside [0, 1]")
        if self.source_class == self.target_class:
            raise ConfigInvalid("source and target class must differ")

    @property
    def is_empty(self) -> bool:
        return not self.byzantine_ids and not self.faulty_validator_map

    def check_fault_bound(self, n_validators: int) -> None:
        f = len(self.faulty_validator_map)
        if f and 2 * f + 1 > n_validators:
            raise ConfigInvalid(f"{f} faulty validators need 2f+1 <= {n_validators}")
        if f and n_validators - f < 2 * f + 1:
            log.warning("%d honest of %d validators is below 2f+1 = %d",
                        n_validators - f, n_validators, 2 * f + 1)

    def describe(self) -> dict:
        return {
            "byzantine_ids": ",".join(str(i) for i in sorted(self.byzantine_ids)),
            "flip_fraction": self.flip_fraction,
            "source_class": self.source_class,
            "target_class": self.target_class,
            "faulty_validators": ",".join(
                f"{v}:{c}" for v, c in sorted(self.faulty_validator_map.items())
            ),
        }


def flip_count(n_source: int, fraction: float) -> int:
    return int(math.floor(fraction * n_source + 1e-9))


def flip_labels(data: Dataset, s: int, t: int, x: float, seed) -> Dataset:
    """Relabel exactly ``floor(x * N_s)`` uniformly chosen class-``s`` samples as ``t``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    src = np.flatnonzero(data.labels == s)
    n = flip_count(len(src), x)
    if n == 0:
        return data
    chosen = rng.choice(src, size=n, replace=False)
    labels = data.labels.copy()
    labels[chosen] = t
    return data.with_labels(labels)


def colluder_flip(data: Dataset, colluder_id: int, attack: AttackConfig) -> Dataset:
    rng = derive_rng(attack.seed, "flip", colluder_id)
    return flip_labels(data, attack.source_class, attack.target_class, attack.flip_fraction, rng)


def corrupt_validator_testset(
    validator_id: int,
    colluder_id: int,
    attack: AttackConfig,
    split: Dataset,
) -> ValidatorTestSet:
    """Test set a faulty validator uses to flatter its colluder.

    The validator's split is relabelled with the colluder's flip and then
    restricted to samples outside the poisoned source class, which is where
    the colluder's model departs from the honest consensus. The resulting
    set is used for every model, so proofs stay valid.
    """
    if attack.faulty_validator_map.get(validator_id) != colluder_id:
        raise UnknownNode(f"validator {validator_id} does not collude with {colluder_id}")
    noisy = colluder_flip(split, colluder_id, attack)
    keep = np.flatnonzero(split.labels != attack.source_class)
    return ValidatorTestSet(noisy.subset(keep))


def apply_attack_plan(network, attack: AttackConfig) -> list[str]:
    """Poison Byzantine training sets and swap faulty validators' test sets.

    ``network.clients`` maps node id to objects with ``clean_train``,
    ``train``, ``holdout`` and ``testset`` attributes. Everything is derived
    from the clean copies, so applying a plan twice gives the same state.
    """
    clients = network.clients
    for node in sorted(attack.byzantine_ids | set(attack.faulty_validator_map)
                       | set(attack.faulty_validator_map.values())):
        if node not in clients:
            raise UnknownNode(f"attack plan names unknown node {node}")
    plan = []
    for node_id, client in sorted(clients.items()):
        client.train = client.clean_train
        client.testset = ValidatorTestSet(client.holdout)
    for node_id in sorted(attack.byzantine_ids):
        client = clients[node_id]
        client.train = colluder_flip(client.clean_train, node_id, attack)
        flipped = int((client.train.labels != client.clean_train.labels).sum())
        plan.append(f"byzantine {node_id}: {flipped} labels {attack.source_class}->{attack.target_class}")
    for v, c in sorted(attack.faulty_validator_map.items()):
        client = clients[v]
        client.testset = corrupt_validator_testset(v, c, attack, client.holdout)
        plan.append(f"faulty validator {v} colludes with {c}: test set {client.testset.size} samples")
    for line in plan:
        log.info("attack plan: %s", line)
    network.attack_log = plan
    return plan
