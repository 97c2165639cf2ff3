"""In-process blockchain emulation.

``Ledger`` plays the Coordinator contract: node registry, per-round state
machine (Training -> Validating -> Aggregating -> Closed), score storage and
an append-only transaction log. ``Verifier`` instances play the per-model
verifier contracts; their "address" is an integer handle into the ledger's
registry.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .cas import BlobStore, Digest
from .commitments import REJECTED, GroupParams, Proof, Verdict, verify_proof
from .errors import (
    DanglingDigest,
    DuplicateRecord,
    DuplicateRegistration,
    EmptyNetwork,
    MissingModel,
    NotAggregator,
    NotAValidator,
    NotEnoughEligible,
    ScoresMissing,
    UnknownNode,
    WrongPhase,
)

log = logging.getLogger(__name__)


class Phase(enum.IntEnum):
    TRAINING = 0
    VALIDATING = 1
    AGGREGATING = 2
    CLOSED = 3


class ProofStatus(enum.Enum):
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"


@dataclass
class NodeRecord:
    node_id: int
    address: str
    reputation: float
    active: bool = True
    suspended_at: int | None = None
    low_streak: int = 0


@dataclass
class RoundRecord:
    k: int
    lm_digests: dict = field(default_factory=dict)
    verifier_addrs: dict = field(default_factory=dict)
    validators: list = field(default_factory=list)
    aggregator: int | None = None
    trust: dict | None = None
    reputation: dict | None = None
    gm_digest: Digest | None = None
    phase: Phase = Phase.TRAINING


@dataclass(frozen=True)
class VerificationRecord:
    k: int
    validator_id: int
    model_id: int
    model_digest: Digest
    ts_digest: Digest
    proof_status: ProofStatus
    tuple_digest: Digest


@dataclass(frozen=True)
class TxRecord:
    round: int
    phase: str
    op: str
    payload_digest: str

    def line(self) -> str:
        return f"{self.round}\t{self.phase}\t{self.op}\t{self.payload_digest}"


class Verifier:
    """Verifier contract bound to one local model and one parameter set."""

    def __init__(self, address: int, node_id: int, model_digest: Digest, params: GroupParams):
        self.address = address
        self.node_id = node_id
        self.model_digest = model_digest
        self.params = params
        self.force_accept = False  # test hook: accept everything

    def verify(self, proof: Proof) -> Verdict:
        verdict = verify_proof(proof, self.params)
        if self.force_accept:
            return Verdict(True)
        if verdict and proof.revealed_model_digest != self.model_digest:
            return REJECTED
        return verdict


def _jsonable(value):
    if isinstance(value, Digest):
        return value.hex
    if isinstance(value, enum.Enum):
        return value.name
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in sorted(value.items())}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


def payload_digest(payload: dict) -> str:
    text = json.dumps(_jsonable(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


class Ledger:
    """Coordinator state plus transaction log.

    All mutating calls go through one lock, so concurrent callers observe a
    single total order of operations.
    """

    def __init__(
        self,
        cas: BlobStore,
        r0: float = 1.0,
        eligibility: float = 0.5,
        suspension_threshold: float = 0.5,
        suspension_window: int = 5,
    ):
        if not 0.0 <= r0 <= 1.0:
            raise ValueError("initial reputation must lie in [0, 1]")
        self.cas = cas
        self.r0 = r0
        self.eligibility = eligibility
        self.suspension_threshold = suspension_threshold
        self.suspension_window = suspension_window
        self.nodes: dict[int, NodeRecord] = {}
        self._by_address: dict[str, int] = {}
        self.rounds: dict[int, RoundRecord] = {1: RoundRecord(1)}
        self.current = 1
        self.records: dict[tuple, VerificationRecord] = {}
        self.verifiers: dict[int, Verifier] = {}
        self.params: GroupParams | None = None
        self.log: list[TxRecord] = []
        self._lock = threading.RLock()

    # -- helpers ---------------------------------------------------------

    def _append(self, k: int, op: str, payload: dict) -> None:
        phase = self.rounds[k].phase.name if k in self.rounds else "SETUP"
        self.log.append(TxRecord(k, phase, op, payload_digest(payload)))

    def _round(self, k: int, phase: Phase) -> RoundRecord:
        rr = self.rounds.get(k)
        if rr is None or k != self.current:
            raise WrongPhase(f"round {k} is not open (current round {self.current})")
        if rr.phase != phase:
            raise WrongPhase(f"round {k} is in {rr.phase.name}, expected {phase.name}")
        return rr

    def _active(self, node_id: int) -> NodeRecord:
        node = self.nodes.get(node_id)
        if node is None:
            raise UnknownNode(f"node {node_id} is not registered")
        if not node.active:
            raise UnknownNode(f"node {node_id} is suspended")
        return node

    def round(self, k: int) -> RoundRecord:
        return self.rounds[k]

    def active_nodes(self) -> list[int]:
        return sorted(n for n, rec in self.nodes.items() if rec.active)

    def eligible_validators(self) -> list[int]:
        return [n for n in self.active_nodes() if self.nodes[n].reputation >= self.eligibility]

    # -- setup -----------------------------------------------------------

    def publish_params(self, params: GroupParams) -> None:
        with self._lock:
            self.params = params
            self._append(0, "publish_params", {"p": hex(params.p), "q": hex(params.q), "g": hex(params.g)})

    def register_node(self, address: str) -> NodeRecord:
        with self._lock:
            if address in self._by_address:
                raise DuplicateRegistration(f"address {address!r} already registered")
            node_id = len(self.nodes)
            rec = NodeRecord(node_id, address, self.r0)
            self.nodes[node_id] = rec
            self._by_address[address] = node_id
            self._append(0, "register_node", {"node_id": node_id, "address": address})
            return rec

    # -- training phase --------------------------------------------------

    def submit_local_model(self, k: int, node_id: int, digest: Digest) -> None:
        with self._lock:
            rr = self._round(k, Phase.TRAINING)
            self._active(node_id)
            if digest not in self.cas:
                raise DanglingDigest(f"{digest.hex} is not in the blob store")
            if node_id in rr.lm_digests:
                log.warning("node %d resubmitted its model in round %d", node_id, k)
            rr.lm_digests[node_id] = digest
            self._append(k, "submit_local_model", {"node_id": node_id, "digest": digest})

    def deploy_verifier(self, node_id: int, model_digest: Digest) -> int:
        with self._lock:
            self._active(node_id)
            if self.params is None:
                raise WrongPhase("group parameters not published")
            address = len(self.verifiers)
            self.verifiers[address] = Verifier(address, node_id, model_digest, self.params)
            self._append(self.current, "deploy_verifier", {"address": address, "node_id": node_id, "model": model_digest})
            return address

    def verifier(self, address: int) -> Verifier:
        return self.verifiers[address]

    def submit_verifier_address(self, k: int, node_id: int, addr: int) -> None:
        with self._lock:
            rr = self._round(k, Phase.TRAINING)
            if node_id not in rr.lm_digests:
                raise MissingModel(f"node {node_id} has no model in round {k}")
            if addr not in self.verifiers:
                raise UnknownNode(f"no verifier at address {addr}")
            rr.verifier_addrs[node_id] = addr
            self._append(k, "submit_verifier_address", {"node_id": node_id, "addr": addr})

    # -- validation phase ------------------------------------------------

    def select_validators(self, k: int, count: int, rng: np.random.Generator) -> list[int]:
        """Uniform sample without replacement from the reputation-gated pool."""
        with self._lock:
            rr = self._round(k, Phase.TRAINING)
            pool = self.eligible_validators()
            if count > len(pool):
                raise NotEnoughEligible(f"{count} validators requested, {len(pool)} eligible")
            picked = [pool[i] for i in rng.choice(len(pool), size=count, replace=False)] if count else []
            rr.validators = picked
            rr.phase = Phase.VALIDATING
            self._append(k, "select_validators", {"validators": picked})
            return list(picked)

    def record_validation(self, record: VerificationRecord) -> None:
        with self._lock:
            rr = self._round(record.k, Phase.VALIDATING)
            if record.validator_id not in rr.validators:
                raise NotAValidator(f"node {record.validator_id} is not a validator in round {record.k}")
            key = (record.k, record.validator_id, record.model_id)
            if key in self.records:
                raise DuplicateRecord(f"record {key} already exists")
            self.records[key] = record
            self._append(record.k, "record_validation", {
                "validator": record.validator_id, "model_id": record.model_id,
                "model": record.model_digest, "ts": record.ts_digest,
                "status": record.proof_status, "tuple": record.tuple_digest,
            })

    def records_for(self, k: int, validator_id: int | None = None) -> list[VerificationRecord]:
        out = [r for key, r in self.records.items() if key[0] == k]
        if validator_id is not None:
            out = [r for r in out if r.validator_id == validator_id]
        return sorted(out, key=lambda r: (r.validator_id, r.model_id))

    # -- aggregation phase -----------------------------------------------

    def select_aggregator(self, k: int, rng: np.random.Generator) -> int:
        with self._lock:
            rr = self._round(k, Phase.VALIDATING)
            pool = self.active_nodes()
            if not pool:
                raise EmptyNetwork("no active nodes")
            agg = pool[int(rng.integers(len(pool)))]
            rr.aggregator = agg
            rr.phase = Phase.AGGREGATING
            self._append(k, "select_aggregator", {"aggregator": agg})
            return agg

    def update_scores(self, k: int, caller: int, trust: dict, reputation: dict) -> None:
        """Store round scores and apply the suspension rule.

        NaN scores mean "not scored" (reputation disabled); they are stored
        but leave node reputations untouched.
        """
        with self._lock:
            rr = self._round(k, Phase.AGGREGATING)
            if caller != rr.aggregator:
                raise NotAggregator(f"node {caller} is not the aggregator of round {k}")
            rr.trust = dict(trust)
            rr.reputation = dict(reputation)
            for node_id, r in reputation.items():
                if math.isnan(r):
                    continue
                node = self.nodes[node_id]
                node.reputation = float(r)
                node.low_streak = node.low_streak + 1 if r < self.suspension_threshold else 0
                if node.active and node.low_streak >= self.suspension_window:
                    node.active = False
                    node.suspended_at = k
                    log.info("node %d suspended in round %d", node_id, k)
            self._append(k, "update_scores", {"trust": trust, "reputation": reputation})

    def publish_global_model(self, k: int, digest: Digest) -> None:
        with self._lock:
            rr = self._round(k, Phase.AGGREGATING)
            if rr.trust is None or rr.reputation is None:
                raise ScoresMissing(f"scores for round {k} not written")
            if digest not in self.cas:
                raise DanglingDigest(f"{digest.hex} is not in the blob store")
            rr.gm_digest = digest
            rr.phase = Phase.CLOSED
            self._append(k, "publish_global_model", {"digest": digest})
            self.current = k + 1
            self.rounds[k + 1] = RoundRecord(k + 1)

    # -- audit -----------------------------------------------------------

    def export_log(self) -> str:
        return "".join(tx.line() + "\n" for tx in self.log)


def check_log(log_records) -> None:
    """Replay a transaction log and assert phases never move backwards."""
    last: dict[int, int] = {}
    for tx in log_records:
        if tx.round == 0 or tx.phase == "SETUP":
            continue
        value = Phase[tx.phase].value
        if value < last.get(tx.round, -1):
            raise AssertionError(f"round {tx.round}: {tx.op} in {tx.phase} after a later phase")
        last[tx.round] = value
