"""Validator behaviour: score every posted model on one fixed test batch."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cas import BlobStore, Digest
from .commitments import GroupParams, Proof, generate_proof
from .data import Dataset
from .ledger import Ledger, ProofStatus, VerificationRecord
from .nn import ModelWeights, predict_proba


@dataclass(frozen=True)
class ValidatorTestSet:
    data: Dataset

    @property
    def size(self) -> int:
        return len(self.data)

    @property
    def digest(self) -> Digest:
        return Digest.of(self.data.to_bytes())


@dataclass(frozen=True)
class ValidationTuple:
    ts_digest: Digest
    model_digest: Digest
    outputs: np.ndarray

    def to_bytes(self) -> bytes:
        out = np.ascontiguousarray(self.outputs, dtype="<f8")
        return (
            self.ts_digest.raw
            + self.model_digest.raw
            + np.array(out.shape, dtype="<u8").tobytes()
            + out.tobytes()
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ValidationTuple":
        rows, cols = np.frombuffer(blob, dtype="<u8", count=2, offset=64)
        outputs = np.frombuffer(blob, dtype="<f8", offset=80).reshape(int(rows), int(cols))
        return cls(Digest(blob[:32]), Digest(blob[32:64]), outputs.copy())


def run_validation(
    validator_id: int,
    k: int,
    ledger: Ledger,
    cas: BlobStore,
    testset: ValidatorTestSet,
    params: GroupParams,
    include_self: bool = True,
    tamper: Callable[[int, Proof], Proof] | None = None,
) -> list[tuple[ValidationTuple, Proof, ProofStatus]]:
    """Test every posted model, in ascending node-id order, on ``testset``.

    Each tuple is stored in the blob store and the proof is checked by the
    model's verifier contract before the record goes on the ledger.
    ``tamper(model_id, proof)`` lets tests play a dishonest validator.
    """
    rr = ledger.round(k)
    ts_digest = testset.digest
    features = testset.data.features
    results = []
    for model_id in sorted(rr.lm_digests):
        if not include_self and model_id == validator_id:
            continue
        model_digest = rr.lm_digests[model_id]
        weights = ModelWeights.from_bytes(cas.get(model_digest))
        outputs = predict_proba(weights, features)
        vt = ValidationTuple(ts_digest, model_digest, outputs)
        proof = generate_proof(ts_digest, model_digest, outputs, params)
        if tamper is not None:
            proof = tamper(model_id, proof)
            vt = ValidationTuple(proof.revealed_data_digest, proof.revealed_model_digest,
                                 np.asarray(proof.revealed_outputs))
        verdict = ledger.verifier(rr.verifier_addrs[model_id]).verify(proof)
        status = ProofStatus.ACCEPTED if verdict else ProofStatus.REJECTED
        tuple_digest = cas.put(vt.to_bytes())
        ledger.record_validation(VerificationRecord(
            k=k, validator_id=validator_id, model_id=model_id,
            model_digest=model_digest, ts_digest=vt.ts_digest,
            proof_status=status, tuple_digest=tuple_digest,
        ))
        results.append((vt, proof, status))
    return results


def check_consistency(ledger: Ledger, k: int, validator_id: int) -> bool:
    """True iff the validator has accepted records and they share one test-set digest."""
    accepted = [
        r for r in ledger.records_for(k, validator_id)
        if r.proof_status is ProofStatus.ACCEPTED
    ]
    if not accepted:
        return False
    return len({r.ts_digest for r in accepted}) == 1


def collect_outputs(ledger: Ledger, cas: BlobStore, k: int, validator_id: int) -> dict[int, np.ndarray]:
    """Accepted outputs of one validator, keyed by model owner."""
    out = {}
    for r in ledger.records_for(k, validator_id):
        if r.proof_status is ProofStatus.ACCEPTED:
            out[r.model_id] = ValidationTuple.from_bytes(cas.get(r.tuple_digest)).outputs
    return out
