"""Binding commitments over a prime-order subgroup of Z_p^*.

A proof carries three commitments ``g^e mod p``: one to the validator's
test-set digest, one to the model digest and one to the model's outputs on
that test set, together with the revealed values. Verification recomputes
the commitments from the revealed values. The scheme is binding but not
hiding: revealed values travel in the clear.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .cas import Digest
from .errors import ParamsMismatch

try:
    import gmpy2

    def _powmod(base: int, exp: int, mod: int) -> int:
        return int(gmpy2.powmod(base, exp, mod))

except ImportError:  # pragma: no cover
    def _powmod(base: int, exp: int, mod: int) -> int:
        return pow(base, exp, mod)


REJECT_MESSAGE = "The constraint system is not satisfied"
OUTPUT_DECIMALS = 9

# RFC 3526 group 14: 2048-bit safe prime p = 2q + 1.
MODP_2048 = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)
# largest safe prime below 2^64; only for fast unit tests
TOY_64 = 18446744073709550147

GROUPS = {"modp2048": MODP_2048, "toy64": TOY_64}


@dataclass(frozen=True)
class GroupParams:
    p: int
    q: int
    g: int
    name: str = ""

    @property
    def id(self) -> str:
        text = f"{self.p:x}|{self.q:x}|{self.g:x}".encode()
        return hashlib.sha256(text).hexdigest()


def setup_params(seed: int, group: str = "modp2048") -> GroupParams:
    """Fixed safe-prime group with a generator of the order-q subgroup.

    The generator is the square of a seed-derived element, so it is a
    quadratic residue and (being neither 0 nor 1) has order exactly q.
    """
    try:
        p = GROUPS[group]
    except KeyError:
        raise ValueError(f"unknown group {group!r}; choose from {sorted(GROUPS)}") from None
    q = (p - 1) // 2
    counter = 0
    while True:
        h = hashlib.sha256(f"sectis/generator/{seed}/{counter}".encode()).digest()
        g = _powmod(int.from_bytes(h, "big") % p, 2, p)
        if g not in (0, 1):
            return GroupParams(p, q, g, group)
        counter += 1


def hash_to_field(data: bytes, params: GroupParams) -> int:
    h = hashlib.sha256(b"sectis/h2f/" + bytes(data)).digest()
    return int.from_bytes(h, "big") % params.q


@lru_cache(maxsize=4096)
def _commit_cached(e: int, g: int, p: int) -> int:
    return _powmod(g, e, p)


def commit(e: int, params: GroupParams) -> int:
    if not 0 <= e < params.q:
        raise ValueError("exponent must be reduced mod q")
    return _commit_cached(e, params.g, params.p)


def canonical_outputs(outputs) -> bytes:
    """Row-major float64, rounded to 9 decimals, with a shape header."""
    m = np.asarray(outputs, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("outputs must be a matrix")
    rounded = np.round(m, OUTPUT_DECIMALS) + 0.0  # folds -0.0 into 0.0
    header = np.array(m.shape, dtype="<u8").tobytes()
    return header + np.ascontiguousarray(rounded, dtype="<f8").tobytes()


@dataclass(frozen=True)
class Proof:
    data_commit: int
    model_commit: int
    output_commit: int
    revealed_data_digest: Digest
    revealed_model_digest: Digest
    revealed_outputs: np.ndarray
    params_id: str

    def to_record(self) -> str:
        """Single-line JSON with a fixed field order."""
        out = np.asarray(self.revealed_outputs, dtype=np.float64)
        fields = [
            ("params_id", self.params_id),
            ("data_commit", format(self.data_commit, "x")),
            ("model_commit", format(self.model_commit, "x")),
            ("output_commit", format(self.output_commit, "x")),
            ("data_digest", self.revealed_data_digest.hex),
            ("model_digest", self.revealed_model_digest.hex),
            ("outputs_shape", list(out.shape)),
            ("outputs", [repr(float(v)) for v in out.ravel()]),
        ]
        return json.dumps(dict(fields), separators=(",", ":"))

    @classmethod
    def from_record(cls, text: str) -> "Proof":
        d = json.loads(text)
        outputs = np.array([float(v) for v in d["outputs"]], dtype=np.float64)
        return cls(
            data_commit=int(d["data_commit"], 16),
            model_commit=int(d["model_commit"], 16),
            output_commit=int(d["output_commit"], 16),
            revealed_data_digest=Digest.from_hex(d["data_digest"]),
            revealed_model_digest=Digest.from_hex(d["model_digest"]),
            revealed_outputs=outputs.reshape(d["outputs_shape"]),
            params_id=d["params_id"],
        )

    def __eq__(self, other):
        if not isinstance(other, Proof):
            return NotImplemented
        return self.to_record() == other.to_record()

    def __hash__(self):
        return hash(self.to_record())


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str | None = None

    @property
    def output(self) -> str:
        """What the verifier prints: ``1`` when valid, else the failure message."""
        return "1" if self.accepted else self.reason

    def __bool__(self) -> bool:
        return self.accepted


ACCEPTED = Verdict(True)
REJECTED = Verdict(False, REJECT_MESSAGE)


def generate_proof(ts_digest: Digest, model_digest: Digest, outputs, params: GroupParams) -> Proof:
    outputs = np.array(outputs, dtype=np.float64)
    outputs.setflags(write=False)
    return Proof(
        data_commit=commit(hash_to_field(ts_digest.raw, params), params),
        model_commit=commit(hash_to_field(model_digest.raw, params), params),
        output_commit=commit(hash_to_field(canonical_outputs(outputs), params), params),
        revealed_data_digest=ts_digest,
        revealed_model_digest=model_digest,
        revealed_outputs=outputs,
        params_id=params.id,
    )


def verify_proof(proof: Proof, params: GroupParams) -> Verdict:
    """Reopen all three commitments against the revealed values."""
    if proof.params_id != params.id:
        raise ParamsMismatch(f"proof made under {proof.params_id[:12]}, got {params.id[:12]}")
    try:
        expected = (
            commit(hash_to_field(proof.revealed_data_digest.raw, params), params),
            commit(hash_to_field(proof.revealed_model_digest.raw, params), params),
            commit(hash_to_field(canonical_outputs(proof.revealed_outputs), params), params),
        )
    except (AttributeError, TypeError, ValueError):
        return REJECTED
    got = (proof.data_commit, proof.model_commit, proof.output_commit)
    return ACCEPTED if got == expected else REJECTED


def tamper(proof: Proof, **changes) -> Proof:
    """Copy of ``proof`` with some fields replaced (for attack scenarios)."""
    return replace(proof, **changes)
