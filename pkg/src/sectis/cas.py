"""Content-addressed blob store standing in for IPFS.

Blobs are immutable and keyed by their SHA-256 digest. The store lives in
memory and can optionally mirror every blob to ``<root>/<hex-digest>``.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import DigestCollision, NotFound

DIGEST_SIZE = 32


@dataclass(frozen=True, order=True)
class Digest:
    """A 32-byte hash value, rendered as lowercase hex."""

    raw: bytes

    def __post_init__(self):
        if not isinstance(self.raw, bytes) or len(self.raw) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes")

    @classmethod
    def of(cls, data: bytes) -> "Digest":
        return cls(hashlib.sha256(data).digest())

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        return cls(bytes.fromhex(text))

    @property
    def hex(self) -> str:
        return self.raw.hex()

    def __str__(self) -> str:
        return self.hex

    def __repr__(self) -> str:
        return f"Digest({self.hex[:12]}...)"


def hash_bytes(data: bytes) -> Digest:
    return Digest.of(data)


class BlobStore:
    """Immutable put/get store keyed by digest.

    Args:
        root: optional directory; when given, blobs are also written there
            (one file per digest) and blobs already on disk are readable.
    """

    def __init__(self, root: str | os.PathLike | None = None):
        self._blobs: dict[Digest, bytes] = {}
        self._lock = threading.Lock()
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def put(self, blob: bytes) -> Digest:
        blob = bytes(blob)
        digest = Digest.of(blob)
        with self._lock:
            existing = self._blobs.get(digest)
            if existing is not None:
                if existing != blob:
                    raise DigestCollision(digest.hex)
                return digest
            self._blobs[digest] = blob
            if self.root is not None:
                self._write_file(digest, blob)
        return digest

    def get(self, digest: Digest) -> bytes:
        with self._lock:
            blob = self._blobs.get(digest)
        if blob is not None:
            return blob
        if self.root is not None:
            path = self.root / digest.hex
            if path.exists():
                data = path.read_bytes()
                if Digest.of(data) == digest:
                    with self._lock:
                        self._blobs[digest] = data
                    return data
        raise NotFound(f"no blob stored under {digest.hex}")

    def __contains__(self, digest: Digest) -> bool:
        try:
            self.get(digest)
        except NotFound:
            return False
        return True

    def __len__(self) -> int:
        return len(self._blobs)

    def _write_file(self, digest: Digest, blob: bytes) -> None:
        path = self.root / digest.hex
        if path.exists():
            return
        # write-then-rename keeps each file atomic
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
