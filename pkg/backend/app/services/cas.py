# app/services/cas.py
import hashlib
import logging
import os
import threading
from pathlib import Path

from app.exceptions import CidNotFoundError, EmptyPayloadError, IntegrityFailureError

logger = logging.getLogger(__name__)


def cid_for(data: bytes) -> str:
    """Content identifier: lowercase hex sha256 of the raw bytes."""
    return hashlib.sha256(data).hexdigest()


class ContentStore:
    """
    In-memory content-addressed store standing in for IPFS.
    With `root` set, every blob is also written to <root>/<hex-digest> and
    blobs already on disk are served lazily, so a run directory can be reopened.
    """

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
        self._blobs: dict[str, bytes] = {}
        self._lock = threading.Lock()

    # ==========================================
    # 1. PUT / GET
    # ==========================================

    def put(self, data: bytes) -> str:
        """Stores `data` under its digest. Re-putting identical bytes stores nothing new."""
        if not data:
            raise EmptyPayloadError("refusing to store an empty payload")
        data = bytes(data)
        cid = cid_for(data)
        with self._lock:
            if cid in self._blobs:
                return cid
            self._blobs[cid] = data
            if self.root is not None and not self._path(cid).exists():
                self._write_file(cid, data)
        logger.debug("stored %d bytes as %s", len(data), cid[:12])
        return cid

    def get(self, cid: str) -> bytes:
        """Returns the stored bytes after checking they still hash to `cid`."""
        with self._lock:
            data = self._blobs.get(cid)
            if data is None and self.root is not None:
                path = self._path(cid)
                if path.is_file():
                    data = path.read_bytes()
                    self._blobs[cid] = data
        if data is None:
            raise CidNotFoundError(f"no blob stored under {cid}")
        actual = cid_for(data)
        if actual != cid:
            raise IntegrityFailureError(f"blob {cid} hashes to {actual}; store is corrupt")
        return data

    def has(self, cid: str) -> bool:
        with self._lock:
            if cid in self._blobs:
                return True
        return self.root is not None and self._path(cid).is_file()

    # ==========================================
    # 2. UTILITIES
    # ==========================================

    def cids(self) -> list[str]:
        with self._lock:
            known = set(self._blobs)
        if self.root is not None:
            known.update(p.name for p in self.root.iterdir() if p.is_file() and len(p.name) == 64)
        return sorted(known)

    def __len__(self) -> int:
        return len(self.cids())

    def __contains__(self, cid: str) -> bool:
        return self.has(cid)

    def _path(self, cid: str) -> Path:
        return self.root / cid

    def _write_file(self, cid: str, data: bytes) -> None:
        # write-then-rename: a blob file is either absent or complete
        tmp = self.root / f".{cid}.tmp"
        tmp.write_bytes(data)
        os.replace(tmp, self._path(cid))
