"""Content-addressed snapshot store for operational contexts.

Snapshots are full canonical serializations keyed by their SHA-256 hash and
written to a directory (one file per snapshot plus an ``index.json``).  Equal
contexts therefore share one snapshot, and restore is bit-exact by
construction.  Reads are lock-free; writes are serialized and atomic
(temp file + rename).
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from pathlib import Path

from .errors import CorruptSnapshot, StorageFailure, UnknownSnapshot
from .state import OperationalContext, canonical_bytes, context_from_bytes, validate_context

SnapshotId = str


def content_hash(raw: bytes) -> SnapshotId:
    return hashlib.sha256(raw).hexdigest()


class SnapshotStore:
    """Directory of ``<hash>.json`` files plus an index file."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._index_path = self.root / "index.json"
        self._lock = threading.Lock()
        if not self._index_path.exists():
            self._write_index({})

    def _read_index(self) -> dict:
        try:
            return json.loads(self._index_path.read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise StorageFailure(f"snapshot index unreadable: {exc}")

    def _write_index(self, index: dict):
        tmp = self._index_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(index, sort_keys=True, indent=1), "utf-8")
        os.replace(tmp, self._index_path)

    def _path_for(self, snapshot_id: SnapshotId) -> Path:
        return self.root / f"{snapshot_id}.json"

    def snapshot(self, ctx: OperationalContext) -> SnapshotId:
        """Persist the context; idempotent, the id is a pure function of the
        canonical bytes."""
        raw = canonical_bytes(ctx)
        snapshot_id = content_hash(raw)
        path = self._path_for(snapshot_id)
        with self._lock:
            if not path.exists():
                try:
                    tmp = path.with_suffix(".tmp")
                    tmp.write_bytes(raw)
                    os.replace(tmp, path)
                except OSError as exc:
                    raise StorageFailure(f"cannot persist snapshot: {exc}")
                index = self._read_index()
                index[snapshot_id] = {"size": len(raw)}
                self._write_index(index)
        return snapshot_id

    def restore(self, snapshot_id: SnapshotId) -> OperationalContext:
        """Load and validate the context stored under ``snapshot_id``."""
        path = self._path_for(snapshot_id)
        if not path.exists():
            raise UnknownSnapshot(f"no snapshot {snapshot_id}")
        raw = path.read_bytes()
        if content_hash(raw) != snapshot_id:
            raise CorruptSnapshot(f"stored bytes do not hash to {snapshot_id}")
        try:
            ctx = context_from_bytes(raw)
        except Exception as exc:
            raise CorruptSnapshot(f"stored bytes unparsable: {exc}")
        violations = validate_context(ctx)
        if violations:
            raise CorruptSnapshot(
                f"restored context fails validation: {violations[0].rule}")
        return ctx

    def raw_bytes(self, snapshot_id: SnapshotId) -> bytes:
        path = self._path_for(snapshot_id)
        if not path.exists():
            raise UnknownSnapshot(f"no snapshot {snapshot_id}")
        return path.read_bytes()

    def has(self, snapshot_id: SnapshotId) -> bool:
        return self._path_for(snapshot_id).exists()

    def ids(self) -> list[SnapshotId]:
        return sorted(self._read_index().keys())


class MemorySnapshotStore:
    """Same contract as SnapshotStore, held in a dict; for ephemeral runs."""

    def __init__(self):
        self._blobs: dict[SnapshotId, bytes] = {}

    def snapshot(self, ctx: OperationalContext) -> SnapshotId:
        raw = canonical_bytes(ctx)
        snapshot_id = content_hash(raw)
        self._blobs[snapshot_id] = raw
        return snapshot_id

    def restore(self, snapshot_id: SnapshotId) -> OperationalContext:
        raw = self.raw_bytes(snapshot_id)
        if content_hash(raw) != snapshot_id:
            raise CorruptSnapshot(f"stored bytes do not hash to {snapshot_id}")
        return context_from_bytes(raw)

    def raw_bytes(self, snapshot_id: SnapshotId) -> bytes:
        if snapshot_id not in self._blobs:
            raise UnknownSnapshot(f"no snapshot {snapshot_id}")
        return self._blobs[snapshot_id]

    def has(self, snapshot_id: SnapshotId) -> bool:
        return snapshot_id in self._blobs

    def ids(self) -> list[SnapshotId]:
        return sorted(self._blobs)
