"""On-disk model checkpoints with content hashes and garbage collection.

Layout under the store root::

    checkpoints/<id>.ckpt   one serialized model per blob
    manifest.json           {id: {"sha256", "generation", "slot"}} plus the pinned set

Blobs are write-once; a load re-hashes the bytes and refuses anything that
does not match the manifest.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

from evohpo.trainer import CheckpointFormatError, MlpModel

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
BLOB_DIR = "checkpoints"
SUFFIX = ".ckpt"


class CheckpointError(Exception):
    pass


class CheckpointNotFound(CheckpointError, KeyError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


class CheckpointWriteError(CheckpointError, OSError):
    def __init__(self, ckpt_id: str, cause: Exception):
        self.ckpt_id = ckpt_id
        super().__init__(f"failed writing checkpoint {ckpt_id}: {cause}")


@dataclass(frozen=True)
class ManifestEntry:
    sha256: str
    generation: int
    slot: int


def content_hash(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def make_id(digest: str, generation: int, slot: int) -> str:
    return f"g{generation:05d}-s{slot:04d}-{digest[:16]}"


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class CheckpointStore:
    """Content-hashed checkpoint files shared by a population.

    Thread-safe for concurrent ``save``/``load``; ``collect_garbage`` must only
    run when no evaluation is in flight.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.blob_dir = self.root / BLOB_DIR
        self.blob_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.entries: dict[str, ManifestEntry] = {}
        self.pinned: set[str] = set()
        self.gc_errors: list[tuple[str, str]] = []
        self._read_manifest()

    # -- manifest ---------------------------------------------------------

    def _read_manifest(self) -> None:
        path = self.root / MANIFEST
        if not path.exists():
            return
        doc = json.loads(path.read_text())
        self.entries = {k: ManifestEntry(**v) for k, v in doc.get("blobs", {}).items()}
        self.pinned = set(doc.get("pinned", []))

    def _write_manifest(self) -> None:
        doc = {
            "blobs": {k: vars(e) for k, e in sorted(self.entries.items())},
            "pinned": sorted(self.pinned),
        }
        _atomic_write(self.root / MANIFEST, json.dumps(doc, indent=1, sort_keys=True).encode())

    def path(self, ckpt_id: str) -> Path:
        return self.blob_dir / f"{ckpt_id}{SUFFIX}"

    def __contains__(self, ckpt_id: str) -> bool:
        return ckpt_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> set[str]:
        return set(self.entries)

    def on_disk(self) -> set[str]:
        return {p.name[: -len(SUFFIX)] for p in self.blob_dir.glob(f"*{SUFFIX}")}

    def hash_of(self, ckpt_id: str) -> str:
        try:
            return self.entries[ckpt_id].sha256
        except KeyError:
            raise CheckpointNotFound(ckpt_id) from None

    # -- blobs ------------------------------------------------------------

    def save(self, model: MlpModel, generation: int = 0, slot: int = 0) -> str:
        if not model.is_finite():
            raise ValueError("refusing to checkpoint a model with non-finite parameters")
        blob = model.to_bytes()
        digest = content_hash(blob)
        ckpt_id = make_id(digest, generation, slot)
        try:
            _atomic_write(self.path(ckpt_id), blob)
            with self._lock:
                self.entries[ckpt_id] = ManifestEntry(digest, generation, slot)
                self._write_manifest()
        except OSError as exc:
            raise CheckpointWriteError(ckpt_id, exc) from exc
        return ckpt_id

    def read_bytes(self, ckpt_id: str) -> bytes:
        entry = self.entries.get(ckpt_id)
        if entry is None:
            raise CheckpointNotFound(ckpt_id)
        try:
            blob = self.path(ckpt_id).read_bytes()
        except FileNotFoundError:
            raise CheckpointNotFound(ckpt_id) from None
        if content_hash(blob) != entry.sha256:
            raise CheckpointIntegrityError(f"checkpoint {ckpt_id} does not match its recorded hash")
        return blob

    def load(self, ckpt_id: str) -> MlpModel:
        blob = self.read_bytes(ckpt_id)
        try:
            return MlpModel.from_bytes(blob)
        except CheckpointFormatError as exc:
            raise CheckpointIntegrityError(f"checkpoint {ckpt_id}: {exc}") from exc

    # -- lifecycle --------------------------------------------------------

    def pin(self, ckpt_id: str) -> None:
        if ckpt_id not in self.entries:
            raise CheckpointNotFound(ckpt_id)
        with self._lock:
            self.pinned.add(ckpt_id)
            self._write_manifest()

    def unpin(self, ckpt_id: str) -> None:
        with self._lock:
            self.pinned.discard(ckpt_id)
            self._write_manifest()

    def collect_garbage(self, live) -> int:
        """Delete every blob that is neither in ``live`` nor pinned.

        Stray files without a manifest entry are removed too. Per-blob I/O
        failures are logged and kept in ``gc_errors``; collection continues.
        """
        keep = set(live) | self.pinned
        self.gc_errors = []
        removed = 0
        with self._lock:
            for ckpt_id in sorted((self.ids() | self.on_disk()) - keep):
                try:
                    self.path(ckpt_id).unlink(missing_ok=True)
                except OSError as exc:
                    log.warning("could not remove checkpoint %s: %s", ckpt_id, exc)
                    self.gc_errors.append((ckpt_id, str(exc)))
                    continue
                self.entries.pop(ckpt_id, None)
                removed += 1
            self._write_manifest()
        return removed
