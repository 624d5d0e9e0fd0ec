"""Content-addressed file store for one corpus.

Layout under the corpus root::

    cache/<kk>/<key>          raw payload bytes (pages, LLM responses, embeddings)
    cache/<kk>/<key>.meta     {"kind", "created_at"}
    records/<source_id>.<stage>.json
    annotations/<source_id>.json
    matrices/<name>.csv, matrices/<name>.json

Cache entries are write-once. A second ``put`` with identical bytes is a
no-op; different bytes under an existing key raise ``ImmutabilityError``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

from .records import MetadataRecord

logger = logging.getLogger(__name__)

CACHE_KINDS = ("page", "llm", "embedding")
_KEY_RE = re.compile(r"^[0-9a-f]{64}$")


class StoreError(Exception):
    pass


class ImmutabilityError(StoreError):
    pass


def content_key(*parts) -> str:
    """sha256 over a canonical JSON encoding of ``parts``."""
    blob = json.dumps(parts, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def dump_json(payload) -> str:
    """The one JSON formatting used for every file we write, so re-runs are byte-identical."""
    return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


@dataclass(frozen=True)
class CacheEntry:
    key: str
    payload: bytes
    created_at: str
    kind: str


@dataclass
class LoadResult:
    items: list = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


class Store:
    def __init__(self, root: str | Path, clock: Callable[[], str] = utc_now):
        self.root = Path(root)
        self.clock = clock

    @property
    def cache_dir(self) -> Path:
        return self.root / "cache"

    @property
    def records_dir(self) -> Path:
        return self.root / "records"

    @property
    def annotations_dir(self) -> Path:
        return self.root / "annotations"

    @property
    def matrices_dir(self) -> Path:
        return self.root / "matrices"

    # -- cache -------------------------------------------------------------

    def _payload_path(self, key: str) -> Path:
        if not _KEY_RE.match(key):
            raise StoreError(f"malformed cache key {key!r} (expected 64 hex chars)")
        return self.cache_dir / key[:2] / key

    def put(self, key: str, payload: bytes, kind: str) -> CacheEntry:
        if kind not in CACHE_KINDS:
            raise StoreError(f"unknown cache kind {kind!r}")
        path = self._payload_path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            # link() refuses to clobber, which makes the first writer win atomically
            os.link(tmp, path)
        except FileExistsError:
            if path.read_bytes() != payload:
                raise ImmutabilityError(f"cache key {key} already holds different bytes") from None
            return self.entry(key)
        finally:
            Path(tmp).unlink(missing_ok=True)
        meta = {"kind": kind, "created_at": self.clock()}
        _atomic_write(path.with_name(key + ".meta"), dump_json(meta).encode("utf-8"))
        return CacheEntry(key, payload, meta["created_at"], kind)

    def get(self, key: str) -> bytes | None:
        path = self._payload_path(key)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            return None

    def entry(self, key: str) -> CacheEntry | None:
        payload = self.get(key)
        if payload is None:
            return None
        path = self._payload_path(key)
        try:
            meta = json.loads(path.with_name(key + ".meta").read_text(encoding="utf-8"))
        except (FileNotFoundError, json.JSONDecodeError):
            # payload landed but meta did not (interrupted writer)
            mtime = datetime.fromtimestamp(path.stat().st_mtime, timezone.utc)
            meta = {"kind": "page", "created_at": mtime.isoformat(timespec="seconds")}
        return CacheEntry(key, payload, meta["created_at"], meta["kind"])

    def __contains__(self, key: str) -> bool:
        return self._payload_path(key).exists()

    # -- records -----------------------------------------------------------

    def record_path(self, source_id: str, stage: str) -> Path:
        return self.records_dir / f"{source_id}.{stage}.json"

    def save_record(self, record: MetadataRecord) -> Path:
        path = self.record_path(record.source_id, record.stage)
        _atomic_write(path, dump_json(record.to_dict()).encode("utf-8"))
        return path

    def load_records(self, schema_id: str | None = None, stage: str | None = None) -> LoadResult:
        return load_records(self.records_dir, schema_id=schema_id, stage=stage)

    # -- annotations -------------------------------------------------------

    def save_annotation(self, annotation) -> Path:
        path = self.annotations_dir / f"{annotation.source_id}.json"
        _atomic_write(path, dump_json(annotation.to_dict()).encode("utf-8"))
        return path

    def load_annotations(self, schema_id: str | None = None) -> LoadResult:
        return load_annotations(self.annotations_dir, schema_id=schema_id)

    # -- matrices ----------------------------------------------------------

    def save_matrix(self, matrix, name: str) -> tuple[Path, Path]:
        csv_path = self.matrices_dir / f"{name}.csv"
        json_path = self.matrices_dir / f"{name}.json"
        _atomic_write(csv_path, matrix.to_csv().encode("utf-8"))
        _atomic_write(json_path, matrix.to_json().encode("utf-8"))
        return csv_path, json_path


def _iter_json(directory: Path, pattern: str) -> Iterable[tuple[Path, object]]:
    for path in sorted(Path(directory).glob(pattern)):
        try:
            yield path, json.loads(path.read_text(encoding="utf-8"))
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
            yield path, exc


def load_records(directory: str | Path, schema_id: str | None = None, stage: str | None = None) -> LoadResult:
    """Load every ``*.json`` record under ``directory``.

    Unreadable files are reported in ``errors`` (keyed by file name) without
    stopping the rest; records of another schema are skipped with a warning.
    """
    out = LoadResult()
    skipped = 0
    for path, payload in _iter_json(Path(directory), "*.json"):
        if isinstance(payload, Exception):
            out.errors[path.name] = str(payload)
            continue
        try:
            record = MetadataRecord.from_dict(payload)
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            out.errors[path.name] = f"invalid record: {exc}"
            continue
        if schema_id is not None and record.schema_id != schema_id:
            skipped += 1
            continue
        if stage is not None and record.stage != stage:
            continue
        out.items.append(record)
    if skipped:
        msg = f"skipped {skipped} record(s) not in schema {schema_id!r}"
        logger.warning(msg)
        out.warnings.append(msg)
    for name, err in out.errors.items():
        logger.error("could not load %s: %s", name, err)
    return out


def load_annotations(directory: str | Path, schema_id: str | None = None) -> LoadResult:
    from .evaluation import GroundTruthAnnotation

    out = LoadResult()
    for path, payload in _iter_json(Path(directory), "*.json"):
        if isinstance(payload, Exception):
            out.errors[path.name] = str(payload)
            continue
        try:
            ann = GroundTruthAnnotation.from_dict(payload)
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            out.errors[path.name] = f"invalid annotation: {exc}"
            continue
        if schema_id is not None and ann.schema_id != schema_id:
            continue
        out.items.append(ann)
    return out
