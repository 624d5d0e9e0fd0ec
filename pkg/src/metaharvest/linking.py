"""Dataset-to-dataset links: description similarity and temporal-coverage overlap."""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Mapping, Sequence

import numpy as np

from .gateway import ChatRequest
from .records import MetadataRecord, is_not_available

logger = logging.getLogger(__name__)

KINDS = ("cosine_similarity", "temporal_overlap")
TASK_TEMPORAL = "temporal"
TEMPORAL_FIELD = "Temporal coverage"
DESCRIPTION_FIELD = "Description"

_CANONICAL = re.compile(r"^(\d{4})-(\d{2})-(\d{2})-(\d{4})-(\d{2})-(\d{2})$")
_CANONICAL_SEARCH = re.compile(r"(?<![\d-])\d{4}-\d{2}-\d{2}-\d{4}-\d{2}-\d{2}(?![\d-])")
_OPEN_ENDED = re.compile(r"\b(?:up\s+)?to\s+date\b|\bpresent\b|\bongoing\b|\bnow\b|\btoday\b", re.IGNORECASE)


class DateRangeError(ValueError):
    pass


class TemporalNormalizationError(ValueError):
    pass


# --------------------------------------------------------------------------
# similarity


def cosine_similarity(a, b) -> float:
    """dot(a, b) / (|a| |b|) for EmbeddingVectors or plain sequences."""
    va = a.as_array() if hasattr(a, "as_array") else np.asarray(a, dtype=float)
    vb = b.as_array() if hasattr(b, "as_array") else np.asarray(b, dtype=float)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero-norm vector")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


@dataclass
class LinkMatrix:
    ids: tuple[str, ...]
    values: np.ndarray
    kind: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.ids = tuple(self.ids)
        self.values = np.asarray(self.values, dtype=float)
        n = len(self.ids)
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.values.shape != (n, n):
            raise ValueError(f"values must be {n}x{n}, got {self.values.shape}")
        if len(set(self.ids)) != n:
            raise ValueError("matrix ids must be unique")

    def __getitem__(self, pair: tuple[str, str]) -> float:
        i, j = pair
        return float(self.values[self.ids.index(i), self.ids.index(j)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["", *self.ids])
        for sid, row in zip(self.ids, self.values):
            writer.writerow([sid, *(f"{v:.6f}" for v in row)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "ids": list(self.ids),
            "kind": self.kind,
            "values": self.values.tolist(),
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "LinkMatrix":
        return cls(tuple(d["ids"]), np.asarray(d["values"], dtype=float), d["kind"], d.get("metadata", {}))


def similarity_matrix(
    records: Iterable[MetadataRecord],
    gateway,
    field: str = DESCRIPTION_FIELD,
    model: str | None = None,
) -> LinkMatrix:
    """Pairwise cosine similarity of the embedded ``field`` values.

    Records whose field is N/A are left out and listed under
    ``metadata["excluded"]``.
    """
    ids, vectors, excluded = [], [], []
    model = model or gateway.embed_model
    for rec in records:
        value = rec.value(field)
        if is_not_available(value):
            excluded.append(rec.source_id)
            continue
        vec = gateway.embed(value, model)
        if vectors and vec.model != vectors[0].model:
            raise ValueError("all embeddings in one matrix must come from the same model")
        ids.append(rec.source_id)
        vectors.append(vec)
    if excluded:
        logger.warning("no %s for: %s", field, ", ".join(excluded))
    if vectors:
        arr = np.vstack([v.as_array() for v in vectors])
        norms = np.linalg.norm(arr, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero-norm embedding")
        unit = arr / norms[:, None]
        values = np.clip(unit @ unit.T, -1.0, 1.0)
        values = (values + values.T) / 2
        np.fill_diagonal(values, 1.0)
    else:
        values = np.zeros((0, 0))
    return LinkMatrix(
        tuple(ids),
        values,
        "cosine_similarity",
        {"field": field, "embed_model": model, "excluded": excluded},
    )


# --------------------------------------------------------------------------
# temporal coverage


@dataclass(frozen=True, order=True)
class CanonicalDateRange:
    start: date
    end: date

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise DateRangeError(f"reversed range: {self.start} is after {self.end}")

    @property
    def days(self) -> int:
        """Inclusive length: a one-day range lasts 1 day."""
        return (self.end - self.start).days + 1

    def serialize(self) -> str:
        return f"{self.start.isoformat()}-{self.end.isoformat()}"

    __str__ = serialize


def parse_canonical_range(text: str) -> CanonicalDateRange:
    """Parse ``YYYY-MM-DD-YYYY-MM-DD``, validating both calendar dates and their order."""
    m = _CANONICAL.match(text.strip())
    if not m:
        raise DateRangeError(f"{text!r} does not match YYYY-MM-DD-YYYY-MM-DD")
    y1, m1, d1, y2, m2, d2 = (int(g) for g in m.groups())
    try:
        start, end = date(y1, m1, d1), date(y2, m2, d2)
    except ValueError as exc:
        raise DateRangeError(f"{text!r}: invalid calendar date ({exc})") from exc
    return CanonicalDateRange(start, end)


def overlap_days(i: CanonicalDateRange, j: CanonicalDateRange) -> int:
    return max(0, (min(i.end, j.end) - max(i.start, j.start)).days + 1)


def temporal_overlap_fraction(i: CanonicalDateRange, j: CanonicalDateRange) -> float:
    """Share of ``i``'s days that ``j`` also covers (one-sided, inclusive days)."""
    return overlap_days(i, j) / i.days


def overlap_matrix(ranges: Mapping[str, CanonicalDateRange]) -> LinkMatrix:
    ids = tuple(ranges)
    if not ids:
        raise ValueError("overlap_matrix needs at least one range")
    spans = [ranges[k] for k in ids]
    values = np.array([[temporal_overlap_fraction(a, b) for b in spans] for a in spans])
    return LinkMatrix(ids, values, "temporal_overlap", {"ranges": {k: ranges[k].serialize() for k in ids}})


def substitute_present(raw: str, present_date: date) -> str:
    """Replace open-ended markers ("Present", "to date", ...) with ``present_date``."""
    iso = present_date.isoformat()

    def repl(m: re.Match) -> str:
        word = m.group(0).lower()
        return f"to {iso}" if word.endswith("date") and word.split()[0] in ("to", "up") else iso

    return _OPEN_ENDED.sub(repl, raw)


def build_temporal_prompt(raw: str, present_date: date, *, model: str = "") -> ChatRequest:
    user = (
        "-Goal-\nConvert the temporal coverage of a dataset into the format YYYY-MM-DD-YYYY-MM-DD "
        "(start date, then end date).\n\n"
        "-Rules-\n"
        "1. If only a year is given for the start, use January 1st of that year; for the end, December 31st.\n"
        "2. If only a year and month are given, use the first day of the month for the start and the last day "
        "of the month for the end.\n"
        f"3. 'Present', 'to date' and similar open ends mean {present_date.isoformat()}.\n"
        "4. If several periods are given, return the single range spanning all of them.\n"
        "5. Reply with the converted range only.\n\n"
        f"-Temporal coverage-\n{raw}"
    )
    return ChatRequest(model=model, messages=(("user", user),), task=TASK_TEMPORAL)


def _extract_canonical(reply: str) -> CanonicalDateRange:
    cleaned = reply.strip().strip("`'\" ")
    hits = _CANONICAL_SEARCH.findall(cleaned)
    if len(hits) != 1:
        raise DateRangeError(f"expected one YYYY-MM-DD-YYYY-MM-DD range in reply, found {len(hits)}: {reply!r}")
    return parse_canonical_range(hits[0])


def normalize_temporal_coverage(
    raw: str,
    present_date: date,
    gateway,
    *,
    model: str | None = None,
) -> CanonicalDateRange:
    """Free-form temporal coverage -> canonical range, via one LLM call (plus one retry).

    Open-ended markers are replaced by ``present_date`` before prompting, so
    "Present" handling does not depend on the model following instructions.
    The reply is then validated deterministically.
    """
    if not raw or not raw.strip():
        raise ValueError("temporal coverage text is empty")
    text = substitute_present(raw.strip(), present_date)
    req = build_temporal_prompt(text, present_date, model=model or gateway.model)
    reply = gateway.complete(req)
    try:
        return _extract_canonical(reply)
    except DateRangeError as first:
        logger.warning("temporal reply rejected (%s); retrying once", first)
    retry = ChatRequest(
        model=req.model,
        messages=req.messages
        + (
            (
                "user",
                f"Your previous answer was: {reply.strip()}\n"
                "That is not a valid range. Reply with exactly one range in the form YYYY-MM-DD-YYYY-MM-DD, "
                "with a start date not after the end date, and nothing else.",
            ),
        ),
        task=TASK_TEMPORAL,
    )
    reply = gateway.complete(retry)
    try:
        return _extract_canonical(reply)
    except DateRangeError as exc:
        raise TemporalNormalizationError(f"could not normalize {raw!r}: {exc}") from exc


@dataclass
class TemporalLinks:
    matrix: LinkMatrix
    ranges: dict[str, CanonicalDateRange]
    failures: dict[str, str]


def temporal_links(
    records: Sequence[MetadataRecord],
    present_date: date,
    gateway,
    field: str = TEMPORAL_FIELD,
) -> TemporalLinks:
    """Normalize every record's temporal coverage and build the overlap matrix."""
    ranges: dict[str, CanonicalDateRange] = {}
    failures: dict[str, str] = {}
    for rec in records:
        value = rec.value(field)
        if is_not_available(value):
            failures[rec.source_id] = f"no {field}"
            continue
        try:
            ranges[rec.source_id] = normalize_temporal_coverage(value, present_date, gateway)
        except (TemporalNormalizationError, DateRangeError, ValueError) as exc:
            failures[rec.source_id] = str(exc)
    matrix = overlap_matrix(ranges) if ranges else LinkMatrix((), np.zeros((0, 0)), "temporal_overlap")
    matrix.metadata["present_date"] = present_date.isoformat()
    matrix.metadata["failures"] = failures
    return TemporalLinks(matrix, ranges, failures)
