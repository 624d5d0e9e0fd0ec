"""Scoring harvested records against ground-truth annotations.

Exact-match fields are scored with ROUGE-L F1, fuzzy fields (descriptions,
keywords) with two LLM-judged metrics, and every field gets a retrieval
outcome (TP/FN/TN/FP) from annotation availability versus whether the
harvester reported a value.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .gateway import ChatRequest, Gateway
from .ingest import SourceDocument
from .linking import cosine_similarity
from .records import NOT_AVAILABLE, MetadataRecord, is_not_available
from .schema import MetadataSchema

logger = logging.getLogger(__name__)

TOKENIZER = "lowercase; split on non-alphanumeric runs"
N_QUESTIONS = 3
TASK_CLAIMS = "claims"
TASK_VERDICTS = "verdicts"
TASK_QUESTIONS = "questions"
LLM_METRICS = ("faithfulness", "response_relevancy")
CSV_COLUMNS = ("source_id", "provider", "field", "stage", "schema", "metric", "score", "outcome", "availability")
GROUP_KEYS = ("provider", "field", "availability", "stage", "schema", "source_id", "outcome")

_TOKEN = re.compile(r"[^\W_]+")


# --------------------------------------------------------------------------
# ROUGE-L


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Length of the longest common subsequence, bit-parallel over ``a``.

    Each symbol of ``a`` gets a bitmask of its positions; one pass over ``b``
    updates a row vector held in a Python int (Hyyrö's formulation), so the
    cost is O(len(b)) big-int operations instead of a full DP table.
    """
    if not a or not b:
        return 0
    masks: dict = {}
    for i, sym in enumerate(a):
        masks[sym] = masks.get(sym, 0) | (1 << i)
    full = (1 << len(a)) - 1
    v = full
    for sym in b:
        u = v & masks.get(sym, 0)
        v = ((v + u) | (v - u)) & full
    return len(a) - bin(v).count("1")


def rouge_l_tokens(candidate: Sequence, reference: Sequence) -> float:
    lcs = lcs_length(reference, candidate)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


def rouge_l_f1(candidate: str, reference: str) -> float:
    return rouge_l_tokens(tokenize(candidate), tokenize(reference))


# --------------------------------------------------------------------------
# LLM-judged metrics


_LIST_PREFIX = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")
_VERDICT = re.compile(r"^\s*\(?(\d+)\)?\s*[|:.)\-]\s*(yes|no|supported|unsupported)\b", re.IGNORECASE)


def _lines(text: str) -> list[str]:
    out = []
    for line in text.splitlines():
        line = _LIST_PREFIX.sub("", line).strip()
        if line:
            out.append(line)
    return out


def build_claims_prompt(value: str, *, model: str = "") -> ChatRequest:
    user = (
        "-Goal-\nBreak the following dataset metadata text into short, self-contained factual claims. "
        "Each claim must be understandable on its own.\n\n"
        f"-Text-\n{value}\n\n"
        "-Output format-\nOne claim per line. No numbering, no other text."
    )
    return ChatRequest(model=model, messages=(("user", user),), task=TASK_CLAIMS)


def build_verdict_prompt(claims: list[str], doc: SourceDocument, *, model: str = "", max_chars: int = 60_000) -> ChatRequest:
    numbered = "\n".join(f"{i}. {c}" for i, c in enumerate(claims, 1))
    user = (
        "-Goal-\nFor each numbered claim, decide whether it can be directly inferred from the document.\n\n"
        f"-Document-\n{doc.full_text[:max_chars]}\n\n"
        f"-Claims-\n{numbered}\n\n"
        "-Output format-\nOne line per claim: <number> | yes   or   <number> | no"
    )
    return ChatRequest(model=model, messages=(("user", user),), task=TASK_VERDICTS)


def build_questions_prompt(value: str, n: int = N_QUESTIONS, *, model: str = "") -> ChatRequest:
    user = (
        f"-Goal-\nWrite {n} different questions about a dataset for which the following text "
        "would be the answer.\n\n"
        f"-Answer-\n{value}\n\n"
        "-Output format-\nOne question per line. No numbering, no other text."
    )
    return ChatRequest(model=model, messages=(("user", user),), task=TASK_QUESTIONS)


def faithfulness(value: str, doc: SourceDocument, gateway: Gateway, *, model: str | None = None) -> float:
    """Fraction of the value's atomic claims that the source document supports."""
    model = model or gateway.model
    claims = _lines(gateway.complete(build_claims_prompt(value, model=model)))
    if not claims:
        logger.warning("%s: no claims extracted from value; scoring faithfulness as 1.0", doc.source_id)
        return 1.0
    reply = gateway.complete(build_verdict_prompt(claims, doc, model=model))
    verdicts: dict[int, bool] = {}
    for line in reply.splitlines():
        m = _VERDICT.match(line)
        if m:
            verdicts.setdefault(int(m.group(1)), m.group(2).lower() in ("yes", "supported"))
    supported = sum(1 for i in range(1, len(claims) + 1) if verdicts.get(i, False))
    return supported / len(claims)


def field_question(field_name: str) -> str:
    return f"What is the {field_name.lower()} of this dataset?"


def response_relevancy(
    value: str,
    field_name: str,
    gateway: Gateway,
    *,
    n: int = N_QUESTIONS,
    model: str | None = None,
) -> float:
    """Mean cosine similarity between questions generated from ``value`` and the
    template question for ``field_name``. Negative cosines count as 0."""
    questions = _lines(gateway.complete(build_questions_prompt(value, n, model=model or gateway.model)))[:n]
    if not questions:
        logger.warning("no questions generated for %r; relevancy 0", field_name)
        return 0.0
    target = gateway.embed(field_question(field_name))
    sims = [min(1.0, max(0.0, cosine_similarity(gateway.embed(q), target))) for q in questions]
    return float(sum(sims) / len(sims))


# --------------------------------------------------------------------------
# annotations and retrieval outcomes


class Availability(str, enum.Enum):
    UNAVAILABLE = "unavailable"
    STRUCTURED = "structured"
    UNSTRUCTURED = "unstructured"

    @property
    def available(self) -> bool:
        return self is not Availability.UNAVAILABLE


class Outcome(str, enum.Enum):
    TP = "TP"  # present and retrieved
    FN = "FN"  # present, reported N/A
    TN = "TN"  # absent, reported N/A
    FP = "FP"  # absent, but a value was reported


@dataclass(frozen=True)
class AnnotationEntry:
    value: str
    availability: Availability

    def __post_init__(self) -> None:
        object.__setattr__(self, "availability", Availability(self.availability))
        na = is_not_available(self.value)
        if (self.availability is Availability.UNAVAILABLE) != na:
            raise ValueError(
                f"availability {self.availability.value!r} inconsistent with value {self.value!r}"
            )
        if na:
            object.__setattr__(self, "value", NOT_AVAILABLE)


@dataclass
class GroundTruthAnnotation:
    source_id: str
    schema_id: str
    entries: dict[str, AnnotationEntry]

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthAnnotation":
        entries = {}
        for name, e in d["entries"].items():
            try:
                entries[name] = AnnotationEntry(str(e["value"]), e["availability"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"field {name!r}: {exc}") from exc
        return cls(d["source_id"], d["schema_id"], entries)

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "schema_id": self.schema_id,
            "entries": {
                k: {"value": e.value, "availability": e.availability.value} for k, e in self.entries.items()
            },
        }


def classify_retrieval(entry: AnnotationEntry | Availability | str, record_value: str) -> Outcome:
    availability = entry.availability if isinstance(entry, AnnotationEntry) else Availability(entry)
    reported = not is_not_available(record_value)
    if availability.available:
        return Outcome.TP if reported else Outcome.FN
    return Outcome.FP if reported else Outcome.TN


# --------------------------------------------------------------------------
# corpus scoring


@dataclass(frozen=True)
class ScoreRow:
    source_id: str
    provider: str
    field: str
    stage: str
    schema: str
    metric: str  # "" when no accuracy metric applies (non-TP, or fuzzy without a judge)
    score: float | None
    outcome: Outcome
    availability: Availability

    def get(self, key: str) -> str:
        value = getattr(self, key)
        return value.value if isinstance(value, enum.Enum) else value


@dataclass
class ScoreTable:
    rows: list[ScoreRow] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def scores(self, metric: str | None = None) -> list[ScoreRow]:
        return [r for r in self.rows if r.score is not None and (metric is None or r.metric == metric)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow(
                [
                    r.source_id,
                    r.provider,
                    r.field,
                    r.stage,
                    r.schema,
                    r.metric,
                    "" if r.score is None else f"{r.score:.6f}",
                    r.outcome.value,
                    r.availability.value,
                ]
            )
        return buf.getvalue()


def evaluate_corpus(
    records: Iterable[MetadataRecord],
    annotations: Iterable[GroundTruthAnnotation],
    schema: MetadataSchema,
    *,
    providers: dict[str, str] | None = None,
    gateway: Gateway | None = None,
    docs: dict[str, SourceDocument] | None = None,
    metrics: Sequence[str] | None = None,
) -> ScoreTable:
    """Score every (record, field) pair.

    ROUGE-L is computed only for TP pairs of exact-match fields; with a
    gateway, TP fuzzy fields get faithfulness and response relevancy rows.
    Every pair carries its retrieval outcome. ``metrics`` defaults to both
    kinds when a gateway is given and to ROUGE alone otherwise.
    """
    providers = providers or {}
    docs = docs or {}
    if metrics is None:
        metrics = ("rouge", "llm") if gateway is not None else ("rouge",)
    use_llm = "llm" in metrics
    if use_llm and gateway is None:
        raise ValueError(f"LLM metrics {', '.join(LLM_METRICS)} need a gateway")
    by_id = {a.source_id: a for a in annotations if a.schema_id == schema.schema_id}
    table = ScoreTable(
        metadata={
            "schema_id": schema.schema_id,
            "tokenizer": TOKENIZER,
            "metrics": sorted(metrics),
            "judge_model": gateway.model if (gateway and use_llm) else None,
            "embed_model": gateway.embed_model if (gateway and use_llm) else None,
            "n_questions": N_QUESTIONS,
        }
    )
    missing: list[str] = []
    for rec in records:
        if rec.schema_id != schema.schema_id:
            continue
        ann = by_id.get(rec.source_id)
        if ann is None:
            missing.append(rec.source_id)
            continue
        absent = [f for f in schema.names if f not in ann.entries]
        if absent:
            table.errors[rec.source_id] = f"annotation lacks fields: {', '.join(absent)}"
        provider = providers.get(rec.source_id, "")
        for fdef in schema.fields:
            entry = ann.entries.get(fdef.name)
            if entry is None:
                continue
            value = rec.value(fdef.name)
            outcome = classify_retrieval(entry, value)
            base = dict(
                source_id=rec.source_id,
                provider=provider,
                field=fdef.name,
                stage=rec.stage,
                schema=schema.schema_id,
                outcome=outcome,
                availability=entry.availability,
            )
            scored = []
            if outcome is Outcome.TP and not fdef.fuzzy and "rouge" in metrics:
                scored.append(("rouge_l_f1", rouge_l_f1(value, entry.value)))
            elif outcome is Outcome.TP and fdef.fuzzy and use_llm:
                doc = docs.get(rec.source_id)
                if doc is None:
                    table.errors[rec.source_id] = "no source document available for faithfulness"
                else:
                    scored.append(("faithfulness", faithfulness(value, doc, gateway)))
                scored.append(("response_relevancy", response_relevancy(value, fdef.name, gateway)))
            if not scored:
                table.rows.append(ScoreRow(metric="", score=None, **base))
            for metric, score in scored:
                table.rows.append(ScoreRow(metric=metric, score=score, **base))
    if missing:
        table.errors["missing_annotations"] = ", ".join(missing)
        logger.error("no annotation for: %s", ", ".join(missing))
    return table


# --------------------------------------------------------------------------
# aggregation


def mean_sem(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error of the mean, SEM = population sd / sqrt(n).

    ``mean_sem([1.0, 0.0]) == (0.5, 0.35355...)``. A single value has SEM 0.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std(ddof=0) / math.sqrt(arr.size))


@dataclass(frozen=True)
class GroupStat:
    key: tuple[str, ...]
    n: int
    mean: float
    sem: float


def aggregate(rows: Iterable[ScoreRow], by: Sequence[str] = ()) -> list[GroupStat]:
    """Mean ± SEM of scores grouped by metric and then by the ``by`` columns."""
    for key in by:
        if key not in GROUP_KEYS:
            raise ValueError(f"cannot group by {key!r}; choose from {GROUP_KEYS}")
    groups: dict[tuple, list[float]] = defaultdict(list)
    for r in rows:
        if r.score is None:
            continue
        groups[(r.metric, *(r.get(k) for k in by))].append(r.score)
    return [GroupStat(k, len(v), *mean_sem(v)) for k, v in sorted(groups.items())]


@dataclass(frozen=True)
class RetrievalRate:
    key: tuple[str, ...]
    availability: str
    outcome: str
    count: int
    total: int

    @property
    def rate(self) -> float:
        return self.count / self.total if self.total else math.nan


def retrieval_rates(rows: Iterable[ScoreRow], by: Sequence[str] = ()) -> list[RetrievalRate]:
    """Not-identified rates per availability class.

    For structured and unstructured fields this is the FN fraction; for
    unavailable fields it is the TN fraction. Each (dataset, field) pair is
    counted once even if it has several metric rows.
    """
    seen = set()
    counts: dict[tuple, list[int]] = defaultdict(lambda: [0, 0])
    for r in rows:
        ident = (r.source_id, r.field, r.stage, r.schema)
        if ident in seen:
            continue
        seen.add(ident)
        target = Outcome.TN if r.availability is Availability.UNAVAILABLE else Outcome.FN
        c = counts[(tuple(r.get(k) for k in by), r.availability.value, target.value)]
        c[1] += 1
        c[0] += r.outcome is target
    return [RetrievalRate(k[0], k[1], k[2], c[0], c[1]) for k, c in sorted(counts.items())]


def outcome_counts(rows: Iterable[ScoreRow]) -> dict[str, int]:
    seen = set()
    counts = {o.value: 0 for o in Outcome}
    for r in rows:
        ident = (r.source_id, r.field, r.stage, r.schema)
        if ident not in seen:
            seen.add(ident)
            counts[r.outcome.value] += 1
    return counts


def format_summary(table: ScoreTable, by: Sequence[str] = ()) -> str:
    lines = ["# accuracy (mean ± SEM)"]
    header = ["metric", *by, "n", "mean", "sem"]
    lines.append("\t".join(header))
    for g in aggregate(table.rows, by):
        lines.append("\t".join([*g.key, str(g.n), f"{g.mean:.4f}", f"{g.sem:.4f}"]))
    lines.append("")
    lines.append("# not identified (FN rate for available fields, TN rate for unavailable)")
    rate_by = [k for k in by if k != "availability"]
    lines.append("\t".join([*rate_by, "availability", "outcome", "count", "total", "percent"]))
    for rr in retrieval_rates(table.rows, rate_by):
        lines.append("\t".join([*rr.key, rr.availability, rr.outcome, str(rr.count), str(rr.total), f"{100 * rr.rate:.1f}"]))
    lines.append("")
    lines.append("# outcomes")
    lines.append("\t".join(f"{k}={v}" for k, v in outcome_counts(table.rows).items()))
    return "\n".join(lines) + "\n"
