"""LLM named-entity extraction of metadata fields, plus the post-processing pass.

The first call asks the model for every entity of every schema field, one
``("entity" | <field> | <value>)`` tuple per line. The second call cleans
those up so each field ends with exactly one value (several authors become
one ``"; "``-joined string; absent fields become ``N/A``).
"""

from __future__ import annotations

import difflib
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .gateway import ChatRequest, Gateway
from .ingest import STRUCTURED_SEPARATOR, DatasetSource, PageRenderer, SourceDocument, ingest
from .records import (
    NOT_AVAILABLE,
    ExtractedEntity,
    MetadataRecord,
    join_values,
    normalize_value,
    record_from_entities,
)
from .schema import MetadataSchema
from .store import Store

logger = logging.getLogger(__name__)

PROMPT_VERSION = "extract-v1/postprocess-v1"
INFERENCE_POLICIES = ("strict", "best_guess")
CHARS_PER_TOKEN = 4
DEFAULT_PROMPT_TOKENS = 100_000
DEFAULT_EXCERPT_CHARS = 4_000

TASK_EXTRACT = "extract"
TASK_POSTPROCESS = "postprocess"

# section headers; the offline mock responder keys on these
H_GOAL = "-Goal-"
H_FIELDS = "-Entity types-"
H_RULES = "-Rules-"
H_FORMAT = "-Output format-"
H_DOCUMENT = "-Document-"
H_ENTITIES = "-Extracted entities-"
H_EXCERPT = "-Document excerpt-"
H_LANGUAGE = "-Language-"

SYSTEM_PROMPT = (
    "You are a careful data curator. You extract dataset metadata from web pages "
    "and metadata records, and you report only what the text supports."
)

_POLICY_TEXT = {
    "strict": (
        f"If the text gives no information for an entity type, output the value {NOT_AVAILABLE}. "
        "Do not infer or guess values that are not stated."
    ),
    "best_guess": (
        "If the text does not state a value explicitly but it can reasonably be inferred, "
        f"give your best guess. Output {NOT_AVAILABLE} only if nothing can be inferred."
    ),
}

_TUPLE_LINE = re.compile(r"""^\(\s*["']?entity["']?\s*\|(?P<rest>.*)\)\s*,?$""", re.IGNORECASE)


class EmptyExtractionError(ValueError):
    """The model output contained no parseable entity lines at all."""


class HarvestError(Exception):
    def __init__(self, source_id: str, step: str, cause: BaseException):
        super().__init__(f"{source_id}: {step} failed: {cause}")
        self.source_id = source_id
        self.step = step
        self.cause = cause


def format_entity(field_name: str, value: str) -> str:
    return f'("entity" | {field_name} | {" ".join(value.split())})'


def format_entities(entities: list[ExtractedEntity]) -> str:
    return "\n".join(format_entity(e.field_name, e.value) for e in entities)


def _field_block(schema: MetadataSchema) -> str:
    return "\n".join(f"- {f.name}: {' '.join(f.definition.split())}" for f in schema.fields)


def _format_block() -> str:
    return (
        "Return one entity per line, formatted exactly as:\n"
        '("entity" | <entity type> | <value>)\n'
        "where <entity type> is one of the entity type names listed above, spelled as listed. "
        "Do not add any other text."
    )


def _fit(text: str, budget: int) -> tuple[str, bool]:
    return (text, False) if len(text) <= budget else (text[:budget], True)


def build_extraction_prompt(
    schema: MetadataSchema,
    doc: SourceDocument,
    *,
    model: str = "",
    inference_policy: str = "strict",
    max_prompt_tokens: int = DEFAULT_PROMPT_TOKENS,
) -> ChatRequest:
    if inference_policy not in INFERENCE_POLICIES:
        raise ValueError(f"inference_policy must be one of {INFERENCE_POLICIES}")
    page, cut_page = _fit(doc.page_text, max_prompt_tokens * CHARS_PER_TOKEN)
    document = page
    cut_struct = False
    if doc.structured_text:
        structured, cut_struct = _fit(doc.structured_text, max_prompt_tokens * CHARS_PER_TOKEN)
        document = f"{page}\n\n{STRUCTURED_SEPARATOR}\n{structured}"
    warnings = []
    if cut_page or cut_struct or doc.truncated:
        warnings.append(f"document truncated to fit {max_prompt_tokens} prompt tokens")

    user = "\n\n".join(
        [
            f"{H_GOAL}\nGiven the text of a dataset landing page (and, if present, its structured "
            "metadata file) and a list of metadata entity types with their definitions, identify "
            "all entities of these entity types in the text.",
            f"{H_FIELDS}\n{_field_block(schema)}",
            f"{H_FORMAT}\n{_format_block()}\n{_POLICY_TEXT[inference_policy]}",
            f"{H_DOCUMENT}\n{document}",
            f"{H_LANGUAGE}\nReturn every value in English, translating it if the source text is in another language.",
        ]
    )
    return ChatRequest(
        model=model,
        messages=(("system", SYSTEM_PROMPT), ("user", user)),
        temperature=0.0,
        task=TASK_EXTRACT,
        warnings=tuple(warnings),
    )


def _canon(name: str) -> str:
    return " ".join(re.sub(r"[\s_\-*`'\"]+", " ", name).lower().split())


@dataclass
class ParsedEntities:
    entities: list[ExtractedEntity] = field(default_factory=list)
    unknown_fields: int = 0
    skipped_lines: int = 0

    def __iter__(self):
        return iter(self.entities)

    def __len__(self) -> int:
        return len(self.entities)


def resolve_field(name: str, schema: MetadataSchema) -> str | None:
    """Case-insensitive, punctuation-tolerant match of a field name to the schema."""
    canon = {_canon(n): n for n in schema.names}
    key = _canon(name)
    if key in canon:
        return canon[key]
    close = difflib.get_close_matches(key, list(canon), n=1, cutoff=0.85)
    return canon[close[0]] if close else None


def parse_entity_response(text: str, schema: MetadataSchema, stage: str = "raw") -> ParsedEntities:
    out = ParsedEntities()
    matched = 0
    for line in text.splitlines():
        line = line.strip().lstrip("-*• ").strip()
        if not line:
            continue
        m = _TUPLE_LINE.match(line)
        if not m or "|" not in m.group("rest"):
            out.skipped_lines += 1
            logger.debug("skipping non-entity line: %.80s", line)
            continue
        matched += 1
        raw_name, value = m.group("rest").split("|", 1)
        name = resolve_field(raw_name.strip(), schema)
        if name is None:
            out.unknown_fields += 1
            logger.warning("dropping entity of unknown type %r", raw_name.strip())
            continue
        out.entities.append(ExtractedEntity(name, normalize_value(value), stage))
    if matched == 0:
        raise EmptyExtractionError("no entity lines found in model output")
    if out.skipped_lines:
        logger.warning("skipped %d unparseable line(s)", out.skipped_lines)
    return out


def build_postprocess_prompt(
    record: MetadataRecord,
    schema: MetadataSchema,
    doc: SourceDocument | None = None,
    *,
    model: str = "",
    excerpt_chars: int = DEFAULT_EXCERPT_CHARS,
) -> ChatRequest:
    entities = record.raw_entities or [
        ExtractedEntity(k, v) for k, v in record.entries.items() if v != NOT_AVAILABLE
    ]
    sections = [
        f"{H_GOAL}\nMetadata entities were extracted from a dataset landing page. Reformat them so "
        "that every entity type has exactly one value.",
        f"{H_RULES}\n"
        "1. Output exactly one line per entity type listed below, in the listed order.\n"
        "2. If several entities were extracted for one entity type (for example several authors), "
        'merge them into a single value: an enumeration separated by "; ".\n'
        f"3. If no entity was extracted for an entity type, output {NOT_AVAILABLE}.\n"
        "4. Strip labels, markup and surrounding quotes from values. Keep values in English.",
        f"{H_FIELDS}\n{_field_block(schema)}",
        f"{H_ENTITIES}\n{format_entities(entities) if entities else '(none)'}",
    ]
    if doc is not None:
        excerpt, _ = _fit(doc.full_text, excerpt_chars)
        sections.append(f"{H_EXCERPT}\n{excerpt}")
    sections.append(f"{H_FORMAT}\n{_format_block()}")
    return ChatRequest(
        model=model,
        messages=(("system", SYSTEM_PROMPT), ("user", "\n\n".join(sections))),
        temperature=0.0,
        task=TASK_POSTPROCESS,
    )


def post_process(
    record: MetadataRecord,
    schema: MetadataSchema,
    doc: SourceDocument | None,
    gateway: Gateway,
    *,
    excerpt_chars: int = DEFAULT_EXCERPT_CHARS,
) -> MetadataRecord:
    """Second LLM pass: exactly one value per schema field.

    Whatever the model returns, the result holds one entry per field: leftover
    duplicates are joined and missing fields become ``N/A``. If the response
    cannot be parsed at all, the raw entries are kept and ``downgraded`` is set.
    """
    if record.stage != "raw":
        raise ValueError(f"post_process expects a raw record, got stage {record.stage!r}")
    req = build_postprocess_prompt(record, schema, doc, model=gateway.model, excerpt_chars=excerpt_chars)
    completion = gateway.complete_entry(req)
    provenance = dict(record.provenance)
    provenance["postprocess"] = {
        "model": req.model,
        "prompt_hash": req.prompt_hash,
        "timestamp": completion.created_at,
    }
    try:
        parsed = parse_entity_response(completion.text, schema, stage="postprocessed")
    except EmptyExtractionError:
        logger.warning("%s: post-processing output unparseable; keeping raw entries", record.source_id)
        provenance["downgraded"] = True
        return MetadataRecord(record.source_id, record.schema_id, dict(record.entries), "postprocessed", provenance)

    grouped: dict[str, list[str]] = {name: [] for name in schema.names}
    for ent in parsed.entities:
        grouped[ent.field_name].append(ent.value)
    entries = {name: join_values(values) for name, values in grouped.items()}
    provenance["downgraded"] = False
    provenance["postprocess"]["unknown_fields"] = parsed.unknown_fields
    return MetadataRecord(record.source_id, record.schema_id, entries, "postprocessed", provenance)


def extract_raw(
    doc: SourceDocument,
    schema: MetadataSchema,
    gateway: Gateway,
    *,
    inference_policy: str = "strict",
    max_prompt_tokens: int = DEFAULT_PROMPT_TOKENS,
) -> MetadataRecord:
    req = build_extraction_prompt(
        schema, doc, model=gateway.model, inference_policy=inference_policy, max_prompt_tokens=max_prompt_tokens
    )
    completion = gateway.complete_entry(req)
    parsed = parse_entity_response(completion.text, schema)
    provenance = {
        "prompt_version": PROMPT_VERSION,
        "inference_policy": inference_policy,
        "content_hash": doc.content_hash,
        "fetched_at": doc.fetched_at,
        "extract": {
            "model": req.model,
            "prompt_hash": req.prompt_hash,
            "timestamp": completion.created_at,
            "unknown_fields": parsed.unknown_fields,
            "skipped_lines": parsed.skipped_lines,
        },
        "warnings": list(req.warnings),
    }
    return record_from_entities(doc.source_id, schema.names, schema.schema_id, parsed.entities, "raw", provenance)


def harvest(
    source: DatasetSource,
    schema: MetadataSchema,
    gateway: Gateway,
    *,
    store: Store | None = None,
    renderer: PageRenderer | None = None,
    stage: str = "postprocessed",
    inference_policy: str = "strict",
    max_chars: int = 200_000,
) -> MetadataRecord:
    """Ingest one source, extract, optionally post-process, and persist both stages."""
    try:
        doc = ingest(source, renderer=renderer, store=store, max_chars=max_chars)
    except Exception as exc:
        raise HarvestError(source.id, "ingest", exc) from exc
    try:
        raw = extract_raw(doc, schema, gateway, inference_policy=inference_policy)
    except Exception as exc:
        raise HarvestError(source.id, "extract", exc) from exc
    if store is not None:
        store.save_record(raw)
    if stage == "raw":
        return raw
    try:
        final = post_process(raw, schema, doc, gateway)
    except Exception as exc:
        raise HarvestError(source.id, "postprocess", exc) from exc
    if store is not None:
        store.save_record(final)
    return final


@dataclass
class HarvestFailure:
    source_id: str
    step: str
    error: str


@dataclass
class CorpusRun:
    records: list[MetadataRecord] = field(default_factory=list)
    failures: list[HarvestFailure] = field(default_factory=list)

    @property
    def truncated(self) -> list[str]:
        return [r.source_id for r in self.records if r.provenance.get("warnings")]

    @property
    def ok(self) -> bool:
        return not self.failures


def harvest_corpus(
    sources: list[DatasetSource],
    schema: MetadataSchema,
    gateway: Gateway,
    *,
    jobs: int = 4,
    **kwargs,
) -> CorpusRun:
    """Harvest every source; a failing source is reported, never fatal to the run."""

    def one(source: DatasetSource):
        try:
            return harvest(source, schema, gateway, **kwargs)
        except HarvestError as exc:
            logger.error("%s", exc)
            return HarvestFailure(source.id, exc.step, f"{type(exc.cause).__name__}: {exc.cause}")

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(one, sources))
    run = CorpusRun()
    for res in results:
        (run.failures if isinstance(res, HarvestFailure) else run.records).append(res)
    return run
