"""Harvested metadata records and the entities they are built from."""

from __future__ import annotations

from dataclasses import dataclass, field

NOT_AVAILABLE = "N/A"
STAGES = ("raw", "postprocessed")
MULTI_VALUE_DELIMITER = "; "

_NA_SPELLINGS = {"n/a", "na", "not available", "none", "unknown", "not specified"}


def is_not_available(value: str | None) -> bool:
    return value is None or value.strip().lower() in _NA_SPELLINGS or not value.strip()


def normalize_value(value: str) -> str:
    """Collapse internal whitespace and map the usual "missing" spellings to ``N/A``."""
    value = " ".join(value.split())
    return NOT_AVAILABLE if is_not_available(value) else value


def join_values(values: list[str]) -> str:
    """Merge several values into one string, dropping N/A and duplicates (order kept)."""
    kept = [v for v in dict.fromkeys(normalize_value(v) for v in values) if v != NOT_AVAILABLE]
    return MULTI_VALUE_DELIMITER.join(kept) if kept else NOT_AVAILABLE


@dataclass(frozen=True)
class ExtractedEntity:
    field_name: str
    value: str
    stage: str = "raw"

    def to_dict(self) -> dict[str, str]:
        return {"field_name": self.field_name, "value": self.value, "stage": self.stage}

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractedEntity":
        return cls(d["field_name"], d["value"], d.get("stage", "raw"))


@dataclass
class MetadataRecord:
    """One dataset's metadata in a given schema.

    ``entries`` always holds exactly one string per schema field. For the raw
    stage, repeated entities are joined with ``"; "`` and the individual
    entities are kept in ``raw_entities`` for the post-processing pass.
    """

    source_id: str
    schema_id: str
    entries: dict[str, str]
    stage: str = "raw"
    provenance: dict = field(default_factory=dict)
    raw_entities: list[ExtractedEntity] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")

    def value(self, field_name: str) -> str:
        return self.entries.get(field_name, NOT_AVAILABLE)

    def to_dict(self) -> dict:
        d = {
            "source_id": self.source_id,
            "schema_id": self.schema_id,
            "stage": self.stage,
            "entries": dict(self.entries),
            "provenance": self.provenance,
        }
        if self.raw_entities:
            d["raw_entities"] = [e.to_dict() for e in self.raw_entities]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetadataRecord":
        for key in ("source_id", "schema_id", "stage", "entries"):
            if key not in d:
                raise ValueError(f"record missing key {key!r}")
        if not isinstance(d["entries"], dict):
            raise ValueError("record 'entries' must be an object")
        return cls(
            source_id=d["source_id"],
            schema_id=d["schema_id"],
            entries={str(k): str(v) for k, v in d["entries"].items()},
            stage=d["stage"],
            provenance=d.get("provenance", {}),
            raw_entities=[ExtractedEntity.from_dict(e) for e in d.get("raw_entities", [])],
        )


def record_from_entities(
    source_id: str,
    schema_fields: list[str],
    schema_id: str,
    entities: list[ExtractedEntity],
    stage: str = "raw",
    provenance: dict | None = None,
) -> MetadataRecord:
    grouped: dict[str, list[str]] = {name: [] for name in schema_fields}
    for ent in entities:
        if ent.field_name in grouped:
            grouped[ent.field_name].append(ent.value)
    entries = {name: join_values(values) for name, values in grouped.items()}
    return MetadataRecord(
        source_id=source_id,
        schema_id=schema_id,
        entries=entries,
        stage=stage,
        provenance=dict(provenance or {}),
        raw_entities=list(entities) if stage == "raw" else [],
    )
