"""Metadata schemas: named, ordered sets of field definitions.

A schema parameterizes both extraction (field names and definitions go into
the prompt) and evaluation (``match_mode`` decides whether a field is scored
with ROUGE-L or with the LLM-judged metrics).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

MATCH_MODES = ("exact", "fuzzy")
BUILTIN_SCHEMAS = ("lter-life", "croissant")


class SchemaError(ValueError):
    """Raised for unreadable or invalid schema files."""


@dataclass(frozen=True)
class FieldDefinition:
    name: str
    group: str
    definition: str
    match_mode: str = "exact"
    standard_ref: str = ""

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise SchemaError("field name must be non-empty")
        if "|" in self.name or "\n" in self.name:
            raise SchemaError(f"field {self.name!r}: name may not contain '|' or newlines")
        if not self.definition.strip():
            raise SchemaError(f"field {self.name!r}: definition must be non-empty")
        if self.match_mode not in MATCH_MODES:
            raise SchemaError(
                f"field {self.name!r}: match_mode must be one of {MATCH_MODES}, got {self.match_mode!r}"
            )

    @property
    def fuzzy(self) -> bool:
        return self.match_mode == "fuzzy"

    def to_dict(self) -> dict[str, str]:
        return {
            "name": self.name,
            "group": self.group,
            "definition": self.definition,
            "match_mode": self.match_mode,
            "standard_ref": self.standard_ref,
        }


@dataclass(frozen=True)
class MetadataSchema:
    schema_id: str
    fields: tuple[FieldDefinition, ...]

    def __post_init__(self) -> None:
        if not self.schema_id.strip():
            raise SchemaError("schema_id must be non-empty")
        if not self.fields:
            raise SchemaError(f"schema {self.schema_id!r} has no fields")
        seen: set[str] = set()
        for f in self.fields:
            if f.name in seen:
                raise SchemaError(f"schema {self.schema_id!r}: duplicate field {f.name!r}")
            seen.add(f.name)

    def __len__(self) -> int:
        return len(self.fields)

    def __iter__(self):
        return iter(self.fields)

    def __contains__(self, name: object) -> bool:
        return any(f.name == name for f in self.fields)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    @property
    def groups(self) -> list[str]:
        """Distinct group labels in first-seen order."""
        return list(dict.fromkeys(f.group for f in self.fields))

    def field(self, name: str) -> FieldDefinition:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"schema_id": self.schema_id, "fields": [f.to_dict() for f in self.fields]}

    def dumps(self) -> str:
        """Canonical JSON form (what ``schema export`` writes)."""
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "MetadataSchema":
        if not isinstance(payload, dict) or "schema_id" not in payload or "fields" not in payload:
            raise SchemaError("schema file must be an object with 'schema_id' and 'fields'")
        raw_fields = payload["fields"]
        if not isinstance(raw_fields, list):
            raise SchemaError("'fields' must be a list")
        fields = []
        for i, item in enumerate(raw_fields):
            if not isinstance(item, dict):
                raise SchemaError(f"fields[{i}] must be an object")
            missing = {"name", "group", "definition"} - item.keys()
            if missing:
                raise SchemaError(f"fields[{i}] ({item.get('name', '?')!r}) missing keys {sorted(missing)}")
            fields.append(
                FieldDefinition(
                    name=str(item["name"]),
                    group=str(item["group"]),
                    definition=str(item["definition"]),
                    match_mode=str(item.get("match_mode", "exact")),
                    standard_ref=str(item.get("standard_ref", "")),
                )
            )
        return cls(schema_id=str(payload["schema_id"]), fields=tuple(fields))


def loads_schema(text: str) -> MetadataSchema:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid schema JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return MetadataSchema.from_dict(payload)


def load_schema(path: str | Path) -> MetadataSchema:
    path = Path(path)
    try:
        return loads_schema(path.read_text(encoding="utf-8"))
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def builtin_schema(schema_id: str) -> MetadataSchema:
    """Return one of the shipped schemas: ``"lter-life"`` or ``"croissant"``."""
    if schema_id not in BUILTIN_SCHEMAS:
        raise SchemaError(f"unknown built-in schema {schema_id!r}; choose from {BUILTIN_SCHEMAS}")
    text = resources.files("metaharvest.data").joinpath(f"{schema_id}.json").read_text(encoding="utf-8")
    return loads_schema(text)


def resolve_schema(ref: str | Path) -> MetadataSchema:
    """Accept either a built-in schema id or a path to a schema file."""
    if str(ref) in BUILTIN_SCHEMAS:
        return builtin_schema(str(ref))
    return load_schema(ref)
