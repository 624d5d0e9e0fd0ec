"""Corpus manifests: which dataset pages to harvest, into which schema."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .ingest import DatasetSource


class ManifestError(ValueError):
    pass


@dataclass
class CorpusManifest:
    corpus_id: str
    sources: list[DatasetSource]
    schema_id: str = "lter-life"
    llm: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [s.id for s in self.sources]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ManifestError(f"duplicate source ids: {', '.join(dupes)}")

    @property
    def providers(self) -> dict[str, str]:
        return {s.id: s.provider for s in self.sources}

    def source(self, source_id: str) -> DatasetSource:
        for s in self.sources:
            if s.id == source_id:
                return s
        raise KeyError(source_id)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusManifest":
        try:
            sources = [DatasetSource.from_dict(s) for s in d["sources"]]
            return cls(d["corpus_id"], sources, d.get("schema_id", "lter-life"), dict(d.get("llm", {})))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ManifestError):
                raise
            raise ManifestError(f"invalid manifest: {exc}") from exc

    def to_dict(self) -> dict:
        d = {
            "corpus_id": self.corpus_id,
            "schema_id": self.schema_id,
            "sources": [s.to_dict() for s in self.sources],
        }
        if self.llm:
            d["llm"] = self.llm
        return d


def load_manifest(path: str | Path) -> CorpusManifest:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return CorpusManifest.from_dict(payload)


def builtin_corpus(corpus_id: str = "ecology-16") -> CorpusManifest:
    """The 16 ecology datasets (7 providers) used to evaluate the harvester."""
    text = resources.files("metaharvest.data").joinpath(f"{corpus_id}.json").read_text(encoding="utf-8")
    return CorpusManifest.from_dict(json.loads(text))
