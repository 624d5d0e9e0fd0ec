"""Shared fixtures: a three-dataset Croissant corpus served from local files."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import pytest

from metaharvest.corpus import CorpusManifest
from metaharvest.extraction import build_extraction_prompt, build_postprocess_prompt, extract_raw
from metaharvest.gateway import mock_gateway
from metaharvest.ingest import DatasetSource, StaticRenderer, ingest
from metaharvest.schema import builtin_schema

CORPUS_DIR = Path(__file__).parent / "fixtures" / "corpus"
SOURCE_IDS = ("alpha", "beta", "gamma")


def fixture_sources() -> list[DatasetSource]:
    pages = CORPUS_DIR / "pages"
    return [
        DatasetSource("alpha", (pages / "alpha.html").as_uri(), provider="Portal A", name="Dune camera trap P1"),
        DatasetSource("beta", (pages / "beta.html").as_uri(), provider="Portal B", name="Coastal vegetation map 2017"),
        DatasetSource(
            "gamma",
            (pages / "gamma.html").as_uri(),
            metadata_file_url=(pages / "gamma.xml").as_uri(),
            provider="Portal B",
            name="Ecotope map 2016",
        ),
    ]


def canned_table() -> dict[str, str]:
    """prompt hash -> canned response, for both LLM passes of every fixture dataset.

    The post-processing prompt embeds the raw entities, so it is built from
    the raw record that the canned extraction response produces.
    """
    schema = builtin_schema("croissant")
    responses = CORPUS_DIR / "responses"
    table: dict[str, str] = {}
    renderer = StaticRenderer()
    for source in fixture_sources():
        doc = ingest(source, renderer=renderer)
        extract_text = (responses / f"{source.id}.extract.txt").read_text(encoding="utf-8")
        table[build_extraction_prompt(schema, doc).prompt_hash] = extract_text
        raw = extract_raw(doc, schema, mock_gateway(table=table))
        post_text = (responses / f"{source.id}.post.txt").read_text(encoding="utf-8")
        table[build_postprocess_prompt(raw, schema, doc).prompt_hash] = post_text
    return table


@dataclass
class FixtureCorpus:
    root: Path
    manifest_path: Path
    responses_path: Path
    annotations_dir: Path
    manifest: CorpusManifest
    table: dict[str, str]


@pytest.fixture
def fixture_corpus(tmp_path) -> FixtureCorpus:
    manifest = CorpusManifest("fixture-3", fixture_sources(), schema_id="croissant")
    manifest_path = tmp_path / "corpus.json"
    manifest_path.write_text(json.dumps(manifest.to_dict(), indent=2), encoding="utf-8")
    table = canned_table()
    responses_path = tmp_path / "responses.json"
    responses_path.write_text(json.dumps(table, indent=2), encoding="utf-8")
    return FixtureCorpus(tmp_path, manifest_path, responses_path, CORPUS_DIR / "annotations", manifest, table)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
