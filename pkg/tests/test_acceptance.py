"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line,
and the lines are repeated in the terminal summary.

Run alone with ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
"""

import json
import math
import random
import socket
import sys
import time
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest

import metaharvest.cli as cli
from metaharvest.evaluation import (
    GroundTruthAnnotation,
    Outcome,
    evaluate_corpus,
    mean_sem,
    outcome_counts,
    rouge_l_tokens,
    rouge_l_f1,
)
from metaharvest.extraction import harvest_corpus
from metaharvest.gateway import mock_gateway
from metaharvest.ingest import StaticRenderer
from metaharvest.linking import (
    CanonicalDateRange,
    normalize_temporal_coverage,
    overlap_days,
    overlap_matrix,
    parse_canonical_range,
    similarity_matrix,
    temporal_overlap_fraction,
)
from metaharvest.mock import HeuristicResponder
from metaharvest.records import MetadataRecord
from metaharvest.schema import builtin_schema
from metaharvest.store import Store

from conftest import fixture_sources
from table4 import PRESENT_DATE, TEMPORAL_ROWS

RESULTS: list[str] = []


def report(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    RESULTS.append(line)
    print(line)
    assert ok, line


def lcs_dp(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i, x in enumerate(a, 1):
        for j, y in enumerate(b, 1):
            table[i][j] = table[i - 1][j - 1] + 1 if x == y else max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def f1_oracle(a, b):
    if not a or not b:
        return 0.0
    lcs = lcs_dp(a, b)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(a), lcs / len(b)
    return 2 * p * r / (p + r)


def test_1_rouge_matches_dp_oracle():
    rng = random.Random(2024)
    vocab = [f"w{i}" for i in range(8)]
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        a = [rng.choice(vocab) for _ in range(rng.randint(0, 20))]
        b = [rng.choice(vocab) for _ in range(rng.randint(0, 20))]
        worst = max(worst, abs(rouge_l_tokens(a, b) - f1_oracle(a, b)))
    identity = all(rouge_l_tokens(s, s) == 1.0 for s in (["x"], ["a", "b", "a"], vocab))
    disjoint = rouge_l_tokens(["a", "b"], ["c", "d"]) == 0.0 and rouge_l_f1("oak map", "bird survey") == 0.0
    for _ in range(1000):
        a = [rng.choice(vocab) for _ in range(rng.randint(1, 20))]
        identity &= rouge_l_tokens(a, a) == 1.0
        disjoint &= rouge_l_tokens(a, [t.upper() for t in a]) == 0.0
    elapsed = time.perf_counter() - start
    report(
        1,
        "ROUGE-L equals DP-LCS oracle on 1,000 pairs",
        worst <= 1e-12 and identity and disjoint and elapsed < 5.0,
        f"max error {worst:.1e}, identity={identity}, disjoint={disjoint}, {elapsed:.2f}s",
    )


def test_2_derived_rouge_case():
    cand, ref = "the cat on the mat", "the cat sat on the mat"
    oracle = f1_oracle(cand.split(), ref.split())
    got = rouge_l_f1(cand, ref)
    report(
        2,
        "ROUGE-L('the cat on the mat', 'the cat sat on the mat') = 10/11",
        abs(got - 10 / 11) <= 1e-12 and abs(oracle - 10 / 11) <= 1e-12,
        f"got {got!r}, oracle {oracle!r}",
    )


def test_3_temporal_canonicalization():
    round_trip = all(parse_canonical_range(c).serialize() == c for _, _, c in TEMPORAL_ROWS)
    gw = mock_gateway(responder=HeuristicResponder())
    present = date.fromisoformat(PRESENT_DATE)
    rows = {sid: (raw, c) for sid, raw, c in TEMPORAL_ROWS}
    got = {sid: normalize_temporal_coverage(rows[sid][0], present, gw).serialize() for sid in ("luh2-belgium", "modis")}
    present_ok = all(got[sid] == rows[sid][1] for sid in got)
    report(
        3,
        "16 canonical ranges validate and round-trip; 'Present' rows reproduced",
        round_trip and present_ok,
        f"round_trip={round_trip}, luh2={got['luh2-belgium']}, modis={got['modis']}",
    )


def test_4_temporal_overlap():
    start = time.perf_counter()
    ranges = {sid: parse_canonical_range(c) for sid, _, c in TEMPORAL_ROWS}
    m = overlap_matrix(ranges)
    diag = bool(np.all(np.diag(m.values) == 1.0)) and m.values.shape == (16, 16)
    p2p1 = m["camera-trap-p2", "camera-trap-p1"]

    rng = random.Random(11)

    def random_range(max_days):
        s = date(1900, 1, 1) + timedelta(rng.randrange(50_000))
        return CanonicalDateRange(s, s + timedelta(rng.randrange(max_days)))

    symmetric = True
    for _ in range(10_000):
        i, j = random_range(40_000), random_range(40_000)
        symmetric &= overlap_days(i, j) == overlap_days(j, i)
        symmetric &= math.isclose(
            temporal_overlap_fraction(i, j) * i.days, temporal_overlap_fraction(j, i) * j.days, rel_tol=1e-12, abs_tol=1e-9
        )

    oracle_ok = True
    for _ in range(200):
        i, j = random_range(5000), random_range(5000)
        i = CanonicalDateRange(i.start, min(i.end, i.start + timedelta(4999)))
        days = [i.start + timedelta(k) for k in range(i.days)]
        expected = sum(j.start <= d <= j.end for d in days) / len(days)
        oracle_ok &= temporal_overlap_fraction(i, j) == expected
    elapsed = time.perf_counter() - start
    report(
        4,
        "overlap matrix, containment, numerator symmetry, day-enumeration oracle",
        diag and p2p1 == 1.0 and symmetric and oracle_ok and elapsed < 10.0,
        f"diag={diag}, P2/P1={p2p1}, symmetry={symmetric}, oracle={oracle_ok}, {elapsed:.2f}s",
    )


def test_5_similarity_block_structure():
    groups = {
        "camera": "Camera trap images of mammals in the coastal dunes.",
        "landsat": "Landsat surface reflectance composite at 30 m resolution.",
        "ecotope": "Ecotope map of the Wadden Sea tidal flats.",
        "forest": "Dutch forest reserves inventory of tree measurements.",
    }
    recs = [
        MetadataRecord(f"{g}-{k}", "lter-life", {"Description": text}, "postprocessed")
        for g, text in groups.items()
        for k in range(3)
    ]
    m = similarity_matrix(recs, mock_gateway())
    v = m.values
    symmetric = float(np.max(np.abs(v - v.T))) <= 1e-12
    unit = bool(np.all(np.diag(v) == 1.0))
    same = np.array([[a.split("-")[0] == b.split("-")[0] for b in m.ids] for a in m.ids])
    off = ~np.eye(len(m.ids), dtype=bool)
    within, across = v[same & off].min(), v[~same].max()
    report(
        5,
        "similarity matrix symmetric, unit diagonal, within-group > cross-group",
        symmetric and unit and within > across,
        f"min within {within:.4f}, max across {across:.4f}",
    )


def test_6_schema_integrity():
    lter, cro = builtin_schema("lter-life"), builtin_schema("croissant")
    shared = set(lter.names) & set(cro.names)
    expected = {"Metadata language", "Title", "Description", "Keywords", "Data creator", "Data publisher", "License"}
    report(
        6,
        "LTER-LIFE 21 fields / 7 groups, Croissant 10 fields, 7 shared",
        len(lter) == 21 and len(lter.groups) == 7 and len(cro) == 10 and shared == expected,
        f"lter-life {len(lter)}/{len(lter.groups)}, croissant {len(cro)}, shared {len(shared)}",
    )


@pytest.fixture
def no_network(monkeypatch):
    attempts = []

    def refuse(self, address):
        attempts.append(address)
        raise OSError("network access is disabled in this test")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    return attempts


def test_7_end_to_end_mock_pipeline(fixture_corpus, tmp_path, no_network):
    start = time.perf_counter()
    schema = builtin_schema("croissant")
    store = Store(tmp_path / "store")
    gw = mock_gateway(store=store, table=fixture_corpus.table)
    run = harvest_corpus(fixture_sources(), schema, gw, store=store, renderer=StaticRenderer())
    one_per_field = all(list(r.entries) == schema.names and all(r.entries.values()) for r in run.records)
    annotations = [
        GroundTruthAnnotation.from_dict(json.loads(p.read_text()))
        for p in sorted(fixture_corpus.annotations_dir.glob("*.json"))
    ]
    table = evaluate_corpus(run.records, annotations, schema, metrics=["rouge"])
    structured_tp = [
        r for r in table.rows if r.outcome is Outcome.TP and r.availability.value == "structured" and r.metric == "rouge_l_f1"
    ]
    rouge_ok = bool(structured_tp) and all(r.score == 1.0 for r in structured_tp)
    counts = outcome_counts(table.rows)
    expected_counts = {"TP": 22, "FN": 1, "TN": 6, "FP": 1}
    elapsed = time.perf_counter() - start
    report(
        7,
        "mock end-to-end: one value per field, structured TP ROUGE-L 1.0, TP/FN/TN/FP counts",
        run.ok and len(run.records) == 3 and one_per_field and rouge_ok and counts == expected_counts
        and not no_network and elapsed < 10.0,
        f"{len(structured_tp)} structured TP fields, counts {counts}, {len(no_network)} socket attempts, {elapsed:.2f}s",
    )


def test_8_warm_cache_rerun_is_byte_identical(fixture_corpus, tmp_path, monkeypatch):
    made = []
    real = cli.mock_gateway

    def spy(*args, **kwargs):
        gw = real(*args, **kwargs)
        made.append(gw)
        return gw

    monkeypatch.setattr(cli, "mock_gateway", spy)
    out = tmp_path / "out"
    fc = fixture_corpus
    mock = ["--llm", "mock", "--mock-responses", str(fc.responses_path)]

    def pipeline():
        codes = [
            cli.main(["harvest", "--corpus", str(fc.manifest_path), "--out", str(out), *mock]),
            cli.main(["evaluate", "--annotations", str(fc.annotations_dir), "--corpus", str(fc.manifest_path),
                      "--out", str(out), "--metrics", "all", *mock]),
            cli.main(["link", "--kind", "similarity", "--out", str(out), *mock]),
        ]
        assert codes == [0, 0, 0], codes
        return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}

    first = pipeline()
    cold_calls = sum(g.network_calls for g in made)
    made.clear()
    second = pipeline()
    warm_calls = sum(g.network_calls for g in made)
    backend_calls = sum(g.backend.calls + g.backend.embed_calls for g in made)
    report(
        8,
        "warm-cache re-run of harvest + evaluate + link is byte-identical with zero network calls",
        first == second and warm_calls == 0 and backend_calls == 0 and cold_calls > 0,
        f"{len(first)} files, cold calls {cold_calls}, warm calls {warm_calls}",
    )


def test_9_mean_sem():
    values = [1.0, 0.0]
    n = len(values)
    mean_oracle = sum(values) / n
    sem_oracle = math.sqrt(sum((x - mean_oracle) ** 2 for x in values) / n) / math.sqrt(n)
    mean, sem = mean_sem(values)
    report(
        9,
        "mean ± SEM of {1.0, 0.0} = 0.5 ± 0.35355",
        abs(mean - 0.5) <= 1e-5 and abs(sem - 0.35355) <= 1e-5
        and abs(mean - mean_oracle) <= 1e-5 and abs(sem - sem_oracle) <= 1e-5,
        f"{mean:.5f} ± {sem:.5f}",
    )


if __name__ == "__main__":
    sys.exit(pytest.main([str(Path(__file__)), "-q"]))
