"""``metaharvest`` command line: schema, harvest, evaluate, link."""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import date
from pathlib import Path

from . import __version__
from .corpus import CorpusManifest, ManifestError, load_manifest
from .evaluation import LLM_METRICS, GROUP_KEYS, evaluate_corpus, format_summary
from .extraction import INFERENCE_POLICIES, harvest_corpus
from .gateway import ConfigError, Gateway, live_gateway, mock_gateway
from .ingest import StaticRenderer, ingest
from .linking import similarity_matrix, temporal_links
from .mock import HeuristicResponder, load_mock_table
from .schema import BUILTIN_SCHEMAS, SchemaError, builtin_schema, resolve_schema
from .store import Store, _atomic_write, dump_json, load_annotations, load_records

logger = logging.getLogger("metaharvest")

EXIT_OK, EXIT_FAILURES, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _make_gateway(args, store: Store, manifest: CorpusManifest | None = None) -> Gateway:
    """Build the gateway up front so a missing credential fails before any fetch."""
    if args.llm == "mock":
        table = load_mock_table(args.mock_responses) if getattr(args, "mock_responses", None) else None
        return mock_gateway(store=store, table=table, responder=HeuristicResponder())
    try:
        return live_gateway(
            store=store,
            base_url=args.base_url,
            model=args.model,
            embed_model=args.embed_model,
            manifest=manifest.llm if manifest else None,
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _report_failures(failures: dict[str, str]) -> int:
    if not failures:
        return EXIT_OK
    print(f"{len(failures)} dataset(s) failed:", file=sys.stderr)
    for sid, err in failures.items():
        print(f"  {sid}: {err}", file=sys.stderr)
    return EXIT_FAILURES


# --------------------------------------------------------------------------


def cmd_schema(args) -> int:
    if args.schema_cmd == "list":
        for sid in BUILTIN_SCHEMAS:
            s = builtin_schema(sid)
            print(f"{sid}\t{len(s)} fields\t{len(s.groups)} groups")
        return EXIT_OK
    text = builtin_schema(args.schema_id).dumps()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_harvest(args) -> int:
    manifest = load_manifest(args.corpus)
    schema = resolve_schema(args.schema or manifest.schema_id)
    store = Store(args.out)
    gateway = _make_gateway(args, store, manifest)
    renderer = StaticRenderer(timeout=args.timeout)
    run = harvest_corpus(
        manifest.sources,
        schema,
        gateway,
        jobs=args.jobs,
        store=store,
        renderer=renderer,
        stage=args.stage,
        inference_policy=args.policy,
    )
    report = {
        "corpus_id": manifest.corpus_id,
        "schema_id": schema.schema_id,
        "stage": args.stage,
        "succeeded": [r.source_id for r in run.records],
        "failed": {f.source_id: f"{f.step}: {f.error}" for f in run.failures},
        "truncated": run.truncated,
    }
    _atomic_write(Path(args.out) / "harvest_report.json", dump_json(report).encode("utf-8"))
    print(f"harvested {len(run.records)}/{len(manifest.sources)} dataset(s) into {store.records_dir}")
    return _report_failures(report["failed"])


def cmd_evaluate(args) -> int:
    metrics = ["rouge", "llm"] if args.metrics == "all" else [args.metrics]
    if "llm" in metrics and args.llm == "none":
        raise UsageError(f"metrics {' and '.join(LLM_METRICS)} need an LLM gateway: pass --llm mock or --llm live")
    out = Path(args.out)
    store = Store(out)
    manifest = load_manifest(args.corpus) if args.corpus else None
    schema_ref = args.schema or (manifest.schema_id if manifest else None)
    records_dir = Path(args.records) if args.records else store.records_dir
    stage = None if args.stage == "all" else args.stage
    loaded = load_records(records_dir, stage=stage)
    records = loaded.items
    if not schema_ref:
        schema_ids = sorted({r.schema_id for r in records})
        if len(schema_ids) != 1:
            raise UsageError(f"records span schemas {schema_ids}; pass --schema")
        schema_ref = schema_ids[0]
    schema = resolve_schema(schema_ref)
    records = [r for r in records if r.schema_id == schema.schema_id]
    annotations = load_annotations(args.annotations, schema_id=schema.schema_id)

    gateway = None
    docs = {}
    if "llm" in metrics:
        gateway = _make_gateway(args, store, manifest)
        if manifest is None:
            logger.warning("no --corpus given: faithfulness cannot be scored without source documents")
        else:
            renderer = StaticRenderer()
            for rec in records:
                try:
                    docs[rec.source_id] = ingest(manifest.source(rec.source_id), renderer=renderer, store=store)
                except Exception as exc:  # scored without faithfulness; reported below
                    logger.error("%s: could not load source document: %s", rec.source_id, exc)

    table = evaluate_corpus(
        sorted(records, key=lambda r: (r.source_id, r.stage)),
        annotations.items,
        schema,
        providers=manifest.providers if manifest else None,
        gateway=gateway,
        docs=docs,
        metrics=metrics,
    )
    summary = format_summary(table, args.group_by)
    _atomic_write(out / "scores.csv", table.to_csv().encode("utf-8"))
    _atomic_write(out / "scores.meta.json", dump_json(table.metadata).encode("utf-8"))
    _atomic_write(out / "summary.tsv", summary.encode("utf-8"))
    sys.stdout.write(summary)
    failures = {**loaded.errors, **annotations.errors, **table.errors}
    return _report_failures(failures)


def cmd_link(args) -> int:
    out = Path(args.out)
    store = Store(out)
    records_dir = Path(args.records) if args.records else store.records_dir
    records = sorted(load_records(records_dir, stage=args.stage).items, key=lambda r: r.source_id)
    if args.schema:
        schema_id = resolve_schema(args.schema).schema_id
        records = [r for r in records if r.schema_id == schema_id]
    gateway = _make_gateway(args, store)
    if args.kind == "temporal":
        present = date.fromisoformat(args.present_date) if args.present_date else date.today()
        links = temporal_links(records, present, gateway, field=args.field or "Temporal coverage")
        matrix, failures = links.matrix, links.failures
    else:
        matrix = similarity_matrix(records, gateway, field=args.field or "Description")
        failures = {sid: "no value to embed" for sid in matrix.metadata["excluded"]}
    csv_path, _ = store.save_matrix(matrix, matrix.kind)
    print(f"wrote {len(matrix.ids)}x{len(matrix.ids)} {matrix.kind} matrix to {csv_path}")
    return _report_failures(failures)


# --------------------------------------------------------------------------


def _add_llm_flags(p: argparse.ArgumentParser, default: str, allow_none: bool = False) -> None:
    choices = ["live", "mock"] + (["none"] if allow_none else [])
    p.add_argument("--llm", choices=choices, default=default, help="LLM backend (mock = offline, deterministic)")
    p.add_argument("--mock-responses", help="JSON file of prompt-hash -> canned response, consulted before the heuristic mock")
    p.add_argument("--base-url", help="chat-completion endpoint base URL (overrides environment)")
    p.add_argument("--model", help="chat model name (overrides environment)")
    p.add_argument("--embed-model", help="embedding model name (overrides environment)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaharvest", description="Harvest, evaluate and link dataset metadata.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schema", help="list or export the built-in schemas")
    ssub = p.add_subparsers(dest="schema_cmd", required=True)
    ssub.add_parser("list")
    pe = ssub.add_parser("export")
    pe.add_argument("schema_id", choices=BUILTIN_SCHEMAS)
    pe.add_argument("--out", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser("harvest", help="scrape and extract metadata for every source in a corpus manifest")
    p.add_argument("--corpus", required=True, help="corpus manifest (JSON)")
    p.add_argument("--schema", help="built-in schema id or schema file (default: manifest's schema_id)")
    p.add_argument("--stage", choices=["raw", "postprocessed"], default="postprocessed")
    p.add_argument("--policy", choices=INFERENCE_POLICIES, default="strict", help="report missing fields as N/A, or allow best guesses")
    p.add_argument("--jobs", type=int, default=4)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--out", default="./out")
    _add_llm_flags(p, default="live")
    p.set_defaults(func=cmd_harvest)

    p = sub.add_parser("evaluate", help="score records against ground-truth annotations")
    p.add_argument("--records", help="records directory (default: <out>/records)")
    p.add_argument("--annotations", required=True)
    p.add_argument("--corpus", help="manifest, for provider names and source documents")
    p.add_argument("--schema")
    p.add_argument("--stage", choices=["raw", "postprocessed", "all"], default="postprocessed")
    p.add_argument("--metrics", choices=["rouge", "llm", "all"], default="rouge")
    p.add_argument("--group-by", nargs="*", default=[], choices=GROUP_KEYS)
    p.add_argument("--out", default="./out")
    _add_llm_flags(p, default="none", allow_none=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("link", help="build dataset similarity or temporal-overlap matrices")
    p.add_argument("--records", help="records directory (default: <out>/records)")
    p.add_argument("--kind", choices=["temporal", "similarity"], required=True)
    p.add_argument("--present-date", help="date substituted for 'Present' (YYYY-MM-DD, default today)")
    p.add_argument("--field", help="field to link on (default: Temporal coverage / Description)")
    p.add_argument("--schema")
    p.add_argument("--stage", choices=["raw", "postprocessed"], default="postprocessed")
    p.add_argument("--out", default="./out")
    _add_llm_flags(p, default="live")
    p.set_defaults(func=cmd_link)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, ManifestError, SchemaError, ValueError, FileNotFoundError) as exc:
        print(f"metaharvest: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
