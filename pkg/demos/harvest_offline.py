"""
Harvesting a landing page without a live model
==============================================

Write a small landing page to disk, harvest it with the rule-based mock LLM,
then score the result against a hand-made annotation. Nothing here touches
the network.
"""

import tempfile
from pathlib import Path

from metaharvest import (
    DatasetSource,
    GroundTruthAnnotation,
    Store,
    builtin_schema,
    evaluate_corpus,
    format_summary,
    harvest,
)
from metaharvest.gateway import mock_gateway
from metaharvest.mock import HeuristicResponder

workdir = Path(tempfile.mkdtemp(prefix="metaharvest-demo-"))

page = workdir / "oaks.html"
page.write_text(
    """<html><body>
    <h1>Oak distribution in Europe</h1>
    <p>Modelled probability of presence of oak species, 2000 to 2020.</p>
    <table>
      <tr><th>Title</th><td>Oak distribution in Europe</td></tr>
      <tr><th>Data creator</th><td>A. Researcher</td></tr>
      <tr><th>Data creator</th><td>B. Modeller</td></tr>
      <tr><th>License</th><td>CC-BY 4.0</td></tr>
      <tr><th>Date published</th><td>2021-05-04</td></tr>
    </table>
    <script>trackVisit()</script>
    </body></html>"""
)

schema = builtin_schema("croissant")
store = Store(workdir / "store")
gateway = mock_gateway(store=store, responder=HeuristicResponder())
source = DatasetSource("oaks", page.as_uri(), provider="Demo portal")

record = harvest(source, schema, gateway, store=store)
for name, value in record.entries.items():
    print(f"{name:20s} {value}")

# the raw stage kept both creators as separate entities
raw = store.load_records(stage="raw").items[0]
print()
print("raw entities:", [(e.field_name, e.value) for e in raw.raw_entities])

annotation = GroundTruthAnnotation.from_dict(
    {
        "source_id": "oaks",
        "schema_id": "croissant",
        "entries": {
            "Metadata language": {"value": "English", "availability": "unstructured"},
            "Title": {"value": "Oak distribution in Europe", "availability": "structured"},
            "Description": {"value": "Probability of presence of oak species.", "availability": "unstructured"},
            "Keywords": {"value": "N/A", "availability": "unavailable"},
            "Data creator": {"value": "A. Researcher; B. Modeller", "availability": "structured"},
            "Data publisher": {"value": "N/A", "availability": "unavailable"},
            "License": {"value": "CC-BY 4.0", "availability": "structured"},
            "Same as": {"value": "N/A", "availability": "unavailable"},
            "Date published": {"value": "2021-05-04", "availability": "structured"},
            "Date last modified": {"value": "N/A", "availability": "unavailable"},
        },
    }
)

table = evaluate_corpus([record], [annotation], schema, providers={"oaks": "Demo portal"})
print()
print(format_summary(table, ["availability"]))

# a second harvest is served from the cache
before = gateway.network_calls
harvest(source, schema, gateway, store=store)
print("model calls on re-run:", gateway.network_calls - before)
