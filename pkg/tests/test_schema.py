import json

import pytest

from metaharvest.schema import (
    BUILTIN_SCHEMAS,
    MetadataSchema,
    SchemaError,
    builtin_schema,
    load_schema,
    loads_schema,
    resolve_schema,
)

# (group, field, in croissant, lter-life standard or None), transcribed by hand
FIELD_TABLE = [
    ("Metadata on metadata", "Metadata date", False, "ISO 19115"),
    ("Metadata on metadata", "Metadata language", True, "ISO 19115"),
    ("Metadata on metadata", "Responsible organization", False, "ISO 19115"),
    ("Identification", "Title", True, "DCAT-AP"),
    ("Identification", "Description", True, "DCAT-AP"),
    ("Identification", "Unique Identifier", False, "DCAT-AP"),
    ("Identification", "Resource type", False, "DCAT-AP"),
    ("Identification", "Keywords", True, "DCAT-AP"),
    ("Data contact information", "Data creator", True, "DCAT-AP"),
    ("Data contact information", "Data contact point", False, "DCAT-AP"),
    ("Data contact information", "Data publisher", True, "DCAT-AP"),
    ("Spatial properties", "Spatial coverage", False, "DCAT-AP"),
    ("Spatial properties", "Spatial resolution", False, "DCAT-AP"),
    ("Spatial properties", "Spatial reference system", False, "ISO 19115"),
    ("Temporal properties", "Temporal coverage", False, "DCAT-AP"),
    ("Temporal properties", "Temporal resolution", False, "DCAT-AP"),
    ("Intellectual rights", "License", True, "DCAT-AP"),
    ("Intellectual rights", "Access rights", False, "DCAT-AP"),
    ("Distribution", "Distribution access URL", False, "DCAT-AP"),
    ("Distribution", "Distribution format", False, "DCAT-AP"),
    ("Distribution", "Distribution byte size", False, "DCAT-AP"),
    ("Distribution", "Same as", True, None),
    ("Distribution", "Date published", True, None),
    ("Distribution", "Date last modified", True, None),
]


def test_lter_life_matches_table():
    s = builtin_schema("lter-life")
    expected = [(g, f, ref) for g, f, _, ref in FIELD_TABLE if ref]
    assert [(f.group, f.name, f.standard_ref) for f in s.fields] == expected
    assert len(s) == 21
    assert len(s.groups) == 7


def test_croissant_matches_table():
    s = builtin_schema("croissant")
    expected = [(g, f) for g, f, in_c, _ in FIELD_TABLE if in_c]
    assert [(f.group, f.name) for f in s.fields] == expected
    assert len(s) == 10
    assert {f.standard_ref for f in s.fields} == {"Croissant"}


def test_shared_fields():
    shared = set(builtin_schema("lter-life").names) & set(builtin_schema("croissant").names)
    assert shared == {"Metadata language", "Title", "Description", "Keywords", "Data creator", "Data publisher", "License"}


def test_fuzzy_fields():
    for sid in BUILTIN_SCHEMAS:
        s = builtin_schema(sid)
        assert [f.name for f in s.fields if f.fuzzy] == ["Description", "Keywords"]
        assert all(f.definition for f in s.fields)


def test_round_trip(tmp_path):
    for sid in BUILTIN_SCHEMAS:
        s = builtin_schema(sid)
        assert loads_schema(s.dumps()) == s
        p = tmp_path / f"{sid}.json"
        p.write_text(s.dumps())
        assert load_schema(p) == s
        assert resolve_schema(str(p)) == s
        assert resolve_schema(sid) == s


def test_duplicate_field_rejected():
    payload = {
        "schema_id": "dup",
        "fields": [
            {"name": "Title", "group": "g", "definition": "a"},
            {"name": "Title", "group": "g", "definition": "b"},
        ],
    }
    with pytest.raises(SchemaError, match="duplicate field 'Title'"):
        MetadataSchema.from_dict(payload)


def test_missing_keys_and_bad_json(tmp_path):
    with pytest.raises(SchemaError, match="missing keys"):
        MetadataSchema.from_dict({"schema_id": "x", "fields": [{"name": "Title"}]})
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_id": "x",\n "fields": [,]}')
    with pytest.raises(SchemaError, match="line 2"):
        load_schema(bad)


def test_unknown_builtin():
    with pytest.raises(SchemaError, match="unknown built-in schema"):
        builtin_schema("dublin-core")


def test_custom_schema_defaults():
    s = loads_schema(json.dumps({"schema_id": "mini", "fields": [{"name": "Title", "group": "Id", "definition": "Name"}]}))
    assert s.field("Title").match_mode == "exact"
    assert "Title" in s and "Other" not in s
