import json

import jsonschema
import pytest

from chainscan.pipeline import scan_path
from chainscan.report import OutputFormat, render, sarif_object

ALL_FIXTURES = [
    "exfil_chain.pb",
    "dropper_chain.pb",
    "enum_exfil_chain.pbtxt",
    "benign_linear.pbtxt",
    "benign_print_stderr.pbtxt",
    "benign_checkpoint.pbtxt",
    "recursive_calls.pbtxt",
    "exfil_savedmodel",
    "tiny_savedmodel",
]


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_sarif_validates_for_every_fixture(fixtures, sarif_schema, name):
    doc = json.loads(render(scan_path(fixtures / name).report, OutputFormat.SARIF))
    jsonschema.validate(doc, sarif_schema)


def test_sarif_envelope_fields(fixtures):
    doc = sarif_object(scan_path(fixtures / "exfil_chain.pb").report)
    assert doc["version"] == "2.1.0"
    assert doc["runs"][0]["tool"]["driver"]["name"] == "chainscan"
    rules = doc["runs"][0]["tool"]["driver"]["rules"]
    assert [r["id"] for r in rules] == sorted(r["id"] for r in rules)


def test_sarif_level_mapping(fixtures):
    by_fixture = {
        "exfil_chain.pb": "error",
        "benign_checkpoint.pbtxt": "note",
    }
    for name, expected in by_fixture.items():
        doc = sarif_object(scan_path(fixtures / name).report)
        levels = {r["level"] for r in doc["runs"][0]["results"]}
        assert expected in levels


def test_sarif_results_carry_qualified_node_ids(fixtures):
    doc = sarif_object(scan_path(fixtures / "exfil_chain.pb").report)
    exfil = next(
        r for r in doc["runs"][0]["results"] if r["ruleId"] == "chain/exfiltration"
    )
    names = [
        l["fullyQualifiedName"] for l in exfil["locations"][0]["logicalLocations"]
    ]
    assert names == ["main/read_secret", "main/decode_records", "main/send_secret"]


def test_sarif_rule_index_consistent(fixtures):
    doc = sarif_object(scan_path(fixtures / "dropper_chain.pb").report)
    rules = [r["id"] for r in doc["runs"][0]["tool"]["driver"]["rules"]]
    for result in doc["runs"][0]["results"]:
        assert rules[result["ruleIndex"]] == result["ruleId"]


def test_schema_rejects_bad_documents(sarif_schema):
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"version": "2.1.0"}, sarif_schema)  # runs missing
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"version": "9.9", "runs": []}, sarif_schema)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(
            {
                "version": "2.1.0",
                "runs": [
                    {
                        "tool": {"driver": {"name": "x"}},
                        "results": [{"message": {"text": "m"}, "level": "fatal"}],
                    }
                ],
            },
            sarif_schema,
        )
