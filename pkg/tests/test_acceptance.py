"""Acceptance suite: one test per release criterion, each printing a
PASS line on success (pytest shows the captured line on failure too).

Run with `pytest tests/test_acceptance.py -v -s` for the full readout.
"""

import json
import random
import time

import jsonschema
from click.testing import CliRunner

from chainscan.chains import (
    ChainKind,
    EdgeKind,
    ENUMERATION_ASSISTED,
    EvidenceString,
    FlatGraph,
    StringInterpretation,
    find_chains,
    propagate_taint,
)
from chainscan.cli import main
from chainscan.loader import AttrValue, NodeRecord
from chainscan.pipeline import scan_path
from chainscan.report import OutputFormat, Severity, render
from chainscan.taxonomy import (
    CategoryHit,
    Confidence,
    CoreFunction,
    builtin_rules,
    classify_node,
)
from chainscan.triage import TriageOutcome, TriageVerdict, merge_verdict

from test_chains import brute_force_triples, impl_triples


def ok(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


def timed_scan(path):
    start = time.perf_counter()
    result = scan_path(path)
    return result, time.perf_counter() - start


def test_exfiltration_detection(fixtures):
    result, elapsed = timed_scan(fixtures / "exfil_chain.pb")
    assert result.report.verdict is Severity.MALICIOUS
    exfil = [c for c in result.chains if c.kind is ChainKind.EXFILTRATION]
    assert len(exfil) == 1, f"expected exactly one exfiltration chain, got {len(exfil)}"
    chain = exfil[0]
    assert chain.path == (
        "main/read_secret",
        "main/decode_records",
        "main/send_secret",
    )
    ops = [result.flat.record(qid).op_type for qid in chain.path]
    assert ops == ["FixedLengthRecordDatasetV2", "EagerPyFunc", "RpcCall"]
    assert any(
        e.interpretation is StringInterpretation.REMOTE_ENDPOINT for e in chain.evidence
    )
    assert elapsed < 1.0, f"scan took {elapsed:.3f}s"
    ok(f"exfiltration detection ({elapsed * 1000:.0f} ms)")


def test_dropper_detection(fixtures):
    result, elapsed = timed_scan(fixtures / "dropper_chain.pb")
    assert result.report.verdict is Severity.MALICIOUS
    droppers = [c for c in result.chains if c.kind is ChainKind.DROPPER]
    assert droppers, "expected at least one dropper chain"
    for chain in droppers:
        assert result.flat.record(chain.sink).op_type == "PrintV2"
    persistence = [
        e
        for c in droppers
        for e in c.evidence
        if e.interpretation is StringInterpretation.PERSISTENCE_PATH
    ]
    assert any(e.value.endswith(".bashrc") for e in persistence)
    assert elapsed < 1.0, f"scan took {elapsed:.3f}s"
    ok(f"dropper detection ({elapsed * 1000:.0f} ms)")


def test_enumeration_assisted_three_op_chain(fixtures):
    result, _ = timed_scan(fixtures / "enum_exfil_chain.pbtxt")
    annotated = [
        c
        for c in result.chains
        if c.kind is ChainKind.EXFILTRATION and ENUMERATION_ASSISTED in c.annotations
    ]
    assert annotated, "expected an enumeration-assisted exfiltration chain"
    ops = [result.flat.record(qid).op_type for qid in annotated[0].path]
    assert ops == ["MatchingFiles", "FixedLengthRecordDatasetV2", "DebugIdentity"]
    ok("three-op enumeration-assisted chain")


BENIGN = ["benign_linear.pbtxt", "benign_print_stderr.pbtxt", "benign_checkpoint.pbtxt"]


def test_false_positive_control(fixtures):
    runner = CliRunner()
    for name in BENIGN:
        result, _ = timed_scan(fixtures / name)
        assert result.report.verdict <= Severity.INFORMATIONAL, (
            f"{name} reached {result.report.verdict.label}"
        )
        cli = runner.invoke(main, ["scan", str(fixtures / name)])
        assert cli.exit_code == 0, f"{name} failed the default gate"
    ok("false-positive control over benign fixtures")


TABLE_ROWS = [
    ("FixedLengthRecordDatasetV2", {}, CoreFunction.FILE_READ),
    ("InitializeTableFromTextFile", {}, CoreFunction.FILE_READ),
    ("SaveSlices", {}, CoreFunction.FILE_WRITE),
    (
        "PrintV2",
        {"output_stream": AttrValue.of_str(b"file:///home/u/.bashrc")},
        CoreFunction.FILE_WRITE,
    ),
    ("RpcClient", {}, CoreFunction.NETWORK_RECEIVE),
    ("RpcCall", {}, CoreFunction.NETWORK_SEND),
    (
        "DebugIdentity",
        {"debug_urls": AttrValue.of_str_list([b"grpc://203.0.113.7:9999"])},
        CoreFunction.NETWORK_SEND,
    ),
]


def test_rule_table_fidelity():
    rules = builtin_rules()
    for op, attrs, category in TABLE_ROWS:
        node = NodeRecord(name="n", op_type=op, attrs=attrs)
        hits = classify_node(node, rules)
        assert any(h.category is category for h in hits), (
            f"{op} did not produce a {category.value} hit"
        )
    ok(f"rule-table fidelity over {len(TABLE_ROWS)} rows")


def _random_case(rng: random.Random):
    n = rng.randint(2, 50)
    flat = FlatGraph()
    for i in range(n):
        flat.add_node(f"n{i}", NodeRecord(name=f"n{i}", op_type="X"))
    kinds = list(EdgeKind)
    edges = set()
    for _ in range(rng.randint(0, 3 * n)):
        a, b = rng.randrange(n), rng.randrange(n)  # self-loops and cycles allowed
        if (a, b) not in edges:
            edges.add((a, b))
            flat.add_edge(f"n{a}", f"n{b}", rng.choice(kinds))
    hits = []
    seen = set()
    for _ in range(rng.randint(0, 14)):
        i = rng.randrange(n)
        cat = rng.choice(list(CoreFunction))
        if (i, cat) not in seen:
            seen.add((i, cat))
            hits.append(CategoryHit(f"n{i}", cat, "t", Confidence.HIDDEN))
    persistence = {f"n{rng.randrange(n)}" for _ in range(rng.randint(0, 3))}
    evidence = [
        EvidenceString("~/.bashrc", node, StringInterpretation.PERSISTENCE_PATH)
        for node in sorted(persistence)
    ]
    return flat, hits, evidence, persistence


def test_oracle_equivalence_on_randomized_graphs():
    rng = random.Random(0xC0FFEE)
    start = time.perf_counter()
    graphs = 0
    for _ in range(120):
        flat, hits, evidence, persistence = _random_case(rng)
        taint = propagate_taint(flat, hits)
        chains = find_chains(flat, taint, evidence)
        assert impl_triples(chains) == brute_force_triples(flat, hits, persistence)
        graphs += 1
    elapsed = time.perf_counter() - start
    assert graphs >= 100
    assert elapsed < 30.0, f"oracle sweep took {elapsed:.1f}s"
    ok(f"oracle equivalence over {graphs} randomized graphs ({elapsed:.2f} s)")


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


def test_determinism_and_sarif_validity(fixtures, sarif_schema, tmp_path):
    for name in ALL_FIXTURES:
        first = scan_path(fixtures / name).report
        second = scan_path(fixtures / name).report
        for fmt in (OutputFormat.JSON, OutputFormat.SARIF):
            assert render(first, fmt) == render(second, fmt), f"{name} {fmt.value}"
        jsonschema.validate(
            json.loads(render(first, OutputFormat.SARIF)), sarif_schema
        )
    # corpus concurrency must not leak into the output bytes
    import shutil

    root = tmp_path / "corpus"
    root.mkdir()
    for name in ("exfil_chain.pb", "dropper_chain.pb"):
        shutil.copyfile(fixtures / name, root / name)
    shutil.copyfile(fixtures / "benign_linear.pbtxt", root / "benign_linear.pbtxt")
    manifest = tmp_path / "manifest.txt"
    manifest.write_text(
        "benign_linear.pbtxt clean -\n"
        "dropper_chain.pb malicious dropper\n"
        "exfil_chain.pb malicious exfiltration\n"
    )
    runner = CliRunner()
    outs = set()
    for _ in range(3):
        res = runner.invoke(
            main, ["corpus", str(root), "--manifest", str(manifest), "--format", "json"]
        )
        assert res.exit_code == 0, res.output
        outs.add(res.stdout)
    assert len(outs) == 1
    # cross-process: different hash seeds must not perturb report bytes
    import os
    import subprocess
    import sys

    per_seed = []
    for seed in ("0", "424242"):
        env = dict(os.environ, PYTHONHASHSEED=seed)
        proc = subprocess.run(
            [sys.executable, "-m", "chainscan.cli", "scan",
             str(fixtures / "exfil_chain.pb"), "--format", "json"],
            capture_output=True, env=env,
        )
        assert proc.returncode == 1
        per_seed.append(proc.stdout)
    assert per_seed[0] == per_seed[1]
    ok("byte-deterministic JSON/SARIF output and schema-valid SARIF")


def test_triage_fail_open(fixtures, chat_stub, monkeypatch):
    monkeypatch.setenv("CHAINSCAN_API_KEY", "k")
    runner = CliRunner()

    clean = str(fixtures / "benign_linear.pbtxt")
    unreachable = runner.invoke(
        main,
        ["triage", clean, "--endpoint", "http://127.0.0.1:1/v1", "--model", "m",
         "--timeout-secs", "0.5", "--format", "json"],
    )
    assert unreachable.exit_code == 0
    assert json.loads(unreachable.stdout)["verdict"] == "clean"

    chat_stub.script.extend(["complete nonsense", "still nonsense"])
    garbage = runner.invoke(
        main,
        ["triage", clean, "--endpoint", chat_stub.url, "--model", "m", "--format", "json"],
    )
    assert garbage.exit_code == 0
    data = json.loads(garbage.stdout)
    assert data["verdict"] == "clean"
    assert data["triage"]["raw_degraded"] is True

    clean_report = scan_path(clean).report
    assert clean_report.verdict is Severity.CLEAN
    asserted = merge_verdict(
        clean_report, TriageVerdict(TriageOutcome.MALICIOUS, "stub", ())
    )
    assert asserted.verdict is Severity.SUSPICIOUS
    ok("triage fail-open and never-lower merge")
