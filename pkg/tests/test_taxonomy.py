import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainscan.errors import DuplicateRuleError, RuleParseError
from chainscan.loader import AttrKind, AttrValue, NodeRecord
from chainscan.taxonomy import (
    AttrPredicate,
    Confidence,
    CoreFunction,
    OpRule,
    PredicateKind,
    RuleOrigin,
    RuleSet,
    builtin_rules,
    classify_node,
    evaluate_predicate,
    load_rules,
)


def node(op, name="n", **attrs):
    return NodeRecord(name=name, op_type=op, attrs=attrs)


def categories(hits):
    return [h.category for h in hits]


RULES = builtin_rules()


class TestBuiltinDatabase:
    def test_origin_and_version(self):
        assert RULES.origin is RuleOrigin.BUILTIN
        assert RULES.version

    def test_dataset_reader_lookup(self):
        (rule,) = RULES.for_op("FixedLengthRecordDatasetV2")
        assert rule.categories == (CoreFunction.FILE_READ,)
        assert rule.confidence is Confidence.HIDDEN
        assert rule.note == "Read a CSV file to create a dataset"

    def test_print_lookup_is_gated(self):
        (rule,) = RULES.for_op("PrintV2")
        assert rule.categories == (CoreFunction.FILE_WRITE,)
        assert rule.note == "Append to a file"
        assert rule.predicate.kind is PredicateKind.ATTR_STR_NOT_IN
        assert rule.predicate.values == frozenset(
            {"stderr", "stdout", "log(info)", "log(warning)", "log(error)"}
        )

    def test_arithmetic_op_has_no_rule(self):
        assert RULES.for_op("MatMul") == ()
        assert classify_node(node("MatMul"), RULES) == []

    def test_rpc_call_flags_both_directions(self):
        hits = classify_node(node("RpcCall"), RULES)
        assert categories(hits) == [CoreFunction.NETWORK_SEND, CoreFunction.NETWORK_RECEIVE]

    def test_explicit_io_rules(self):
        (read,) = classify_node(node("ReadFile"), RULES)
        (write,) = classify_node(node("WriteFile"), RULES)
        assert (read.category, read.confidence) == (CoreFunction.FILE_READ, Confidence.EXPLICIT)
        assert (write.category, write.confidence) == (CoreFunction.FILE_WRITE, Confidence.EXPLICIT)

    def test_checkpoint_family_is_informational(self):
        for op in ("Save", "SaveV2", "Restore", "RestoreV2"):
            (hit,) = classify_node(node(op), RULES)
            assert hit.confidence is Confidence.INFORMATIONAL

    @pytest.mark.parametrize(
        "op,category",
        [
            ("InitializeTableFromTextFile", CoreFunction.FILE_READ),
            ("InitializeTableFromTextFileV2", CoreFunction.FILE_READ),
            ("TextLineDataset", CoreFunction.FILE_READ),
            ("TFRecordDataset", CoreFunction.FILE_READ),
            ("TFRecordDatasetV2", CoreFunction.FILE_READ),
            ("SaveSlices", CoreFunction.FILE_WRITE),
            ("MatchingFiles", CoreFunction.ENUMERATION),
            ("EagerPyFunc", CoreFunction.OPAQUE_EXEC),
            ("PyFunc", CoreFunction.OPAQUE_EXEC),
            ("PyFuncStateless", CoreFunction.OPAQUE_EXEC),
            ("RpcClient", CoreFunction.NETWORK_RECEIVE),
        ],
    )
    def test_required_rule_coverage(self, op, category):
        hits = classify_node(node(op), RULES)
        assert category in categories(hits)


class TestClassifyNode:
    def test_debug_identity_with_remote_url(self):
        n = node(
            "DebugIdentity",
            debug_urls=AttrValue.of_str_list([b"grpc://203.0.113.7:9999"]),
        )
        assert categories(classify_node(n, RULES)) == [CoreFunction.NETWORK_SEND]

    def test_debug_identity_with_empty_urls(self):
        n = node("DebugIdentity", debug_urls=AttrValue.of_str_list([]))
        assert classify_node(n, RULES) == []

    def test_debug_identity_with_local_file_url(self):
        n = node("DebugIdentity", debug_urls=AttrValue.of_str_list([b"file:///tmp/dump"]))
        assert classify_node(n, RULES) == []

    def test_print_to_console_is_benign(self):
        n = node("PrintV2", output_stream=AttrValue.of_str(b"stderr"))
        assert classify_node(n, RULES) == []

    def test_print_to_file_url_is_file_write(self):
        n = node("PrintV2", output_stream=AttrValue.of_str(b"file:///home/u/.bashrc"))
        assert categories(classify_node(n, RULES)) == [CoreFunction.FILE_WRITE]

    def test_print_to_bare_path_is_file_write(self):
        n = node("PrintV2", output_stream=AttrValue.of_str(b"/home/u/evil.py"))
        assert categories(classify_node(n, RULES)) == [CoreFunction.FILE_WRITE]

    def test_print_without_stream_attr_does_not_fire(self):
        assert classify_node(node("PrintV2"), RULES) == []

    def test_duplicate_rules_keep_highest_confidence(self):
        rules = RuleSet(
            rules=(
                OpRule("X", (CoreFunction.FILE_READ,), Confidence.INFORMATIONAL, "weak"),
                OpRule("X", (CoreFunction.FILE_READ,), Confidence.EXPLICIT, "strong",
                       AttrPredicate(PredicateKind.ATTR_LIST_NON_EMPTY, "files")),
            ),
            version="t",
            origin=RuleOrigin.BUILTIN,
        )
        weak_only = classify_node(node("X"), rules)
        assert [(h.confidence, h.rule_note) for h in weak_only] == [
            (Confidence.INFORMATIONAL, "weak")
        ]
        both = classify_node(
            node("X", files=AttrValue.of_str_list([b"a"])), rules
        )
        assert [(h.confidence, h.rule_note) for h in both] == [
            (Confidence.EXPLICIT, "strong")
        ]

    def test_determinism(self):
        n = node("RpcCall")
        assert classify_node(n, RULES) == classify_node(n, RULES)


class TestEvaluatePredicate:
    def test_any_matches_direct_hit(self):
        pred = AttrPredicate(PredicateKind.ATTR_LIST_ANY_MATCHES, "debug_urls", pattern="^grpc://")
        attrs = {"debug_urls": AttrValue.of_str_list([b"grpc://a"])}
        assert evaluate_predicate(pred, attrs) is True

    @pytest.mark.parametrize(
        "pred",
        [
            AttrPredicate(PredicateKind.ATTR_STR_MATCHES, "a", pattern="x"),
            AttrPredicate(PredicateKind.ATTR_STR_NOT_IN, "a", values=frozenset({"x"})),
            AttrPredicate(PredicateKind.ATTR_LIST_NON_EMPTY, "a"),
            AttrPredicate(PredicateKind.ATTR_LIST_ANY_MATCHES, "a", pattern="x"),
        ],
    )
    def test_missing_attr_is_false(self, pred):
        assert evaluate_predicate(pred, {}) is False

    def test_not_in_console_set(self):
        pred = AttrPredicate(
            PredicateKind.ATTR_STR_NOT_IN,
            "output_stream",
            values=frozenset({"stderr", "stdout", "log(info)", "log(warning)", "log(error)"}),
        )
        assert evaluate_predicate(pred, {"output_stream": AttrValue.of_str(b"log(info)")}) is False
        assert evaluate_predicate(pred, {"output_stream": AttrValue.of_str(b"/tmp/x")}) is True

    def test_invalid_utf8_is_replaced_not_fatal(self):
        pred = AttrPredicate(PredicateKind.ATTR_STR_MATCHES, "s", pattern=".")
        assert evaluate_predicate(pred, {"s": AttrValue.of_str(b"\xff\xfe")}) is True

    def test_wrong_kind_behaves_like_missing(self):
        pred = AttrPredicate(PredicateKind.ATTR_LIST_NON_EMPTY, "a")
        assert evaluate_predicate(pred, {"a": AttrValue(AttrKind.INT, 3)}) is False


# --- property tests --------------------------------------------------------

_attr_values = st.one_of(
    st.binary(max_size=12).map(AttrValue.of_str),
    st.lists(st.binary(max_size=8), max_size=4).map(AttrValue.of_str_list),
    st.lists(st.binary(max_size=8), max_size=4).map(AttrValue.of_tensor_strings),
    st.integers(-10, 10).map(lambda i: AttrValue(AttrKind.INT, i)),
    st.booleans().map(lambda b: AttrValue(AttrKind.BOOL, b)),
    st.binary(max_size=6).map(lambda b: AttrValue(AttrKind.OTHER, b)),
)

_attr_maps = st.dictionaries(
    st.sampled_from(["output_stream", "debug_urls", "pattern", "token", "zz"]),
    _attr_values,
    max_size=4,
)

_known_ops = sorted({r.op_type for r in RULES.rules}) + ["MatMul", "Const"]


@given(op=st.sampled_from(_known_ops), attrs=_attr_maps)
@settings(max_examples=200, deadline=None)
def test_classify_is_total_and_deterministic(op, attrs):
    n = NodeRecord(name="n", op_type=op, attrs=attrs)
    first = classify_node(n, RULES)
    second = classify_node(n, RULES)
    assert first == second
    seen = [(h.category) for h in first]
    assert len(seen) == len(set(seen)), "one hit per (node, category)"


OVERRIDE_ADD = """
version: "test-1"
rules:
  - op_type: CollectiveGather
    categories: [network_receive]
    confidence: hidden
    note: "Gather tensors from remote workers"
"""

OVERRIDE_REPLACE_DEBUG = """
version: "test-2"
rules:
  - op_type: DebugIdentity
    categories: [network_send]
    confidence: hidden
    note: "Always treat debug routing as a network send"
"""


class TestLoadRules:
    def test_no_override_is_builtin(self):
        assert load_rules(None) == builtin_rules()

    def test_override_appends_rule(self, tmp_path):
        p = tmp_path / "extra.yaml"
        p.write_text(OVERRIDE_ADD)
        rs = load_rules(p)
        assert len(rs.rules) == len(RULES.rules) + 1
        assert rs.origin is RuleOrigin.FILE_OVERRIDE
        assert rs.version == f"{RULES.version}+test-1"
        hits = classify_node(node("CollectiveGather"), rs)
        assert categories(hits) == [CoreFunction.NETWORK_RECEIVE]

    def test_override_with_unconditional_rule_widens_gate(self, tmp_path):
        p = tmp_path / "debug.yaml"
        p.write_text(OVERRIDE_REPLACE_DEBUG)
        rs = load_rules(p)
        quiet = node("DebugIdentity", debug_urls=AttrValue.of_str_list([]))
        assert classify_node(quiet, builtin_rules()) == []
        assert categories(classify_node(quiet, rs)) == [CoreFunction.NETWORK_SEND]

    def test_override_replaces_same_key(self, tmp_path):
        p = tmp_path / "swap.yaml"
        p.write_text(
            'version: "test-3"\n'
            "rules:\n"
            "  - op_type: RpcClient\n"
            "    categories: [network_receive, network_send]\n"
            "    confidence: explicit\n"
            '    note: "replaced"\n'
        )
        rs = load_rules(p)
        assert len(rs.rules) == len(RULES.rules)
        (hit_send, hit_recv) = (
            classify_node(node("RpcClient"), rs)[0],
            classify_node(node("RpcClient"), rs)[1],
        )
        assert {hit_send.category, hit_recv.category} == {
            CoreFunction.NETWORK_SEND,
            CoreFunction.NETWORK_RECEIVE,
        }
        assert hit_send.confidence is Confidence.EXPLICIT

    @pytest.mark.parametrize(
        "body,fragment",
        [
            ("version: 1\nrules: []\n", "version"),
            ('version: "1"\n', "rules"),
            ('version: "1"\nrules: [{}]\n', "op_type"),
            ('version: "1"\nrules: [{op_type: X}]\n', "categories"),
            (
                'version: "1"\nrules: [{op_type: X, categories: [bogus], '
                'confidence: hidden, note: ""}]\n',
                "category",
            ),
            (
                'version: "1"\nrules: [{op_type: X, categories: [file_read], '
                'confidence: sorta, note: ""}]\n',
                "confidence",
            ),
            (
                'version: "1"\nrules: [{op_type: X, categories: [file_read], '
                'confidence: hidden, note: "", shrug: 1}]\n',
                "unknown rule fields",
            ),
            (
                'version: "1"\nbonus: true\nrules: []\n',
                "unknown top-level fields",
            ),
            (
                'version: "1"\nrules: [{op_type: X, categories: [file_read], '
                "confidence: hidden, note: \"\", predicate: {kind: attr_str_matches, "
                'attr: a, pattern: "["}}]\n',
                "pattern",
            ),
        ],
    )
    def test_malformed_overrides_rejected_with_diagnostics(self, tmp_path, body, fragment):
        p = tmp_path / "bad.yaml"
        p.write_text(body)
        with pytest.raises(RuleParseError) as err:
            load_rules(p)
        assert fragment.lower() in str(err.value).lower()

    def test_duplicate_rule_within_override(self, tmp_path):
        p = tmp_path / "dup.yaml"
        p.write_text(
            'version: "1"\n'
            "rules:\n"
            "  - {op_type: X, categories: [file_read], confidence: hidden, note: a}\n"
            "  - {op_type: X, categories: [file_write], confidence: hidden, note: b}\n"
        )
        with pytest.raises(DuplicateRuleError):
            load_rules(p)

    @given(op=st.sampled_from(_known_ops), attrs=_attr_maps)
    @settings(max_examples=60, deadline=None)
    def test_override_soundness(self, tmp_path_factory, op, attrs):
        # adding rules never removes builtin behavior (no key replaced here)
        p = tmp_path_factory.getbasetemp() / "add.yaml"
        if not p.exists():
            p.write_text(OVERRIDE_ADD)
        widened = load_rules(p)
        n = NodeRecord(name="n", op_type=op, attrs=attrs)
        base_hits = {(h.category, h.confidence) for h in classify_node(n, RULES)}
        new_hits = {(h.category, h.confidence) for h in classify_node(n, widened)}
        assert base_hits <= new_hits
