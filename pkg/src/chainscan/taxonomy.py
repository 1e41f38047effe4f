"""Rule database mapping op types to attack core-function categories.

A rule keys on the raw serialized op name, optionally gated by an
attribute predicate (e.g. PrintV2 only counts as a file write when its
output_stream leaves the console allowlist). Classification is pure and
deterministic; predicates are total over arbitrary attribute maps.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

import yaml

from .errors import DuplicateRuleError, RuleParseError
from .loader import AttrKind, AttrValue, NodeRecord

BUILTIN_RULES_VERSION = "builtin-1"

PRINT_CONSOLE_SINKS = frozenset(
    {"stderr", "stdout", "log(info)", "log(warning)", "log(error)"}
)

REMOTE_DEBUG_URL_PATTERN = "^(grpc|http|https)://"


class CoreFunction(enum.Enum):
    """Capability categories; the first four are the classic malware needs,
    the last two cover reconnaissance and serialized-callback execution."""

    FILE_READ = "file_read"
    FILE_WRITE = "file_write"
    NETWORK_SEND = "network_send"
    NETWORK_RECEIVE = "network_receive"
    ENUMERATION = "enumeration"
    OPAQUE_EXEC = "opaque_exec"


_CATEGORY_ORDER = {c: i for i, c in enumerate(CoreFunction)}


class Confidence(enum.IntEnum):
    """How strongly a rule indicates abuse potential; higher wins on merge."""

    INFORMATIONAL = 0
    HIDDEN = 1
    EXPLICIT = 2

    @property
    def label(self) -> str:
        return self.name.lower()


class PredicateKind(enum.Enum):
    ATTR_STR_MATCHES = "attr_str_matches"
    ATTR_STR_NOT_IN = "attr_str_not_in"
    ATTR_LIST_NON_EMPTY = "attr_list_non_empty"
    ATTR_LIST_ANY_MATCHES = "attr_list_any_matches"


@dataclass(frozen=True)
class AttrPredicate:
    kind: PredicateKind
    attr: str
    pattern: Optional[str] = None
    values: frozenset[str] = frozenset()

    def summary(self) -> str:
        if self.kind is PredicateKind.ATTR_STR_MATCHES:
            return f"{self.attr} =~ {self.pattern}"
        if self.kind is PredicateKind.ATTR_STR_NOT_IN:
            return f"{self.attr} not in {{{', '.join(sorted(self.values))}}}"
        if self.kind is PredicateKind.ATTR_LIST_NON_EMPTY:
            return f"{self.attr} non-empty"
        return f"any({self.attr}) =~ {self.pattern}"


def evaluate_predicate(pred: AttrPredicate, attrs: Mapping[str, AttrValue]) -> bool:
    """Total evaluation: a missing or wrongly-typed attribute never fires."""
    attr = attrs.get(pred.attr)
    if attr is None:
        return False
    if pred.kind is PredicateKind.ATTR_STR_MATCHES:
        text = attr.text()
        return text is not None and re.search(pred.pattern, text) is not None
    if pred.kind is PredicateKind.ATTR_STR_NOT_IN:
        text = attr.text()
        return text is not None and text not in pred.values
    if pred.kind is PredicateKind.ATTR_LIST_NON_EMPTY:
        return attr.kind in (AttrKind.STR_LIST, AttrKind.TENSOR_STRINGS) and len(attr.value) > 0
    if pred.kind is PredicateKind.ATTR_LIST_ANY_MATCHES:
        return any(re.search(pred.pattern, t) is not None for t in attr.texts())
    return False


@dataclass(frozen=True)
class OpRule:
    op_type: str
    categories: tuple[CoreFunction, ...]
    confidence: Confidence
    note: str
    predicate: Optional[AttrPredicate] = None

    def key(self) -> tuple[str, Optional[AttrPredicate]]:
        return (self.op_type, self.predicate)


class RuleOrigin(enum.Enum):
    BUILTIN = "builtin"
    FILE_OVERRIDE = "file_override"


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[OpRule, ...]
    version: str
    origin: RuleOrigin
    origin_path: Optional[str] = None

    def for_op(self, op_type: str) -> tuple[OpRule, ...]:
        return tuple(r for r in self.rules if r.op_type == op_type)


@dataclass(frozen=True)
class CategoryHit:
    node_name: str
    category: CoreFunction
    rule_note: str
    confidence: Confidence


def _r(op, cats, conf, note, pred=None) -> OpRule:
    return OpRule(op, tuple(cats), conf, note, pred)


_PRINT_GATE = AttrPredicate(
    PredicateKind.ATTR_STR_NOT_IN, "output_stream", values=PRINT_CONSOLE_SINKS
)
_DEBUG_URL_GATE = AttrPredicate(
    PredicateKind.ATTR_LIST_ANY_MATCHES, "debug_urls", pattern=REMOTE_DEBUG_URL_PATTERN
)

_BUILTIN_RULES: tuple[OpRule, ...] = (
    # file readers dressed up as dataset / table constructors
    _r("FixedLengthRecordDatasetV2", [CoreFunction.FILE_READ], Confidence.HIDDEN,
       "Read a CSV file to create a dataset"),
    _r("FixedLengthRecordDataset", [CoreFunction.FILE_READ], Confidence.HIDDEN,
       "Read fixed-length records from a file"),
    _r("InitializeTableFromTextFile", [CoreFunction.FILE_READ], Confidence.HIDDEN,
       "Read a key-value file to create a table"),
    _r("InitializeTableFromTextFileV2", [CoreFunction.FILE_READ], Confidence.HIDDEN,
       "Read a key-value file to create a table"),
    _r("TextLineDataset", [CoreFunction.FILE_READ], Confidence.HIDDEN,
       "Read a text file line-by-line as a dataset"),
    _r("TFRecordDataset", [CoreFunction.FILE_READ], Confidence.HIDDEN,
       "Read record files as a dataset"),
    _r("TFRecordDatasetV2", [CoreFunction.FILE_READ], Confidence.HIDDEN,
       "Read record files as a dataset"),
    # file writers
    _r("SaveSlices", [CoreFunction.FILE_WRITE], Confidence.HIDDEN,
       "Write tensor list into a file"),
    _r("PrintV2", [CoreFunction.FILE_WRITE], Confidence.HIDDEN,
       "Append to a file", _PRINT_GATE),
    # network endpoints hiding in rpc / debug plumbing
    _r("RpcClient", [CoreFunction.NETWORK_RECEIVE], Confidence.HIDDEN,
       "Receive a payload from a host"),
    _r("RpcCall", [CoreFunction.NETWORK_SEND, CoreFunction.NETWORK_RECEIVE], Confidence.HIDDEN,
       "Send a payload to a host; the response future carries received data"),
    _r("DebugIdentity", [CoreFunction.NETWORK_SEND], Confidence.HIDDEN,
       "Send a payload to a host", _DEBUG_URL_GATE),
    # explicit I/O ops: conspicuous, but still recorded
    _r("ReadFile", [CoreFunction.FILE_READ], Confidence.EXPLICIT,
       "Read a file's contents"),
    _r("WriteFile", [CoreFunction.FILE_WRITE], Confidence.EXPLICIT,
       "Write contents to a file"),
    # filesystem reconnaissance
    _r("MatchingFiles", [CoreFunction.ENUMERATION], Confidence.HIDDEN,
       "Expand a glob pattern into matching file paths"),
    # serialized-callback execution: anomalous in distributed models
    _r("EagerPyFunc", [CoreFunction.OPAQUE_EXEC], Confidence.HIDDEN,
       "Invoke a serialized Python callback"),
    _r("PyFunc", [CoreFunction.OPAQUE_EXEC], Confidence.HIDDEN,
       "Invoke a serialized Python callback"),
    _r("PyFuncStateless", [CoreFunction.OPAQUE_EXEC], Confidence.HIDDEN,
       "Invoke a serialized Python callback"),
    # checkpoint machinery: ubiquitous in benign graphs, chain-relevant only
    _r("Save", [CoreFunction.FILE_WRITE], Confidence.INFORMATIONAL, "Checkpoint write"),
    _r("SaveV2", [CoreFunction.FILE_WRITE], Confidence.INFORMATIONAL, "Checkpoint write"),
    _r("Restore", [CoreFunction.FILE_READ], Confidence.INFORMATIONAL, "Checkpoint read"),
    _r("RestoreV2", [CoreFunction.FILE_READ], Confidence.INFORMATIONAL, "Checkpoint read"),
)


def builtin_rules() -> RuleSet:
    return RuleSet(rules=_BUILTIN_RULES, version=BUILTIN_RULES_VERSION,
                   origin=RuleOrigin.BUILTIN)


def classify_node(node: NodeRecord, rules: RuleSet) -> list[CategoryHit]:
    """All category hits for one node, deduplicated per (node, category)
    keeping the highest confidence, ordered by category declaration order."""
    best: dict[CoreFunction, tuple[Confidence, str]] = {}
    for rule in rules.rules:
        if rule.op_type != node.op_type:
            continue
        if rule.predicate is not None and not evaluate_predicate(rule.predicate, node.attrs):
            continue
        for cat in rule.categories:
            prev = best.get(cat)
            if prev is None or rule.confidence > prev[0]:
                best[cat] = (rule.confidence, rule.note)
    return [
        CategoryHit(node.name, cat, note, conf)
        for cat, (conf, note) in sorted(best.items(), key=lambda kv: _CATEGORY_ORDER[kv[0]])
    ]


# ---------------------------------------------------------------------------
# rule override files

_RULE_FIELDS = {"op_type", "categories", "confidence", "note", "predicate"}
_PREDICATE_FIELDS = {"kind", "attr", "pattern", "values"}


def _parse_category(raw: str, where: str) -> CoreFunction:
    try:
        return CoreFunction(raw)
    except ValueError:
        valid = ", ".join(c.value for c in CoreFunction)
        raise RuleParseError(f"{where}: unknown category {raw!r} (expected one of {valid})")


def _parse_predicate(raw: object, where: str) -> AttrPredicate:
    if not isinstance(raw, dict):
        raise RuleParseError(f"{where}: predicate must be a mapping")
    unknown = set(raw) - _PREDICATE_FIELDS
    if unknown:
        raise RuleParseError(f"{where}: unknown predicate fields {sorted(unknown)}")
    try:
        kind = PredicateKind(raw.get("kind"))
    except ValueError:
        valid = ", ".join(k.value for k in PredicateKind)
        raise RuleParseError(
            f"{where}: unknown predicate kind {raw.get('kind')!r} (expected one of {valid})"
        )
    attr = raw.get("attr")
    if not isinstance(attr, str) or not attr:
        raise RuleParseError(f"{where}: predicate needs a non-empty 'attr' string")
    pattern = raw.get("pattern")
    values = raw.get("values")
    if kind in (PredicateKind.ATTR_STR_MATCHES, PredicateKind.ATTR_LIST_ANY_MATCHES):
        if not isinstance(pattern, str):
            raise RuleParseError(f"{where}: predicate kind {kind.value!r} needs 'pattern'")
        try:
            re.compile(pattern)
        except re.error as exc:
            raise RuleParseError(f"{where}: bad pattern {pattern!r}: {exc}")
        return AttrPredicate(kind, attr, pattern=pattern)
    if kind is PredicateKind.ATTR_STR_NOT_IN:
        if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
            raise RuleParseError(f"{where}: predicate kind {kind.value!r} needs 'values' list")
        return AttrPredicate(kind, attr, values=frozenset(values))
    if pattern is not None or values is not None:
        raise RuleParseError(f"{where}: predicate kind {kind.value!r} takes no pattern/values")
    return AttrPredicate(kind, attr)


def _parse_rule(raw: object, where: str) -> OpRule:
    if not isinstance(raw, dict):
        raise RuleParseError(f"{where}: rule must be a mapping")
    unknown = set(raw) - _RULE_FIELDS
    if unknown:
        raise RuleParseError(f"{where}: unknown rule fields {sorted(unknown)}")
    op_type = raw.get("op_type")
    if not isinstance(op_type, str) or not op_type:
        raise RuleParseError(f"{where}: 'op_type' must be a non-empty string")
    cats_raw = raw.get("categories")
    if not isinstance(cats_raw, list) or not cats_raw:
        raise RuleParseError(f"{where}: 'categories' must be a non-empty list")
    categories = tuple(_parse_category(c, where) for c in cats_raw)
    conf_raw = raw.get("confidence")
    try:
        confidence = Confidence[str(conf_raw).upper()]
    except KeyError:
        valid = ", ".join(c.label for c in Confidence)
        raise RuleParseError(
            f"{where}: unknown confidence {conf_raw!r} (expected one of {valid})"
        )
    note = raw.get("note", "")
    if not isinstance(note, str):
        raise RuleParseError(f"{where}: 'note' must be a string")
    predicate = None
    if "predicate" in raw and raw["predicate"] is not None:
        predicate = _parse_predicate(raw["predicate"], where)
    return OpRule(op_type, categories, confidence, note, predicate)


def parse_rule_document(text: str, source: str = "<override>") -> tuple[str, tuple[OpRule, ...]]:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise RuleParseError(f"{source}: not valid YAML: {exc}")
    if not isinstance(doc, dict):
        raise RuleParseError(f"{source}: top level must be a mapping")
    unknown = set(doc) - {"version", "rules"}
    if unknown:
        raise RuleParseError(f"{source}: unknown top-level fields {sorted(unknown)}")
    version = doc.get("version")
    if not isinstance(version, str) or not version:
        raise RuleParseError(f"{source}: top-level 'version' string is required")
    raw_rules = doc.get("rules")
    if not isinstance(raw_rules, list):
        raise RuleParseError(f"{source}: 'rules' must be a list")
    rules: list[OpRule] = []
    seen: set[tuple[str, Optional[AttrPredicate]]] = set()
    for i, raw in enumerate(raw_rules):
        rule = _parse_rule(raw, f"{source}: rules[{i}]")
        if rule.key() in seen:
            raise DuplicateRuleError(
                f"{source}: rules[{i}]: duplicate (op_type, predicate) for {rule.op_type!r}"
            )
        seen.add(rule.key())
        rules.append(rule)
    return version, tuple(rules)


def load_rules(override_path: Optional[Path | str] = None) -> RuleSet:
    """Builtin database, optionally extended/overridden by a rule file.

    An override entry with the same (op_type, predicate) as a builtin
    replaces it; everything else is appended after the builtins.
    """
    base = builtin_rules()
    if override_path is None:
        return base
    path = Path(override_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise RuleParseError(f"{path}: cannot read rule file: {exc}")
    version, overrides = parse_rule_document(text, source=str(path))
    by_key = {r.key(): r for r in overrides}
    merged: list[OpRule] = []
    replaced: set[tuple[str, Optional[AttrPredicate]]] = set()
    for rule in base.rules:
        if rule.key() in by_key:
            merged.append(by_key[rule.key()])
            replaced.add(rule.key())
        else:
            merged.append(rule)
    for rule in overrides:
        if rule.key() not in replaced:
            merged.append(rule)
    return RuleSet(
        rules=tuple(merged),
        version=f"{base.version}+{version}",
        origin=RuleOrigin.FILE_OVERRIDE,
        origin_path=str(path),
    )


def classify_graph_nodes(
    nodes: Iterable[tuple[str, NodeRecord]], rules: RuleSet
) -> list[CategoryHit]:
    """Classify (qualified id, record) pairs, rewriting hit names to the id."""
    hits: list[CategoryHit] = []
    for qid, record in nodes:
        for hit in classify_node(record, rules):
            hits.append(CategoryHit(qid, hit.category, hit.rule_note, hit.confidence))
    return hits
