"""Interprocedural dataflow over a parsed model bundle.

The bundle's call structure is flattened into one qualified-id graph,
string constants near flagged nodes are harvested as evidence, taint is
propagated from source-category nodes to a fixpoint, and source→sink
pairs are reported as attack chains with a shortest witness path.

Every op conducts taint: attackers choose the ops, so there are no
sanitizers in this threat model, and control edges conduct too (payloads
are known to move through control dependencies plus identity ops).
"""

from __future__ import annotations

import enum
import re
from collections import deque
from dataclasses import dataclass, field
from posixpath import basename as _posix_basename
from typing import Sequence

from .errors import UnknownNodeError
from .loader import (
    ARG_OP,
    AttrKind,
    Graph,
    ModelBundle,
    NodeRecord,
    RETVAL_OP,
    resolve_function,
)
from .taxonomy import CategoryHit, CoreFunction

MAX_INLINE_DEPTH = 16

ROOT_PATH = "main"

# ops whose function-valued attrs are invoked rather than merely referenced
CALL_OPS = frozenset(
    {"PartitionedCall", "StatefulPartitionedCall", "While", "StatelessWhile", "If", "StatelessIf"}
)

SOURCE_CATEGORIES = frozenset(
    {CoreFunction.FILE_READ, CoreFunction.NETWORK_RECEIVE, CoreFunction.ENUMERATION}
)
SINK_CATEGORIES = frozenset(
    {CoreFunction.FILE_WRITE, CoreFunction.NETWORK_SEND, CoreFunction.OPAQUE_EXEC}
)

EVIDENCE_CONST_RADIUS = 3  # backward data-edge hops searched for string consts


class EdgeKind(enum.Enum):
    DATA = "data"
    CONTROL = "control"
    CALL_ARG = "call_arg"
    CALL_RETURN = "call_return"


@dataclass(frozen=True)
class FlatEdge:
    src: str
    dst: str
    kind: EdgeKind


@dataclass(frozen=True)
class CallSite:
    caller: str
    function_name: str
    depth: int


@dataclass
class FlatGraph:
    nodes: list[tuple[str, NodeRecord]] = field(default_factory=list)
    edges: list[FlatEdge] = field(default_factory=list)
    call_sites: list[CallSite] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._index: dict[str, NodeRecord] = {}
        self._succ: dict[str, list[str]] = {}
        self._pred_data: dict[str, list[str]] = {}
        for qid, rec in self.nodes:
            self._register(qid, rec)
        for e in self.edges:
            self._wire(e)

    def _register(self, qid: str, rec: NodeRecord) -> None:
        if qid in self._index:
            raise ValueError(f"duplicate qualified id {qid!r}")
        self._index[qid] = rec
        self._succ[qid] = []
        self._pred_data[qid] = []

    def _wire(self, e: FlatEdge) -> None:
        if e.src not in self._index or e.dst not in self._index:
            raise ValueError(f"edge endpoint missing: {e}")
        self._succ[e.src].append(e.dst)
        if e.kind is EdgeKind.DATA:
            self._pred_data[e.dst].append(e.src)

    def add_node(self, qid: str, rec: NodeRecord) -> None:
        self.nodes.append((qid, rec))
        self._register(qid, rec)

    def add_edge(self, src: str, dst: str, kind: EdgeKind) -> None:
        e = FlatEdge(src, dst, kind)
        self.edges.append(e)
        self._wire(e)

    def has_node(self, qid: str) -> bool:
        return qid in self._index

    def record(self, qid: str) -> NodeRecord:
        return self._index[qid]

    def successors(self, qid: str) -> Sequence[str]:
        return self._succ.get(qid, ())

    def data_predecessors(self, qid: str) -> Sequence[str]:
        return self._pred_data.get(qid, ())

    def has_edge(self, src: str, dst: str) -> bool:
        return dst in self._succ.get(src, ())


def _func_attr_names(rec: NodeRecord) -> list[str]:
    return sorted(k for k, v in rec.attrs.items() if v.kind is AttrKind.FUNC)


def _is_call_node(rec: NodeRecord) -> bool:
    return rec.op_type in CALL_OPS or bool(_func_attr_names(rec))


class _Flattener:
    def __init__(self, bundle: ModelBundle, max_depth: int):
        self.bundle = bundle
        self.max_depth = max_depth
        self.flat = FlatGraph()
        self.instance_counts: dict[str, int] = {}
        self.instantiated: set[str] = set()

    def instance_path(self, fname: str) -> str:
        n = self.instance_counts.get(fname, 0) + 1
        self.instance_counts[fname] = n
        self.instantiated.add(fname)
        return fname if n == 1 else f"{fname}@{n}"

    def instantiate(self, graph: Graph, path: str, depth: int, call_path: tuple[str, ...]) -> None:
        qid = lambda name: f"{path}/{name}"
        for rec in graph.nodes:
            self.flat.add_node(qid(rec.name), rec)
        for rec in graph.nodes:
            me = qid(rec.name)
            for ref in rec.data_inputs:
                self.flat.add_edge(qid(ref.producer), me, EdgeKind.DATA)
            for ctrl in rec.control_inputs:
                self.flat.add_edge(qid(ctrl), me, EdgeKind.CONTROL)
        for rec in graph.nodes:
            if _is_call_node(rec):
                self.expand_calls(graph, rec, qid(rec.name), depth, call_path)

    def expand_calls(
        self, graph: Graph, rec: NodeRecord, call_qid: str, depth: int, call_path: tuple[str, ...]
    ) -> None:
        for attr_name in _func_attr_names(rec):
            fname = rec.attrs[attr_name].value
            if not fname:
                continue
            if fname in call_path:
                self.flat.warnings.append(
                    f"recursive call to {fname!r} at {call_qid} not expanded"
                )
                continue
            if depth + 1 > self.max_depth:
                self.flat.warnings.append(
                    f"call depth limit {self.max_depth} reached at {call_qid}; "
                    f"{fname!r} treated as opaque"
                )
                continue
            callee = resolve_function(self.bundle.functions, fname)
            if callee is None:
                self.flat.warnings.append(
                    f"unresolved function {fname!r} at {call_qid}; treated as opaque"
                )
                continue
            child = self.instance_path(fname)
            self.instantiate(callee, child, depth + 1, call_path + (fname,))
            self.flat.call_sites.append(CallSite(call_qid, fname, depth + 1))
            params = [f"{child}/{n.name}" for n in callee.nodes if n.op_type == ARG_OP]
            rets = [f"{child}/{n.name}" for n in callee.nodes if n.op_type == RETVAL_OP]
            producers = [
                f"{_caller_path(call_qid)}/{ref.producer}" for ref in rec.data_inputs
            ]
            if producers and params:
                if len(producers) == len(params):
                    pairs = zip(producers, params)
                else:
                    pairs = ((p, a) for p in producers for a in params)
                for producer, param in pairs:
                    self.flat.add_edge(producer, param, EdgeKind.CALL_ARG)
            for ret in rets:
                self.flat.add_edge(ret, call_qid, EdgeKind.CALL_RETURN)


def _caller_path(qid: str) -> str:
    return qid.rsplit("/", 1)[0]


def flatten(bundle: ModelBundle, max_depth: int = MAX_INLINE_DEPTH) -> FlatGraph:
    """Inline the call structure into one qualified-id graph.

    Qualified ids are `<instance path>/<node name>` with `main` as the
    root path; repeated instantiations of one function get an `@N`
    suffix. Recursion and the depth bound stop expansion, leaving the
    call node as an opaque pass-through with a recorded warning.
    """
    f = _Flattener(bundle, max_depth)
    f.instantiate(bundle.main_graph, ROOT_PATH, 0, ())
    for _, fname in sorted(bundle.signature_entry_points):
        if fname in f.instantiated:
            continue
        callee = resolve_function(bundle.functions, fname)
        if callee is not None:
            f.instantiate(callee, f.instance_path(fname), 0, (fname,))
    return f.flat


# ---------------------------------------------------------------------------
# string evidence


class StringInterpretation(enum.Enum):
    REMOTE_ENDPOINT = "remote_endpoint"
    FILESYSTEM_PATH = "filesystem_path"
    GLOB_PATTERN = "glob_pattern"
    PERSISTENCE_PATH = "persistence_path"
    OPAQUE = "opaque"


@dataclass(frozen=True)
class EvidenceString:
    value: str
    origin_node: str
    interpretation: StringInterpretation


_HOST_PORT = re.compile(r"^[a-zA-Z0-9.-]+:[0-9]+$")
_REMOTE_SCHEME = re.compile(r"^(grpc|http|https)://", re.IGNORECASE)
_DRIVE_PREFIX = re.compile(r"^[A-Za-z]:[\\/]")

PERSISTENCE_BASENAMES = frozenset(
    {
        ".bashrc",
        ".bash_profile",
        ".profile",
        ".zshrc",
        ".zprofile",
        "authorized_keys",
        "crontab",
    }
)

_PERSISTENCE_LOCATIONS = (
    "/etc/cron",
    "/etc/init",
    "/etc/rc.local",
    "/etc/systemd",
    "/etc/profile.d",
    "autostart",
    "launchagents",
    "launchdaemons",
    "start menu\\programs\\startup",
    "\\currentversion\\run",
)


def _strip_file_scheme(value: str) -> str:
    return value[len("file://"):] if value.startswith("file://") else value


def classify_string(value: str) -> StringInterpretation:
    """Assign the analyst-facing interpretation of one harvested constant."""
    if _HOST_PORT.match(value) or _REMOTE_SCHEME.match(value):
        return StringInterpretation.REMOTE_ENDPOINT
    if "*" in value or "?" in value:
        return StringInterpretation.GLOB_PATTERN
    path = _strip_file_scheme(value)
    lowered = path.lower().replace("\\", "/")
    base = _posix_basename(lowered.rstrip("/"))
    if base in PERSISTENCE_BASENAMES or any(
        loc.replace("\\", "/") in lowered for loc in _PERSISTENCE_LOCATIONS
    ):
        return StringInterpretation.PERSISTENCE_PATH
    if (
        path.startswith("/")
        or path.startswith("~")
        or value.startswith("file://")
        or _DRIVE_PREFIX.match(path)
    ):
        return StringInterpretation.FILESYSTEM_PATH
    return StringInterpretation.OPAQUE


def _own_strings(rec: NodeRecord) -> list[str]:
    out: list[str] = []
    for key in sorted(rec.attrs):
        attr = rec.attrs[key]
        if attr.kind is AttrKind.STR:
            out.append(attr.text())
        elif attr.kind is AttrKind.STR_LIST:
            out.extend(attr.texts())
    return [s for s in out if s]


def _const_strings_behind(flat: FlatGraph, qid: str) -> list[str]:
    """String payloads of Const nodes within the backward data radius."""
    out: list[str] = []
    seen = {qid}
    frontier = [qid]
    for _ in range(EVIDENCE_CONST_RADIUS):
        nxt: list[str] = []
        for node in frontier:
            for pred in flat.data_predecessors(node):
                if pred in seen:
                    continue
                seen.add(pred)
                nxt.append(pred)
                rec = flat.record(pred)
                if rec.op_type == "Const":
                    for key in sorted(rec.attrs):
                        attr = rec.attrs[key]
                        if attr.kind is AttrKind.TENSOR_STRINGS:
                            out.extend(t for t in attr.texts() if t)
        frontier = nxt
    return out


def extract_string_evidence(
    flat: FlatGraph, hits: Sequence[CategoryHit]
) -> list[EvidenceString]:
    """Harvest and classify string constants around every flagged node."""
    evidence: dict[tuple[str, str], EvidenceString] = {}
    hit_nodes: list[str] = []
    for h in hits:
        if h.node_name not in hit_nodes:
            hit_nodes.append(h.node_name)
    for qid in hit_nodes:
        rec = flat.record(qid)
        for value in _own_strings(rec) + _const_strings_behind(flat, qid):
            key = (qid, value)
            if key not in evidence:
                evidence[key] = EvidenceString(value, qid, classify_string(value))
    return sorted(evidence.values(), key=lambda e: (e.origin_node, e.value))


# ---------------------------------------------------------------------------
# taint propagation


@dataclass(frozen=True)
class TaintLabel:
    source: str
    category: CoreFunction


@dataclass
class TaintState:
    tainted: dict[str, set[TaintLabel]]
    hits: list[CategoryHit]


def propagate_taint(flat: FlatGraph, hits: Sequence[CategoryHit]) -> TaintState:
    """Forward fixpoint from every source-category hit over all edge kinds.

    The worklist admits each (node, label) pair at most once, so cyclic
    graphs (loops, back-edges) terminate.
    """
    for h in hits:
        if not flat.has_node(h.node_name):
            raise UnknownNodeError(f"hit references unknown node {h.node_name!r}")
    tainted: dict[str, set[TaintLabel]] = {}
    work: deque[tuple[str, TaintLabel]] = deque()

    def mark(qid: str, label: TaintLabel) -> None:
        labels = tainted.setdefault(qid, set())
        if label not in labels:
            labels.add(label)
            work.append((qid, label))

    for h in hits:
        if h.category in SOURCE_CATEGORIES:
            mark(h.node_name, TaintLabel(h.node_name, h.category))
    while work:
        qid, label = work.popleft()
        for succ in flat.successors(qid):
            mark(succ, label)
    return TaintState(tainted=tainted, hits=list(hits))


# ---------------------------------------------------------------------------
# chain discovery


class ChainKind(enum.Enum):
    EXFILTRATION = "exfiltration"
    DROPPER = "dropper"
    REMOTE_TO_EXEC = "remote_to_exec"
    READ_TO_PERSISTENCE = "read_to_persistence"
    GENERIC = "generic"


_KIND_ORDER = {k: i for i, k in enumerate(ChainKind)}

ENUMERATION_ASSISTED = "enumeration_assisted"


@dataclass(frozen=True)
class Chain:
    kind: ChainKind
    source: str
    source_category: CoreFunction
    sink: str
    sink_category: CoreFunction
    path: tuple[str, ...]
    evidence: tuple[EvidenceString, ...]
    annotations: tuple[str, ...] = ()

    def named_kind(self) -> bool:
        return self.kind is not ChainKind.GENERIC


def chain_kind(
    source_cat: CoreFunction, sink_cat: CoreFunction, sink_has_persistence: bool
) -> ChainKind:
    if sink_cat is CoreFunction.NETWORK_SEND and source_cat in (
        CoreFunction.FILE_READ,
        CoreFunction.ENUMERATION,
    ):
        return ChainKind.EXFILTRATION
    if source_cat is CoreFunction.NETWORK_RECEIVE and sink_cat is CoreFunction.FILE_WRITE:
        return ChainKind.DROPPER
    if source_cat is CoreFunction.NETWORK_RECEIVE and sink_cat is CoreFunction.OPAQUE_EXEC:
        return ChainKind.REMOTE_TO_EXEC
    if (
        source_cat is CoreFunction.FILE_READ
        and sink_cat is CoreFunction.FILE_WRITE
        and sink_has_persistence
    ):
        return ChainKind.READ_TO_PERSISTENCE
    return ChainKind.GENERIC


def _shortest_witness(flat: FlatGraph, source: str, sink: str, allowed) -> tuple[str, ...]:
    if source == sink:
        return (source,)
    prev: dict[str, str] = {source: source}
    frontier = deque([source])
    while frontier:
        node = frontier.popleft()
        for succ in flat.successors(node):
            if succ in prev or not allowed(succ):
                continue
            prev[succ] = node
            if succ == sink:
                path = [sink]
                while path[-1] != source:
                    path.append(prev[path[-1]])
                return tuple(reversed(path))
            frontier.append(succ)
    raise UnknownNodeError(f"no witness path from {source!r} to {sink!r} despite taint")


def _validate_witness(flat: FlatGraph, chain: Chain) -> None:
    assert chain.path[0] == chain.source and chain.path[-1] == chain.sink
    for a, b in zip(chain.path, chain.path[1:]):
        if not flat.has_edge(a, b):
            raise UnknownNodeError(f"witness path broken between {a!r} and {b!r}")


def find_chains(
    flat: FlatGraph,
    taint: TaintState,
    evidence: Sequence[EvidenceString] = (),
) -> list[Chain]:
    """Emit one chain per (tainting source, sink hit) pair.

    The witness is a shortest path restricted to nodes carrying that
    source's taint; chains whose path crosses an enumeration hit are
    annotated enumeration_assisted. Output is ordered by (kind, source,
    sink) for deterministic reports.
    """
    persistence_sinks = {
        e.origin_node
        for e in evidence
        if e.interpretation is StringInterpretation.PERSISTENCE_PATH
    }
    enum_nodes = {
        h.node_name for h in taint.hits if h.category is CoreFunction.ENUMERATION
    }
    by_origin: dict[str, list[EvidenceString]] = {}
    for e in evidence:
        by_origin.setdefault(e.origin_node, []).append(e)
    reach: dict[TaintLabel, set[str]] = {}
    for qid, labels in taint.tainted.items():
        for label in labels:
            reach.setdefault(label, set()).add(qid)

    chains: list[Chain] = []
    for h in taint.hits:
        if h.category not in SINK_CATEGORIES:
            continue
        for label in sorted(
            taint.tainted.get(h.node_name, ()), key=lambda l: (l.source, l.category.value)
        ):
            path = _shortest_witness(
                flat, label.source, h.node_name, reach[label].__contains__
            )
            kind = chain_kind(label.category, h.category, h.node_name in persistence_sinks)
            annotations = ()
            if any(n in enum_nodes for n in path):
                annotations = (ENUMERATION_ASSISTED,)
            path_evidence = tuple(
                e for qid in path for e in by_origin.get(qid, ())
            )
            chain = Chain(
                kind=kind,
                source=label.source,
                source_category=label.category,
                sink=h.node_name,
                sink_category=h.category,
                path=path,
                evidence=path_evidence,
                annotations=annotations,
            )
            _validate_witness(flat, chain)
            chains.append(chain)
    chains.sort(
        key=lambda c: (
            _KIND_ORDER[c.kind],
            c.source,
            c.sink,
            c.source_category.value,
            c.sink_category.value,
        )
    )
    return chains
