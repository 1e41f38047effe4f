"""Parse serialized model artifacts into an in-memory graph representation.

Handles SavedModel directories plus standalone graph files (binary or
text protocol-buffer encoding). Nothing here executes model code: the
loader reads bytes under the given path, decodes protos and builds plain
dataclasses. Weight checkpoints under variables/ are ignored.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

from google.protobuf import text_format
from google.protobuf.message import DecodeError

from . import protodefs
from .errors import (
    GraphParseError,
    ModelNotFoundError,
    NoServableMetaGraphError,
    TooLargeError,
    UnrecognizedFormatError,
)

MAX_INPUT_BYTES = 1 << 30  # refuse anything above 1 GiB

SERVE_TAG = "serve"

# Synthetic op types for function parameters / results. Real graphs use
# the same markers when functions are instantiated, so reusing the names
# keeps flattened graphs readable.
ARG_OP = "_Arg"
RETVAL_OP = "_Retval"


class ModelFormat(enum.Enum):
    SAVED_MODEL_DIR = "saved_model_dir"
    GRAPHDEF_BINARY = "graphdef_binary"
    GRAPHDEF_TEXT = "graphdef_text"


class AttrKind(enum.Enum):
    STR = "str"
    INT = "int"
    FLOAT = "float"
    BOOL = "bool"
    STR_LIST = "str_list"
    TENSOR_STRINGS = "tensor_strings"
    FUNC = "func"
    OTHER = "other"


@dataclass(frozen=True)
class AttrValue:
    """One node attribute; string payloads stay raw bytes until used."""

    kind: AttrKind
    value: object

    @staticmethod
    def of_str(data: bytes) -> "AttrValue":
        return AttrValue(AttrKind.STR, bytes(data))

    @staticmethod
    def of_str_list(items: Iterable[bytes]) -> "AttrValue":
        return AttrValue(AttrKind.STR_LIST, tuple(bytes(b) for b in items))

    @staticmethod
    def of_tensor_strings(items: Iterable[bytes]) -> "AttrValue":
        return AttrValue(AttrKind.TENSOR_STRINGS, tuple(bytes(b) for b in items))

    @staticmethod
    def of_func(name: str) -> "AttrValue":
        return AttrValue(AttrKind.FUNC, name)

    def text(self) -> Optional[str]:
        """UTF-8 view of a STR payload, invalid sequences replaced."""
        if self.kind is AttrKind.STR:
            return self.value.decode("utf-8", errors="replace")
        return None

    def texts(self) -> tuple[str, ...]:
        """UTF-8 views of list payloads (STR_LIST or TENSOR_STRINGS)."""
        if self.kind in (AttrKind.STR_LIST, AttrKind.TENSOR_STRINGS):
            return tuple(b.decode("utf-8", errors="replace") for b in self.value)
        return ()


@dataclass(frozen=True)
class InputRef:
    producer: str
    output_index: int = 0


@dataclass(frozen=True)
class NodeRecord:
    name: str
    op_type: str
    data_inputs: tuple[InputRef, ...] = ()
    control_inputs: tuple[str, ...] = ()
    attrs: Mapping[str, AttrValue] = field(default_factory=dict)
    device: Optional[str] = None


@dataclass(frozen=True)
class Graph:
    """Ordered node list; name is empty for the top-level graph."""

    nodes: tuple[NodeRecord, ...]
    name: str = ""

    def node_names(self) -> frozenset[str]:
        return frozenset(n.name for n in self.nodes)

    def node(self, name: str) -> Optional[NodeRecord]:
        for n in self.nodes:
            if n.name == name:
                return n
        return None


@dataclass(frozen=True)
class FunctionTable:
    entries: Mapping[str, Graph] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> tuple[str, ...]:
        return tuple(sorted(self.entries))


def resolve_function(table: FunctionTable, name: str) -> Optional[Graph]:
    """Exact-name lookup; a miss is a value (None), never an error."""
    return table.entries.get(name)


@dataclass(frozen=True)
class ModelBundle:
    format: ModelFormat
    main_graph: Graph
    functions: FunctionTable
    signature_entry_points: tuple[tuple[str, str], ...]
    source_path: str

    def node_count(self) -> int:
        return len(self.main_graph.nodes) + sum(
            len(g.nodes) for g in self.functions.entries.values()
        )


# ---------------------------------------------------------------------------
# wire-syntax helpers


def parse_input(raw: str) -> tuple[Optional[InputRef], Optional[str]]:
    """Decode one node-input string.

    Returns (data_ref, control_name); exactly one side is set. Data refs
    use `producer[:suffix[:index]]`; a trailing integer selects the
    output index, a bare name means index 0. `^name` marks a control
    edge. An empty producer or an empty `name:` suffix is malformed.
    """
    if raw.startswith("^"):
        name = raw[1:]
        if not name:
            raise GraphParseError(f"malformed control input {raw!r}")
        return None, name
    if not raw:
        raise GraphParseError("empty node input")
    parts = raw.split(":")
    if any(p == "" for p in parts):
        raise GraphParseError(f"malformed node input {raw!r}")
    if len(parts) == 1:
        return InputRef(parts[0], 0), None
    index = 0
    last = parts[-1]
    if last.isdigit():
        index = int(last)
    return InputRef(parts[0], index), None


def _attr_from_proto(pb) -> AttrValue:
    which = pb.WhichOneof("value")
    if which == "s":
        return AttrValue.of_str(pb.s)
    if which == "i":
        return AttrValue(AttrKind.INT, int(pb.i))
    if which == "f":
        return AttrValue(AttrKind.FLOAT, float(pb.f))
    if which == "b":
        return AttrValue(AttrKind.BOOL, bool(pb.b))
    if which == "func":
        return AttrValue.of_func(pb.func.name)
    if which == "tensor" and pb.tensor.dtype == protodefs.DT_STRING:
        return AttrValue.of_tensor_strings(pb.tensor.string_val)
    if which == "list":
        lst = pb.list
        if not (lst.i or lst.f or lst.b or lst.type or lst.shape or lst.tensor or lst.func):
            return AttrValue.of_str_list(lst.s)
    return AttrValue(AttrKind.OTHER, pb.SerializeToString(deterministic=True))


def _node_from_proto(pb) -> NodeRecord:
    if not pb.name:
        raise GraphParseError("node with empty name")
    data: list[InputRef] = []
    ctrl: list[str] = []
    for raw in pb.input:
        ref, cname = parse_input(raw)
        if ref is not None:
            data.append(ref)
        else:
            ctrl.append(cname)
    attrs = {k: _attr_from_proto(pb.attr[k]) for k in pb.attr}
    return NodeRecord(
        name=pb.name,
        op_type=pb.op,
        data_inputs=tuple(data),
        control_inputs=tuple(ctrl),
        attrs=attrs,
        device=pb.device or None,
    )


def _validate_edges(graph: Graph) -> None:
    names: set[str] = set()
    for n in graph.nodes:
        if n.name in names:
            raise GraphParseError(
                f"duplicate node name {n.name!r} in graph {graph.name or '<main>'}"
            )
        names.add(n.name)
    for n in graph.nodes:
        for ref in n.data_inputs:
            if ref.producer not in names:
                raise GraphParseError(
                    f"node {n.name!r} reads from unknown node {ref.producer!r}"
                )
        for c in n.control_inputs:
            if c not in names:
                raise GraphParseError(
                    f"node {n.name!r} has unknown control input {c!r}"
                )


def _graph_from_graphdef(pb, name: str = "") -> Graph:
    graph = Graph(nodes=tuple(_node_from_proto(n) for n in pb.node), name=name)
    _validate_edges(graph)
    return graph


def _unique_name(base: str, taken: set[str]) -> str:
    name = base
    k = 1
    while name in taken:
        k += 1
        name = f"{base}_{k}"
    taken.add(name)
    return name


def _graph_from_functiondef(pb) -> Graph:
    """Build a Graph from a FunctionDef.

    Function bodies reference parameters by bare name and other nodes by
    the three-part `node:out:k` syntax; parameters and results have no
    NodeDef of their own, so placeholder records (_Arg / _Retval) are
    synthesized to keep the edge-totality invariant.
    """
    fname = pb.signature.name
    nodes: list[NodeRecord] = []
    taken: set[str] = set()
    for arg in pb.signature.input_arg:
        if not arg.name:
            raise GraphParseError(f"function {fname!r} has unnamed input arg")
        nodes.append(NodeRecord(name=_unique_name(arg.name, taken), op_type=ARG_OP))
    for nd in pb.node_def:
        rec = _node_from_proto(nd)
        if rec.name in taken:
            raise GraphParseError(
                f"function {fname!r} node {rec.name!r} collides with a parameter"
            )
        taken.add(rec.name)
        nodes.append(rec)
    for out_name in sorted(pb.ret):
        ref, _ = parse_input(pb.ret[out_name])
        nodes.append(
            NodeRecord(
                name=_unique_name(f"__retval_{out_name}", taken),
                op_type=RETVAL_OP,
                data_inputs=(ref,),
            )
        )
    for out_name in sorted(pb.control_ret):
        nodes.append(
            NodeRecord(
                name=_unique_name(f"__control_ret_{out_name}", taken),
                op_type=RETVAL_OP,
                control_inputs=(pb.control_ret[out_name],),
            )
        )
    graph = Graph(nodes=tuple(nodes), name=fname)
    _validate_edges(graph)
    return graph


def _functions_from_library(lib) -> FunctionTable:
    entries: dict[str, Graph] = {}
    for fn in lib.function:
        name = fn.signature.name
        if not name:
            raise GraphParseError("library function with empty name")
        if name in entries:
            raise GraphParseError(f"duplicate function name {name!r}")
        entries[name] = _graph_from_functiondef(fn)
    return FunctionTable(entries=entries)


# ---------------------------------------------------------------------------
# format detection and loading


def _read_guarded(path: Path) -> bytes:
    size = path.stat().st_size
    if size > MAX_INPUT_BYTES:
        raise TooLargeError(f"{path}: {size} bytes exceeds the 1 GiB input guard")
    with open(path, "rb") as fh:
        return fh.read()


def _parse_graphdef_binary(data: bytes):
    pb = protodefs.GraphDef()
    try:
        pb.ParseFromString(data)
    except DecodeError as exc:
        raise GraphParseError(f"binary graph parse failed: {exc}") from exc
    return pb


def _parse_graphdef_text(data: bytes):
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise GraphParseError(f"text graph is not UTF-8: {exc}") from exc
    pb = protodefs.GraphDef()
    try:
        text_format.Parse(text, pb)
    except text_format.ParseError as exc:
        raise GraphParseError(f"text graph parse failed: {exc}") from exc
    return pb


def _graphdef_has_content(pb) -> bool:
    return bool(len(pb.node) or pb.HasField("library") or pb.HasField("versions") or pb.version)


def detect_format(path: os.PathLike | str) -> ModelFormat:
    """Classify an input path by content; raises if nothing matches."""
    p = Path(path)
    if not p.exists():
        raise ModelNotFoundError(f"{p}: no such file or directory")
    if p.is_dir():
        if (p / "saved_model.pb").is_file():
            return ModelFormat.SAVED_MODEL_DIR
        raise UnrecognizedFormatError(f"{p}: directory without saved_model.pb")
    data = _read_guarded(p)
    if not data.strip():
        raise UnrecognizedFormatError(f"{p}: empty file")
    try:
        pb = _parse_graphdef_binary(data)
        if _graphdef_has_content(pb):
            return ModelFormat.GRAPHDEF_BINARY
    except GraphParseError:
        pass
    try:
        pb = _parse_graphdef_text(data)
        if _graphdef_has_content(pb):
            return ModelFormat.GRAPHDEF_TEXT
    except GraphParseError:
        pass
    raise UnrecognizedFormatError(f"{p}: not a SavedModel directory or graph file")


def _select_meta_graph(saved_model):
    metas = list(saved_model.meta_graphs)
    for mg in metas:
        if SERVE_TAG in mg.meta_info_def.tags:
            return mg
    if len(metas) == 1:
        return metas[0]
    raise NoServableMetaGraphError(
        f"{len(metas)} meta-graphs present and none tagged {SERVE_TAG!r}"
    )


def _entry_points(meta, main_graph: Graph, functions: FunctionTable):
    """Map each signature to the graph construct that backs it.

    The backing name is the producer node of the signature's first
    output (sorted for determinism); it must resolve either to a main
    graph node or to a library function.
    """
    points: list[tuple[str, str]] = []
    names = main_graph.node_names()
    for sig_name in sorted(meta.signature_def):
        sig = meta.signature_def[sig_name]
        if not sig.outputs:
            continue
        first_out = sig.outputs[sorted(sig.outputs)[0]]
        if not first_out.name:
            continue
        ref, _ = parse_input(first_out.name)
        target = ref.producer
        if target not in names and resolve_function(functions, target) is None:
            raise GraphParseError(
                f"signature {sig_name!r} references unknown node or function {target!r}"
            )
        points.append((sig_name, target))
    return tuple(points)


def load_saved_model(path: os.PathLike | str) -> ModelBundle:
    """Parse a SavedModel directory; checkpoints under variables/ are skipped."""
    p = Path(path)
    pb_path = p / "saved_model.pb"
    if not pb_path.is_file():
        raise ModelNotFoundError(f"{pb_path}: missing saved_model.pb")
    data = _read_guarded(pb_path)
    saved = protodefs.SavedModel()
    try:
        saved.ParseFromString(data)
    except DecodeError as exc:
        raise GraphParseError(f"saved_model.pb parse failed: {exc}") from exc
    if not saved.meta_graphs:
        raise NoServableMetaGraphError("saved_model.pb contains no meta-graphs")
    meta = _select_meta_graph(saved)
    main_graph = _graph_from_graphdef(meta.graph_def)
    functions = _functions_from_library(meta.graph_def.library)
    entry_points = _entry_points(meta, main_graph, functions)
    return ModelBundle(
        format=ModelFormat.SAVED_MODEL_DIR,
        main_graph=main_graph,
        functions=functions,
        signature_entry_points=entry_points,
        source_path=str(p),
    )


def load_graphdef(path: os.PathLike | str) -> ModelBundle:
    """Parse a standalone graph file (binary or text encoding)."""
    p = Path(path)
    fmt = detect_format(p)
    data = _read_guarded(p)
    if fmt is ModelFormat.GRAPHDEF_BINARY:
        pb = _parse_graphdef_binary(data)
    elif fmt is ModelFormat.GRAPHDEF_TEXT:
        pb = _parse_graphdef_text(data)
    else:
        raise UnrecognizedFormatError(f"{p}: not a standalone graph file")
    main_graph = _graph_from_graphdef(pb)
    functions = _functions_from_library(pb.library)
    return ModelBundle(
        format=fmt,
        main_graph=main_graph,
        functions=functions,
        signature_entry_points=(),
        source_path=str(p),
    )


def load_model(path: os.PathLike | str) -> ModelBundle:
    """Detect the input format and dispatch to the right parser."""
    fmt = detect_format(path)
    if fmt is ModelFormat.SAVED_MODEL_DIR:
        return load_saved_model(path)
    return load_graphdef(path)
