"""Post-hoc checks over generated artifacts.

Uses the framework's own proto bindings (independent of the scanner under
evaluation) to walk every serialized graph, confirm the op types the
corpus is supposed to exercise actually serialized, and verify the defang
invariant: all string constants naming hosts are loopback and all
absolute filesystem references stay inside the sandbox subtree.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable, Iterator

from tensorflow.core.protobuf import saved_model_pb2

from . import DefangError, ForgeError
from .config import ForgeConfig, _host_is_loopback

_HOST_PORT = re.compile(r"^[A-Za-z0-9.-]+:[0-9]+$")
_URL = re.compile(r"^(grpc|http|https)://([^/:]+)", re.IGNORECASE)

# runtime placement strings look path-like but are not filesystem paths
_DEVICE_PREFIXES = ("/job:", "/replica:", "/task:", "/device:", "/cpu:", "/gpu:")


def load_saved_model_proto(model_dir: Path) -> saved_model_pb2.SavedModel:
    pb_path = Path(model_dir) / "saved_model.pb"
    sm = saved_model_pb2.SavedModel()
    sm.ParseFromString(pb_path.read_bytes())
    return sm


def iter_node_defs(sm) -> Iterator:
    for mg in sm.meta_graphs:
        yield from mg.graph_def.node
        for fn in mg.graph_def.library.function:
            yield from fn.node_def


def collect_op_types(model_dir: Path) -> set[str]:
    return {node.op for node in iter_node_defs(load_saved_model_proto(model_dir))}


def collect_string_constants(model_dir: Path) -> list[str]:
    out: list[str] = []
    for node in iter_node_defs(load_saved_model_proto(model_dir)):
        for key in sorted(node.attr):
            value = node.attr[key]
            which = value.WhichOneof("value")
            if which == "s":
                out.append(value.s.decode("utf-8", errors="replace"))
            elif which == "list":
                out.extend(b.decode("utf-8", errors="replace") for b in value.list.s)
            elif which == "tensor" and value.tensor.string_val:
                out.extend(
                    b.decode("utf-8", errors="replace") for b in value.tensor.string_val
                )
    return [s for s in out if s]


def assert_required_ops(model_dir: Path, required: Iterable[str]) -> None:
    present = collect_op_types(model_dir)
    missing = sorted(set(required) - present)
    if missing:
        raise ForgeError(
            f"{model_dir}: serializer dropped required op types {missing}; "
            f"present: {sorted(present)}"
        )


def _check_token(token: str, sandbox: str, violations: list[str]) -> None:
    url = _URL.match(token)
    if url:
        if not _host_is_loopback(url.group(2)):
            violations.append(f"non-loopback URL {token!r}")
        return
    if _HOST_PORT.match(token):
        host = token.rpartition(":")[0]
        if not _host_is_loopback(host):
            violations.append(f"non-loopback endpoint {token!r}")
        return
    path = token[len("file://"):] if token.startswith("file://") else token
    if path.startswith("/") and not path.startswith(_DEVICE_PREFIXES):
        normalized = path.rstrip("*").rstrip("/")
        if not (normalized + "/").startswith(sandbox + "/") and normalized != sandbox:
            violations.append(f"filesystem reference outside sandbox {token!r}")


def assert_defanged(model_dir: Path, cfg: ForgeConfig) -> None:
    sandbox = str(cfg.sandbox_dir)
    violations: list[str] = []
    for constant in collect_string_constants(model_dir):
        for token in constant.split():
            _check_token(token, sandbox, violations)
    if violations:
        raise DefangError(f"{model_dir}: defang audit failed: {violations}")
