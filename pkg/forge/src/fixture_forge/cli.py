"""Standalone corpus generator.

    fixture-forge --out-dir corpus/ [--endpoint 127.0.0.1:39000]
                  [--secret-file P] [--profile-file P]

Builds the two defanged attack replicas plus three benign controls and
writes the expected-verdict manifest the scanner's corpus mode consumes.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import ForgeError
from .config import DEFAULT_ENDPOINT, ForgeConfig
from .manifest import write_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fixture-forge", description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--out-dir", required=True, type=Path,
                        help="corpus output directory")
    parser.add_argument("--endpoint", default=DEFAULT_ENDPOINT,
                        help="host:port for rpc fixtures (must be loopback)")
    parser.add_argument("--secret-file", type=Path, default=None,
                        help="exfil target path (must be inside the sandbox subtree)")
    parser.add_argument("--profile-file", type=Path, default=None,
                        help="shell-profile stand-in (must be inside the sandbox subtree)")
    parser.add_argument("--manifest-name", default="manifest.txt")
    return parser


def run(cfg: ForgeConfig, manifest_name: str = "manifest.txt") -> Path:
    cfg.prepare_dirs()
    # heavy import deferred so --help and config errors stay fast
    from .builders import forge_benign, forge_dropper, forge_exfil

    entries = [forge_exfil(cfg), forge_dropper(cfg)]
    entries.extend(forge_benign(cfg))
    manifest_path = write_manifest(entries, Path(cfg.out_dir) / manifest_name)
    for entry in sorted(entries, key=lambda e: e.model_name):
        kinds = ",".join(entry.expected_chain_kinds) or "-"
        print(f"forged {entry.model_name}: expect {entry.expected_verdict} [{kinds}]")
    print(f"manifest: {manifest_path}")
    return manifest_path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = ForgeConfig(
        out_dir=args.out_dir,
        endpoint=args.endpoint,
        secret_file=args.secret_file,
        profile_file=args.profile_file,
    )
    try:
        run(cfg, manifest_name=args.manifest_name)
    except ForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
