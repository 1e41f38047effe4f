#!/usr/bin/env python3
"""Regenerate the checked-in descriptor set from the vendored .proto files.

Run after editing anything under protos/:

    python scripts/gen_protos.py

The scanner builds its message classes at import time from the descriptor
set (src/chainscan/data/graph_protos.dset), so no protoc is needed at
install or run time. Any protoc >= 3.12 can produce the set; the
FileDescriptorSet wire format itself is stable across protoc releases.
"""

import subprocess
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
PROTO_DIR = REPO / "protos"
OUT = REPO / "src" / "chainscan" / "data" / "graph_protos.dset"


def main() -> int:
    protos = sorted(PROTO_DIR.glob("*.proto"))
    if not protos:
        print("no .proto files found under protos/", file=sys.stderr)
        return 1
    OUT.parent.mkdir(parents=True, exist_ok=True)
    cmd = [
        "protoc",
        f"-I{PROTO_DIR}",
        f"--descriptor_set_out={OUT}",
        "--include_imports",
        *[str(p) for p in protos],
    ]
    subprocess.run(cmd, check=True)
    print(f"wrote {OUT} ({OUT.stat().st_size} bytes from {len(protos)} files)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
