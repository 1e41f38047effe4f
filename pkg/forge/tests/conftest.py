import sys
import time

import pytest

from fixture_forge.cli import run
from fixture_forge.config import ForgeConfig

TIMINGS: dict[str, float] = {}


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Forge the full corpus once per session; tests share it."""
    out_dir = tmp_path_factory.mktemp("corpus")
    cfg = ForgeConfig(out_dir=out_dir)
    start = time.perf_counter()
    manifest_path = run(cfg)
    TIMINGS["forge_seconds"] = time.perf_counter() - start
    return cfg, manifest_path


@pytest.fixture(scope="session")
def scanner_cmd():
    return [sys.executable, "-m", "chainscan.cli"]
