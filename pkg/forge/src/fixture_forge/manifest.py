"""Expected-verdict manifest in the format the scanner's corpus mode reads:
one `name verdict kinds` line per model, '#' comments, '-' for no kinds."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import ForgeError

VALID_VERDICTS = ("clean", "informational", "suspicious", "malicious")


@dataclass(frozen=True)
class ManifestEntry:
    model_name: str
    expected_verdict: str
    expected_chain_kinds: tuple[str, ...] = ()
    notes: str = ""

    def __post_init__(self):
        if not self.model_name or any(c.isspace() for c in self.model_name):
            raise ForgeError(f"bad model name {self.model_name!r}")
        if self.expected_verdict not in VALID_VERDICTS:
            raise ForgeError(
                f"{self.model_name}: verdict {self.expected_verdict!r} not in {VALID_VERDICTS}"
            )


def render_manifest(entries: Sequence[ManifestEntry]) -> str:
    names = [e.model_name for e in entries]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise ForgeError(f"duplicate model names in manifest: {sorted(dupes)}")
    width = max([len(n) for n in names], default=10)
    lines = ["# model  expected-verdict  expected-chain-kinds"]
    for e in sorted(entries, key=lambda e: e.model_name):
        kinds = ",".join(e.expected_chain_kinds) if e.expected_chain_kinds else "-"
        line = f"{e.model_name:<{width}}  {e.expected_verdict:<13}  {kinds}"
        if e.notes:
            line += f"  # {e.notes}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def write_manifest(entries: Iterable[ManifestEntry], path: Path) -> Path:
    path = Path(path)
    path.write_text(render_manifest(list(entries)), encoding="utf-8")
    return path
