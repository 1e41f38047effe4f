"""Command-line entry point: scan one model, scan a corpus against a
manifest, list rules, or run a scan plus LLM triage.

Exit codes: 0 = verdict below the fail threshold, 1 = at/above it (or a
corpus mismatch), 2 = usage, input or rule-file errors. Machine formats
(json/sarif) own stdout exclusively; diagnostics go to stderr.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import click

from . import __version__
from .errors import ScanError, TriageError, DigestOverflowError
from .pipeline import ScanConfig, ScanResult, scan_path
from .report import OutputFormat, ScanReport, Severity, render
from .taxonomy import load_rules
from .triage import DEFAULT_TIMEOUT_SECS, run_triage

_FAIL_THRESHOLDS = {
    "informational": Severity.INFORMATIONAL,
    "suspicious": Severity.SUSPICIOUS,
    "malicious": Severity.MALICIOUS,
}

_CORPUS_WORKERS = 4


def exit_code_for(verdict: Severity, threshold: Severity) -> int:
    return 1 if verdict >= threshold else 0


def _emit(data: bytes, out: Optional[str]) -> None:
    if out:
        Path(out).write_bytes(data)
        click.echo(f"wrote {out}", err=True)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def _fail(message: str) -> "click.exceptions.Exit":
    click.echo(f"error: {message}", err=True)
    return click.exceptions.Exit(2)


@click.group()
@click.version_option(version=__version__, prog_name="chainscan")
def main() -> None:
    """Static attack-chain scanner for serialized deep-learning models."""


def _scan_options(fn):
    fn = click.option(
        "--format", "fmt", type=click.Choice(["text", "json", "sarif"]),
        default="text", show_default=True, help="Report rendering."
    )(fn)
    fn = click.option(
        "--rules", "rules_path", type=click.Path(), default=None,
        help="Rule override file applied on top of the builtin database."
    )(fn)
    fn = click.option(
        "--fail-on", "fail_on", type=click.Choice(sorted(_FAIL_THRESHOLDS)),
        default="suspicious", show_default=True,
        help="Lowest verdict that exits 1."
    )(fn)
    fn = click.option(
        "--max-depth", "max_depth", type=int, default=16, show_default=True,
        help="Function-call inlining depth limit."
    )(fn)
    fn = click.option(
        "--out", "out", type=click.Path(), default=None,
        help="Write the report here instead of stdout."
    )(fn)
    return fn


def _run_scan(path: str, rules_path: Optional[str], max_depth: int) -> ScanResult:
    try:
        return scan_path(path, ScanConfig(rules_path=rules_path, max_depth=max_depth))
    except ScanError as exc:
        raise _fail(str(exc))


def _finish(report: ScanReport, fmt: str, out: Optional[str], fail_on: str) -> None:
    _emit(render(report, OutputFormat(fmt)), out)
    raise click.exceptions.Exit(
        exit_code_for(report.verdict, _FAIL_THRESHOLDS[fail_on])
    )


@main.command()
@click.argument("path", type=click.Path())
@_scan_options
def scan(path: str, fmt: str, rules_path: Optional[str], fail_on: str,
         max_depth: int, out: Optional[str]) -> None:
    """Scan one model (SavedModel directory or graph file)."""
    result = _run_scan(path, rules_path, max_depth)
    _finish(result.report, fmt, out, fail_on)


@main.command()
@click.argument("path", type=click.Path())
@_scan_options
@click.option("--endpoint", required=True, help="Chat-completion endpoint URL.")
@click.option("--model", "model_name", required=True, help="Model name sent to the endpoint.")
@click.option("--api-key-env", "api_key_env", default="CHAINSCAN_API_KEY",
              show_default=True, help="Environment variable holding the API key.")
@click.option("--timeout-secs", "timeout_secs", type=float,
              default=DEFAULT_TIMEOUT_SECS, show_default=True)
def triage(path: str, fmt: str, rules_path: Optional[str], fail_on: str,
           max_depth: int, out: Optional[str], endpoint: str, model_name: str,
           api_key_env: str, timeout_secs: float) -> None:
    """Scan one model, then ask an LLM endpoint for a second opinion.

    Triage is advisory: transport failures become report warnings and the
    static verdict stands; a triage verdict can only raise the outcome.
    """
    result = _run_scan(path, rules_path, max_depth)
    try:
        report = run_triage(
            result,
            endpoint_url=endpoint,
            model_name=model_name,
            api_key_ref=api_key_env,
            timeout=timeout_secs,
        )
    except (TriageError, DigestOverflowError) as exc:
        warning = f"triage unavailable: {exc}"
        click.echo(warning, err=True)
        report = replace(result.report, warnings=result.report.warnings + (warning,))
    _finish(report, fmt, out, fail_on)


@main.group()
def rules() -> None:
    """Inspect the rule database."""


@rules.command("list")
@click.option("--rules", "rules_path", type=click.Path(), default=None,
              help="Rule override file applied on top of the builtin database.")
def rules_list(rules_path: Optional[str]) -> None:
    """Print every active rule in deterministic order."""
    try:
        ruleset = load_rules(rules_path)
    except ScanError as exc:
        raise _fail(str(exc))
    click.echo(f"# rules version: {ruleset.version} ({len(ruleset.rules)} rules)")
    for rule in ruleset.rules:
        cats = ",".join(c.value for c in rule.categories)
        gate = f" if {rule.predicate.summary()}" if rule.predicate else ""
        click.echo(
            f"{rule.op_type}  {cats}  {rule.confidence.label}{gate}  # {rule.note}"
        )
    raise click.exceptions.Exit(0)


# ---------------------------------------------------------------------------
# corpus mode


@dataclass(frozen=True)
class ManifestEntry:
    model_name: str
    expected_verdict: str
    expected_chain_kinds: tuple[str, ...]


_VALID_VERDICTS = {"clean", "informational", "suspicious", "malicious"}


def parse_manifest(text: str, source: str = "<manifest>") -> dict[str, ManifestEntry]:
    """Parse the corpus manifest: one `name verdict [kind,kind]` per line,
    '#' comments, '-' for no expected kinds."""
    entries: dict[str, ManifestEntry] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        cols = line.split()
        if len(cols) not in (2, 3):
            raise ScanError(
                f"{source}:{lineno}: expected 'name verdict [kinds]', got {raw!r}"
            )
        name, verdict = cols[0], cols[1].lower()
        if verdict not in _VALID_VERDICTS:
            raise ScanError(
                f"{source}:{lineno}: unknown verdict {cols[1]!r} "
                f"(expected one of {sorted(_VALID_VERDICTS)})"
            )
        kinds: tuple[str, ...] = ()
        if len(cols) == 3 and cols[2] != "-":
            kinds = tuple(k.strip().lower() for k in cols[2].split(",") if k.strip())
        if name in entries:
            raise ScanError(f"{source}:{lineno}: duplicate model {name!r}")
        entries[name] = ManifestEntry(name, verdict, kinds)
    return entries


@dataclass(frozen=True)
class _CorpusRow:
    name: str
    actual: str
    chain_kinds: tuple[str, ...]
    expected: Optional[str]
    expected_kinds: tuple[str, ...]
    error: Optional[str]

    def ok(self) -> bool:
        if self.error is not None:
            return False
        if self.expected is None:
            return True
        if self.actual != self.expected:
            return False
        return set(self.expected_kinds) <= set(self.chain_kinds)


def _scan_corpus_model(path: Path, rules_path: Optional[str], max_depth: int,
                       expected: Optional[ManifestEntry]) -> _CorpusRow:
    try:
        result = scan_path(path, ScanConfig(rules_path=rules_path, max_depth=max_depth))
    except ScanError as exc:
        return _CorpusRow(
            name=path.name, actual="error", chain_kinds=(),
            expected=expected.expected_verdict if expected else None,
            expected_kinds=expected.expected_chain_kinds if expected else (),
            error=str(exc),
        )
    kinds = tuple(sorted({c.kind.value for c in result.chains}))
    return _CorpusRow(
        name=path.name,
        actual=result.report.verdict.label,
        chain_kinds=kinds,
        expected=expected.expected_verdict if expected else None,
        expected_kinds=expected.expected_chain_kinds if expected else (),
        error=None,
    )


def _corpus_candidates(root: Path) -> list[Path]:
    out = []
    for child in sorted(root.iterdir(), key=lambda p: p.name):
        if child.name.startswith("."):
            continue
        if child.is_dir() or child.suffix in (".pb", ".pbtxt", ".pbtext", ".graphdef"):
            out.append(child)
    return out


@main.command()
@click.argument("corpus_dir", metavar="DIR", type=click.Path())
@click.option("--manifest", "manifest_path", type=click.Path(), default=None,
              help="Expected-verdict manifest; exit 0 only if every model matches.")
@click.option("--format", "fmt", type=click.Choice(["text", "json"]),
              default="text", show_default=True)
@click.option("--rules", "rules_path", type=click.Path(), default=None)
@click.option("--max-depth", "max_depth", type=int, default=16, show_default=True)
def corpus(corpus_dir: str, manifest_path: Optional[str], fmt: str,
           rules_path: Optional[str], max_depth: int) -> None:
    """Scan every model under DIR, optionally checking a manifest.

    Models are scanned concurrently; output is ordered by model name, so
    the bytes are independent of scheduling.
    """
    root = Path(corpus_dir)
    if not root.is_dir():
        raise _fail(f"{root}: not a directory")
    manifest: Optional[dict[str, ManifestEntry]] = None
    if manifest_path is not None:
        try:
            manifest = parse_manifest(
                Path(manifest_path).read_text(encoding="utf-8"), source=manifest_path
            )
        except (OSError, ScanError) as exc:
            raise _fail(f"manifest: {exc}")
    if manifest is not None:
        targets = [(root / name, manifest[name]) for name in sorted(manifest)]
    else:
        targets = [(p, None) for p in _corpus_candidates(root)]
    rows: list[_CorpusRow] = []
    if targets:
        with ThreadPoolExecutor(max_workers=min(_CORPUS_WORKERS, len(targets))) as pool:
            rows = list(
                pool.map(
                    lambda t: _scan_corpus_model(t[0], rules_path, max_depth, t[1]),
                    targets,
                )
            )
    rows.sort(key=lambda r: r.name)
    all_ok = all(r.ok() for r in rows)
    if fmt == "json":
        payload = {
            "all_match": all_ok,
            "models": [
                {
                    "name": r.name,
                    "verdict": r.actual,
                    "chain_kinds": list(r.chain_kinds),
                    "expected_verdict": r.expected,
                    "expected_chain_kinds": list(r.expected_kinds),
                    "status": "ok" if r.ok() else "mismatch",
                    "error": r.error,
                }
                for r in rows
            ],
        }
        sys.stdout.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    else:
        width = max([len(r.name) for r in rows], default=8)
        for r in rows:
            expected = r.expected or "-"
            kinds = ",".join(r.chain_kinds) or "-"
            status = "ok" if r.ok() else "MISMATCH"
            line = f"{r.name:<{width}}  {expected:<13}  {r.actual:<13}  {kinds:<30}  {status}"
            click.echo(line.rstrip())
            if r.error:
                click.echo(f"{'':<{width}}  error: {r.error}")
    if manifest is not None and not all_ok:
        raise click.exceptions.Exit(1)
    raise click.exceptions.Exit(0)


if __name__ == "__main__":
    main()
