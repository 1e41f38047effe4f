"""Scoring and deterministic report rendering.

Findings come in two shapes: one per discovered chain, and one per node
whose category hits sit on no chain. Severity follows a fixed ordinal
table plus evidence escalators; the JSON and SARIF renderings are pure
functions of report content (no timestamps, sorted keys), so identical
scans produce byte-identical documents.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

from . import __version__ as TOOL_VERSION
from .chains import Chain, ChainKind, EvidenceString, StringInterpretation
from .loader import ModelFormat
from .taxonomy import CategoryHit, Confidence, CoreFunction

TOOL_NAME = "chainscan"
REPORT_SCHEMA_VERSION = "1"
SARIF_VERSION = "2.1.0"
SARIF_SCHEMA_URI = (
    "https://docs.oasis-open.org/sarif/sarif/v2.1.0/errata01/os/schemas/"
    "sarif-schema-2.1.0.json"
)


class Severity(enum.IntEnum):
    CLEAN = 0
    INFORMATIONAL = 1
    SUSPICIOUS = 2
    MALICIOUS = 3

    @property
    def label(self) -> str:
        return self.name.lower()


class OutputFormat(enum.Enum):
    TEXT = "text"
    JSON = "json"
    SARIF = "sarif"


CATEGORY_LABELS: Mapping[CoreFunction, str] = {
    CoreFunction.FILE_READ: "file read",
    CoreFunction.FILE_WRITE: "file write",
    CoreFunction.NETWORK_SEND: "network send",
    CoreFunction.NETWORK_RECEIVE: "network receive",
    CoreFunction.ENUMERATION: "filesystem enumeration",
    CoreFunction.OPAQUE_EXEC: "opaque callback execution",
}

CHAIN_TITLES: Mapping[ChainKind, str] = {
    ChainKind.EXFILTRATION: "Exfiltration chain",
    ChainKind.DROPPER: "Dropper chain",
    ChainKind.REMOTE_TO_EXEC: "Remote-payload execution chain",
    ChainKind.READ_TO_PERSISTENCE: "Read-to-persistence chain",
    ChainKind.GENERIC: "Dataflow chain",
}

MALICIOUS_CHAIN_KINDS = frozenset(
    {
        ChainKind.EXFILTRATION,
        ChainKind.DROPPER,
        ChainKind.REMOTE_TO_EXEC,
        ChainKind.READ_TO_PERSISTENCE,
    }
)

_NETWORK_CATEGORIES = frozenset({CoreFunction.NETWORK_SEND, CoreFunction.NETWORK_RECEIVE})


@dataclass(frozen=True)
class Finding:
    id: str
    severity: Severity
    title: str
    explanation: str
    chain: Optional[Chain]
    hits: tuple[CategoryHit, ...]
    evidence: tuple[EvidenceString, ...]


@dataclass(frozen=True)
class TriageVerdictView:
    """Triage outcome as embedded in a report (kept JSON-shaped here to
    avoid a circular import with the triage module)."""

    verdict: str
    risk_rationale: str
    chains_confirmed: tuple[str, ...]
    raw_degraded: bool


@dataclass(frozen=True)
class ScanMeta:
    model_path: str
    format: ModelFormat
    node_count: int
    function_count: int
    rules_version: str
    tool_version: str = TOOL_VERSION


@dataclass(frozen=True)
class ScanReport:
    meta: ScanMeta
    findings: tuple[Finding, ...]
    verdict: Severity
    warnings: tuple[str, ...] = ()
    triage: Optional[TriageVerdictView] = None

    def finding_ids(self) -> tuple[str, ...]:
        return tuple(f.id for f in self.findings)


def _finding_id(payload: object) -> str:
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()
    return f"f-{digest[:16]}"


def _escalators(
    hits: Sequence[CategoryHit],
    evidence_by_origin: Mapping[str, Sequence[EvidenceString]],
    chain: Optional[Chain],
) -> list[str]:
    reasons: list[str] = []
    for h in hits:
        interps = {e.interpretation for e in evidence_by_origin.get(h.node_name, ())}
        if (
            h.category in _NETWORK_CATEGORIES
            and StringInterpretation.REMOTE_ENDPOINT in interps
        ):
            reasons.append("remote endpoint evidence on a network-capable node")
            break
    for h in hits:
        interps = {e.interpretation for e in evidence_by_origin.get(h.node_name, ())}
        if (
            h.category is CoreFunction.FILE_WRITE
            and StringInterpretation.PERSISTENCE_PATH in interps
        ):
            reasons.append("persistence-path evidence on a file-write node")
            break
    if chain is not None and any(
        h.category is CoreFunction.OPAQUE_EXEC and h.node_name in chain.path for h in hits
    ):
        reasons.append("opaque callback execution on the chain path")
    return reasons


def _arrow(path: Sequence[str]) -> str:
    return " → ".join(path)


def _chain_finding(
    chain: Chain,
    hits: Sequence[CategoryHit],
    evidence_by_origin: Mapping[str, Sequence[EvidenceString]],
) -> Finding:
    chain_hits = tuple(
        h for qid in chain.path for h in hits if h.node_name == qid
    )
    base = (
        Severity.MALICIOUS if chain.kind in MALICIOUS_CHAIN_KINDS else Severity.SUSPICIOUS
    )
    reasons = _escalators(chain_hits, evidence_by_origin, chain)
    severity = Severity(min(Severity.MALICIOUS, base + len(reasons)))
    title = (
        f"{CHAIN_TITLES[chain.kind]}: {CATEGORY_LABELS[chain.source_category]}"
        f" reaches {CATEGORY_LABELS[chain.sink_category]}"
    )
    parts = [
        f"Data flows from {chain.source} ({CATEGORY_LABELS[chain.source_category]}) "
        f"to {chain.sink} ({CATEGORY_LABELS[chain.sink_category]}) "
        f"along {_arrow(chain.path)}."
    ]
    if chain.annotations:
        parts.append(f"Annotations: {', '.join(chain.annotations)}.")
    for reason in reasons:
        parts.append(f"Severity raised: {reason}.")
    payload = {
        "type": "chain",
        "kind": chain.kind.value,
        "source": [chain.source, chain.source_category.value],
        "sink": [chain.sink, chain.sink_category.value],
        "notes": sorted({h.rule_note for h in chain_hits}),
    }
    return Finding(
        id=_finding_id(payload),
        severity=severity,
        title=title,
        explanation=" ".join(parts),
        chain=chain,
        hits=chain_hits,
        evidence=chain.evidence,
    )


def _isolated_finding(
    node: str,
    node_hits: Sequence[CategoryHit],
    evidence_by_origin: Mapping[str, Sequence[EvidenceString]],
) -> Finding:
    confident = any(
        h.confidence in (Confidence.EXPLICIT, Confidence.HIDDEN) for h in node_hits
    )
    base = Severity.SUSPICIOUS if confident else Severity.INFORMATIONAL
    reasons = _escalators(node_hits, evidence_by_origin, None)
    severity = Severity(min(Severity.MALICIOUS, base + len(reasons)))
    cats = ", ".join(CATEGORY_LABELS[h.category] for h in node_hits)
    top_conf = max(h.confidence for h in node_hits)
    title = f"{top_conf.label.capitalize()}-confidence capability: {cats}"
    parts = [
        f"Node {node} carries {cats} capability ({'; '.join(h.rule_note for h in node_hits)}) "
        "but sits on no discovered chain."
    ]
    for reason in reasons:
        parts.append(f"Severity raised: {reason}.")
    payload = {
        "type": "isolated",
        "node": node,
        "hits": sorted((h.category.value, h.confidence.label, h.rule_note) for h in node_hits),
    }
    ev = tuple(evidence_by_origin.get(node, ()))
    return Finding(
        id=_finding_id(payload),
        severity=severity,
        title=title,
        explanation=" ".join(parts),
        chain=None,
        hits=tuple(node_hits),
        evidence=ev,
    )


def score(
    hits: Sequence[CategoryHit],
    chains: Sequence[Chain],
    evidence: Sequence[EvidenceString],
) -> list[Finding]:
    """Apply the severity table: named chains are malicious, generic
    chains suspicious, isolated hits suspicious or informational by
    confidence, with evidence escalators raising one step each (capped)."""
    evidence_by_origin: dict[str, list[EvidenceString]] = {}
    for e in evidence:
        evidence_by_origin.setdefault(e.origin_node, []).append(e)
    findings = [_chain_finding(c, hits, evidence_by_origin) for c in chains]
    on_chain = {qid for c in chains for qid in c.path}
    isolated: dict[str, list[CategoryHit]] = {}
    for h in hits:
        if h.node_name not in on_chain:
            isolated.setdefault(h.node_name, []).append(h)
    for node in sorted(isolated):
        findings.append(_isolated_finding(node, isolated[node], evidence_by_origin))
    return findings


def assemble(
    meta: ScanMeta,
    findings: Sequence[Finding],
    warnings: Sequence[str] = (),
) -> ScanReport:
    ordered = tuple(sorted(findings, key=lambda f: (-f.severity, f.id)))
    verdict = max((f.severity for f in ordered), default=Severity.CLEAN)
    return ScanReport(
        meta=meta,
        findings=ordered,
        verdict=Severity(verdict),
        warnings=tuple(warnings),
    )


def attach_triage(report: ScanReport, triage: TriageVerdictView, verdict: Severity,
                  extra_warnings: Sequence[str] = ()) -> ScanReport:
    return replace(
        report,
        triage=triage,
        verdict=verdict,
        warnings=report.warnings + tuple(extra_warnings),
    )


# ---------------------------------------------------------------------------
# rendering


def _hit_obj(h: CategoryHit) -> dict:
    return {
        "node": h.node_name,
        "category": h.category.value,
        "confidence": h.confidence.label,
        "note": h.rule_note,
    }


def _evidence_obj(e: EvidenceString) -> dict:
    return {
        "node": e.origin_node,
        "value": e.value,
        "interpretation": e.interpretation.value,
    }


def _chain_obj(c: Chain) -> dict:
    return {
        "kind": c.kind.value,
        "annotations": list(c.annotations),
        "source": {"node": c.source, "category": c.source_category.value},
        "sink": {"node": c.sink, "category": c.sink_category.value},
        "path": list(c.path),
    }


def _finding_obj(f: Finding) -> dict:
    return {
        "id": f.id,
        "severity": f.severity.label,
        "title": f.title,
        "explanation": f.explanation,
        "chain": _chain_obj(f.chain) if f.chain else None,
        "hits": [_hit_obj(h) for h in f.hits],
        "evidence": [_evidence_obj(e) for e in f.evidence],
    }


def report_object(report: ScanReport) -> dict:
    """Canonical JSON-shaped view of a report (no timestamps)."""
    triage = None
    if report.triage is not None:
        triage = {
            "verdict": report.triage.verdict,
            "risk_rationale": report.triage.risk_rationale,
            "chains_confirmed": list(report.triage.chains_confirmed),
            "raw_degraded": report.triage.raw_degraded,
        }
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_name": TOOL_NAME,
        "tool_version": report.meta.tool_version,
        "rules_version": report.meta.rules_version,
        "model_path": report.meta.model_path,
        "format": report.meta.format.value,
        "node_count": report.meta.node_count,
        "function_count": report.meta.function_count,
        "verdict": report.verdict.label,
        "findings": [_finding_obj(f) for f in report.findings],
        "warnings": list(report.warnings),
        "triage": triage,
    }


_SARIF_LEVELS = {
    Severity.INFORMATIONAL: "note",
    Severity.SUSPICIOUS: "warning",
    Severity.MALICIOUS: "error",
}

_RULE_DESCRIPTIONS = {
    "chain/exfiltration": "Data read locally flows to a network send operation.",
    "chain/dropper": "Data received from the network flows to a file write operation.",
    "chain/remote-to-exec": "Data received from the network reaches an opaque callback execution.",
    "chain/read-to-persistence": "Locally read data is written to a persistence location.",
    "chain/generic": "A source-category operation feeds a sink-category operation.",
    "op/explicit-capability": "An explicitly dangerous I/O or network operation is present.",
    "op/hidden-capability": "An operation with a latent I/O or network capability is present.",
    "op/informational-capability": "A checkpoint-style I/O operation is present.",
}


def _sarif_rule_id(f: Finding) -> str:
    if f.chain is not None:
        return f"chain/{f.chain.kind.value.replace('_', '-')}"
    top = max(h.confidence for h in f.hits)
    return f"op/{top.label}-capability"


def sarif_object(report: ScanReport) -> dict:
    rule_ids = sorted({_sarif_rule_id(f) for f in report.findings})
    rule_index = {rid: i for i, rid in enumerate(rule_ids)}
    results = []
    for f in report.findings:
        rid = _sarif_rule_id(f)
        path_nodes = list(f.chain.path) if f.chain else [h.node_name for h in f.hits]
        seen: list[str] = []
        for n in path_nodes:
            if n not in seen:
                seen.append(n)
        results.append(
            {
                "ruleId": rid,
                "ruleIndex": rule_index[rid],
                "level": _SARIF_LEVELS[f.severity],
                "message": {"text": f"{f.title}. {f.explanation}"},
                "locations": [
                    {
                        "logicalLocations": [
                            {"fullyQualifiedName": n, "kind": "element"} for n in seen
                        ]
                    }
                ],
                "fingerprints": {"chainscan/findingId": f.id},
            }
        )
    return {
        "$schema": SARIF_SCHEMA_URI,
        "version": SARIF_VERSION,
        "runs": [
            {
                "tool": {
                    "driver": {
                        "name": TOOL_NAME,
                        "version": report.meta.tool_version,
                        "rules": [
                            {
                                "id": rid,
                                "shortDescription": {"text": _RULE_DESCRIPTIONS[rid]},
                            }
                            for rid in rule_ids
                        ],
                    }
                },
                "results": results,
            }
        ],
    }


def _render_text(report: ScanReport) -> str:
    lines = [
        f"{TOOL_NAME} {report.meta.tool_version} report",
        f"model:    {report.meta.model_path}",
        f"format:   {report.meta.format.value}"
        f"   nodes: {report.meta.node_count}   functions: {report.meta.function_count}",
        f"rules:    {report.meta.rules_version}",
        f"verdict:  {report.verdict.label.upper()}",
        "",
    ]
    if not report.findings:
        lines.append("no findings")
    else:
        lines.append(f"findings ({len(report.findings)}):")
        for f in report.findings:
            lines.append(f"  [{f.severity.label}] {f.id} {f.title}")
            if f.chain is not None:
                lines.append(f"      path: {_arrow(f.chain.path)}")
            for e in f.evidence:
                lines.append(
                    f"      evidence: {e.origin_node} {e.value!r} ({e.interpretation.value})"
                )
            lines.append(f"      {f.explanation}")
    if report.warnings:
        lines.append("")
        lines.append("warnings:")
        lines.extend(f"  - {w}" for w in report.warnings)
    if report.triage is not None:
        lines.append("")
        degraded = " (degraded reply)" if report.triage.raw_degraded else ""
        lines.append(f"triage: {report.triage.verdict}{degraded}")
        if report.triage.risk_rationale:
            lines.append(f"  rationale: {report.triage.risk_rationale}")
        if report.triage.chains_confirmed:
            lines.append(
                f"  chains confirmed: {', '.join(report.triage.chains_confirmed)}"
            )
    lines.append("")
    return "\n".join(lines)


def _canonical_json(obj: dict) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")


def render(report: ScanReport, fmt: OutputFormat) -> bytes:
    if fmt is OutputFormat.TEXT:
        return _render_text(report).encode("utf-8")
    if fmt is OutputFormat.JSON:
        return _canonical_json(report_object(report))
    if fmt is OutputFormat.SARIF:
        return _canonical_json(sarif_object(report))
    raise ValueError(f"unknown output format {fmt!r}")


def render_envelope(report: ScanReport, generated_at: str) -> bytes:
    """Wall-clock wrapper around the canonical body, for callers that
    want a timestamp without sacrificing body determinism."""
    return _canonical_json({"generated_at": generated_at, "report": report_object(report)})
