"""End-to-end scan orchestration shared by the CLI and the test suite."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

from .chains import (
    Chain,
    EvidenceString,
    FlatGraph,
    MAX_INLINE_DEPTH,
    extract_string_evidence,
    find_chains,
    flatten,
    propagate_taint,
)
from .loader import ModelBundle, load_model
from .report import ScanMeta, ScanReport, assemble, score
from .taxonomy import CategoryHit, RuleSet, classify_graph_nodes, load_rules


@dataclass(frozen=True)
class ScanConfig:
    rules_path: Optional[str] = None
    max_depth: int = MAX_INLINE_DEPTH


@dataclass(frozen=True)
class ScanResult:
    """Report plus the intermediate artifacts (used by triage digests)."""

    report: ScanReport
    bundle: ModelBundle
    flat: FlatGraph
    hits: tuple[CategoryHit, ...]
    chains: tuple[Chain, ...]
    evidence: tuple[EvidenceString, ...]


def scan_bundle(bundle: ModelBundle, rules: RuleSet, max_depth: int = MAX_INLINE_DEPTH) -> ScanResult:
    flat = flatten(bundle, max_depth=max_depth)
    hits = classify_graph_nodes(flat.nodes, rules)
    evidence = extract_string_evidence(flat, hits)
    taint = propagate_taint(flat, hits)
    chains = find_chains(flat, taint, evidence)
    findings = score(hits, chains, evidence)
    meta = ScanMeta(
        model_path=bundle.source_path,
        format=bundle.format,
        node_count=bundle.node_count(),
        function_count=len(bundle.functions),
        rules_version=rules.version,
    )
    report = assemble(meta, findings, warnings=flat.warnings)
    return ScanResult(
        report=report,
        bundle=bundle,
        flat=flat,
        hits=tuple(hits),
        chains=tuple(chains),
        evidence=tuple(evidence),
    )


def scan_path(path: os.PathLike | str, config: ScanConfig = ScanConfig()) -> ScanResult:
    rules = load_rules(config.rules_path)
    bundle = load_model(path)
    return scan_bundle(bundle, rules, max_depth=config.max_depth)
