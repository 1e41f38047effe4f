"""Optional LLM second-opinion stage.

Packages the scan's graph digest into a fixed three-step analyst prompt,
submits it to a chat-completion-compatible HTTP endpoint, and merges the
structured verdict back into the report. Strictly advisory and fail-open:
no transport failure or garbage reply ever changes the static findings
or lowers the verdict.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

import requests

from .errors import (
    DigestOverflowError,
    TriageAuthMissing,
    TriageHttpError,
    TriageTimeout,
)
from .loader import AttrKind, AttrValue, NodeRecord
from .pipeline import ScanResult
from .report import ScanReport, Severity, TriageVerdictView, attach_triage
from .taxonomy import CategoryHit

DEFAULT_TIMEOUT_SECS = 60.0
DEFAULT_PROMPT_BUDGET = 64 * 1024  # bytes of user text

_DIGEST_MARKER = "<<DIGEST>>"


class TriageOutcome(enum.Enum):
    BENIGN = "benign"
    SUSPICIOUS = "suspicious"
    MALICIOUS = "malicious"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class TriageVerdict:
    verdict: TriageOutcome
    risk_rationale: str
    chains_confirmed: tuple[str, ...]
    raw_degraded: bool = False


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str


@dataclass(frozen=True)
class TriageRequest:
    endpoint_url: str
    model_name: str
    api_key_ref: str
    prompt: PromptBundle
    timeout: float = DEFAULT_TIMEOUT_SECS


@dataclass(frozen=True)
class GraphDigest:
    """Pre-rendered digest sections, most-droppable first when over budget."""

    histogram_lines: tuple[str, ...]
    flagged_lines: tuple[str, ...]
    chain_lines: tuple[str, ...]
    evidence_lines: tuple[str, ...]


def _short_attr(attr: AttrValue) -> str:
    if attr.kind is AttrKind.STR:
        return repr(attr.text()[:120])
    if attr.kind in (AttrKind.STR_LIST, AttrKind.TENSOR_STRINGS):
        return "[" + ", ".join(repr(t[:120]) for t in attr.texts()[:8]) + "]"
    if attr.kind in (AttrKind.INT, AttrKind.FLOAT, AttrKind.BOOL):
        return str(attr.value)
    if attr.kind is AttrKind.FUNC:
        return f"&{attr.value}"
    return "<opaque>"


def _flagged_line(qid: str, rec: NodeRecord, hits: Sequence[CategoryHit]) -> str:
    cats = ",".join(f"{h.category.value}/{h.confidence.label}" for h in hits)
    attrs = " ".join(f"{k}={_short_attr(rec.attrs[k])}" for k in sorted(rec.attrs))
    return f"{qid} [{cats}] op={rec.op_type}" + (f" {attrs}" if attrs else "")


def build_digest(result: ScanResult) -> GraphDigest:
    """Deterministic digest of one scan, ready for prompt assembly."""
    counts: dict[str, int] = {}
    for _, rec in result.flat.nodes:
        counts[rec.op_type] = counts.get(rec.op_type, 0) + 1
    histogram = tuple(
        f"{op}: {n}" for op, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    )
    by_node: dict[str, list[CategoryHit]] = {}
    for h in result.hits:
        by_node.setdefault(h.node_name, []).append(h)
    flagged = tuple(
        _flagged_line(qid, result.flat.record(qid), by_node[qid])
        for qid in sorted(by_node)
    )
    chain_lines = []
    for f in result.report.findings:
        if f.chain is None:
            continue
        note = f" [{', '.join(f.chain.annotations)}]" if f.chain.annotations else ""
        chain_lines.append(
            f"{f.id} [{f.chain.kind.value}]: {' -> '.join(f.chain.path)}{note}"
        )
    evidence = tuple(
        f"{e.origin_node}: {e.value!r} ({e.interpretation.value})"
        for e in result.evidence
    )
    return GraphDigest(histogram, flagged, tuple(chain_lines), evidence)


def _section(title: str, lines: Sequence[str], empty: str) -> str:
    if not lines:
        return f"{title}:\n  {empty}"
    return f"{title}:\n" + "\n".join(f"  {l}" for l in lines)


def _load_template() -> tuple[str, str]:
    text = resources.files("chainscan.data").joinpath("triage_prompt.txt").read_text(
        encoding="utf-8"
    )
    _, _, rest = text.partition("=== system ===")
    system_text, _, user_text = rest.partition("=== user ===")
    return system_text.strip(), user_text.strip()


def build_prompt(
    report: ScanReport,
    digest: GraphDigest,
    budget: int = DEFAULT_PROMPT_BUDGET,
) -> PromptBundle:
    """Assemble the chain-of-thought prompt under the byte budget.

    When over budget the histogram (the only non-flagged-node content)
    is dropped first, then the evidence listing; flagged nodes and
    chains are never dropped.
    """
    system_text, user_template = _load_template()
    if _DIGEST_MARKER not in user_template:
        raise ValueError("triage prompt template lost its digest marker")

    def assemble(include_histogram: bool, include_evidence: bool) -> str:
        sections = [
            _section(
                "operation histogram",
                digest.histogram_lines if include_histogram else (),
                "(omitted)" if not include_histogram else "(empty graph)",
            ),
            _section("flagged operations", digest.flagged_lines, "(none)"),
            _section("chains", digest.chain_lines, "(none)"),
            _section(
                "evidence strings",
                digest.evidence_lines if include_evidence else (),
                "(omitted)" if not include_evidence else "(none)",
            ),
        ]
        return user_template.replace(_DIGEST_MARKER, "\n\n".join(sections))

    for include_histogram, include_evidence in ((True, True), (False, True), (False, False)):
        user_text = assemble(include_histogram, include_evidence)
        if len(user_text.encode("utf-8")) <= budget:
            return PromptBundle(system_text=system_text, user_text=user_text)
    raise DigestOverflowError(
        f"minimal digest ({len(user_text.encode('utf-8'))} bytes) exceeds the "
        f"{budget}-byte prompt budget"
    )


# ---------------------------------------------------------------------------
# transport


def _post_chat(req: TriageRequest, api_key: str, messages: list[dict]) -> str:
    payload = {"model": req.model_name, "messages": messages, "temperature": 0}
    try:
        resp = requests.post(
            req.endpoint_url,
            json=payload,
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=req.timeout,
        )
    except requests.Timeout as exc:
        raise TriageTimeout(f"triage endpoint timed out after {req.timeout}s") from exc
    except requests.RequestException as exc:
        raise TriageHttpError(0, f"cannot reach triage endpoint: {exc}") from exc
    if resp.status_code >= 400:
        raise TriageHttpError(resp.status_code)
    try:
        body = resp.json()
        return body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        # endpoint answered but not in the chat-completion shape; treat the
        # raw body as the (unparseable) reply so the caller can degrade
        return resp.text


def _parse_reply(content: str) -> Optional[TriageVerdict]:
    try:
        obj = json.loads(content)
    except (ValueError, TypeError):
        return None
    if not isinstance(obj, dict):
        return None
    raw_verdict = obj.get("verdict")
    if not isinstance(raw_verdict, str):
        return None
    try:
        verdict = TriageOutcome(raw_verdict.strip().lower())
    except ValueError:
        return None
    rationale = obj.get("risk_rationale", "")
    if not isinstance(rationale, str):
        rationale = ""
    confirmed_raw = obj.get("chains_confirmed", [])
    if not isinstance(confirmed_raw, list):
        confirmed_raw = []
    confirmed = tuple(c for c in confirmed_raw if isinstance(c, str))
    return TriageVerdict(verdict, rationale, confirmed)


_REPAIR_NUDGE = (
    "Your previous reply was not valid JSON. Reply with valid JSON only, "
    "matching the required schema exactly."
)


def request_verdict(req: TriageRequest) -> TriageVerdict:
    """One chat-completion round trip, with a single JSON-repair retry.

    The API key is read here and used only for the authorization header;
    it is never logged, stored or embedded in errors.
    """
    api_key = os.environ.get(req.api_key_ref)
    if not api_key:
        raise TriageAuthMissing(
            f"environment variable {req.api_key_ref!r} is unset; triage skipped"
        )
    messages = [
        {"role": "system", "content": req.prompt.system_text},
        {"role": "user", "content": req.prompt.user_text},
    ]
    reply = _post_chat(req, api_key, messages)
    parsed = _parse_reply(reply)
    if parsed is not None:
        return parsed
    messages = messages + [
        {"role": "assistant", "content": reply},
        {"role": "user", "content": _REPAIR_NUDGE},
    ]
    reply = _post_chat(req, api_key, messages)
    parsed = _parse_reply(reply)
    if parsed is not None:
        return parsed
    return TriageVerdict(TriageOutcome.INDETERMINATE, "", (), raw_degraded=True)


# ---------------------------------------------------------------------------
# merge


_VERDICT_FLOOR = {
    TriageOutcome.MALICIOUS: Severity.SUSPICIOUS,
    TriageOutcome.SUSPICIOUS: Severity.SUSPICIOUS,
}


def merge_verdict(report: ScanReport, tv: TriageVerdict) -> ScanReport:
    """Attach the triage verdict; it may raise the report verdict one
    rung (to suspicious) but never lowers it — static chains are
    deterministic evidence, the LLM is advisory."""
    known = set(report.finding_ids())
    confirmed = tuple(c for c in tv.chains_confirmed if c in known)
    warnings = [
        f"triage confirmed unknown finding id {c!r}; ignored"
        for c in tv.chains_confirmed
        if c not in known
    ]
    floor = _VERDICT_FLOOR.get(tv.verdict, Severity.CLEAN)
    new_verdict = Severity(max(report.verdict, floor))
    if new_verdict > report.verdict:
        warnings.append(
            f"verdict raised from {report.verdict.label} to {new_verdict.label} "
            f"by advisory triage verdict {tv.verdict.value}"
        )
    view = TriageVerdictView(
        verdict=tv.verdict.value,
        risk_rationale=tv.risk_rationale,
        chains_confirmed=confirmed,
        raw_degraded=tv.raw_degraded,
    )
    return attach_triage(report, view, new_verdict, warnings)


def run_triage(
    result: ScanResult,
    endpoint_url: str,
    model_name: str,
    api_key_ref: str,
    timeout: float = DEFAULT_TIMEOUT_SECS,
    budget: int = DEFAULT_PROMPT_BUDGET,
) -> ScanReport:
    """Scan-level helper: digest, prompt, request, merge."""
    digest = build_digest(result)
    prompt = build_prompt(result.report, digest, budget=budget)
    req = TriageRequest(
        endpoint_url=endpoint_url,
        model_name=model_name,
        api_key_ref=api_key_ref,
        prompt=prompt,
        timeout=timeout,
    )
    verdict = request_verdict(req)
    return merge_verdict(result.report, verdict)
