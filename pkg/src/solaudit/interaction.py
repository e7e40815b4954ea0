"""Interaction-driven audit pipeline: deterministic pair selection,
skeleton-only specification inference, spec-then-verify checklists, and the
deterministic stage-5 cleanup (self-contradiction filter plus the six-rule
severity recalibration shared with the dossier pipeline's phase E)."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from . import prompts
from .ccim import CcimModel, FnKey, FunctionRecord
from .engines import MergedSignals, infer_preconditions, itpc_high_risk
from .findings import (
    SEVERITY_RANK,
    Finding,
    classify_claim,
    finding_from_payload,
    renumber,
    severity_cap,
    severity_down,
)
from .ingest import AuditSource
from .reasoner import DEFAULT_CHAR_BUDGET, Reasoner, ReasonerError, ReasonerRequest

log = logging.getLogger(__name__)

# pair-nomination source confidences; ordering motive only, values config-exposed
SOURCE_CONFIDENCE = {
    "TRIAGE": 0.9,
    "SHARED_STATE": 0.8,
    "COUNTER": 0.7,
    "HOTSPOT": 0.6,
    "LLM_TRIAGE": 0.5,
}

# first four pairs are the canonical protocol idioms; the rest are extensions
COUNTER_STEMS = (("deposit", "withdraw"), ("mint", "burn"), ("lock", "unlock"),
                 ("stake", "unstake"), ("open", "close"), ("pause", "unpause"))

ATTENTION_SHARED_WRITE_BONUS = 0.5
ATTENTION_THRESHOLD = 1.0

SELF_DISPROVING_PHRASES = ("by design", "intended behavior", "not a vulnerability")

_HEDGE_RE = re.compile(r"\b(may|might|could|potentially|possibly)\b", re.I)
_ENUM_RE = re.compile(r"(?m)^\s*(?:\d+[.)]|[-*])\s+(.*)$")
_PRECON_WORD_RE = re.compile(r"\b(requires?|assum\w+|only if|must|precondition|when)\b", re.I)
_CLAIMS_PROTECTED_RE = re.compile(
    r"\b(admin[- ]only|only the (owner|admin)|restricted to (the )?(owner|admin)|"
    r"protected by only\w+)\b", re.I)


@dataclass
class PairCandidate:
    pair: tuple[FnKey, FnKey]
    sources: set[str] = field(default_factory=set)
    source_confidence: float = 0.0


@dataclass
class BehaviorSpec:
    pair: tuple[FnKey, FnKey]
    lifecycle: str = ""
    agreed_variables: list[str] = field(default_factory=list)
    assumptions: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.lifecycle or self.agreed_variables or self.assumptions)


def _canonical(a: FnKey, b: FnKey) -> tuple[FnKey, FnKey]:
    return (a, b) if a <= b else (b, a)


def _auditable(ccim: CcimModel) -> list[FunctionRecord]:
    return [r for r in ccim.records
            if ccim.resolution.kinds.get(r.owner) != "interface" and "{" in r.body]


def select_pairs(ccim: CcimModel, merged: MergedSignals,
                 reasoner: Reasoner | None = None,
                 budget: int = DEFAULT_CHAR_BUDGET) -> list[PairCandidate]:
    """Union of the deterministic nomination heuristics (hotspot, counter,
    shared-state, triage) plus the optional reasoner triage source, deduplicated
    on unordered pair identity and ordered by source confidence."""
    records = _auditable(ccim)
    candidates: dict[tuple[FnKey, FnKey], PairCandidate] = {}

    def nominate(a: FnKey, b: FnKey, source: str):
        if a == b:
            return
        key = _canonical(a, b)
        cand = candidates.setdefault(key, PairCandidate(pair=key))
        cand.sources.add(source)
        cand.source_confidence = max(cand.source_confidence, SOURCE_CONFIDENCE[source])

    # (iii) shared-state: both functions write the same storage variable
    shared_writes: dict[tuple[FnKey, FnKey], int] = {}
    for i, ra in enumerate(records):
        wa = ccim.writes_q(ra.key)
        if not wa:
            continue
        for rb in records[i + 1:]:
            shared = wa & ccim.writes_q(rb.key)
            if shared:
                nominate(ra.key, rb.key, "SHARED_STATE")
                shared_writes[_canonical(ra.key, rb.key)] = len(shared)

    # (ii) counter-pairs by naming idiom, same contract
    by_owner: dict[str, list[FunctionRecord]] = {}
    for r in records:
        by_owner.setdefault(r.owner, []).append(r)
    for owner, recs in by_owner.items():
        for a_stem, b_stem in COUNTER_STEMS:
            a_side = [r for r in recs if r.name.lower().startswith(a_stem)]
            b_side = [r for r in recs if r.name.lower().startswith(b_stem)]
            for ra in a_side:
                for rb in b_side:
                    nominate(ra.key, rb.key, "COUNTER")

    # (i) attention hotspots: signal mass plus shared-write coupling
    signal_conf: dict[FnKey, float] = {}
    for s in merged.retained:
        if s.function:
            signal_conf[s.function] = signal_conf.get(s.function, 0.0) + s.confidence
    relations = set(shared_writes) | {_canonical(f, g) for f, g in ccim.graph.edges}
    for a, b in sorted(relations):
        score = (signal_conf.get(a, 0.0) + signal_conf.get(b, 0.0)
                 + ATTENTION_SHARED_WRITE_BONUS * shared_writes.get((a, b), 0))
        if score >= ATTENTION_THRESHOLD:
            nominate(a, b, "HOTSPOT")

    # (iv) triage pairs: signal-bearing functions sharing a parameter, a state
    # read, or a trust boundary
    flagged = sorted(signal_conf)
    for i, a in enumerate(flagged):
        ra = ccim.record(*a)
        if ra is None:
            continue
        for b in flagged[i + 1:]:
            rb = ccim.record(*b)
            if rb is None:
                continue
            shares_param = bool(set(ra.params) & set(rb.params))
            shares_read = bool(ccim.reads_q(a) & ccim.reads_q(b))
            edge = (a, b) in ccim.graph.edges or (b, a) in ccim.graph.edges
            gap = (ra.owner, rb.owner) in ccim.trust.trustgap or \
                  (rb.owner, ra.owner) in ccim.trust.trustgap
            if shares_param or shares_read or edge or gap:
                nominate(a, b, "TRIAGE")

    # (v) optional reasoner triage for contracts with no high-severity signals
    if reasoner is not None:
        low_risk = _low_risk_contracts(ccim, merged)
        if low_risk:
            for a, b in _reasoner_triage(ccim, low_risk, reasoner, budget):
                nominate(a, b, "LLM_TRIAGE")

    ordered = sorted(candidates.values(), key=lambda c: (-c.source_confidence, c.pair))
    return ordered


def _low_risk_contracts(ccim: CcimModel, merged: MergedSignals) -> list[str]:
    hot = {s.function[0] for s in merged.retained
           if s.function and s.severity in ("CRITICAL", "HIGH")}
    return [c for c in ccim.scope if c not in hot]


def _reasoner_triage(ccim, contracts, reasoner, budget) -> list[tuple[FnKey, FnKey]]:
    skeletons = "\n".join(
        r.signature for r in ccim.records if r.owner in set(contracts) and r.signature
    )
    prompt = prompts.STAGE1_TRIAGE.format(version=prompts.PROMPT_VERSION,
                                          skeletons=skeletons)[:budget]
    try:
        response = reasoner.respond(ReasonerRequest("stage1_triage", prompt, "stage1_triage", budget))
    except ReasonerError as exc:
        log.warning("reasoner triage failed (%s); skipped", exc)
        return []
    pairs = []
    if response.ok:
        for raw in response.payload.get("pairs", []):
            if isinstance(raw, (list, tuple)) and len(raw) == 4:
                pairs.append(((str(raw[0]), str(raw[1])), (str(raw[2]), str(raw[3]))))
    return pairs


# --- stage 2: skeleton-only specification inference ------------------------


def _skeleton(ccim: CcimModel, contract: str) -> str:
    lines = [f"contract {contract}"]
    for r in ccim.records:
        if r.owner != contract:
            continue
        if r.natspec:
            lines.append(r.natspec)
        lines.append(r.signature or f"function {r.name}(...)")
    return "\n".join(lines)


def build_spec_prompt(pair: tuple[FnKey, FnKey], ccim: CcimModel) -> str:
    """Skeleton-only prompt: signatures, doc comments, module documentation;
    implementation bodies must never leak in."""
    contracts = sorted({pair[0][0], pair[1][0]})
    skeleton = "\n\n".join(_skeleton(ccim, c) for c in contracts)
    prompt = prompts.STAGE2_SPEC.format(
        version=prompts.PROMPT_VERSION,
        pair=f"{pair[0][0]}.{pair[0][1]} / {pair[1][0]}.{pair[1][1]}",
        skeleton=skeleton,
    )
    for rec in ccim.records:
        inner = rec.body_inner().strip()
        assert not (len(inner) >= 20 and inner in prompt), \
            f"implementation body of {rec.owner}.{rec.name} leaked into the spec prompt"
    return prompt


def infer_spec(pair: tuple[FnKey, FnKey], ccim: CcimModel, reasoner: Reasoner,
               budget: int = DEFAULT_CHAR_BUDGET) -> BehaviorSpec:
    prompt = build_spec_prompt(pair, ccim)[:budget]
    try:
        response = reasoner.respond(ReasonerRequest("stage2_spec", prompt, "stage2_spec", budget))
    except ReasonerError as exc:
        log.warning("spec inference failed for %s (%s); empty spec", pair, exc)
        return BehaviorSpec(pair=pair)
    if not response.ok:
        return BehaviorSpec(pair=pair)
    p = response.payload
    return BehaviorSpec(
        pair=pair,
        lifecycle=str(p.get("lifecycle", "")),
        agreed_variables=[str(v) for v in p.get("agreed_variables", [])],
        assumptions=[str(a) for a in p.get("assumptions", [])],
    )


# --- stage 3: spec-then-verify ---------------------------------------------


def spec_verify(pair: tuple[FnKey, FnKey], spec: BehaviorSpec, ccim: CcimModel,
                reasoner: Reasoner, budget: int = DEFAULT_CHAR_BUDGET) -> list[Finding]:
    """Seven-point checklist over the pair; VIOLATE items lacking both an
    evidence citation and a concrete trace are rejected."""
    recs = [ccim.record(*k) for k in pair]
    recs = [r for r in recs if r is not None]
    if not recs:
        return []
    sources = "\n\n".join(
        f"// {r.owner}.{r.name} vis={r.vis} modifiers={list(r.modifiers)} "
        f"reentrancy_guard={'nonReentrant' in {m.split('(')[0] for m in r.modifiers}}\n{r.body}"
        for r in recs
    )
    preconditions = sorted(set().union(*(infer_preconditions(r) for r in recs)))
    checklist_items = spec.assumptions if spec.assumptions else ["(no inferred assumptions)"]
    spec_text = (
        f"lifecycle: {spec.lifecycle or '(none inferred)'}\n"
        f"agreed variables: {', '.join(spec.agreed_variables) or '(none)'}\n"
        f"assumptions:\n" + "\n".join(f"  - {a}" for a in checklist_items)
    )
    if spec.empty:
        # degraded path: checklist items (2)-(7) still run without assumptions
        spec_text += "\n(spec unavailable; items 2-7 only)"
    prompt = prompts.STAGE3_VERIFY.format(
        version=prompts.PROMPT_VERSION, spec=spec_text, sources=sources,
        preconditions="\n".join(preconditions) or "(none)",
        checklist="\n".join(f"{i}. {c}" for i, c in enumerate(prompts.STAGE3_CHECKLIST, start=1)),
    )[:budget]
    try:
        response = reasoner.respond(ReasonerRequest("stage3_verify", prompt, "stage3_verify", budget))
    except ReasonerError as exc:
        log.warning("spec-verify failed for %s (%s)", pair, exc)
        return []
    if not response.ok:
        log.warning("spec-verify output unparseable for %s; zero findings", pair)
        return []
    findings = []
    for raw in response.payload.get("items", []):
        if not isinstance(raw, dict):
            continue
        if str(raw.get("status", "")).upper() != "VIOLATE":
            continue
        line = raw.get("evidence_line")
        trace = str(raw.get("trace") or "")
        if not isinstance(line, (int, float)) and not trace.strip():
            log.info("VIOLATE item without citation or trace rejected on %s", pair)
            continue
        payload = dict(raw)
        payload.setdefault("title", f"assumption violation across {pair[0][1]}/{pair[1][1]}")
        payload.setdefault("attack_scenario", trace)
        f = finding_from_payload(payload, "I", list(pair))
        if f is not None:
            findings.append(f)
    return findings


def audit_standalone(ccim: CcimModel, reasoner: Reasoner,
                     budget: int = DEFAULT_CHAR_BUDGET) -> list[Finding]:
    """Focused audit slots for high-risk standalone functions so single-function
    bugs are not starved by the pair decomposition."""
    findings = []
    for rec in _auditable(ccim):
        if not itpc_high_risk(rec, ccim.footprints.fund.get(rec.key, False)):
            continue
        prompt = prompts.STANDALONE.format(
            version=prompts.PROMPT_VERSION,
            source=f"// {rec.owner}.{rec.name}\n{rec.body}",
        )[:budget]
        try:
            response = reasoner.respond(ReasonerRequest("standalone", prompt, "standalone", budget))
        except ReasonerError as exc:
            log.warning("standalone audit failed for %s (%s)", rec.key, exc)
            continue
        if not response.ok:
            continue
        for raw in response.payload.get("findings", []):
            if isinstance(raw, dict):
                f = finding_from_payload(raw, "I", [rec.key])
                if f is not None:
                    findings.append(f)
    return findings


# --- stage 5: deterministic cleanup ----------------------------------------


def self_contradiction_filter(findings: list[Finding]) -> list[Finding]:
    """Drop findings whose own narrative refutes their verdict; those that
    still carry an evidence line are kept, downgraded to INFO."""
    out = []
    for f in findings:
        text = f"{f.description} {f.attack_scenario}".lower()
        if any(p in text for p in SELF_DISPROVING_PHRASES):
            if f.evidence_lines:
                f.severity = "INFO"
                f.flags.add("self-contradictory")
                out.append(f)
            else:
                log.info("finding %r removed by self-contradiction filter", f.title)
            continue
        out.append(f)
    return out


def _unlikely_precondition_count(scenario: str) -> int:
    return sum(1 for item in _ENUM_RE.findall(scenario) if _PRECON_WORD_RE.search(item))


def _has_concrete_steps(scenario: str) -> bool:
    return bool(_ENUM_RE.search(scenario)) or bool(re.search(r"\bstep\b", scenario, re.I))


def _access_facts(finding: Finding, ccim: CcimModel) -> tuple[bool, bool, bool]:
    records = [r for k in finding.affected_functions if (r := ccim.record(*k)) is not None]
    any_admin = any(ccim.is_admin(r.key) for r in records)
    admin_only = bool(records) and all(ccim.is_admin(r.key) for r in records)
    moves_funds = any(ccim.footprints.fund.get(r.key, False) for r in records)
    return admin_only, any_admin, moves_funds


def _apply_rules_1_to_4(finding: Finding, ccim: CcimModel) -> None:
    admin_only, _, moves_funds = _access_facts(finding, ccim)
    # (1) admin-only paths capped to LOW unless they move user funds
    if admin_only and not moves_funds:
        finding.severity = severity_cap(finding.severity, "LOW")
        finding.flags.add("admin-only")
    # (2) no concrete fund-loss path: cap MEDIUM
    if not moves_funds:
        finding.severity = severity_cap(finding.severity, "MEDIUM")
    # (3) three or more independent unlikely preconditions: one level down
    if _unlikely_precondition_count(finding.attack_scenario) >= 3:
        finding.severity = severity_down(finding.severity)
        finding.flags.add("unlikely-preconditions")
    # (4) hedged language without concrete attack steps: cap MEDIUM
    if _HEDGE_RE.search(f"{finding.description} {finding.attack_scenario}") \
            and not _has_concrete_steps(finding.attack_scenario):
        finding.severity = severity_cap(finding.severity, "MEDIUM")
        finding.flags.add("hedged")


def _raise_one(severity: str) -> str:
    from .findings import SEVERITIES
    return SEVERITIES[min(len(SEVERITIES) - 1, SEVERITY_RANK[severity] + 1)]


def _apply_rule_6(finding: Finding, ccim: CcimModel) -> None:
    # parsed access-control evidence beats the finding's own claim; the second
    # branch is the one place a severity may go up
    admin_only, any_admin, moves_funds = _access_facts(finding, ccim)
    has_records = any(ccim.record(*k) is not None for k in finding.affected_functions)
    if classify_claim(finding) == "MISSING_ACCESS_CONTROL" and admin_only:
        finding.severity = severity_cap(finding.severity, "LOW")
        finding.flags.add("ccim-evidence-override")
    elif _CLAIMS_PROTECTED_RE.search(finding.text()) and has_records \
            and not any_admin and moves_funds:
        finding.severity = _raise_one(finding.severity)
        finding.flags.add("ccim-evidence-override")


def calibrate_one(finding: Finding, ccim: CcimModel) -> Finding:
    """Single-finding application of the six-rule set (rule 5, duplicate
    marking, only makes sense over the whole set and is skipped here)."""
    _apply_rules_1_to_4(finding, ccim)
    _apply_rule_6(finding, ccim)
    return finding


def recalibrate_severity(findings: list[Finding], ccim: CcimModel) -> list[Finding]:
    """Apply the six rules in order; rule 5 keeps only the most impactful
    member of each root-cause duplicate group."""
    for f in findings:
        _apply_rules_1_to_4(f, ccim)

    # (5) root-cause duplicates: mark, keep the most impactful
    groups: dict[tuple, list[Finding]] = {}
    for f in findings:
        key = (tuple(sorted(f.affected_functions)), classify_claim(f))
        groups.setdefault(key, []).append(f)
    kept: list[Finding] = []
    for key in sorted(groups, key=str):
        members = groups[key]
        members.sort(key=lambda f: (-SEVERITY_RANK[f.severity], -f.confidence, f.id))
        winner = members[0]
        if len(members) > 1:
            winner.flags.add("root-cause-duplicate")
            winner.matched_ids.extend(m.id for m in members[1:])
            for loser in members[1:]:
                log.info("duplicate finding %r folded into %r", loser.title, winner.title)
        kept.append(winner)
    kept.sort(key=lambda f: f.sort_key())

    for f in kept:
        _apply_rule_6(f, ccim)
    return kept


# --- pipeline runner --------------------------------------------------------


def id_run(ccim: CcimModel, source: AuditSource, merged: MergedSignals,
           reasoner: Reasoner, *, budget: int = DEFAULT_CHAR_BUDGET,
           max_pairs: int = 16, annotations: dict | None = None) -> list[Finding]:
    """Full interaction-driven pipeline: pair selection -> spec inference ->
    spec-then-verify (+ standalone slots) -> stage-5 cleanup."""
    notes = annotations if annotations is not None else {}
    pairs = select_pairs(ccim, merged, reasoner, budget)[:max_pairs]
    notes["pairs"] = [tuple(map(".".join, c.pair)) for c in pairs]

    findings: list[Finding] = []
    for cand in pairs:
        spec = infer_spec(cand.pair, ccim, reasoner, budget)
        findings.extend(spec_verify(cand.pair, spec, ccim, reasoner, budget))
    findings.extend(audit_standalone(ccim, reasoner, budget))

    findings = self_contradiction_filter(findings)
    findings = recalibrate_severity(findings, ccim)
    return renumber(findings, "I")
