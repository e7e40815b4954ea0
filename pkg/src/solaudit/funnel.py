"""Staged false-positive reduction: deterministic claim refutation, structural
filters, evidence-constrained re-verification, scoring (applied at merge) and
the two-layer structural verdict engine. Stages are applied in cost order and
never create findings."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

from . import prompts
from .ccim import CcimModel, FunctionRecord
from .dossier import (
    ROUTE_ADMIN_TRUST,
    ROUTE_GRAPH_SKIP,
    ROUTE_NEEDS_REASONER,
    ROUTE_VECTOR_CONFIRMED,
    phase_d_claim_first,
    phase_d_prefilter,
    phase_e_package,
)
from .engines import MergedSignals
from .findings import Finding, classify_claim, classify_impact
from .ingest import AuditSource
from .interaction import SELF_DISPROVING_PHRASES
from .merge import MergedFindingSet
from .reasoner import DEFAULT_CHAR_BUDGET, Reasoner, ReasonerError, ReasonerRequest

log = logging.getLogger(__name__)

_CENTRALIZATION_RE = re.compile(
    r"centraliz|too powerful|full control over|single point of failure|rug[- ]?pull", re.I)
_EXTERNAL_CALL_CLAIM_RE = re.compile(r"\bexternal call\b|\bcalls? out\b", re.I)


@dataclass(frozen=True)
class VerdictRecord:
    finding_id: str
    stage: str
    verdict: str                # DISPROVED | CONFIRMED | UNCERTAIN | FILTERED | PASSED
    evidence: str
    reasoner_used: bool = False


def _records(finding: Finding, ccim: CcimModel) -> list[FunctionRecord]:
    return [r for k in finding.affected_functions if (r := ccim.record(*k)) is not None]


def _name_resolvable(finding: Finding, ccim: CcimModel) -> bool:
    for owner, name in finding.affected_functions:
        if ccim.record(owner, name) is not None or ccim.function_named(name):
            return True
    return False


def _guard_line(rec: FunctionRecord) -> int:
    for i, line in enumerate(rec.body.split("\n")):
        if "require(" in line and "msg.sender" in line:
            return rec.src[0] + i
    return rec.src[0]  # the modifier sits on the header line


def _has_nonreentrant(rec: FunctionRecord) -> bool:
    return "nonReentrant" in {m.split("(")[0] for m in rec.modifiers}


def _cite_line(finding: Finding, ccim: CcimModel) -> int:
    recs = _records(finding, ccim)
    if recs:
        return recs[0].src[0]
    return finding.evidence_lines[0] if finding.evidence_lines else 1


def stage1_verify(finding: Finding, ccim: CcimModel) -> VerdictRecord:
    """Treat the finding as a testable proposition about parsed ground truth;
    no reasoner is consulted."""
    claim = classify_claim(finding)
    recs = _records(finding, ccim)

    if claim == "EVM_RACE":
        return VerdictRecord(finding.id, "stage1", "DISPROVED",
                             f"line {_cite_line(finding, ccim)}: transactions execute atomically; "
                             f"race conditions are structurally impossible")
    if claim == "MISSING_ACCESS_CONTROL" and recs and all(ccim.is_admin(r.key) for r in recs):
        line = _guard_line(recs[0])
        return VerdictRecord(finding.id, "stage1", "DISPROVED",
                             f"line {line}: verified admin guard present "
                             f"({', '.join(recs[0].modifiers) or recs[0].guards[0]})")
    if claim == "REENTRANCY" and recs and all(_has_nonreentrant(r) for r in recs):
        return VerdictRecord(finding.id, "stage1", "DISPROVED",
                             f"line {recs[0].src[0]}: every affected function is nonReentrant-guarded")
    if claim == "INTEGER_OVERFLOW_GE08" and recs and all(r.pragma_ge_08 for r in recs) \
            and not any("unchecked" in r.body for r in recs):
        return VerdictRecord(finding.id, "stage1", "DISPROVED",
                             f"line {recs[0].src[0]}: solc >= 0.8 checked arithmetic and "
                             f"no unchecked block in the affected span")
    return VerdictRecord(finding.id, "stage1", "PASSED", claim)


def stage2_filter(finding: Finding, ccim: CcimModel) -> VerdictRecord:
    """Structural-locus filters: generic centralization complaints,
    self-disproving narratives, unresolvable function citations."""
    if _CENTRALIZATION_RE.search(finding.text()) and not finding.evidence_lines:
        return VerdictRecord(finding.id, "stage2", "FILTERED",
                             "centralization complaint without a concrete exploit path")
    text = f"{finding.description} {finding.attack_scenario}".lower()
    if any(p in text for p in SELF_DISPROVING_PHRASES):
        return VerdictRecord(finding.id, "stage2", "FILTERED",
                             "self-disproving evidence text")
    if finding.affected_functions and not _name_resolvable(finding, ccim):
        missing = ", ".join(f"{o}.{n}" for o, n in finding.affected_functions)
        return VerdictRecord(finding.id, "stage2", "FILTERED",
                             f"cited functions unresolvable against the interaction model: {missing}")
    return VerdictRecord(finding.id, "stage2", "PASSED", "")


def stage3_route_and_verify(finding: Finding, ccim: CcimModel, source: AuditSource,
                            reasoner: Reasoner, signals: MergedSignals | None = None,
                            budget: int = DEFAULT_CHAR_BUDGET) -> VerdictRecord:
    """The only reasoner-bearing stage; the three deterministic short-circuits
    bypass it whenever the verdict is structurally decidable."""
    route = phase_d_prefilter(finding, ccim, signals)
    if route == ROUTE_ADMIN_TRUST:
        finding.severity = "LOW"
        finding.flags.add("admin-trust")
        return VerdictRecord(finding.id, "stage3", "PASSED", "admin-trust short-circuit")
    if route == ROUTE_VECTOR_CONFIRMED:
        finding.flags.add("vector-confirmed")
        return VerdictRecord(finding.id, "stage3", "CONFIRMED", "vector-confirmed short-circuit")
    if route == ROUTE_GRAPH_SKIP:
        return VerdictRecord(finding.id, "stage3", "DISPROVED",
                             f"line {_cite_line(finding, ccim)}: affected functions are view/pure "
                             f"and absent from the call graph; claim unreachable")
    verdict = phase_d_claim_first(finding, ccim, source, reasoner, budget)
    mapped = {"DISPROVED": "DISPROVED", "CONFIRMED": "CONFIRMED"}.get(verdict, "UNCERTAIN")
    return VerdictRecord(finding.id, "stage3", mapped, "claim-first protocol", reasoner_used=True)


# --- structural verdict engine ---------------------------------------------


def sve_layer1(finding: Finding, ccim: CcimModel) -> VerdictRecord:
    """Eight deterministic ground-truth checks; first failure disproves with
    the check name and a cited line."""
    claim = classify_claim(finding)
    impact = classify_impact(finding.text())
    recs = _records(finding, ccim)

    def disproved(check: str, line: int, note: str) -> VerdictRecord:
        return VerdictRecord(finding.id, "sve_layer1", "DISPROVED",
                             f"check {check}, line {line}: {note}")

    # (1) claimed reentrancy on guarded functions
    if claim == "REENTRANCY" and recs and all(_has_nonreentrant(r) for r in recs):
        return disproved("1:reentrancy-guard", recs[0].src[0], "nonReentrant on every affected function")
    # (2) claimed fund-theft on functions that move no funds
    if impact == "fund-theft" and recs and not any(ccim.footprints.fund.get(r.key, False) for r in recs):
        return disproved("2:no-fund-movement", recs[0].src[0], "no affected function moves funds")
    # (3) claimed state corruption on view/pure functions
    if impact == "state-corruption" and recs and all(r.mut in ("view", "pure") for r in recs):
        return disproved("3:view-pure", recs[0].src[0], "affected functions cannot write state")
    # (4) access-control claim against a present admin guard
    if claim == "MISSING_ACCESS_CONTROL" and recs and all(ccim.is_admin(r.key) for r in recs):
        return disproved("4:admin-guard", _guard_line(recs[0]), "admin guard parsed on the function")
    # (5) overflow claim against checked arithmetic
    if claim == "INTEGER_OVERFLOW_GE08" and recs and all(r.pragma_ge_08 for r in recs) \
            and not any("unchecked" in r.body for r in recs):
        return disproved("5:checked-arithmetic", recs[0].src[0], "solc >= 0.8 and no unchecked block")
    # (6) cited functions must exist in the inventory
    if finding.affected_functions and not _name_resolvable(finding, ccim):
        return disproved("6:function-inventory", _cite_line(finding, ccim),
                         "no cited function exists in the parsed inventory")
    # (7) evidence lines must fall inside the claimed functions' spans
    if finding.evidence_lines and recs:
        spans = [(r.src[0], r.src[1]) for r in recs]
        for line in finding.evidence_lines:
            if not any(lo <= line <= hi for lo, hi in spans):
                return disproved("7:evidence-span", line, "cited evidence line outside every "
                                                          "affected function span")
    # (8) claimed external call on functions with no call sites
    if _EXTERNAL_CALL_CLAIM_RE.search(finding.text()) and recs \
            and all(not r.call_sites for r in recs):
        return disproved("8:no-external-call", recs[0].src[0],
                         "no affected function issues an external call")
    return VerdictRecord(finding.id, "sve_layer1", "PASSED", "all eight checks passed")


def sve_layer2(finding: Finding, ccim: CcimModel, source: AuditSource,
               reasoner: Reasoner, budget: int = DEFAULT_CHAR_BUDGET) -> VerdictRecord:
    """Final evidence-packaged verdict; parse failures and backend failures
    degrade to UNCERTAIN, never to DISPROVED."""
    evidence = {
        "access_control": phase_e_package(finding, ccim),
        "sources": [r.body for r in _records(finding, ccim)],
        "evidence_lines": finding.evidence_lines,
    }
    prompt = prompts.SVE_LAYER2.format(
        version=prompts.PROMPT_VERSION, title=finding.title,
        severity=finding.severity, description=finding.description,
        evidence=json.dumps(evidence, indent=1, sort_keys=True),
    )[:budget]
    try:
        response = reasoner.respond(ReasonerRequest("sve_layer2", prompt, "sve_layer2", budget))
    except ReasonerError as exc:
        log.warning("layer-2 verification failed on %s (%s); UNCERTAIN", finding.id, exc)
        return VerdictRecord(finding.id, "sve_layer2", "UNCERTAIN", "backend failure",
                             reasoner_used=True)
    if not response.ok:
        return VerdictRecord(finding.id, "sve_layer2", "UNCERTAIN", "unparseable reply",
                             reasoner_used=True)
    verdict = str(response.payload.get("verdict", "UNCERTAIN")).upper()
    argument = str(response.payload.get("argument") or response.payload.get("quote") or "")
    if verdict == "VERIFIED":
        return VerdictRecord(finding.id, "sve_layer2", "CONFIRMED", argument, reasoner_used=True)
    if verdict == "DISPROVED" and argument.strip():
        return VerdictRecord(finding.id, "sve_layer2", "DISPROVED", argument, reasoner_used=True)
    return VerdictRecord(finding.id, "sve_layer2", "UNCERTAIN", argument, reasoner_used=True)


# --- the funnel --------------------------------------------------------------

_STAGE_DROPS = {"DISPROVED", "FILTERED"}


def run_funnel(merged: MergedFindingSet, ccim: CcimModel, source: AuditSource,
               reasoner: Reasoner, signals: MergedSignals | None = None,
               budget: int = DEFAULT_CHAR_BUDGET) -> tuple[list[Finding], dict]:
    """Apply the stages in cost order over the merged set. Output of every
    stage is a subset of its input; stage failures degrade to pass-through."""
    stats: dict = {"stages": [], "records": []}
    current = list(merged.findings)

    def apply_stage(name: str, fn) -> None:
        nonlocal current
        survivors = []
        tally: dict[str, int] = {}
        for f in current:
            try:
                record = fn(f)
            except Exception as exc:
                log.warning("%s failed on %s (%s); passing through", name, f.id, exc)
                record = VerdictRecord(f.id, name, "PASSED", "stage failure; recall-preserving pass")
            stats["records"].append(record)
            tally[record.verdict] = tally.get(record.verdict, 0) + 1
            if record.verdict in _STAGE_DROPS:
                continue
            if record.verdict == "UNCERTAIN" and name == "sve_layer2":
                f.flags.add("unverified")
            survivors.append(f)
        stats["stages"].append({"stage": name, "in": len(current), "out": len(survivors),
                                "verdicts": tally})
        current = survivors

    apply_stage("stage1", lambda f: stage1_verify(f, ccim))
    apply_stage("stage2", lambda f: stage2_filter(f, ccim))
    apply_stage("stage3", lambda f: stage3_route_and_verify(f, ccim, source, reasoner,
                                                            signals, budget))
    # stage 4 (clustering and scoring) already ran inside the merge; the funnel
    # re-reads the post-merge confidence without touching membership
    stats["stages"].append({"stage": "stage4", "in": len(current), "out": len(current),
                            "verdicts": {"SCORED": len(current)}})
    apply_stage("sve_layer1", lambda f: sve_layer1(f, ccim))
    apply_stage("sve_layer2", lambda f: sve_layer2(f, ccim, source, reasoner, budget))

    stats["final"] = len(current)
    return current, stats


def stats_to_dict(stats: dict) -> dict:
    return {
        "stages": stats["stages"],
        "final": stats.get("final", 0),
        "verdicts": [
            {"finding": r.finding_id, "stage": r.stage, "verdict": r.verdict,
             "evidence": r.evidence, "reasoner_used": r.reasoner_used}
            for r in stats.get("records", [])
        ],
    }
