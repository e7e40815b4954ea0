"""Dossier compilation and the dossier-driven audit pipeline (phases A-E):
per-function risk dossiers, checklist verification, discovery passes,
deterministic re-verification routing and severity recalibration."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from . import prompts
from .ccim import CcimModel, FnKey, FunctionRecord
from .engines import MergedSignals, render_markdown
from .findings import SEVERITY_RANK, Finding, finding_from_payload, renumber
from .ingest import AuditSource
from .reasoner import DEFAULT_CHAR_BUDGET, Reasoner, ReasonerError, ReasonerRequest

log = logging.getLogger(__name__)

ROUTE_ADMIN_TRUST = "ADMIN_TRUST"
ROUTE_VECTOR_CONFIRMED = "VECTOR_CONFIRMED"
ROUTE_GRAPH_SKIP = "GRAPH_SKIP"
ROUTE_NEEDS_REASONER = "NEEDS_REASONER"

VECTOR_MIN_CONFIDENCE = 0.8
VECTOR_MIN_TRACE_CHARS = 30

# attack-vector pattern catalogue: signal-id prefix -> finding keywords; a
# finding matches when a same-function signal corroborates the same class
DEFAULT_VECTOR_CATALOGUE: dict[str, tuple[str, ...]] = {
    "custom-oracle-staleness": ("oracle", "stale", "price feed"),
    "sig-missing-nonce": ("replay", "signature"),
    "cir-stale-approval": ("approval", "allowance", "stale"),
    "bva-locked-ether": ("locked", "stuck", "frozen"),
    "bva-formula-mismatch": ("formula", "inconsistent", "accounting"),
    "asm-delegatecall": ("delegatecall",),
    "math-div-before-mul": ("precision", "rounding", "division"),
    "sli-reentrancy": ("reentran",),
    "myt-integer": ("overflow", "underflow"),
}

CCIM_ITEM_CONFIDENCE_ROT = 0.6
CCIM_ITEM_CONFIDENCE_TRUSTGAP = 0.55


@dataclass(frozen=True)
class RiskItem:
    source_tag: str
    id: str
    description: str
    confidence: float
    line_hint: int | None


@dataclass
class Dossier:
    function: FnKey
    facts: FunctionRecord
    risk_items: list[RiskItem] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.risk_items)


@dataclass(frozen=True)
class ChecklistVerdict:
    item_id: str
    verdict: str                  # REAL | FALSE_POSITIVE | UNCLEAR
    evidence_line: int | None


@dataclass(frozen=True)
class InteractionGroup:
    kind: str                     # "pair" | "nway"
    members: tuple[FnKey, ...]
    subject: str                  # shared variable or "call"


def compile_dossiers(ccim: CcimModel, merged: MergedSignals) -> list[Dossier]:
    """One dossier per non-interface function; every merged signal attached to
    its target function, with a line-range fallback for name misses."""
    dossiers: dict[FnKey, Dossier] = {}
    for rec in sorted(ccim.records, key=lambda r: r.src[0]):
        if ccim.resolution.kinds.get(rec.owner) == "interface":
            continue
        dossiers[rec.key] = Dossier(function=rec.key, facts=rec)

    def attach(key: FnKey | None, item: RiskItem, line: int | None):
        if key in dossiers:
            dossiers[key].risk_items.append(item)
            return
        if line is not None:
            rec = ccim.record_at_line(line)
            if rec is not None and rec.key in dossiers:
                dossiers[rec.key].risk_items.append(item)
                return
        log.warning("risk item %s names unknown function %s and no usable line; dropped",
                    item.id, key)

    for s in merged.retained:
        attach(s.function, RiskItem(s.source_tag, s.id, s.description, s.confidence, s.line_hint),
               s.line_hint)

    # interaction-model layer-2 facts become risk items of their own
    for var in sorted(ccim.deps.rot):
        for reader in sorted(ccim.deps.readers.get(var, frozenset())):
            attach(reader, RiskItem(
                "CCIM", "ccim-rotation-risk",
                f"{var} is admin-rotatable and consumed as a call target or approval recipient",
                CCIM_ITEM_CONFIDENCE_ROT, None), None)
    for (c1, c2) in sorted(ccim.trust.trustgap):
        for (f, g) in sorted(ccim.graph.edges):
            if f[0] == c1 and g[0] == c2 and f in dossiers:
                attach(f, RiskItem(
                    "CCIM", "ccim-trust-gap",
                    f"{c1} assumes post-conditions of {c2} that {c2} does not enforce",
                    CCIM_ITEM_CONFIDENCE_TRUSTGAP, None), None)

    for d in dossiers.values():
        d.risk_items.sort(key=lambda it: (-it.confidence, it.source_tag, it.id))
    return list(dossiers.values())


def _facts_block(rec: FunctionRecord) -> str:
    return (
        f"visibility={rec.vis} mutability={rec.mut} modifiers={list(rec.modifiers)}\n"
        f"guards={list(rec.guards)}\n"
        f"reads={sorted(rec.reads)} writes={sorted(rec.writes)}\n"
        f"external_calls={[(s.target, s.method, s.line) for s in rec.call_sites]}\n"
        f"moves_funds={rec.fund_flag} span={rec.src}\n"
        f"source:\n{rec.body}"
    )


def phase_a_verify(dossier: Dossier, reasoner: Reasoner,
                   budget: int = DEFAULT_CHAR_BUDGET) -> list[Finding]:
    """Checklist verification of one flagged dossier; REAL items with an
    evidence citation become findings."""
    if not dossier.flagged:
        raise ValueError(f"dossier for {dossier.function} is unflagged; phase A must not run")
    items_text = "\n".join(
        f"- item-{i}: [{it.source_tag}/{it.id} conf={it.confidence:.2f}] {it.description}"
        + (f" (line {it.line_hint})" if it.line_hint else "")
        for i, it in enumerate(dossier.risk_items, start=1)
    )
    prompt = prompts.PHASE_A.format(
        version=prompts.PROMPT_VERSION, fp_rules=prompts.BUILTIN_FP_RULES,
        owner=dossier.function[0], name=dossier.function[1],
        facts=_facts_block(dossier.facts), items=items_text,
    )
    try:
        response = reasoner.respond(ReasonerRequest("phase_a", prompt, "phase_a", budget))
    except ReasonerError as exc:
        log.warning("phase A reasoner failure on %s (%s); no findings", dossier.function, exc)
        return []
    if not response.ok:
        log.warning("phase A output unparseable for %s; all items UNCLEAR", dossier.function)
        return []

    findings: list[Finding] = []
    for raw in response.payload.get("items", []):
        if not isinstance(raw, dict):
            continue
        verdict = str(raw.get("verdict", "UNCLEAR")).upper()
        line = raw.get("evidence_line")
        line = int(line) if isinstance(line, (int, float)) else None
        if verdict == "REAL" and line is None:
            log.warning("REAL verdict without evidence line on %s; demoted to UNCLEAR",
                        dossier.function)
            verdict = "UNCLEAR"
        if verdict != "REAL":
            continue
        payload = dict(raw)
        payload.setdefault("title", f"confirmed risk on {dossier.function[1]}")
        payload["evidence_line"] = line
        f = finding_from_payload(payload, "D", [dossier.function])
        if f is not None:
            findings.append(f)
    return findings


# --- discovery phases ------------------------------------------------------

DISCOVERY_LENSES = {
    "B": "per-contract bottom-up semantic analysis: logic flaws, economic "
         "inconsistencies, state-corruption paths, protocol-level attack scenarios",
    "B2": "invariant extraction and violation search",
    "B3": "systemic attack-path analysis across the whole protocol",
    "B4": "adversarial red-team review of prior findings",
    "B5": "state-machine lifecycle view with knowledge of earlier findings",
    "B6": "follow-up on uncovered bug classes from the coverage map",
}


def contract_priorities(ccim: CcimModel, merged: MergedSignals) -> list[tuple[str, float]]:
    """Contracts ordered by aggregated deterministic risk: the sum of retained
    signal confidences attributed to each contract's functions."""
    scores = {c: 0.0 for c in ccim.scope}
    for s in merged.retained:
        if s.function and s.function[0] in scores:
            scores[s.function[0]] += s.confidence
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def run_discovery_phase(tag: str, ccim: CcimModel, merged: MergedSignals,
                        reasoner: Reasoner, budget: int = DEFAULT_CHAR_BUDGET,
                        top_n: int = 3) -> list[Finding]:
    """Prompt-packaged discovery pass: prioritized contract context plus the
    signal record, findings parsed from the structured reply."""
    lens = DISCOVERY_LENSES.get(tag, DISCOVERY_LENSES["B"])
    ranked = contract_priorities(ccim, merged)[:top_n]
    blocks = []
    for contract, score in ranked:
        bodies = "\n".join(r.body for r in ccim.records if r.owner == contract)
        blocks.append(f"### {contract} (risk score {score:.2f})\n{bodies}")
    prompt = prompts.PHASE_B.format(
        version=prompts.PROMPT_VERSION, lens=lens,
        contracts="\n\n".join(blocks), signals=render_markdown(merged),
    )[:budget]
    try:
        response = reasoner.respond(ReasonerRequest(f"phase_{tag.lower()}", prompt, "phase_b", budget))
    except ReasonerError as exc:
        log.warning("discovery phase %s failed (%s); no findings", tag, exc)
        return []
    if not response.ok:
        return []
    out = []
    for raw in response.payload.get("findings", []):
        if isinstance(raw, dict):
            f = finding_from_payload(raw, "D")
            if f is not None:
                out.append(f)
    return out


# --- phase C ---------------------------------------------------------------


def build_phase_c_interactions(ccim: CcimModel) -> list[InteractionGroup]:
    """Writer/reader and caller/callee pairs plus N-way interference groups
    (three or more functions touching one variable)."""
    groups: list[InteractionGroup] = []
    seen: set[tuple] = set()
    for var in sorted(set(ccim.deps.writers) | set(ccim.deps.readers)):
        writers = ccim.deps.writers.get(var, frozenset())
        readers = ccim.deps.readers.get(var, frozenset())
        for w in sorted(writers):
            for r in sorted(readers):
                if w != r and ("pair", w, r, var) not in seen:
                    seen.add(("pair", w, r, var))
                    groups.append(InteractionGroup("pair", (w, r), var))
        touchers = sorted(writers | readers)
        if len(touchers) >= 3 and ("nway", var) not in seen:
            seen.add(("nway", var))
            groups.append(InteractionGroup("nway", tuple(touchers), var))
    for f, g in sorted(ccim.graph.edges):
        if ("pair", f, g, "call") not in seen:
            seen.add(("pair", f, g, "call"))
            groups.append(InteractionGroup("pair", (f, g), "call"))
    return groups


def run_phase_c(ccim: CcimModel, reasoner: Reasoner,
                groups: list[InteractionGroup] | None = None,
                budget: int = DEFAULT_CHAR_BUDGET) -> list[Finding]:
    groups = build_phase_c_interactions(ccim) if groups is None else groups
    findings = []
    for group in groups:
        members = "\n".join(
            f"// {k[0]}.{k[1]}\n{rec.body}"
            for k in group.members if (rec := ccim.record(*k)) is not None
        )
        subject = f"storage variable {group.subject}" if group.subject != "call" else "a call edge"
        prompt = prompts.PHASE_C.format(
            version=prompts.PROMPT_VERSION, subject=subject, members=members,
        )[:budget]
        try:
            response = reasoner.respond(ReasonerRequest("phase_c", prompt, "phase_c", budget))
        except ReasonerError as exc:
            log.warning("phase C reasoner failure on %s (%s)", group, exc)
            continue
        if not response.ok:
            continue
        verdict = str(response.payload.get("verdict", "UNCLEAR")).upper()
        if verdict != "VULNERABLE":
            continue
        payload = dict(response.payload)
        payload.setdefault("title", f"interference on {group.subject}")
        payload.setdefault("functions", [list(k) for k in group.members])
        f = finding_from_payload(payload, "D", list(group.members))
        if f is not None:
            findings.append(f)
    return findings


# --- phase D ---------------------------------------------------------------


def _vector_match(finding: Finding, signals: MergedSignals | None,
                  catalogue: dict[str, tuple[str, ...]]) -> bool:
    if signals is None:
        return False
    text = finding.text().lower()
    affected = set(finding.affected_functions)
    for s in signals.retained:
        if s.function not in affected:
            continue
        for prefix, keywords in catalogue.items():
            if s.id.startswith(prefix) and any(k in text for k in keywords):
                return True
    return False


def phase_d_prefilter(finding: Finding, ccim: CcimModel,
                      signals: MergedSignals | None = None,
                      catalogue: dict[str, tuple[str, ...]] | None = None) -> str:
    """Deterministic routing: exactly one of ADMIN_TRUST, VECTOR_CONFIRMED,
    GRAPH_SKIP or NEEDS_REASONER, in that precedence order."""
    catalogue = DEFAULT_VECTOR_CATALOGUE if catalogue is None else catalogue
    records = [r for k in finding.affected_functions if (r := ccim.record(*k)) is not None]

    external = [r for r in records if r.vis in ("public", "external")]
    if external and all(ccim.is_admin(r.key) for r in external):
        return ROUTE_ADMIN_TRUST

    if (_vector_match(finding, signals, catalogue)
            and finding.confidence >= VECTOR_MIN_CONFIDENCE
            and finding.evidence_lines
            and len(finding.attack_scenario) >= VECTOR_MIN_TRACE_CHARS):
        return ROUTE_VECTOR_CONFIRMED

    if records and all(r.mut in ("view", "pure") for r in records) \
            and not any(ccim.graph.touches(r.key) for r in records):
        return ROUTE_GRAPH_SKIP

    return ROUTE_NEEDS_REASONER


def expand_source_block(finding: Finding, ccim: CcimModel, budget: int) -> str:
    """Every function the finding mentions plus their callers and callees,
    truncated to the character budget."""
    keys: list[FnKey] = []
    for k in finding.affected_functions:
        if k not in keys and ccim.record(*k) is not None:
            keys.append(k)
    for k in list(keys):
        for neighbor in sorted(ccim.graph.callers(k) | ccim.graph.callees(k)):
            if neighbor not in keys and ccim.record(*neighbor) is not None:
                keys.append(neighbor)
    block = "\n\n".join(f"// {k[0]}.{k[1]}\n{ccim.record(*k).body}" for k in keys)
    return block[:budget]


def _normalize_quote(text: str) -> str:
    return " ".join(text.split())


def phase_d_claim_first(finding: Finding, ccim: CcimModel, source: AuditSource,
                        reasoner: Reasoner, budget: int = DEFAULT_CHAR_BUDGET) -> str:
    """Claim-first verification: DISPROVED is accepted only when the reply
    quotes a concrete preventing line present in the supplied source block."""
    shell = prompts.PHASE_D.format(
        version=prompts.PROMPT_VERSION, title=finding.title,
        description=finding.description, source_block="",
    )
    block = expand_source_block(finding, ccim, max(0, budget - len(shell)))
    prompt = prompts.PHASE_D.format(
        version=prompts.PROMPT_VERSION, title=finding.title,
        description=finding.description, source_block=block,
    )
    try:
        response = reasoner.respond(ReasonerRequest("phase_d", prompt, "phase_d", budget))
    except ReasonerError as exc:
        log.warning("phase D reasoner failure on %s (%s); UNCLEAR", finding.id, exc)
        finding.flags.add("reasoner-failure")
        return "UNCLEAR"
    if not response.ok:
        return "UNCLEAR"
    verdict = str(response.payload.get("verdict", "UNCLEAR")).upper()
    if verdict == "DISPROVED":
        quote = _normalize_quote(str(response.payload.get("quote", "")))
        if not quote or quote not in _normalize_quote(block):
            finding.flags.add("protocol-violation")
            log.warning("phase D DISPROVED without verifiable quote on %s; downgraded", finding.id)
            return "UNCLEAR"
    if verdict not in ("DISPROVED", "CONFIRMED", "UNCLEAR"):
        verdict = "UNCLEAR"
    return verdict


# --- phase E ---------------------------------------------------------------


def phase_e_package(finding: Finding, ccim: CcimModel) -> dict:
    """Recalibration evidence bundle: parsed access-control facts of every
    affected function plus the role hierarchy."""
    functions = []
    for k in finding.affected_functions:
        rec = ccim.record(*k)
        if rec is None:
            continue
        functions.append({
            "function": f"{k[0]}.{k[1]}",
            "visibility": rec.vis,
            "modifiers": list(rec.modifiers),
            "guards": list(rec.guards),
            "writes": sorted(ccim.footprints.writes.get(k, frozenset())),
            "moves_funds": ccim.footprints.fund.get(k, False),
            "admin": ccim.is_admin(k),
        })
    return {
        "functions": functions,
        "role_hierarchy": sorted(f"{o}.{n}" for o, n in ccim.admin_set),
    }


def phase_e_recalibrate(finding: Finding, ccim: CcimModel, reasoner: Reasoner,
                        budget: int = DEFAULT_CHAR_BUDGET) -> Finding:
    """Severity recalibration from access-control evidence. A scripted reply
    may set the severity directly; the deterministic default applies the
    shared six-rule set."""
    from .interaction import calibrate_one  # shared rule set with the pair pipeline

    bundle = phase_e_package(finding, ccim)
    prompt = prompts.PHASE_E.format(
        version=prompts.PROMPT_VERSION, title=finding.title,
        severity=finding.severity, description=finding.description,
        bundle=json.dumps(bundle, indent=1, sort_keys=True),
    )[:budget]
    try:
        response = reasoner.respond(ReasonerRequest("phase_e", prompt, "phase_e", budget))
    except ReasonerError as exc:
        log.warning("phase E reasoner failure on %s (%s); severity unchanged", finding.id, exc)
        return finding
    severity = response.payload.get("severity") if response.ok else None
    if isinstance(severity, str) and severity.upper() in SEVERITY_RANK:
        finding.severity = severity.upper()
        finding.flags.add("recalibrated")
    else:
        calibrate_one(finding, ccim)
    return finding


# --- pipeline runner -------------------------------------------------------


def dd_run(ccim: CcimModel, source: AuditSource, merged: MergedSignals,
           reasoner: Reasoner, *, budget: int = DEFAULT_CHAR_BUDGET,
           extra_phases: tuple[str, ...] = (),
           annotations: dict | None = None) -> list[Finding]:
    """Full dossier-driven pipeline: dossiers -> A -> discovery (B..) -> C ->
    D routing/claim-first -> E recalibration -> renumbered finding set."""
    notes = annotations if annotations is not None else {}
    dossiers = compile_dossiers(ccim, merged)
    flagged = [d for d in dossiers if d.flagged]
    notes["dossiers"] = len(dossiers)
    notes["flagged"] = len(flagged)

    findings: list[Finding] = []
    for d in flagged:
        findings.extend(phase_a_verify(d, reasoner, budget))
    for tag in ("B",) + tuple(extra_phases):
        findings.extend(run_discovery_phase(tag, ccim, merged, reasoner, budget))
    findings.extend(run_phase_c(ccim, reasoner, budget=budget))

    survivors: list[Finding] = []
    routes: dict[str, int] = {}
    for f in findings:
        route = phase_d_prefilter(f, ccim, merged)
        routes[route] = routes.get(route, 0) + 1
        if route == ROUTE_ADMIN_TRUST:
            f.severity = "LOW"
            f.flags.add("admin-trust")
            survivors.append(f)
        elif route == ROUTE_VECTOR_CONFIRMED:
            f.flags.add("vector-confirmed")
            survivors.append(f)
        elif route == ROUTE_GRAPH_SKIP:
            log.info("finding %r disproved as unreachable (view/pure, no call-graph presence)", f.title)
        else:
            verdict = phase_d_claim_first(f, ccim, source, reasoner, budget)
            if verdict == "DISPROVED":
                log.info("finding %r disproved by claim-first verification", f.title)
                continue
            if verdict == "UNCLEAR":
                f.flags.add("unverified")
            survivors.append(f)
    notes["phase_d_routes"] = routes

    for f in survivors:
        phase_e_recalibrate(f, ccim, reasoner, budget)
    return renumber(survivors, "D")
