"""Shared finding model: severity scale, candidate-vulnerability records and
the structural card used for root-cause clustering."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

SEVERITIES = ("INFO", "LOW", "MEDIUM", "HIGH", "CRITICAL")
SEVERITY_RANK = {s: i for i, s in enumerate(SEVERITIES)}

CONF_MIN = 0.05
CONF_MAX = 0.95

ATTACKER_ROLES = ("unauthenticated", "user", "admin", "contract")
IMPACT_CLASSES = ("fund-theft", "fund-freeze", "state-corruption",
                  "privilege-escalation", "dos", "info")

# keyword table for impact classification; first matching class wins
IMPACT_KEYWORDS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("fund-theft", ("steal", "stolen", "theft", "drain", "reentran", "siphon",
                    "loss of funds", "funds can be taken", "extract value")),
    ("fund-freeze", ("freeze", "frozen", "locked", "stuck", "cannot withdraw",
                     "unwithdrawable")),
    ("privilege-escalation", ("access control", "unauthorized", "privilege",
                              "ownership", "takeover", "anyone can call",
                              "missing onlyowner", "escalat")),
    ("state-corruption", ("corrupt", "inconsistent state", "desync",
                          "overwrite", "stale state", "accounting error",
                          "double count")),
    ("dos", ("denial of service", "dos", "revert loop", "gas grief",
             "out of gas", "unbounded loop", "brick")),
)


def clamp_confidence(value: float) -> float:
    return max(CONF_MIN, min(CONF_MAX, value))


def severity_cap(severity: str, ceiling: str) -> str:
    return ceiling if SEVERITY_RANK[severity] > SEVERITY_RANK[ceiling] else severity


def severity_down(severity: str) -> str:
    return SEVERITIES[max(0, SEVERITY_RANK[severity] - 1)]


def classify_impact(text: str) -> str:
    low = text.lower()
    for impact, keywords in IMPACT_KEYWORDS:
        if any(k in low for k in keywords):
            return impact
    return "info"


@dataclass(frozen=True)
class StructuralCard:
    vulnerable_function: tuple[str, str]
    abused_state_variable: str | None
    attacker_role: str
    impact_class: str
    low_fidelity: bool = False

    def cluster_key(self) -> tuple:
        # attacker_role is reporting metadata, not part of root-cause identity
        return (self.vulnerable_function, self.abused_state_variable, self.impact_class)


@dataclass
class Finding:
    id: str
    pipeline: str                         # "D" or "I"
    title: str
    description: str
    attack_scenario: str
    severity: str
    affected_functions: list[tuple[str, str]]
    evidence_lines: list[int] = field(default_factory=list)
    confidence: float = 0.4
    card: StructuralCard | None = None
    flags: set[str] = field(default_factory=set)
    matched_ids: list[str] = field(default_factory=list)

    def text(self) -> str:
        return " ".join((self.title, self.description, self.attack_scenario))

    def sort_key(self) -> tuple:
        return (-SEVERITY_RANK.get(self.severity, 0), -self.confidence, self.id)


_ID_COUNTER_WIDTH = 3


def renumber(findings: list[Finding], pipeline: str) -> list[Finding]:
    """Assign pipeline-unique ids (D-001, ...); keeps the two id spaces disjoint."""
    for i, f in enumerate(findings, start=1):
        f.id = f"{pipeline}-{i:0{_ID_COUNTER_WIDTH}d}"
        f.pipeline = pipeline
    return findings


def finding_from_payload(payload: dict, pipeline: str,
                         default_functions: list[tuple[str, str]] | None = None) -> Finding | None:
    """Build a Finding from a structured reasoner payload, tolerating missing
    fields; returns None when no affected function can be attributed."""
    functions: list[tuple[str, str]] = []
    for item in payload.get("functions") or payload.get("affected_functions") or []:
        if isinstance(item, (list, tuple)) and len(item) == 2:
            functions.append((str(item[0]), str(item[1])))
        elif isinstance(item, str) and "." in item:
            owner, name = item.split(".", 1)
            functions.append((owner, name))
    if not functions:
        functions = list(default_functions or [])
    if not functions:
        return None
    severity = str(payload.get("severity", "MEDIUM")).upper()
    if severity not in SEVERITY_RANK:
        severity = "MEDIUM"
    lines = [int(x) for x in payload.get("evidence_lines", []) if isinstance(x, (int, float))]
    single = payload.get("evidence_line")
    if isinstance(single, (int, float)):
        lines.append(int(single))
    conf = payload.get("confidence")
    confidence = clamp_confidence(float(conf)) if isinstance(conf, (int, float)) else 0.4
    return Finding(
        id="pending",
        pipeline=pipeline,
        title=str(payload.get("title", "")).strip() or "unnamed finding",
        description=str(payload.get("description", "")),
        attack_scenario=str(payload.get("attack_scenario", "")),
        severity=severity,
        affected_functions=functions,
        evidence_lines=sorted(set(lines)),
        confidence=confidence,
    )


# claim-type classification shared by the reduction funnel and verdict engine

CLAIM_TYPES = ("MISSING_ACCESS_CONTROL", "REENTRANCY", "INTEGER_OVERFLOW_GE08",
               "EVM_RACE", "OTHER")

_CLAIM_RES: tuple[tuple[str, re.Pattern], ...] = (
    ("EVM_RACE", re.compile(r"\brace condition\b|\bevm race\b", re.I)),
    ("REENTRANCY", re.compile(r"\breentran", re.I)),
    ("INTEGER_OVERFLOW_GE08", re.compile(r"\boverflow\b|\bunderflow\b|\bwrap[- ]?around\b", re.I)),
    ("MISSING_ACCESS_CONTROL", re.compile(
        r"missing access control|lacks? access control|no access control|"
        r"without access control|anyone can call|unauthorized caller|"
        r"missing only\w+ modifier|unprotected", re.I)),
)


def classify_claim(finding: Finding) -> str:
    text = finding.text()
    for kind, rx in _CLAIM_RES:
        if rx.search(text):
            return kind
    return "OTHER"
