"""Rule-catalogue pattern detectors: oracle staleness, arithmetic ordering,
unsafe casts, signature replay, unchecked blocks, assembly pitfalls and the
semantic-unit mismatch check. One failing rule never blocks the others."""

from __future__ import annotations

import logging
import re

from ..ccim import CcimModel, FunctionRecord, mask_noncode
from ..ingest import AuditSource
from .signal import Signal

log = logging.getLogger(__name__)

_ASSEMBLY_RE = re.compile(r"\bassembly\s*(?:\([^)]*\)\s*)?\{")


def _line_in(record: FunctionRecord, pos: int) -> int:
    return record.src[0] + record.body.count("\n", 0, pos)


def _assembly_blocks(body: str) -> list[tuple[int, str]]:
    blocks = []
    for m in _ASSEMBLY_RE.finditer(body):
        open_pos = body.find("{", m.start())
        depth = 0
        for i in range(open_pos, len(body)):
            if body[i] == "{":
                depth += 1
            elif body[i] == "}":
                depth -= 1
                if depth == 0:
                    blocks.append((m.start(), body[open_pos:i + 1]))
                    break
    return blocks


def _rule_oracle_staleness(rec: FunctionRecord, body: str):
    for m in re.finditer(r"\.\s*(latestAnswer|latestRoundData)\s*\(", body):
        if "updatedAt" not in body and "staleness" not in body.lower():
            yield ("CUSTOM", "custom-oracle-staleness", "HIGH", 0.7, m.start(),
                   f"{m.group(1)} consumed without checking updatedAt for staleness")


def _rule_div_before_mul(rec: FunctionRecord, body: str):
    for m in re.finditer(r"[\w\)\]]\s*/\s*[\w\(][\w\.\(\)\[\]]*\s*\*", body):
        stmt_start = body.rfind(";", 0, m.start()) + 1
        if "/" in body[stmt_start:m.end()]:
            yield ("MATH", "math-div-before-mul", "MEDIUM", 0.6, m.start(),
                   "division before multiplication loses precision")


def _rule_unsafe_downcast(rec: FunctionRecord, body: str):
    for m in re.finditer(r"\b(u?int(?:8|16|32|64|96|128))\s*\(\s*[A-Za-z_]", body):
        yield ("MATH", "math-unsafe-downcast", "MEDIUM", 0.55, m.start(),
               f"narrowing cast to {m.group(1)} can silently truncate")


def _rule_signature_replay(rec: FunctionRecord, body: str):
    m = re.search(r"\becrecover\s*\(", body)
    if not m:
        return
    if not re.search(r"nonce", body, re.I):
        yield ("SIG", "sig-missing-nonce", "HIGH", 0.65, m.start(),
               "ecrecover-verified payload consumes no nonce; signatures are replayable")
    if not re.search(r"deadline|expiry|expiration", body, re.I):
        yield ("SIG", "sig-missing-deadline", "MEDIUM", 0.5, m.start(),
               "signature verification without a deadline bound")


def _rule_unchecked_arithmetic(rec: FunctionRecord, body: str):
    for m in re.finditer(r"\bunchecked\s*\{", body):
        open_pos = body.find("{", m.start())
        depth, block = 0, ""
        for i in range(open_pos, len(body)):
            if body[i] == "{":
                depth += 1
            elif body[i] == "}":
                depth -= 1
                if depth == 0:
                    block = body[open_pos:i + 1]
                    break
        if re.search(r"[\w\]]\s*(\+|-|\*)[^+\-=]", block):
            yield ("MATH", "math-unchecked-arithmetic", "MEDIUM", 0.5, m.start(),
                   "arithmetic inside an unchecked block wraps silently")


def _rule_assembly(rec: FunctionRecord, body: str):
    for pos, block in _assembly_blocks(body):
        if "delegatecall" in block:
            yield ("ASM", "asm-delegatecall", "HIGH", 0.7, pos,
                   "delegatecall inside assembly forwards full control over storage")
        if "returndatacopy" in block or "returndatasize" in block:
            yield ("ASM", "asm-returndata", "INFO", 0.4, pos,
                   "raw returndata handling in assembly; verify size checks")


def _rule_semantic_units(rec: FunctionRecord, body: str):
    # reduced-scope semantic-type check: timestamp values compared with or
    # assigned to block-number-named quantities
    for stmt in re.finditer(r"[^;{}]+", body):
        text = stmt.group(0)
        if "block.timestamp" in text and re.search(r"\b(block\.number|\w*[bB]lockNumber\w*|startBlock|endBlock|\w+Block)\b", text):
            yield ("CCPTI", "ccpti-unit-mismatch", "MEDIUM", 0.5, stmt.start(),
                   "timestamp value mixed with a block-number quantity in one expression")


_RULES = (
    _rule_oracle_staleness,
    _rule_div_before_mul,
    _rule_unsafe_downcast,
    _rule_signature_replay,
    _rule_unchecked_arithmetic,
    _rule_assembly,
    _rule_semantic_units,
)


def run_pattern_detectors(ccim: CcimModel, source: AuditSource) -> list[Signal]:
    signals: list[Signal] = []
    scope = {c for c in ccim.scope if ccim.resolution.kinds.get(c, "contract") == "contract"}
    for rec in sorted(ccim.records, key=lambda r: r.src[0]):
        if rec.owner not in scope or "{" not in rec.body:
            continue
        body = mask_noncode(rec.body)
        for rule in _RULES:
            try:
                for tag, rule_id, severity, confidence, pos, desc in rule(rec, body):
                    signals.append(Signal(
                        source_tag=tag, id=rule_id, description=desc,
                        severity=severity, confidence=confidence,
                        function=rec.key, line_hint=_line_in(rec, pos),
                    ))
            except Exception as exc:
                log.warning("pattern rule %s failed on %s.%s (%s); continuing",
                            rule.__name__, rec.owner, rec.name, exc)
    return signals
