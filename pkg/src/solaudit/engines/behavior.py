"""Behavioral engines over the interaction model: deviant-pattern mining,
stale-commitment detection, integration risk questions and the reduced-scope
precondition-consistency checker."""

from __future__ import annotations

import logging
import re

from ..ccim import CcimModel, FunctionRecord, mask_noncode
from .signal import Signal

log = logging.getLogger(__name__)

BPM_MIN_WRITERS = 3  # two writers cannot define a majority pattern


def _guard_patterns(record: FunctionRecord) -> frozenset[str]:
    mods = {m.split("(")[0] for m in record.modifiers}
    return frozenset(mods | set(record.guards))


def run_bpm(ccim: CcimModel) -> list[Signal]:
    """Writers that deviate from the majority guard or co-modification pattern
    of their variable's writer set."""
    signals: list[Signal] = []
    for var in sorted(ccim.deps.writers):
        writers = sorted(ccim.deps.writers[var])
        if len(writers) < BPM_MIN_WRITERS:
            continue
        records = {w: ccim.record(*w) for w in writers}
        patterns = {w: _guard_patterns(r) if r else frozenset() for w, r in records.items()}
        space = set().union(*patterns.values())
        majority = {}
        for p in sorted(space):
            holders = [w for w in writers if p in patterns[w]]
            if len(holders) * 2 > len(writers) and len(holders) < len(writers):
                majority[p] = len(holders) / len(writers)
        for w in writers:
            missing = sorted(p for p in majority if p not in patterns[w])
            if missing:
                rec = records[w]
                signals.append(Signal(
                    source_tag="BPM", id="bpm-guard-deviation",
                    description=(f"{w[0]}.{w[1]} writes {var} without the guard(s) "
                                 f"{', '.join(missing)} shared by the majority of writers"),
                    severity="MEDIUM",
                    confidence=round(max(majority[p] for p in missing), 2),
                    function=w, line_hint=rec.src[0] if rec else None,
                ))
        signals.extend(_comod_deviants(ccim, var, writers))
    return signals


def _comod_deviants(ccim: CcimModel, var: str, writers: list) -> list[Signal]:
    co_counts: dict[str, list] = {}
    for w in writers:
        for u_q in ccim.writes_q(w):
            if u_q != var:
                co_counts.setdefault(u_q, []).append(w)
    signals = []
    deviants: dict[tuple, list[str]] = {}
    for u in sorted(co_counts):
        holders = co_counts[u]
        if len(holders) * 2 > len(writers) and len(holders) < len(writers):
            for w in writers:
                if w not in holders:
                    deviants.setdefault(w, []).append(u)
    for w in sorted(deviants):
        rec = ccim.record(*w)
        signals.append(Signal(
            source_tag="BPM", id="bpm-comodification-deviation",
            description=(f"{w[0]}.{w[1]} writes {var} without also updating "
                         f"{', '.join(deviants[w])} as most writers do"),
            severity="MEDIUM", confidence=0.55,
            function=w, line_hint=rec.src[0] if rec else None,
        ))
    return signals


_APPROVE_ZERO_RE = re.compile(r"\.\s*(?:approve|safeApprove)\s*\(\s*[^,()]+,\s*0\s*\)")


def run_cir(ccim: CcimModel) -> list[Signal]:
    """Approval recipients rotated without a co-located revocation."""
    approved_vars = sorted({v for vs in ccim.deps.approvals.values() for v in vs})
    signals = []
    seen: set[tuple] = set()
    for var in approved_vars:
        for writer in sorted(ccim.deps.writers.get(var, frozenset())):
            if (writer, var) in seen:
                continue
            seen.add((writer, var))
            rec = ccim.record(*writer)
            if rec is None:
                continue
            if _APPROVE_ZERO_RE.search(mask_noncode(rec.body)):
                continue
            signals.append(Signal(
                source_tag="CIR", id="cir-stale-approval",
                description=(f"{writer[0]}.{writer[1]} rotates approval recipient {var} "
                             f"without revoking the outstanding approval (no approve-to-zero)"),
                severity="MEDIUM", confidence=0.65,
                function=writer, line_hint=rec.src[0],
            ))
    return signals


def run_ira(ccim: CcimModel) -> list[Signal]:
    """INFO-severity follow-up questions at external call boundaries; these
    prime later reasoning, they are not verdicts."""
    signals = []
    for rec in sorted(ccim.records, key=lambda r: r.src[0]):
        if not rec.call_sites:
            continue
        first_line = rec.call_sites[0].line

        def q(qid: str, text: str, line: int = first_line):
            signals.append(Signal(
                source_tag="IRA", id=qid, description=text,
                severity="INFO", confidence=0.3, function=rec.key, line_hint=line,
            ))

        q("ira-return-value",
          f"does {rec.name} handle the return values of its {len(rec.call_sites)} external call(s)?")
        if ccim.footprints.writes.get(rec.key):
            q("ira-reentrancy-window",
              f"{rec.name} writes state and calls out; is the write ordered safely around the call?")
        unresolved = [s for s in rec.call_sites
                      if ccim.resolution.resolve(ccim.resolution.var_id(rec.owner, s.target)) is None]
        if unresolved:
            q("ira-unresolved-target",
              f"call target(s) {', '.join(sorted({s.target for s in unresolved}))} in {rec.name} "
              f"do not resolve to an in-scope contract; what code runs there?",
              unresolved[0].line)
        for site in rec.call_sites:
            callee_contract = ccim.resolution.resolve(ccim.resolution.var_id(rec.owner, site.target))
            if callee_contract and (rec.owner, callee_contract) in ccim.trust.trustgap:
                q("ira-trust-gap",
                  f"{rec.owner} assumes post-conditions of {callee_contract} that "
                  f"{callee_contract} does not enforce toward {rec.owner}",
                  site.line)
                break
    return signals


# --- reduced-scope precondition consistency -------------------------------
# The full inferred-typestate algorithm is not reproduced here; preconditions
# are the require guards mentioning a parameter or state variable, and a chain
# is flagged when the caller establishes none of the callee's preconditions.


def infer_preconditions(record: FunctionRecord) -> frozenset[str]:
    tokens = set(record.params) | set(record.reads) | set(record.writes)
    out = set()
    for g in record.guards:
        idents = set(re.findall(r"[A-Za-z_]\w*", g))
        if idents & tokens:
            out.add(g)
    return frozenset(out)


def itpc_high_risk(record: FunctionRecord, fund_transitive: bool) -> bool:
    """Value-handling functions with unchecked arithmetic get standalone audit slots."""
    handles_value = fund_transitive or record.mut == "payable"
    return handles_value and "unchecked" in record.body


def run_itpc_lite(ccim: CcimModel) -> list[Signal]:
    signals = []
    by_owner: dict[str, dict[str, FunctionRecord]] = {}
    for r in ccim.records:
        by_owner.setdefault(r.owner, {})[r.name] = r

    chains: list[tuple[FunctionRecord, FunctionRecord]] = []
    for r in sorted(ccim.records, key=lambda r: r.src[0]):
        for callee_name in sorted(r.internal_calls):
            callee = by_owner.get(r.owner, {}).get(callee_name)
            if callee is not None and callee.key != r.key:
                chains.append((r, callee))
    for f_key, g_key in sorted(ccim.graph.edges):
        f_rec, g_rec = ccim.record(*f_key), ccim.record(*g_key)
        if f_rec is not None and g_rec is not None:
            chains.append((f_rec, g_rec))

    seen = set()
    for caller, callee in chains:
        pair = (caller.key, callee.key)
        if pair in seen:
            continue
        seen.add(pair)
        preconditions = infer_preconditions(callee)
        if not preconditions:
            continue
        established = set(caller.guards)
        missing = sorted(p for p in preconditions if p not in established)
        if missing:
            signals.append(Signal(
                source_tag="ITPC", id="itpc-precondition-gap",
                description=(f"{caller.owner}.{caller.name} reaches {callee.owner}.{callee.name} "
                             f"without establishing its precondition(s): {'; '.join(missing)}"),
                severity="LOW", confidence=0.4,
                function=caller.key, line_hint=caller.src[0],
            ))
    return signals
