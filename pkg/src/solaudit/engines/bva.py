"""Boundary/value analyzer: eight sub-analyzers over guards, value flows,
ether paths, formulas and literal arithmetic. Each sub-analyzer is isolated;
a failure inside one logs a warning and contributes nothing."""

from __future__ import annotations

import logging
import re

from ..ccim import CcimModel, FunctionRecord, mask_noncode
from ..ccim.parse import scan_contracts
from ..ingest import AuditSource
from .signal import Signal

log = logging.getLogger(__name__)

_VALUE_ID_RE = re.compile(
    r"\b\w*(amount|amt|value|balance|share|price|asset|fee|reward|debt|supply|wad)\w*\b", re.I
)
_BOUND_RE = re.compile(
    r"(?:require\s*\(|if\s*\()\s*([A-Za-z_]\w*)\s*(<=|>=|<|>)\s*(\d+(?:e\d+)?)"
)
_NATIVE_OUT_RES = [
    re.compile(r"\.\s*transfer\s*\("),
    re.compile(r"\.\s*send\s*\("),
    re.compile(r"\.\s*call\s*\{\s*value\s*:"),
]
_MULDIV_STMT_RE = re.compile(r"[^;{}]+")
_LIT_RE = re.compile(r"\b(\d+(?:\.\d+)?e\d+|\d+)\b")
_POW_RE = re.compile(r"\b(\d+)\s*\*\*\s*(\d+)\b")

UINT256_MAX = 2 ** 256 - 1


def _line_in(record: FunctionRecord, pos: int) -> int:
    return record.src[0] + record.body.count("\n", 0, pos)


def _contract_records(ccim: CcimModel, contract: str) -> list[FunctionRecord]:
    return [r for r in ccim.records if r.owner == contract]


def _scope_contracts(ccim: CcimModel) -> list[str]:
    # in-scope, non-framework: concrete contracts from the scope list
    return [c for c in ccim.scope if ccim.resolution.kinds.get(c, "contract") == "contract"]


def run_bva(ccim: CcimModel, source: AuditSource) -> list[Signal]:
    signals: list[Signal] = []
    sub_analyzers = (
        ("rationality", _sub_rationality),
        ("locked-ether", _sub_locked_ether),
        ("read-before-write", lambda c, s: _sub_read_before_write(c, s)),
        ("formula-mismatch", _sub_formula_mismatch),
        ("symbolic-eval", _sub_symbolic_eval),
        ("invariant-consistency", _sub_invariant_consistency),
    )
    for name, fn in sub_analyzers:
        try:
            signals.extend(fn(ccim, source))
        except Exception as exc:
            log.warning("BVA sub-analyzer %s failed (%s); continuing", name, exc)
    return signals


# (i) value-flow extraction: expressions carrying value-named identifiers,
# consumed by rationality and formula checks rather than emitted directly.
def _value_flows(record: FunctionRecord) -> list[tuple[int, str]]:
    flows = []
    body = mask_noncode(record.body)
    for m in re.finditer(r"[^;{}]+", body):
        stmt = m.group(0)
        if _VALUE_ID_RE.search(stmt) and re.search(r"[+\-*/]", stmt):
            flows.append((m.start(), stmt.strip()))
    return flows


# (ii) boundary finding from require/if numeric guards
def _bounds(record: FunctionRecord) -> list[tuple[str, str, float, int]]:
    out = []
    body = mask_noncode(record.body)
    for m in _BOUND_RE.finditer(body):
        out.append((m.group(1), m.group(2), float(m.group(3)), m.start()))
    return out


# (iii) rationality: bounds on the same variable must admit at least one value
def _sub_rationality(ccim: CcimModel, source: AuditSource) -> list[Signal]:
    signals = []
    for contract in _scope_contracts(ccim):
        for rec in _contract_records(ccim, contract):
            if not _value_flows(rec) and not _bounds(rec):
                continue
            by_var: dict[str, list[tuple[str, float, int]]] = {}
            for var, op, value, pos in _bounds(rec):
                by_var.setdefault(var, []).append((op, value, pos))
            for var, entries in sorted(by_var.items()):
                lowers = [(v, op) for op, v, _ in entries if op in (">", ">=")]
                uppers = [(v, op) for op, v, _ in entries if op in ("<", "<=")]
                if not lowers or not uppers:
                    continue
                lo, lo_op = max(lowers)
                hi, hi_op = min(uppers)
                impossible = lo > hi or (lo == hi and (lo_op == ">" or hi_op == "<"))
                if impossible:
                    pos = entries[0][2]
                    signals.append(Signal(
                        source_tag="BVA", id="bva-irrational-bound",
                        description=f"bounds on {var} admit no value ({lo_op} {lo:g} vs {hi_op} {hi:g})",
                        severity="MEDIUM", confidence=0.6,
                        function=rec.key, line_hint=_line_in(rec, pos),
                    ))
    return signals


# (iv) locked-ETH: a payable receive path with no native withdrawal path
def _sub_locked_ether(ccim: CcimModel, source: AuditSource) -> list[Signal]:
    signals = []
    for contract in _scope_contracts(ccim):
        records = _contract_records(ccim, contract)
        receivers = [r for r in records if r.mut == "payable"]
        if not receivers:
            continue
        if any(any(rx.search(mask_noncode(r.body)) for rx in _NATIVE_OUT_RES) for r in records):
            continue
        entry = min(receivers, key=lambda r: r.src[0])
        signals.append(Signal(
            source_tag="BVA", id="bva-locked-ether",
            description=f"{contract} can receive ether via {entry.name} but exposes no withdrawal path",
            severity="HIGH", confidence=0.7,
            function=entry.key, line_hint=entry.src[0],
        ))
    return signals


# (v) read-before-write: reads of state that nothing ever writes or initializes
def _sub_read_before_write(ccim: CcimModel, source: AuditSource) -> list[Signal]:
    initialized = set()
    for decl in scan_contracts(source.text):
        for sv in decl.state_vars:
            if sv.has_initializer:
                initialized.add(f"{decl.name}.{sv.name}")
    signals = []
    scope = set(_scope_contracts(ccim))
    for var in sorted(ccim.deps.readers):
        if var in initialized or ccim.deps.writers.get(var):
            continue
        for reader in sorted(ccim.deps.readers[var]):
            if reader[0] not in scope:
                continue
            rec = ccim.record(*reader)
            signals.append(Signal(
                source_tag="BVA", id="bva-read-before-write",
                description=f"{var} is read but never written or initialized; reads see the zero value",
                severity="MEDIUM", confidence=0.5,
                function=reader, line_hint=rec.src[0] if rec else None,
            ))
    return signals


_COUNTER_STEMS = (("deposit", "withdraw"), ("mint", "burn"), ("lock", "unlock"),
                  ("stake", "unstake"), ("open", "close"), ("pause", "unpause"))


def _muldiv_shapes(record: FunctionRecord) -> list[tuple[str, frozenset[str]]]:
    """Per statement containing both * and /: the operator order plus the
    identifiers involved."""
    shapes = []
    body = mask_noncode(record.body_inner())
    for m in _MULDIV_STMT_RE.finditer(body):
        stmt = m.group(0)
        ops = "".join(c for c in re.sub(r"\*\*", "", stmt) if c in "*/")
        if "*" in ops and "/" in ops:
            idents = frozenset(re.findall(r"[A-Za-z_]\w*", stmt)) - {"require", "if", "return"}
            shapes.append((ops, idents))
    return shapes


# (vi) formula-mismatch across paired functions
def _sub_formula_mismatch(ccim: CcimModel, source: AuditSource) -> list[Signal]:
    signals = []
    for contract in _scope_contracts(ccim):
        records = {r.name.lower(): r for r in _contract_records(ccim, contract)}
        for a_stem, b_stem in _COUNTER_STEMS:
            pairs = [(ra, rb) for na, ra in records.items() if na.startswith(a_stem)
                     for nb, rb in records.items() if nb.startswith(b_stem)]
            for ra, rb in pairs:
                for ops_a, ids_a in _muldiv_shapes(ra):
                    for ops_b, ids_b in _muldiv_shapes(rb):
                        if ops_a != ops_b and ids_a & ids_b:
                            signals.append(Signal(
                                source_tag="BVA", id="bva-formula-mismatch",
                                description=(f"{ra.name} and {rb.name} apply inconsistent operator order "
                                             f"({ops_a} vs {ops_b}) over {', '.join(sorted(ids_a & ids_b))}"),
                                severity="HIGH", confidence=0.7,
                                function=ra.key, line_hint=ra.src[0],
                            ))
                            break
                    else:
                        continue
                    break
    return signals


def _literal_value(token: str) -> int | None:
    try:
        return int(float(token)) if ("e" in token or "." in token) else int(token)
    except ValueError:
        return None


# (vii) small-scale symbolic evaluation: constant folding of literal arithmetic
def _sub_symbolic_eval(ccim: CcimModel, source: AuditSource) -> list[Signal]:
    signals = []
    for contract in _scope_contracts(ccim):
        for rec in _contract_records(ccim, contract):
            body = mask_noncode(rec.body_inner())
            folded = _POW_RE.sub(lambda m: str(int(m.group(1)) ** int(m.group(2))), body)
            for m in re.finditer(r"/\s*(0)\b(?![.\w])", folded):
                signals.append(Signal(
                    source_tag="BVA", id="bva-division-by-zero",
                    description="literal division by zero",
                    severity="HIGH", confidence=0.8,
                    function=rec.key, line_hint=_line_in(rec, m.start()),
                ))
            for m in re.finditer(r"\b(\d+(?:\.\d+)?e\d+|\d+)\s*(\*|-)\s*(\d+(?:\.\d+)?e\d+|\d+)", folded):
                a, b = _literal_value(m.group(1)), _literal_value(m.group(3))
                if a is None or b is None:
                    continue
                if m.group(2) == "*" and a * b > UINT256_MAX:
                    signals.append(Signal(
                        source_tag="BVA", id="bva-literal-overflow",
                        description=f"literal product {m.group(0).strip()} exceeds uint256",
                        severity="MEDIUM", confidence=0.6,
                        function=rec.key, line_hint=_line_in(rec, m.start()),
                    ))
                elif m.group(2) == "-" and a < b:
                    signals.append(Signal(
                        source_tag="BVA", id="bva-literal-underflow",
                        description=f"literal difference {m.group(0).strip()} is negative",
                        severity="MEDIUM", confidence=0.6,
                        function=rec.key, line_hint=_line_in(rec, m.start()),
                    ))
    return signals


# (viii) invariant consistency: writers of a bounded variable that skip the bound
def _sub_invariant_consistency(ccim: CcimModel, source: AuditSource) -> list[Signal]:
    signals = []
    scope = set(_scope_contracts(ccim))
    for var in sorted(ccim.deps.writers):
        plain = var.split(".", 1)[-1]
        writers = [w for w in sorted(ccim.deps.writers[var]) if w[0] in scope]
        if len(writers) < 2:
            continue
        checking, unchecked = [], []
        for w in writers:
            rec = ccim.record(*w)
            if rec is None or plain not in rec.writes:
                continue  # transitive writers inherit the helper's checks
            if any(re.search(rf"\b{re.escape(plain)}\b", g) for g in rec.guards):
                checking.append(rec)
            else:
                unchecked.append(rec)
        if checking and unchecked:
            for rec in unchecked:
                signals.append(Signal(
                    source_tag="BVA", id="bva-invariant-inconsistency",
                    description=(f"{rec.name} writes {var} without the bound check "
                                 f"enforced by {', '.join(c.name for c in checking)}"),
                    severity="MEDIUM", confidence=0.55,
                    function=rec.key, line_hint=rec.src[0],
                ))
    return signals
