"""Assembly of the cross-contract interaction model from parsed records:
target resolution, the call graph, transitive footprints, dependency and
trust views, and the canonical JSON form."""

from __future__ import annotations

import json
import logging
import re

from ..ingest import AuditSource
from .parse import (
    ancestors_of,
    extract_approval_recipients,
    mask_noncode,
    match_paren,
    normalize_predicate,
    parse_function_records,
    scan_contracts,
)
from .types import (
    CallGraph,
    CcimModel,
    Footprints,
    FnKey,
    FunctionRecord,
    ResolutionMap,
    RoleCatalogue,
    StateDependencyMap,
    TrustModel,
)

log = logging.getLogger(__name__)

DEFAULT_ROLE_CATALOGUE = RoleCatalogue(
    modifier_patterns=(
        r"^onlyOwner$",
        r"^onlyRole\(",
        r"^onlyAdmin$",
        r"^onlyGovernance$",
        r"^onlyGovernor$",
        r"^requiresAuth$",
    ),
    require_patterns=(
        r"^msg\.sender==_?(owner|admin|governance|governor)(\(\))?$",
        r"^_?(owner|admin|governance|governor)(\(\))?==msg\.sender$",
        r"^hasRole\(",
        r"^_checkRole\(",
    ),
)


def build_resolution(records: list[FunctionRecord], source: AuditSource) -> ResolutionMap:
    """Map each storage variable (qualified by its declaring contract) to the
    concrete contract implementing its declared type, or None when no unique
    concrete implementer exists."""
    masked = mask_noncode(source.text)
    decls = scan_contracts(source.text, masked)
    by_name = {d.name: d for d in decls}
    kinds = {d.name: d.kind for d in decls}

    # reflexive-transitive inheritance edges: (ancestor, implementer)
    edges: set[tuple[str, str]] = {(d.name, d.name) for d in decls}
    for d in decls:
        for anc in ancestors_of(d.name, by_name):
            edges.add((anc, d.name))

    # visibility chains: (user contract, plain name) -> qualified id at the
    # nearest declaration (own declarations shadow inherited ones)
    var_origin: dict[tuple[str, str], str] = {}
    type_map: dict[str, str] = {}
    for d in decls:
        for holder_name in [d.name] + ancestors_of(d.name, by_name):
            holder = by_name.get(holder_name)
            if holder is None:
                continue
            for sv in holder.state_vars:
                key = (d.name, sv.name)
                if key not in var_origin:
                    qid = f"{holder_name}.{sv.name}"
                    var_origin[key] = qid
                    type_map.setdefault(qid, sv.type_text)

    mapping: dict[str, str | None] = {}
    for var, type_text in type_map.items():
        mapping[var] = None
        head = type_text.split()[0].split("[")[0]
        if head not in kinds:
            continue
        implementers = sorted(
            impl for anc, impl in edges if anc == head and kinds.get(impl) == "contract"
        )
        if len(implementers) == 1:
            mapping[var] = implementers[0]
        elif len(implementers) > 1:
            log.warning(
                "type %s of %s has %d concrete implementers (%s); leaving unresolved",
                head, var, len(implementers), ", ".join(implementers),
            )
    return ResolutionMap(mapping=mapping, type_map=type_map, inheritance=frozenset(edges),
                         kinds=kinds, var_origin=var_origin)


def build_call_graph(records: list[FunctionRecord], resolution: ResolutionMap) -> CallGraph:
    """One edge per actionable call site whose resolved callee declares the
    invoked method."""
    declared: dict[FnKey, FunctionRecord] = {r.key: r for r in records}
    edges: set[tuple[FnKey, FnKey]] = set()
    for rec in records:
        for site in rec.call_sites:
            callee_contract = resolution.resolve(resolution.var_id(rec.owner, site.target))
            if callee_contract is None:
                continue
            callee = (callee_contract, site.method)
            if callee not in declared:
                log.info("resolution miss: %s.%s -> %s has no %s", rec.owner, rec.name,
                         callee_contract, site.method)
                continue
            edges.add((rec.key, callee))
    contract_edges = {(f[0], g[0]) for f, g in edges}
    return CallGraph(edges=frozenset(edges), contract_edges=frozenset(contract_edges))


def propagate_footprints(records: list[FunctionRecord]) -> Footprints:
    """Least fixpoint of read/write/fund propagation through same-contract
    internal calls. Set union over a finite lattice: iteration terminates."""
    by_owner: dict[str, dict[str, FunctionRecord]] = {}
    for r in records:
        by_owner.setdefault(r.owner, {})[r.name] = r
    reads = {r.key: set(r.reads) for r in records}
    writes = {r.key: set(r.writes) for r in records}
    fund = {r.key: r.fund_flag for r in records}

    changed = True
    while changed:
        changed = False
        for r in records:
            own = by_owner[r.owner]
            for callee_name in r.internal_calls:
                callee = own.get(callee_name)
                if callee is None:
                    continue
                ck = callee.key
                if not reads[ck] <= reads[r.key]:
                    reads[r.key] |= reads[ck]
                    changed = True
                if not writes[ck] <= writes[r.key]:
                    writes[r.key] |= writes[ck]
                    changed = True
                if fund[ck] and not fund[r.key]:
                    fund[r.key] = True
                    changed = True
    return Footprints(
        reads={k: frozenset(v) for k, v in reads.items()},
        writes={k: frozenset(v) for k, v in writes.items()},
        fund=dict(fund),
    )


def compute_state_dependencies(records: list[FunctionRecord], footprints: Footprints,
                               resolution: ResolutionMap) -> StateDependencyMap:
    """Per-variable writers, readers and consumers keyed by qualified variable
    id, plus per-function approval recipients. The rot set is filled in by
    flag_rotation_risks."""
    writers: dict[str, set[FnKey]] = {}
    readers: dict[str, set[FnKey]] = {}
    for r in records:
        for v in footprints.writes.get(r.key, frozenset()):
            writers.setdefault(resolution.var_id(r.owner, v), set()).add(r.key)
        for v in footprints.reads.get(r.key, frozenset()):
            readers.setdefault(resolution.var_id(r.owner, v), set()).add(r.key)

    approvals: dict[FnKey, frozenset[str]] = {}
    for r in records:
        visible = {name for (owner, name) in resolution.var_origin if owner == r.owner}
        got = extract_approval_recipients(r, visible)
        if got:
            approvals[r.key] = frozenset(resolution.var_id(r.owner, v) for v in got)

    consumers: dict[str, set[FnKey]] = {}
    for r in records:
        for site in r.call_sites:
            consumers.setdefault(resolution.var_id(r.owner, site.target), set()).add(r.key)
        for v in approvals.get(r.key, frozenset()):
            consumers.setdefault(v, set()).add(r.key)

    return StateDependencyMap(
        writers={v: frozenset(s) for v, s in writers.items()},
        readers={v: frozenset(s) for v, s in readers.items()},
        consumers={v: frozenset(s) for v, s in consumers.items()},
        approvals=approvals,
        rot=frozenset(),
    )


def classify_admin(records: list[FunctionRecord],
                   catalogue: RoleCatalogue = DEFAULT_ROLE_CATALOGUE) -> frozenset[FnKey]:
    """Functions whose guards (modifier names folded in) match a role-check
    pattern from the catalogue."""
    mod_res = [re.compile(p) for p in catalogue.modifier_patterns]
    req_res = [re.compile(p) for p in catalogue.require_patterns]
    admin: set[FnKey] = set()
    for r in records:
        folded = list(r.guards) + [m for m in r.modifiers]
        for g in folded:
            if any(rx.search(g) for rx in mod_res) or any(rx.search(g) for rx in req_res):
                admin.add(r.key)
                break
    return frozenset(admin)


def flag_rotation_risks(deps: StateDependencyMap, admin_set: frozenset[FnKey]) -> frozenset[str]:
    """Variables that are admin-writable and simultaneously consumed as a call
    target or approval recipient."""
    rot = set()
    for v, consumer_set in deps.consumers.items():
        if not consumer_set:
            continue
        if any(w in admin_set for w in deps.writers.get(v, frozenset())):
            rot.add(v)
    return frozenset(rot)


_RETURN_RE = re.compile(r"\breturn\b([^;]*);")
_EMIT_RE = re.compile(r"\bemit\s+([A-Za-z_]\w*\s*\()")


def _postconditions(record: FunctionRecord) -> frozenset[str]:
    body = mask_noncode(record.body_inner())
    out: set[str] = set()
    for m in _RETURN_RE.finditer(body):
        expr = m.group(1).strip()
        if expr:
            out.add(normalize_predicate("return " + expr))
    for m in _EMIT_RE.finditer(body):
        open_paren = body.find("(", m.start())
        close = match_paren(body, open_paren)
        if close > 0:
            out.add(normalize_predicate("emit " + body[m.start(1):close + 1]))
    return frozenset(out)


def _caller_gating_guards(record: FunctionRecord,
                          catalogue: RoleCatalogue = DEFAULT_ROLE_CATALOGUE) -> frozenset[str]:
    # any msg.sender mention or role-catalogue modifier counts as caller-gating;
    # per-caller-contract restriction is not recoverable from source
    mod_res = [re.compile(p) for p in catalogue.modifier_patterns]
    out = {g for g in record.guards if "msg.sender" in g}
    out |= {m for m in record.modifiers if any(rx.search(m) for rx in mod_res)}
    return frozenset(out)


def compute_trust_model(graph: CallGraph, records: list[FunctionRecord]) -> TrustModel:
    """Assumed vs enforced predicate sets per directed contract pair, trust
    gaps as containment failures, callbacks as bidirectional contract edges."""
    by_key = {r.key: r for r in records}
    by_owner: dict[str, list[FunctionRecord]] = {}
    for r in records:
        by_owner.setdefault(r.owner, []).append(r)

    assumes: dict[tuple[str, str], set[str]] = {}
    for (f, g) in graph.edges:
        pair = (f[0], g[0])
        callee = by_key.get(g)
        if callee is not None:
            assumes.setdefault(pair, set()).update(_postconditions(callee))
        else:
            assumes.setdefault(pair, set())

    enforces: dict[tuple[str, str], set[str]] = {}
    for (c1, c2) in graph.contract_edges:
        acc: set[str] = set()
        for g_rec in by_owner.get(c2, []):
            acc |= _caller_gating_guards(g_rec)
        enforces[(c2, c1)] = acc

    trustgap = set()
    for (c1, c2) in graph.contract_edges:
        assumed = assumes.get((c1, c2), set())
        enforced = enforces.get((c2, c1), set())
        if not assumed <= enforced:
            trustgap.add((c1, c2))

    callbacks = set()
    for (c1, c2) in graph.contract_edges:
        if c1 != c2 and (c2, c1) in graph.contract_edges:
            callbacks.add(tuple(sorted((c1, c2))))

    return TrustModel(
        assumes={k: frozenset(v) for k, v in assumes.items()},
        enforces={k: frozenset(v) for k, v in enforces.items()},
        trustgap=frozenset(trustgap),
        callbacks=frozenset(callbacks),
    )


def assemble_ccim(source: AuditSource,
                  catalogue: RoleCatalogue = DEFAULT_ROLE_CATALOGUE) -> CcimModel:
    """Run the full construction pipeline over an audit source."""
    records = parse_function_records(source)
    resolution = build_resolution(records, source)
    graph = build_call_graph(records, resolution)
    footprints = propagate_footprints(records)
    deps = compute_state_dependencies(records, footprints, resolution)
    admin_set = classify_admin(records, catalogue)
    rot = flag_rotation_risks(deps, admin_set)
    deps = StateDependencyMap(
        writers=deps.writers, readers=deps.readers, consumers=deps.consumers,
        approvals=deps.approvals, rot=rot,
    )
    trust = compute_trust_model(graph, records)
    return CcimModel(
        records=tuple(records), resolution=resolution, graph=graph,
        footprints=footprints, deps=deps, trust=trust, admin_set=admin_set,
        scope=source.scope,
    )


# ---------------------------------------------------------------------------
# canonical serialization


def _fn(key: FnKey) -> str:
    return f"{key[0]}.{key[1]}"


def ccim_to_dict(model: CcimModel) -> dict:
    """Stable-keyed plain-dict form used for golden tests and external consumers."""
    return {
        "records": [
            {
                "name": r.name, "owner": r.owner, "vis": r.vis, "mut": r.mut,
                "modifiers": list(r.modifiers), "guards": sorted(r.guards),
                "reads": sorted(r.reads), "writes": sorted(r.writes),
                "call_sites": [{"target": s.target, "method": s.method, "line": s.line}
                               for s in r.call_sites],
                "fund_flag": r.fund_flag, "src": list(r.src),
                "internal_calls": sorted(r.internal_calls),
                "params": list(r.params),
                "pragma_ge_08": r.pragma_ge_08,
            }
            for r in sorted(model.records, key=lambda r: r.src[0])
        ],
        "resolution": {
            "map": {v: model.resolution.mapping[v] for v in sorted(model.resolution.mapping)},
            "types": {v: model.resolution.type_map[v] for v in sorted(model.resolution.type_map)},
            "inheritance": sorted(f"{a}->{b}" for a, b in model.resolution.inheritance if a != b),
            "kinds": dict(sorted(model.resolution.kinds.items())),
        },
        "graph": {
            "edges": sorted(f"{_fn(f)} -> {_fn(g)}" for f, g in model.graph.edges),
            "contract_edges": sorted(f"{a} -> {b}" for a, b in model.graph.contract_edges),
        },
        "footprints": {
            _fn(k): {
                "reads": sorted(model.footprints.reads[k]),
                "writes": sorted(model.footprints.writes[k]),
                "fund": model.footprints.fund[k],
            }
            for k in sorted(model.footprints.reads)
        },
        "deps": {
            "writers": {v: sorted(map(_fn, s)) for v, s in sorted(model.deps.writers.items())},
            "readers": {v: sorted(map(_fn, s)) for v, s in sorted(model.deps.readers.items())},
            "consumers": {v: sorted(map(_fn, s)) for v, s in sorted(model.deps.consumers.items())},
            "approvals": {_fn(k): sorted(v) for k, v in sorted(model.deps.approvals.items())},
            "rot": sorted(model.deps.rot),
        },
        "trust": {
            "assumes": {f"{a}->{b}": sorted(v) for (a, b), v in sorted(model.trust.assumes.items())},
            "enforces": {f"{a}->{b}": sorted(v) for (a, b), v in sorted(model.trust.enforces.items())},
            "trustgap": sorted(f"{a}->{b}" for a, b in model.trust.trustgap),
            "callbacks": sorted(f"{a}<->{b}" for a, b in model.trust.callbacks),
        },
        "admin": sorted(map(_fn, model.admin_set)),
        "scope": list(model.scope),
    }


def ccim_to_json(model: CcimModel) -> str:
    return json.dumps(ccim_to_dict(model), indent=2, sort_keys=True)
