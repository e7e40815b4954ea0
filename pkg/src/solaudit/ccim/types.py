"""Domain types for the cross-contract interaction model.

Everything here is frozen: the assembled model is immutable and safe to share
across concurrently running consumers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

VISIBILITIES = ("public", "external", "internal", "private")
MUTABILITIES = ("view", "pure", "payable", "nonpayable")

FnKey = tuple[str, str]  # (owner contract, function name)


@dataclass(frozen=True)
class CallSite:
    target: str        # storage-variable name holding the callee address
    method: str        # invoked selector name
    line: int          # concatenation line number


@dataclass(frozen=True)
class FunctionRecord:
    name: str
    owner: str
    vis: str                              # VISIBILITIES
    mut: str                              # MUTABILITIES
    modifiers: tuple[str, ...]            # raw modifier invocations, declaration order
    guards: tuple[str, ...]               # normalized require conditions
    reads: frozenset[str]
    writes: frozenset[str]
    call_sites: tuple[CallSite, ...]
    fund_flag: bool
    src: tuple[int, int]                  # (start, end) lines in concatenation space
    internal_calls: frozenset[str]        # same-contract callee names
    body: str                             # raw declaration text, header included
    # parser extras consumed by downstream stages (precondition inference,
    # pair selection, skeleton prompts, the >=0.8 overflow rule)
    params: tuple[str, ...] = ()
    signature: str = ""
    natspec: str = ""
    pragma_ge_08: bool = False

    @property
    def key(self) -> FnKey:
        return (self.owner, self.name)

    def body_inner(self) -> str:
        """The brace-delimited body proper, without the header."""
        i = self.body.find("{")
        if i < 0:
            return ""
        j = self.body.rfind("}")
        return self.body[i + 1:j] if j > i else self.body[i + 1:]


@dataclass(frozen=True)
class ResolutionMap:
    # storage variables are identified by qualified ids "DeclaringContract.name":
    # same-named variables in unrelated contracts are distinct storage
    mapping: dict[str, str | None]        # qualified var -> contract, None for unresolved
    type_map: dict[str, str]              # qualified var -> declared type text
    inheritance: frozenset[tuple[str, str]]  # (ancestor/interface, implementer) edges, reflexive-transitive
    kinds: dict[str, str] = field(default_factory=dict)  # contract -> contract|interface|library|abstract
    var_origin: dict[FnKey, str] = field(default_factory=dict)  # (contract, plain name) -> qualified id

    def var_id(self, owner: str, name: str) -> str:
        return self.var_origin.get((owner, name), f"{owner}.{name}")

    def resolve(self, var: str) -> str | None:
        return self.mapping.get(var)

    def is_concrete(self, contract: str) -> bool:
        return self.kinds.get(contract) == "contract"


@dataclass(frozen=True)
class CallGraph:
    edges: frozenset[tuple[FnKey, FnKey]]
    contract_edges: frozenset[tuple[str, str]]

    def callees(self, fn: FnKey) -> set[FnKey]:
        return {g for f, g in self.edges if f == fn}

    def callers(self, fn: FnKey) -> set[FnKey]:
        return {f for f, g in self.edges if g == fn}

    def touches(self, fn: FnKey) -> bool:
        return any(fn in edge for edge in self.edges)


@dataclass(frozen=True)
class Footprints:
    reads: dict[FnKey, frozenset[str]]    # R*
    writes: dict[FnKey, frozenset[str]]   # W*
    fund: dict[FnKey, bool]               # tau*


@dataclass(frozen=True)
class StateDependencyMap:
    writers: dict[str, frozenset[FnKey]]      # delta_W
    readers: dict[str, frozenset[FnKey]]      # delta_R
    consumers: dict[str, frozenset[FnKey]]    # uses(v): call target or approval recipient
    approvals: dict[FnKey, frozenset[str]]    # storage vars passed as approval recipients
    rot: frozenset[str]                       # rotation-risky variables


@dataclass(frozen=True)
class RoleCatalogue:
    """Recognized role-check patterns: modifier shapes and require shapes."""
    modifier_patterns: tuple[str, ...]
    require_patterns: tuple[str, ...]


@dataclass(frozen=True)
class TrustModel:
    assumes: dict[tuple[str, str], frozenset[str]]   # (caller, callee) -> post-condition strings
    enforces: dict[tuple[str, str], frozenset[str]]  # (callee, caller) -> caller-gating guards
    trustgap: frozenset[tuple[str, str]]
    callbacks: frozenset[tuple[str, str]]            # sorted unordered pairs


@dataclass(frozen=True)
class CcimModel:
    records: tuple[FunctionRecord, ...]
    resolution: ResolutionMap
    graph: CallGraph
    footprints: Footprints
    deps: StateDependencyMap
    trust: TrustModel
    admin_set: frozenset[FnKey]
    scope: tuple[str, ...] = ()

    def record(self, owner: str, name: str) -> FunctionRecord | None:
        return self._index().get((owner, name))

    def function_named(self, name: str) -> list[FunctionRecord]:
        return [r for r in self.records if r.name == name]

    def record_at_line(self, line: int) -> FunctionRecord | None:
        for r in self.records:
            if r.src[0] <= line <= r.src[1]:
                return r
        return None

    def _index(self) -> dict[FnKey, FunctionRecord]:
        # frozen dataclass: cache through object.__setattr__ on first use
        cached = self.__dict__.get("_idx")
        if cached is None:
            cached = {r.key: r for r in self.records}
            object.__setattr__(self, "_idx", cached)
        return cached

    def is_admin(self, key: FnKey) -> bool:
        return key in self.admin_set

    def writes_q(self, key: FnKey) -> frozenset[str]:
        """Transitive write set as qualified variable ids."""
        return frozenset(self.resolution.var_id(key[0], v)
                         for v in self.footprints.writes.get(key, frozenset()))

    def reads_q(self, key: FnKey) -> frozenset[str]:
        return frozenset(self.resolution.var_id(key[0], v)
                         for v in self.footprints.reads.get(key, frozenset()))
