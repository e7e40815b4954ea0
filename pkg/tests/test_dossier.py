from __future__ import annotations

import pytest

from helpers import ThrowingReasoner, make_finding, scripted

from solaudit.dossier import (
    ROUTE_ADMIN_TRUST,
    ROUTE_GRAPH_SKIP,
    ROUTE_NEEDS_REASONER,
    ROUTE_VECTOR_CONFIRMED,
    build_phase_c_interactions,
    compile_dossiers,
    contract_priorities,
    dd_run,
    expand_source_block,
    phase_a_verify,
    phase_d_claim_first,
    phase_d_prefilter,
    phase_e_package,
    phase_e_recalibrate,
    run_phase_c,
)
from solaudit.engines import Signal, merge_signals
from solaudit.reasoner import MockReasoner


def _signals_for(ccim, entries):
    """entries: list of (tag, id, severity, confidence, function, line)."""
    pool = [Signal(source_tag=t, id=i, description=i, severity=sev,
                   confidence=c, function=fn, line_hint=line)
            for t, i, sev, c, fn, line in entries]
    return merge_signals({"TEST": pool})


# --- dossier compilation ------------------------------------------------------


def test_compile_dossier_counts_and_flags(models, merged_signals):
    ccim = models["vault_oracle"]
    dossiers = compile_dossiers(ccim, merged_signals["vault_oracle"])
    non_interface = [r for r in ccim.records
                     if ccim.resolution.kinds.get(r.owner) != "interface"]
    assert len(dossiers) == len(non_interface)
    flagged = {d.function for d in dossiers if d.flagged}
    assert ("Vault", "withdraw") in flagged  # IRA + rotation items
    assert ("Vault", "sweep") not in flagged


def test_compile_dossier_zero_signals(models):
    ccim = models["guards_majority"]
    dossiers = compile_dossiers(ccim, merge_signals({}))
    assert all(not d.flagged for d in dossiers)


def test_compile_dossier_line_range_fallback(models):
    ccim = models["vault_oracle"]
    rec = ccim.record("Vault", "withdraw")
    inside = rec.src[0] + 1
    merged = _signals_for(ccim, [
        ("MYT", "myt-thing", "HIGH", 0.6, None, inside),                 # line only
        ("SLI", "sli-ghost", "LOW", 0.4, ("Vault", "nonexistent"), inside),  # wrong name, line saves it
        ("SLI", "sli-lost", "LOW", 0.4, ("Vault", "nonexistent"), None),     # dropped
    ])
    dossiers = {d.function: d for d in compile_dossiers(ccim, merged)}
    ids = [it.id for it in dossiers[("Vault", "withdraw")].risk_items]
    assert "myt-thing" in ids and "sli-ghost" in ids and "sli-lost" not in ids


def test_dossier_items_sorted_by_confidence(models, merged_signals):
    for name in models:
        for d in compile_dossiers(models[name], merged_signals[name]):
            confs = [it.confidence for it in d.risk_items]
            assert confs == sorted(confs, reverse=True)


def test_rotation_item_attached_to_readers(models, merged_signals):
    ccim = models["vault_oracle"]
    dossiers = {d.function: d for d in compile_dossiers(ccim, merged_signals["vault_oracle"])}
    withdraw_items = {it.id for it in dossiers[("Vault", "withdraw")].risk_items}
    assert "ccim-rotation-risk" in withdraw_items


# --- phase A -------------------------------------------------------------------


def _flagged_dossier(models, merged_signals, key=("Vault", "withdraw")):
    dossiers = compile_dossiers(models["vault_oracle"], merged_signals["vault_oracle"])
    return next(d for d in dossiers if d.function == key)


def test_phase_a_real_item_becomes_finding(models, merged_signals):
    dossier = _flagged_dossier(models, merged_signals)
    line = dossier.facts.src[0] + 2
    reasoner = scripted([{
        "stage": "phase_a", "match": ["Vault.withdraw"],
        "response": {"items": [{"item_id": "item-1", "verdict": "REAL",
                                "evidence_line": line, "title": "oracle rotation risk",
                                "severity": "HIGH"}]},
    }])
    findings = phase_a_verify(dossier, reasoner)
    assert len(findings) == 1
    assert findings[0].pipeline == "D"
    assert findings[0].evidence_lines == [line]
    assert findings[0].affected_functions == [("Vault", "withdraw")]


def test_phase_a_unflagged_dossier_rejected(models, merged_signals):
    dossiers = compile_dossiers(models["vault_oracle"], merged_signals["vault_oracle"])
    unflagged = next(d for d in dossiers if not d.flagged)
    with pytest.raises(ValueError):
        phase_a_verify(unflagged, MockReasoner())


def test_phase_a_false_positives_yield_nothing(models, merged_signals):
    dossier = _flagged_dossier(models, merged_signals)
    reasoner = scripted([{
        "stage": "phase_a", "match": [],
        "response": {"items": [{"item_id": "item-1", "verdict": "FALSE_POSITIVE",
                                "evidence_line": 3}]},
    }])
    assert phase_a_verify(dossier, reasoner) == []


def test_phase_a_real_without_line_demoted(models, merged_signals, caplog):
    dossier = _flagged_dossier(models, merged_signals)
    reasoner = scripted([{
        "stage": "phase_a", "match": [],
        "response": {"items": [{"item_id": "item-1", "verdict": "REAL"}]},
    }])
    with caplog.at_level("WARNING"):
        assert phase_a_verify(dossier, reasoner) == []
    assert "demoted" in caplog.text


def test_phase_a_reasoner_failure_isolated(models, merged_signals):
    dossier = _flagged_dossier(models, merged_signals)
    assert phase_a_verify(dossier, ThrowingReasoner()) == []


def test_phase_a_prompt_contains_fp_rules(models, merged_signals):
    captured = {}

    class Capture(MockReasoner):
        def respond(self, request):
            captured["prompt"] = request.prompt
            return super().respond(request)

    phase_a_verify(_flagged_dossier(models, merged_signals), Capture())
    prompt = captured["prompt"]
    assert "unchecked blocks" in prompt
    assert "nonReentrant" in prompt
    assert "admin modifier" in prompt
    assert "atomically" in prompt


# --- phase B/C -------------------------------------------------------------------


def test_contract_priorities(models, merged_signals):
    ranked = contract_priorities(models["vault_oracle"], merged_signals["vault_oracle"])
    assert ranked[0][0] == "Vault"
    assert ranked[0][1] > 0


def test_phase_c_groups(models):
    groups = build_phase_c_interactions(models["guards_majority"])
    nway = [g for g in groups if g.kind == "nway" and g.subject == "Ledger.balances"]
    assert len(nway) == 1
    assert len(nway[0].members) >= 4
    # pairs exist for writer/reader combinations
    assert any(g.kind == "pair" and g.subject == "Ledger.balances" for g in groups)


def test_phase_c_two_touchers_pairs_only(models):
    groups = build_phase_c_interactions(models["locked_ether"])
    assert not [g for g in groups if g.kind == "nway" and g.subject == "Payer.received"]


def test_phase_c_empty(models):
    # interfaces only: build a tiny model with no shared state and no edges
    from solaudit.ccim import assemble_ccim
    from solaudit.ingest import AuditSource, OffsetMap, Segment
    src = AuditSource(text="contract Z { function f() external pure returns (uint256) { return 1; } }",
                      offsets=OffsetMap.build([Segment("z.sol", 1, 1, 1)]),
                      scope=("Z",), remappings=(), pragmas={})
    assert build_phase_c_interactions(assemble_ccim(src)) == []


def test_phase_c_vulnerable_verdict(models):
    reasoner = scripted([{
        "stage": "phase_c", "match": ["Ledger.balances"],
        "response": {"verdict": "VULNERABLE", "title": "unguarded writer breaks accounting",
                     "severity": "HIGH"},
    }])
    findings = run_phase_c(models["guards_majority"], reasoner)
    assert findings
    assert all(f.pipeline == "D" for f in findings)


# --- phase D -------------------------------------------------------------------


def test_route_admin_trust(models):
    f = make_finding(functions=[("Vault", "setOracle")])
    assert phase_d_prefilter(f, models["vault_oracle"]) == ROUTE_ADMIN_TRUST


def test_route_graph_skip(models):
    f = make_finding(functions=[("Risky", "ratio")])
    assert phase_d_prefilter(f, models["patterns"]) == ROUTE_GRAPH_SKIP


def test_route_needs_reasoner(models):
    f = make_finding(functions=[("Vault", "withdraw")])
    assert phase_d_prefilter(f, models["vault_oracle"]) == ROUTE_NEEDS_REASONER


def test_route_vector_confirmed_and_boundaries(models):
    ccim = models["patterns"]
    signals = _signals_for(ccim, [
        ("SIG", "sig-missing-nonce", "HIGH", 0.7, ("Risky", "claim"), None),
    ])
    base = dict(
        title="signature replay in claim",
        description="the signature can be replayed",
        functions=[("Risky", "claim")], lines=(5,),
    )
    ok = make_finding(confidence=0.8, scenario="x" * 30, **base)
    assert phase_d_prefilter(ok, ccim, signals) == ROUTE_VECTOR_CONFIRMED
    low_conf = make_finding(confidence=0.79, scenario="x" * 30, **base)
    assert phase_d_prefilter(low_conf, ccim, signals) != ROUTE_VECTOR_CONFIRMED
    short_trace = make_finding(confidence=0.8, scenario="x" * 29, **base)
    assert phase_d_prefilter(short_trace, ccim, signals) != ROUTE_VECTOR_CONFIRMED
    no_lines = make_finding(confidence=0.8, scenario="x" * 30,
                            title=base["title"], description=base["description"],
                            functions=base["functions"])
    assert phase_d_prefilter(no_lines, ccim, signals) != ROUTE_VECTOR_CONFIRMED


def test_routes_are_exclusive_and_total(models, merged_signals):
    ccim = models["vault_oracle"]
    for key in [("Vault", "setOracle"), ("Vault", "withdraw"), ("ChainOracle", "setPrice")]:
        route = phase_d_prefilter(make_finding(functions=[key]), ccim,
                                  merged_signals["vault_oracle"])
        assert route in (ROUTE_ADMIN_TRUST, ROUTE_VECTOR_CONFIRMED,
                         ROUTE_GRAPH_SKIP, ROUTE_NEEDS_REASONER)


def test_expand_source_block_includes_neighbors(models):
    ccim = models["vault_oracle"]
    f = make_finding(functions=[("Vault", "withdraw")])
    block = expand_source_block(f, ccim, 24_000)
    assert "function withdraw" in block
    assert "ChainOracle.latestPrice" in block  # callee pulled in
    assert len(block) <= 24_000


def test_claim_first_disproved_needs_real_quote(models, sources):
    ccim = models["vault_oracle"]
    f = make_finding(functions=[("Vault", "withdraw")])
    quoting = scripted([{
        "stage": "phase_d", "match": [],
        "response": {"verdict": "DISPROVED", "quote": "require(amount > 0, \"zero\");"},
    }])
    assert phase_d_claim_first(f, ccim, sources["vault_oracle"], quoting) == "DISPROVED"

    f2 = make_finding(functions=[("Vault", "withdraw")])
    asserting = scripted([{
        "stage": "phase_d", "match": [],
        "response": {"verdict": "DISPROVED", "quote": ""},
    }])
    assert phase_d_claim_first(f2, ccim, sources["vault_oracle"], asserting) == "UNCLEAR"
    assert "protocol-violation" in f2.flags

    f3 = make_finding(functions=[("Vault", "withdraw")])
    fabricated = scripted([{
        "stage": "phase_d", "match": [],
        "response": {"verdict": "DISPROVED", "quote": "this line is not in the source"},
    }])
    assert phase_d_claim_first(f3, ccim, sources["vault_oracle"], fabricated) == "UNCLEAR"


def test_claim_first_confirmed(models, sources):
    f = make_finding(functions=[("Vault", "withdraw")])
    confirming = scripted([{
        "stage": "phase_d", "match": [],
        "response": {"verdict": "CONFIRMED", "quote": ""},
    }])
    assert phase_d_claim_first(f, models["vault_oracle"], sources["vault_oracle"],
                               confirming) == "CONFIRMED"


# --- phase E -------------------------------------------------------------------


def test_phase_e_bundle_contents(models):
    ccim = models["vault_oracle"]
    f = make_finding(functions=[("Vault", "setOracle")])
    bundle = phase_e_package(f, ccim)
    entry = bundle["functions"][0]
    assert entry["visibility"] == "external"
    assert entry["modifiers"] == ["onlyOwner"]
    assert entry["admin"] is True
    assert "Vault.sweep" in bundle["role_hierarchy"]


def test_phase_e_deterministic_rules_admin_low(models):
    ccim = models["vault_oracle"]
    f = make_finding(severity="CRITICAL", functions=[("Vault", "setOracle")])
    phase_e_recalibrate(f, ccim, MockReasoner())
    assert f.severity == "LOW"  # admin-only, moves no funds


def test_phase_e_no_fund_loss_cap_medium(models):
    ccim = models["vault_oracle"]
    f = make_finding(severity="CRITICAL", functions=[("ChainOracle", "setPrice")])
    phase_e_recalibrate(f, ccim, MockReasoner())
    assert f.severity == "MEDIUM"


def test_phase_e_three_preconditions_downgrade(models):
    ccim = models["vault_oracle"]
    scenario = ("1. requires the owner key\n"
                "2. assuming the oracle is stale\n"
                "3. only if the pool is empty\n")
    f = make_finding(severity="HIGH", functions=[("Vault", "withdraw")], scenario=scenario)
    phase_e_recalibrate(f, ccim, MockReasoner())
    assert f.severity == "MEDIUM"


def test_phase_e_scripted_severity_wins(models):
    ccim = models["vault_oracle"]
    f = make_finding(severity="LOW", functions=[("Vault", "withdraw")])
    reasoner = scripted([{
        "stage": "phase_e", "match": [],
        "response": {"severity": "HIGH", "justification": "unguarded fund movement"},
    }])
    phase_e_recalibrate(f, ccim, reasoner)
    assert f.severity == "HIGH"


def test_phase_e_reasoner_failure_unchanged(models):
    f = make_finding(severity="CRITICAL", functions=[("Vault", "setOracle")])
    phase_e_recalibrate(f, models["vault_oracle"], ThrowingReasoner())
    assert f.severity == "CRITICAL"


# --- full pipeline -------------------------------------------------------------


def test_dd_run_end_to_end(models, sources, merged_signals):
    ccim = models["vault_oracle"]
    rec = ccim.record("Vault", "withdraw")
    reasoner = scripted([{
        "stage": "phase_a", "match": ["Vault.withdraw"],
        "response": {"items": [{"item_id": "item-1", "verdict": "REAL",
                                "evidence_line": rec.src[0] + 2,
                                "title": "oracle rotation repricing",
                                "description": "owner-rotated oracle reprices withdrawals",
                                "severity": "HIGH"}]},
    }])
    notes: dict = {}
    findings = dd_run(ccim, sources["vault_oracle"], merged_signals["vault_oracle"],
                      reasoner, annotations=notes)
    assert findings
    assert all(f.id.startswith("D-") for f in findings)
    assert notes["flagged"] >= 1
    assert sum(notes["phase_d_routes"].values()) >= len(findings)


def test_dd_run_unflagged_dossiers_skip_reasoner(models, sources):
    ccim = models["guards_majority"]
    reasoner = MockReasoner()
    dd_run(ccim, sources["guards_majority"], merge_signals({}), reasoner)
    assert reasoner.call_count("phase_a") == 0


def test_graph_skip_drops_finding(models, sources):
    ccim = models["patterns"]
    reasoner = scripted([{
        "stage": "phase_b", "match": [],
        "response": {"findings": [{"title": "view result misread",
                                   "description": "ratio output can be wrong",
                                   "severity": "LOW",
                                   "functions": [["Risky", "ratio"]]}]},
    }])
    findings = dd_run(ccim, sources["patterns"], merge_signals({}), reasoner)
    assert not [f for f in findings if ("Risky", "ratio") in f.affected_functions]
