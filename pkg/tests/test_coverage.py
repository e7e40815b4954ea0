from __future__ import annotations

from helpers import make_finding

from solaudit.coverage import (
    CLASS_KEYWORDS,
    FEATURES,
    SEVENTEEN_CLASSES,
    attention_residual,
    blindspot_prompts,
    compute_gap_set,
    detect_features,
    discussed_names_from,
    gap_reaudit_prompts,
    risk_profile,
)


def test_catalogue_shape():
    assert len(FEATURES) == 20
    for name, spec in FEATURES.items():
        heuristics = (spec.get("names", ()) + spec.get("modifiers", ())
                      + spec.get("var_types", ()) + spec.get("var_names", ()))
        assert heuristics, name
        assert spec["bug_classes"], name
    assert len(SEVENTEEN_CLASSES) == 17
    for cls in {c for spec in FEATURES.values() for c in spec["bug_classes"]}:
        assert cls in CLASS_KEYWORDS, cls


def test_detect_features(models):
    detected = detect_features(models["vault_oracle"])
    assert "oracle-integration" in detected  # IOracle-typed state variable
    assert "vault-accounting" in detected    # deposit/withdraw/totalSupply
    assert "lending" not in detected


def test_detect_features_lending_names(tmp_path):
    from solaudit.ccim import assemble_ccim
    from solaudit.ingest import build_audit_source, classify_files
    (tmp_path / "l.sol").write_text(
        "pragma solidity ^0.8.0;\n"
        "contract Lender {\n"
        "    uint256 public debt;\n"
        "    function borrow(uint256 x) external { debt += x; }\n"
        "    function repay(uint256 x) external { debt -= x; }\n"
        "    function liquidate(address who) external {}\n"
        "}\n"
    )
    ccim = assemble_ccim(build_audit_source(classify_files(tmp_path)))
    assert "lending" in detect_features(ccim)


def test_detect_features_empty_for_pure_math(tmp_path):
    from solaudit.ccim import assemble_ccim
    from solaudit.ingest import build_audit_source, classify_files
    (tmp_path / "m.sol").write_text(
        "pragma solidity ^0.8.0;\n"
        "contract MathOnly {\n"
        "    function add(uint256 a, uint256 b) external pure returns (uint256) { return a + b; }\n"
        "}\n"
    )
    ccim = assemble_ccim(build_audit_source(classify_files(tmp_path)))
    assert detect_features(ccim) == set()


def test_gap_set_all_open_with_no_findings(models):
    detected = detect_features(models["vault_oracle"])
    report = compute_gap_set([], detected)
    assert report.covered_classes == ()
    relevant = {c for f in detected for c in FEATURES[f]["bug_classes"]}
    assert set(report.gap_set) == relevant


def test_gap_set_partition_invariant(models):
    detected = detect_features(models["vault_oracle"])
    findings = [make_finding(title="oracle staleness allows stale price reads")]
    report = compute_gap_set(findings, detected)
    covered, gaps = set(report.covered_classes), set(report.gap_set)
    assert covered & gaps == set()
    relevant = {c for f in detected for c in FEATURES[f]["bug_classes"]}
    assert covered | gaps == relevant
    assert "oracle-staleness" in covered


def test_keyword_map_reentrancy(models):
    report = compute_gap_set([make_finding(title="reentrancy in withdraw")], set())
    assert report.keyword_map["reentrancy"] is True
    assert report.keyword_map["governance"] is False
    assert len(report.keyword_map) == 17


def test_gap_reaudit_prompts(models):
    detected = detect_features(models["vault_oracle"])
    report = compute_gap_set([], detected)
    prompts = gap_reaudit_prompts(report.gap_set, models["vault_oracle"], detected)
    assert len(prompts) == len(report.gap_set)
    oracle_prompts = [p for p in prompts if "oracle-staleness" in p]
    assert oracle_prompts
    # structural evidence for the feature is embedded
    assert any("latestPrice" in p or "setOracle" in p for p in oracle_prompts)


def test_gap_reaudit_empty(models):
    assert gap_reaudit_prompts((), models["vault_oracle"]) == []


def test_risk_profile_dominance(models):
    ccim = models["vault_oracle"]
    withdraw = risk_profile(ccim.record("Vault", "withdraw"))
    view_helper = risk_profile(ccim.record("ChainOracle", "latestPrice"))
    assert withdraw > view_helper


def test_risk_profile_zero_base(tmp_path):
    from solaudit.ccim import assemble_ccim
    from solaudit.ingest import build_audit_source, classify_files
    (tmp_path / "z.sol").write_text(
        "pragma solidity ^0.8.0;\n"
        "contract Z {\n"
        "    function noop() internal pure returns (bool) { return true; }\n"
        "}\n"
    )
    ccim = assemble_ccim(build_audit_source(classify_files(tmp_path)))
    assert risk_profile(ccim.record("Z", "noop")) == 0.0


def test_risk_profile_financial_names(models):
    rec = models["vault_oracle"].record("Vault", "deposit")
    assert risk_profile(rec) >= 2.0  # balance-named writes contribute


def test_risk_profile_monotone_in_calls_and_writes(models):
    import dataclasses
    rec = models["vault_oracle"].record("Vault", "withdraw")
    richer = dataclasses.replace(rec, writes=frozenset(rec.writes | {"extraVar"}))
    assert risk_profile(richer) >= risk_profile(rec)


def test_attention_residual_statuses(models):
    ccim = models["vault_oracle"]
    mentioned = {"withdraw", "deposit"}
    text = "withdraw moves funds via an external oracle call; deposit updates balances"
    residuals = attention_residual(ccim, mentioned, text)
    assert set(residuals.status.values()) <= {"discussed", "partial-attention", "unattended"}
    assert residuals.status[("Vault", "withdraw")] == "discussed"
    assert residuals.status[("Vault", "sweep")] == "unattended"
    assert len(residuals.status) == len(ccim.records)


def test_attention_residual_partial(models):
    ccim = models["vault_oracle"]
    # sweep moves funds; mention it without any fund-aspect keyword nearby
    residuals = attention_residual(ccim, {"sweep"}, "sweep exists in the contract")
    assert residuals.status[("Vault", "sweep")] == "partial-attention"


def test_attention_residual_empty_output(models):
    ccim = models["vault_oracle"]
    residuals = attention_residual(ccim, set(), "")
    assert all(s == "unattended" for s in residuals.status.values())


def test_blindspot_prompts_ranked(models):
    ccim = models["vault_oracle"]
    residuals = attention_residual(ccim, set(), "")
    prompts = blindspot_prompts(residuals, ccim, top_n=2)
    assert len(prompts) == 2
    ranked = residuals.ranked_residuals()
    assert f"{ranked[0][0]}.{ranked[0][1]}" in prompts[0]
    assert "no carry-over context" in prompts[0]


def test_discussed_names_extraction():
    f = make_finding(title="reentrancy in withdraw", description="the deposit path is safe",
                     functions=[("Vault", "withdraw")])
    names = discussed_names_from([f])
    assert {"withdraw", "deposit"} <= names
