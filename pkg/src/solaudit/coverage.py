"""Recall-side coverage: protocol-feature detection against a twenty-category
knowledge base, bug-class gap reporting, the seventeen-class keyword map and
attention-residual analysis over the function inventory."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import prompts
from .ccim import CcimModel, FnKey, FunctionRecord
from .findings import Finding

# Twenty protocol-feature categories. The first eight are the canonical ones;
# the remainder complete the catalogue and are marked as extensions.
FEATURES: dict[str, dict] = {
    "lending": {
        "names": ("borrow", "repay", "liquidat", "collateral"),
        "var_names": ("debt", "collateral"),
        "bug_classes": ("liquidation-manipulation", "interest-accounting", "oracle-staleness"),
    },
    "staking": {
        "names": ("stake", "unstake", "claimreward", "rewardrate"),
        "var_names": ("reward", "staked"),
        "bug_classes": ("reward-accounting", "stake-lock-bypass", "reentrancy"),
    },
    "governance": {
        "names": ("propose", "castvote", "queue", "quorum"),
        "modifiers": ("onlyGovernance", "onlyGovernor"),
        "bug_classes": ("vote-replay", "proposal-execution-abuse", "governance-takeover"),
    },
    "amm": {
        "names": ("swap", "addliquidity", "removeliquidity", "getamountout"),
        "var_names": ("reserve",),
        "bug_classes": ("price-manipulation", "missing-slippage", "sandwich-frontrunning"),
    },
    "oracle-integration": {
        "names": ("latestrounddata", "latestanswer", "getprice", "setoracle"),
        "var_types": ("IOracle", "AggregatorV3Interface", "IPriceFeed"),
        "var_names": ("oracle", "pricefeed"),
        "bug_classes": ("oracle-staleness", "price-manipulation", "oracle-rotation"),
    },
    "auction": {
        "names": ("bid", "settleauction", "highestbid", "auction"),
        "bug_classes": ("bid-refund-dos", "auction-sniping", "fund-freeze"),
    },
    "bridge": {
        "names": ("bridge", "relay", "messagehash", "processmessage"),
        "bug_classes": ("cross-chain-replay", "unverified-message", "fund-theft"),
    },
    "vault-accounting": {
        "names": ("deposit", "withdraw", "converttoshares", "totalassets"),
        "var_names": ("shares", "totalsupply", "balances"),
        "bug_classes": ("share-inflation", "rounding-drift", "first-depositor"),
    },
    # extensions completing the twenty-category catalogue
    "vesting": {
        "names": ("vest", "cliff", "release", "vestingschedule"),
        "bug_classes": ("vesting-bypass", "premature-release"),
    },
    "nft-marketplace": {
        "names": ("listitem", "buyitem", "royalty", "tokenuri"),
        "bug_classes": ("royalty-bypass", "unsafe-transfer", "signature-replay"),
    },
    "stable-swap": {
        "names": ("getvirtualprice", "amplification"),
        "bug_classes": ("invariant-manipulation", "precision-loss"),
    },
    "rebasing-token": {
        "names": ("rebase", "scalingfactor", "sharesof"),
        "bug_classes": ("rebase-accounting", "balance-desync"),
    },
    "streaming-payments": {
        "names": ("stream", "ratepersecond", "withdrawfromstream"),
        "bug_classes": ("stream-depletion", "timestamp-dependence"),
    },
    "escrow": {
        "names": ("escrow", "refund", "arbiter"),
        "bug_classes": ("premature-release", "fund-freeze"),
    },
    "insurance": {
        "names": ("policy", "premium", "payout"),
        "bug_classes": ("claim-forgery", "premium-accounting"),
    },
    "cdp": {
        "names": ("liquidationratio", "collateralratio", "mintdebt"),
        "var_names": ("debt",),
        "bug_classes": ("undercollateralized-mint", "liquidation-manipulation"),
    },
    "permit-meta-tx": {
        "names": ("permit", "executemetatransaction", "domain_separator"),
        "var_names": ("nonces",),
        "bug_classes": ("signature-replay", "signature-malleability"),
    },
    "airdrop": {
        "names": ("airdrop", "merkleroot", "claimairdrop"),
        "bug_classes": ("merkle-proof-replay", "double-claim"),
    },
    "flash-loan": {
        "names": ("flashloan", "onflashloan", "flashfee"),
        "bug_classes": ("flash-loan-reentrancy", "fee-bypass", "price-manipulation"),
    },
    "token-sale": {
        "names": ("buytokens", "presale", "whitelist", "hardcap"),
        "bug_classes": ("cap-bypass", "refund-dos", "timestamp-dependence"),
    },
}

# keywords that match a bug class against finding text
CLASS_KEYWORDS: dict[str, tuple[str, ...]] = {
    "liquidation-manipulation": ("liquidat",),
    "interest-accounting": ("interest",),
    "oracle-staleness": ("stale", "updatedat"),
    "reward-accounting": ("reward",),
    "stake-lock-bypass": ("unstake", "lock bypass", "early withdraw"),
    "reentrancy": ("reentran",),
    "vote-replay": ("vote repl", "double vot"),
    "proposal-execution-abuse": ("proposal", "execute"),
    "governance-takeover": ("governance", "takeover"),
    "price-manipulation": ("price manipulat", "manipulate the price", "spot price"),
    "missing-slippage": ("slippage",),
    "sandwich-frontrunning": ("sandwich", "front-run", "frontrun"),
    "oracle-rotation": ("oracle", "rotat"),
    "bid-refund-dos": ("refund", "bid"),
    "auction-sniping": ("snip", "last-second"),
    "fund-freeze": ("freeze", "frozen", "locked", "stuck"),
    "cross-chain-replay": ("replay", "cross-chain"),
    "unverified-message": ("unverified", "message"),
    "fund-theft": ("steal", "drain", "theft"),
    "share-inflation": ("inflat", "share price", "first depositor", "donation"),
    "rounding-drift": ("rounding", "precision", "truncat"),
    "first-depositor": ("first depositor",),
    "vesting-bypass": ("vesting",),
    "premature-release": ("premature", "early release"),
    "royalty-bypass": ("royalt",),
    "unsafe-transfer": ("unsafe transfer", "safetransfer"),
    "signature-replay": ("replay", "signature"),
    "invariant-manipulation": ("invariant",),
    "precision-loss": ("precision", "rounding"),
    "rebase-accounting": ("rebase",),
    "balance-desync": ("desync", "out of sync"),
    "stream-depletion": ("stream",),
    "timestamp-dependence": ("timestamp", "block.timestamp"),
    "claim-forgery": ("forg", "claim"),
    "premium-accounting": ("premium",),
    "undercollateralized-mint": ("undercollateral",),
    "signature-malleability": ("malleab",),
    "merkle-proof-replay": ("merkle", "proof replay"),
    "double-claim": ("double claim", "claim twice"),
    "flash-loan-reentrancy": ("flash loan", "flashloan"),
    "fee-bypass": ("fee bypass", "without fee"),
    "cap-bypass": ("cap", "hard cap"),
    "refund-dos": ("refund", "revert"),
}

# the coarser seventeen-class coverage map tracked from keyword hits; the last
# two classes complete the canonical fifteen
SEVENTEEN_CLASSES: dict[str, tuple[str, ...]] = {
    "reentrancy": ("reentran",),
    "access-control": ("access control", "unauthorized", "onlyowner", "privilege"),
    "state-lifecycle": ("lifecycle", "state machine", "initializ"),
    "flash-loan": ("flash loan", "flashloan"),
    "oracle": ("oracle", "price feed"),
    "integer-overflow": ("overflow", "underflow"),
    "frontrunning": ("front-run", "frontrun", "sandwich", "mev"),
    "token-integration": ("erc20", "erc-20", "fee-on-transfer", "token integration"),
    "signature": ("signature", "ecrecover", "replay"),
    "governance": ("governance", "vote", "proposal"),
    "proxy-upgrade": ("proxy", "upgrade", "delegatecall"),
    "accounting": ("accounting", "share", "rounding", "precision"),
    "dos": ("denial of service", "dos", "unbounded loop", "gas grief"),
    "cross-contract": ("cross-contract", "external call", "trust"),
    "donation": ("donation", "direct transfer"),
    "price-manipulation": ("price manipulat", "spot price"),
    "timestamp-dependence": ("timestamp",),
}

# structural risk-profile weights (config data)
RISK_WEIGHTS = {
    "external_vis": 2.0,
    "fund_flag": 3.0,
    "per_write": 1.0,
    "per_external_call": 2.0,
    "arithmetic_bucket_max": 2.0,
    "financial_name": 2.0,
}

_FINANCIAL_NAME_RE = re.compile(r"balance|amount|share|debt|reward|fee|price|supply|asset", re.I)
_ARITH_OP_RE = re.compile(r"[+\-*/%]")

RESIDUAL_STATUSES = ("discussed", "partial-attention", "unattended")

# the structural aspects whose absence near a mention demotes it to
# partial-attention (config-exposed)
ASPECT_KEYWORDS = {
    "fund": ("fund", "transfer", "eth", "value", "token", "pay", "withdraw", "deposit"),
    "external_call": ("call", "external", "oracle", "callee", "reentran", "delegat"),
}


@dataclass(frozen=True)
class CoverageReport:
    detected_features: tuple[str, ...]
    covered_classes: tuple[str, ...]
    gap_set: tuple[str, ...]
    keyword_map: dict[str, bool]

    def to_dict(self) -> dict:
        return {
            "detected_features": list(self.detected_features),
            "covered_classes": list(self.covered_classes),
            "gap_set": list(self.gap_set),
            "keyword_map": dict(sorted(self.keyword_map.items())),
        }


@dataclass(frozen=True)
class ResidualClassification:
    status: dict[FnKey, str]
    risk_score: dict[FnKey, float]

    def by_status(self, status: str) -> list[FnKey]:
        return sorted(k for k, s in self.status.items() if s == status)

    def ranked_residuals(self) -> list[FnKey]:
        residual = [k for k, s in self.status.items() if s != "discussed"]
        return sorted(residual, key=lambda k: (-self.risk_score[k], k))


def detect_features(ccim: CcimModel) -> set[str]:
    """A feature is present when any of its name/modifier/state-variable
    heuristics matches the parsed inventory."""
    fn_names = {r.name.lower() for r in ccim.records}
    modifiers = {m.split("(")[0] for r in ccim.records for m in r.modifiers}
    var_types = {t.split()[0].split("[")[0] for t in ccim.resolution.type_map.values()}
    var_names = {v.lower() for v in ccim.resolution.type_map}
    detected = set()
    for feature, spec in FEATURES.items():
        name_hit = any(any(stem in n for n in fn_names) for stem in spec.get("names", ()))
        mod_hit = any(m in modifiers for m in spec.get("modifiers", ()))
        type_hit = any(t in var_types for t in spec.get("var_types", ()))
        var_hit = any(any(stem in v for v in var_names) for stem in spec.get("var_names", ()))
        if name_hit or mod_hit or type_hit or var_hit:
            detected.add(feature)
    return detected


def compute_gap_set(findings: list[Finding], detected_features: set[str],
                    catalogue: dict[str, dict] | None = None) -> CoverageReport:
    """Match catalogue-relevant bug classes against finding text; unmatched
    classes form the gap set."""
    catalogue = FEATURES if catalogue is None else catalogue
    relevant: set[str] = set()
    for feature in detected_features:
        relevant.update(catalogue.get(feature, {}).get("bug_classes", ()))
    all_text = " ".join(f.text().lower() for f in findings)
    covered = {
        cls for cls in relevant
        if any(k in all_text for k in CLASS_KEYWORDS.get(cls, (cls.replace("-", " "),)))
    }
    keyword_map = {
        cls: any(k in all_text for k in keywords)
        for cls, keywords in SEVENTEEN_CLASSES.items()
    }
    return CoverageReport(
        detected_features=tuple(sorted(detected_features)),
        covered_classes=tuple(sorted(covered)),
        gap_set=tuple(sorted(relevant - covered)),
        keyword_map=keyword_map,
    )


def gap_reaudit_prompts(gap_set: tuple[str, ...] | list[str], ccim: CcimModel,
                        detected_features: set[str] | None = None) -> list[str]:
    """One targeted prompt per gap class, embedding the class heuristics and
    the structural evidence for the feature that made it relevant."""
    detected = detect_features(ccim) if detected_features is None else detected_features
    prompts_out = []
    for bug_class in sorted(gap_set):
        feature = next(
            (f for f in sorted(detected) if bug_class in FEATURES.get(f, {}).get("bug_classes", ())),
            "unknown",
        )
        spec = FEATURES.get(feature, {})
        evidence_fns = [
            r for r in ccim.records
            if any(stem in r.name.lower() for stem in spec.get("names", ()))
        ]
        evidence = "\n".join(
            f"- {r.owner}.{r.name} (span {r.src}, calls: "
            f"{[(s.target, s.method, s.line) for s in r.call_sites]})"
            for r in evidence_fns
        ) or "(feature detected from state-variable patterns)"
        prompts_out.append(prompts.GAP_REAUDIT.format(
            version=prompts.PROMPT_VERSION, feature=feature, bug_class=bug_class,
            heuristics=", ".join(CLASS_KEYWORDS.get(bug_class, ())), evidence=evidence,
        ))
    return prompts_out


def risk_profile(record: FunctionRecord) -> float:
    """Additive structural risk score over the six named factors."""
    score = 0.0
    if record.vis in ("external", "public"):
        score += RISK_WEIGHTS["external_vis"]
    if record.fund_flag:
        score += RISK_WEIGHTS["fund_flag"]
    score += RISK_WEIGHTS["per_write"] * len(record.writes)
    score += RISK_WEIGHTS["per_external_call"] * len(record.call_sites)
    ops = len(_ARITH_OP_RE.findall(record.body_inner()))
    score += min(RISK_WEIGHTS["arithmetic_bucket_max"], ops / 5.0)
    if any(_FINANCIAL_NAME_RE.search(v) for v in record.writes | record.reads):
        score += RISK_WEIGHTS["financial_name"]
    return score


def attention_residual(ccim: CcimModel, discussed_names: set[str],
                       output_text: str = "") -> ResidualClassification:
    """Partition the inventory by comparing mentioned function names against
    the full parsed set; mentioned functions with an unaddressed critical
    aspect (fund movement, external calls) are partial-attention."""
    lowered = output_text.lower()
    status: dict[FnKey, str] = {}
    scores: dict[FnKey, float] = {}
    for rec in ccim.records:
        scores[rec.key] = risk_profile(rec)
        if rec.name not in discussed_names:
            status[rec.key] = "unattended"
            continue
        unaddressed = False
        if output_text:
            if rec.fund_flag and not any(k in lowered for k in ASPECT_KEYWORDS["fund"]):
                unaddressed = True
            if rec.call_sites and not any(k in lowered for k in ASPECT_KEYWORDS["external_call"]):
                unaddressed = True
        status[rec.key] = "partial-attention" if unaddressed else "discussed"
    return ResidualClassification(status=status, risk_score=scores)


def blindspot_prompts(residuals: ResidualClassification, ccim: CcimModel,
                      top_n: int = 3) -> list[str]:
    """Package the highest-risk residual functions for the targeted review
    pass: function source and classification only, no carry-over context."""
    out = []
    for key in residuals.ranked_residuals()[:top_n]:
        rec = ccim.record(*key)
        if rec is None:
            continue
        out.append(prompts.BLINDSPOT.format(
            version=prompts.PROMPT_VERSION,
            status=residuals.status[key],
            source=f"// {key[0]}.{key[1]}\n{rec.body}",
        ))
    return out


def discussed_names_from(findings: list[Finding]) -> set[str]:
    """Function names mentioned anywhere in the pipeline outputs."""
    names: set[str] = set()
    for f in findings:
        for _, fn_name in f.affected_functions:
            names.add(fn_name)
        for word in re.findall(r"[A-Za-z_]\w*", f.text()):
            names.add(word)
    return names
