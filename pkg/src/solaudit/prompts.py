"""Versioned prompt templates for every reasoner-bearing stage.

Templates are plain text resources; bump PROMPT_VERSION when wording changes
so scripted mock responses can be pinned to the template they were written
against.
"""

from __future__ import annotations

PROMPT_VERSION = "1"

BUILTIN_FP_RULES = """\
Built-in false-positive rules (do not report these):
1. Arithmetic overflow on Solidity >= 0.8 outside unchecked blocks reverts; it is not a finding.
2. Reentrancy on functions guarded by nonReentrant is not exploitable.
3. Missing-access-control claims are invalid when an admin modifier is present on the function.
4. "EVM race conditions" are structurally impossible: transactions execute atomically."""

PHASE_A = """\
[template v{version}] You are a Solidity security auditor. For each checklist
item below, decide whether the pre-identified risk is REAL, FALSE_POSITIVE, or
UNCLEAR. A REAL verdict must cite an evidence line number from the source.

{fp_rules}

Function under review: {owner}.{name}
{facts}

Checklist items:
{items}

Respond as JSON: {{"items": [{{"item_id": ..., "verdict": "REAL|FALSE_POSITIVE|UNCLEAR",
"evidence_line": <int or null>, "title": ..., "description": ..., "attack_scenario": ...,
"severity": "CRITICAL|HIGH|MEDIUM|LOW|INFO"}}]}}"""

PHASE_B = """\
[template v{version}] Contract-level semantic review through the lens: {lens}.
Contracts are listed in priority order (aggregated deterministic risk score).

{contracts}

Deterministic signal record:
{signals}

Report findings as JSON: {{"findings": [{{"title": ..., "description": ...,
"attack_scenario": ..., "severity": ..., "functions": [["Contract", "function"]],
"evidence_lines": [..]}}]}}"""

PHASE_C = """\
[template v{version}] Cross-function interference review. The functions below
all touch {subject}. Examine the entire interference set at once and issue one
verdict: VULNERABLE, SAFE or UNCLEAR.

{members}

Respond as JSON: {{"verdict": "VULNERABLE|SAFE|UNCLEAR", "title": ...,
"description": ..., "attack_scenario": ..., "severity": ..., "evidence_lines": [..]}}"""

PHASE_D = """\
[template v{version}] Claim-first verification. Follow the four steps exactly:
1. Extract the finding's core claim in one sentence.
2. Name the specific piece of code that would prevent that claim.
3. Search the source below for that prevention and QUOTE the exact line if found.
4. Verdict: DISPROVED only if you quoted a concrete preventing line; otherwise
   CONFIRMED or UNCLEAR.

Finding: {title}
{description}

Source (affected functions expanded with callers and callees):
{source_block}

Respond as JSON: {{"claim": ..., "prevention": ..., "quote": ..., "verdict": "DISPROVED|CONFIRMED|UNCLEAR"}}"""

PHASE_E = """\
[template v{version}] Severity recalibration. Use only the parsed
access-control evidence below, not the finding's own claims. Apply the six
calibration rules and return the recalibrated severity with a one-sentence
justification referencing the evidence.

Finding: {title} (current severity {severity})
{description}

Access-control evidence:
{bundle}

Respond as JSON: {{"severity": "CRITICAL|HIGH|MEDIUM|LOW|INFO" or null,
"justification": ...}}"""

STAGE1_TRIAGE = """\
[template v{version}] The contracts below produced no high-severity
deterministic signals. From their skeletons only, nominate function pairs
whose interaction deserves audit attention.

{skeletons}

Respond as JSON: {{"pairs": [["Contract", "fnA", "Contract", "fnB"], ...]}}"""

STAGE2_SPEC = """\
[template v{version}] Behavioral specification inference. You see ONLY the
contract skeleton: signatures, doc comments, module documentation. Do not
assume anything about the implementation. For the pair below, state the
expected lifecycle, the state variables both functions must agree on, and the
behavioral assumptions a correct implementation preserves.

Pair: {pair}

Skeleton:
{skeleton}

Respond as JSON: {{"lifecycle": ..., "agreed_variables": [..], "assumptions": [..]}}"""

STAGE3_CHECKLIST = (
    "assumption enforcement: does the code ENFORCE or VIOLATE each specified assumption (cite lines)",
    "shared-state usage across the pair",
    "value-flow trace through both functions",
    "accounting consistency between the pair",
    "invariant preservation across the pair",
    "arithmetic safety: precision, overflow, unchecked blocks",
    "final per-pair verdict",
)

STAGE3_VERIFY = """\
[template v{version}] Spec-then-verify audit of a function pair. Answer the
seven checklist items one by one. Every VIOLATE item must carry either an
evidence citation (line number plus quoted code) or a concrete exploit trace.
Invented attack narratives without a specific assumption violation are
forbidden.

Inferred specification:
{spec}

Pair sources with structural metadata:
{sources}

Preconditions inferred across the pair:
{preconditions}

Checklist:
{checklist}

Respond as JSON: {{"items": [{{"index": 1..7, "status": "ENFORCE|VIOLATE",
"evidence_line": <int or null>, "quote": ..., "trace": ..., "title": ...,
"description": ..., "attack_scenario": ..., "severity": ...}}]}}"""

STANDALONE = """\
[template v{version}] Focused single-function audit. This function handles
value with unchecked arithmetic and gets its own audit slot outside the pair
structure.

{source}

Respond as JSON: {{"findings": [{{"title": ..., "description": ...,
"attack_scenario": ..., "severity": ..., "evidence_lines": [..]}}]}}"""

SVE_LAYER2 = """\
[template v{version}] Final structural verdict. The finding below survived all
deterministic checks. Re-verify it against the packaged evidence and return
VERIFIED, DISPROVED or UNCERTAIN with a supporting argument. DISPROVED
requires quoting the contradicting evidence.

Finding: {title} [{severity}]
{description}

Packaged evidence:
{evidence}

Respond as JSON: {{"verdict": "VERIFIED|DISPROVED|UNCERTAIN", "quote": ..., "argument": ...}}"""

GAP_REAUDIT = """\
[template v{version}] Coverage-gap re-audit. The protocol exhibits the feature
"{feature}" but no finding addresses the bug class "{bug_class}". Re-examine
the evidence below specifically for that class.

Detection heuristics for the class: {heuristics}

Structural evidence:
{evidence}

Respond as JSON: {{"findings": [{{"title": ..., "description": ...,
"attack_scenario": ..., "severity": ..., "functions": [["Contract", "function"]],
"evidence_lines": [..]}}]}}"""

BLINDSPOT = """\
[template v{version}] Blind-spot review. The function below was {status} by
the audit passes. You receive only its source and classification, with no
carry-over context. Audit it from scratch.

{source}

Respond as JSON: {{"findings": [{{"title": ..., "description": ...,
"attack_scenario": ..., "severity": ..., "evidence_lines": [..]}}]}}"""
