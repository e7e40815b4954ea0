"""Single entry point: substrate construction, concurrent audit pipelines,
merge, reduction funnel, coverage and report emission."""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .ccim import assemble_ccim
from .coverage import (
    attention_residual,
    blindspot_prompts,
    compute_gap_set,
    detect_features,
    discussed_names_from,
    gap_reaudit_prompts,
)
from .dossier import dd_run
from .engines import DEFAULT_SIGNAL_CAP, Signal, ingest_external, run_engines
from .findings import SEVERITY_RANK, Finding, finding_from_payload
from .funnel import run_funnel, sve_layer1, stage1_verify, stage2_filter
from .ingest import IngestError, build_audit_source, classify_files, resolve_remappings
from .interaction import id_run
from .merge import base_confidence, extract_card, merge
from .reasoner import DEFAULT_CHAR_BUDGET, MockReasoner, Reasoner, ReasonerError, ReasonerRequest
from .report import AuditReport, build_citations, ccim_summary, emit

log = logging.getLogger(__name__)

EXIT_CLEAN = 0
EXIT_FINDINGS = 1
EXIT_ERROR = 2


@dataclass
class RunConfig:
    path: str
    scope: list[str] | None = None
    signal_cap: int = DEFAULT_SIGNAL_CAP
    char_budget: int = DEFAULT_CHAR_BUDGET
    mock_script: str | None = None
    out_dir: str = "audit-out"
    formats: tuple[str, ...] = ("markdown", "json")
    severity_gate: str = "HIGH"
    external_signals: tuple[str, ...] = ()
    max_pairs: int = 16
    extra_phases: tuple[str, ...] = ()
    reaudit_rounds: int = 1
    blindspot_top: int = 3

    def __post_init__(self):
        if not self.formats:
            raise ValueError("at least one report format must be selected")
        if self.severity_gate not in SEVERITY_RANK:
            raise ValueError(f"unknown severity gate {self.severity_gate!r}")


def _load_external(config: RunConfig, offsets) -> list[Signal]:
    signals: list[Signal] = []
    for raw_path in config.external_signals:
        tool = "SLI"
        try:
            data = json.loads(Path(raw_path).read_text(encoding="utf-8"))
            name = str(data.get("tool", "slither")).lower()
            tool = "MYT" if name.startswith("myt") else "SLI"
        except (OSError, json.JSONDecodeError):
            pass  # ingest_external reports the problem
        signals.extend(ingest_external(raw_path, tool, offsets))
    return signals


def _extra_round_findings(prompt_list: list[str], stage: str, schema: str,
                          reasoner: Reasoner, ccim, signals, flag: str,
                          budget: int, start_index: int) -> list[Finding]:
    """Closed-loop follow-up passes (gap re-audit, blind-spot review): parsed
    findings are admitted only after the deterministic funnel checks."""
    found: list[Finding] = []
    for prompt in prompt_list:
        try:
            response = reasoner.respond(ReasonerRequest(stage, prompt[:budget], schema, budget))
        except ReasonerError as exc:
            log.warning("%s pass failed (%s)", stage, exc)
            continue
        if not response.ok:
            continue
        for raw in response.payload.get("findings", []):
            if isinstance(raw, dict):
                f = finding_from_payload(raw, "I")
                if f is not None:
                    found.append(f)
    admitted = []
    for i, f in enumerate(found, start=start_index):
        f.id = f"{flag[0].upper()}-{i:03d}"
        if stage1_verify(f, ccim).verdict == "DISPROVED":
            continue
        if stage2_filter(f, ccim).verdict == "FILTERED":
            continue
        f.card = extract_card(f, ccim)
        if sve_layer1(f, ccim).verdict == "DISPROVED":
            continue
        f.flags.add(flag)
        f.confidence = base_confidence(f, ccim, signals)
        admitted.append(f)
    return admitted


def run(config: RunConfig, reasoner: Reasoner | None = None) -> AuditReport:
    """Execute the three macro-phases: deterministic substrate, concurrent
    audit pipelines, merge + funnel + coverage + report."""
    durations: dict[str, float] = {}
    t0 = time.perf_counter()

    files = classify_files(config.path)
    remappings = resolve_remappings(config.path)
    source = build_audit_source(files, config.scope, remappings)
    ccim = assemble_ccim(source)
    durations["substrate"] = time.perf_counter() - t0

    if reasoner is None:
        reasoner = MockReasoner.from_file(config.mock_script) if config.mock_script \
            else MockReasoner()

    # long-running deterministic work is offloaded so it cannot starve
    # concurrently progressing pipelines
    t1 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=1, thread_name_prefix="engines") as pool:
        external = _load_external(config, source.offsets)
        merged_signals = pool.submit(
            run_engines, ccim, source, None, external, config.signal_cap
        ).result()
    durations["engines"] = time.perf_counter() - t1

    # the pipelines share the immutable substrate; each gets a private
    # annotation store holding its own copy of the offset map
    dd_notes: dict = {"offsets": copy.deepcopy(source.offsets)}
    id_notes: dict = {"offsets": copy.deepcopy(source.offsets)}
    t2 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=2, thread_name_prefix="pipeline") as pool:
        dd_future = pool.submit(dd_run, ccim, source, merged_signals, reasoner,
                                budget=config.char_budget, extra_phases=config.extra_phases,
                                annotations=dd_notes)
        id_future = pool.submit(id_run, ccim, source, merged_signals, reasoner,
                                budget=config.char_budget, max_pairs=config.max_pairs,
                                annotations=id_notes)
        f_d = dd_future.result()
        f_i = id_future.result()
    durations["pipelines"] = time.perf_counter() - t2

    t3 = time.perf_counter()
    merged = merge(f_d, f_i, ccim, merged_signals)
    final, funnel_stats = run_funnel(merged, ccim, source, reasoner,
                                     merged_signals, config.char_budget)
    durations["merge_funnel"] = time.perf_counter() - t3

    t4 = time.perf_counter()
    features = detect_features(ccim)
    pipeline_findings = list(merged.findings)
    coverage = compute_gap_set(pipeline_findings, features)

    for _ in range(max(0, config.reaudit_rounds)):
        if not coverage.gap_set:
            break
        reaudit = _extra_round_findings(
            gap_reaudit_prompts(coverage.gap_set, ccim, features),
            "gap_reaudit", "gap_reaudit", reasoner, ccim, merged_signals,
            "gap-reaudit", config.char_budget, start_index=1)
        if not reaudit:
            break
        final.extend(reaudit)
        pipeline_findings.extend(reaudit)
        coverage = compute_gap_set(pipeline_findings, features)

    residuals = attention_residual(
        ccim, discussed_names_from(pipeline_findings),
        " ".join(f.text() for f in pipeline_findings))
    blind = _extra_round_findings(
        blindspot_prompts(residuals, ccim, config.blindspot_top),
        "blindspot", "blindspot", reasoner, ccim, merged_signals,
        "blindspot-review", config.char_budget, start_index=1)
    if blind:
        final.extend(blind)
        pipeline_findings.extend(blind)
        residuals = attention_residual(
            ccim, discussed_names_from(pipeline_findings),
            " ".join(f.text() for f in pipeline_findings))
    durations["coverage"] = time.perf_counter() - t4

    report = AuditReport(
        findings=final,
        citations=build_citations(final, ccim, source),
        merged=merged,
        funnel_stats=funnel_stats,
        coverage=coverage,
        residuals=residuals,
        ccim_summary=ccim_summary(ccim),
        scope=source.scope,
        run_meta={
            "durations": durations,
            "dd_annotations": {k: v for k, v in dd_notes.items() if k != "offsets"},
            "id_annotations": {k: v for k, v in id_notes.items() if k != "offsets"},
        },
    )
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="solaudit",
        description="Deterministic Solidity auditing engine with mockable reasoning backend",
    )
    p.add_argument("--path", required=True, help="repository root or directory with .sol files")
    p.add_argument("--scope", action="append", default=None,
                   help="restrict the audit scope to this contract (repeatable)")
    p.add_argument("--signal-cap", type=int, default=DEFAULT_SIGNAL_CAP,
                   help="global cap on merged deterministic signals (default 50)")
    p.add_argument("--char-budget", type=int, default=DEFAULT_CHAR_BUDGET,
                   help="character budget for reasoner source extracts (default 24000)")
    p.add_argument("--mock-script", default=None,
                   help="path to a mock reasoner script (JSON); default: unscripted mock")
    p.add_argument("--out", default="audit-out", help="output directory (default audit-out)")
    p.add_argument("--format", action="append", choices=("markdown", "json"), default=None,
                   help="report format (repeatable; default both)")
    p.add_argument("--severity-gate", default="HIGH", choices=list(SEVERITY_RANK),
                   help="exit 1 when a finding at or above this severity survives (default HIGH)")
    p.add_argument("--external-signals", action="append", default=[],
                   help="normalized external-tool report JSON to ingest (repeatable)")
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    config = RunConfig(
        path=args.path,
        scope=args.scope,
        signal_cap=args.signal_cap,
        char_budget=args.char_budget,
        mock_script=args.mock_script,
        out_dir=args.out,
        formats=tuple(args.format) if args.format else ("markdown", "json"),
        severity_gate=args.severity_gate,
        external_signals=tuple(args.external_signals),
    )
    try:
        report = run(config)
        written = emit(report, config.formats, config.out_dir)
    except (IngestError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for path in written:
        print(f"wrote {path}")
    gate = SEVERITY_RANK[config.severity_gate]
    if any(SEVERITY_RANK[f.severity] >= gate for f in report.findings):
        return EXIT_FINDINGS
    return EXIT_CLEAN


if __name__ == "__main__":
    sys.exit(main())
