"""Shared test utilities: finding factories and instrumented reasoners."""

from __future__ import annotations

import threading
import time

from solaudit.findings import Finding
from solaudit.reasoner import MockReasoner, Reasoner, ReasonerError, ReasonerRequest, ScriptEntry


def make_finding(fid="D-001", pipeline="D", title="finding", description="",
                 scenario="", severity="HIGH", functions=(("Vault", "withdraw"),),
                 lines=(), confidence=0.5, flags=()):
    return Finding(
        id=fid, pipeline=pipeline, title=title, description=description,
        attack_scenario=scenario, severity=severity,
        affected_functions=[tuple(f) for f in functions],
        evidence_lines=list(lines), confidence=confidence, flags=set(flags),
    )


def scripted(entries: list[dict]) -> MockReasoner:
    return MockReasoner([
        ScriptEntry(stage=e["stage"], match=tuple(e.get("match", ())), response=e["response"])
        for e in entries
    ])


class ThrowingReasoner(Reasoner):
    """Fails every call; used to assert degraded-path isolation."""

    def __init__(self):
        self.calls = 0

    def respond(self, request: ReasonerRequest):
        self.calls += 1
        raise ReasonerError("backend down")

    def call_count(self, stage: str) -> int:
        return self.calls


class DelayedOnceReasoner(Reasoner):
    """Sleeps once per pipeline family (dd/id) on the first call, simulating
    per-pipeline latency for the concurrency assertion."""

    _DD_PREFIXES = ("phase_",)
    _ID_PREFIXES = ("stage1_", "stage2_", "stage3_", "standalone")

    def __init__(self, inner: Reasoner, dd_seconds: float, id_seconds: float):
        self.inner = inner
        self.delays = {"dd": dd_seconds, "id": id_seconds}
        self._fired: set[str] = set()
        self._lock = threading.Lock()

    def _family(self, stage: str) -> str | None:
        if any(stage.startswith(p) for p in self._DD_PREFIXES):
            return "dd"
        if any(stage.startswith(p) for p in self._ID_PREFIXES):
            return "id"
        return None

    def respond(self, request: ReasonerRequest):
        family = self._family(request.stage)
        fire = False
        if family is not None:
            with self._lock:
                if family not in self._fired:
                    self._fired.add(family)
                    fire = True
        if fire:
            time.sleep(self.delays[family])
        return self.inner.respond(request)

    def call_count(self, stage: str) -> int:
        return self.inner.call_count(stage)
