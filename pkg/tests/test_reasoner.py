from __future__ import annotations

import json
import threading

import pytest

from solaudit.reasoner import (
    BudgetExceededError,
    MockReasoner,
    ReasonerRequest,
    SCHEMA_DEFAULTS,
    ScriptEntry,
    parse_structured,
)


def _req(stage="phase_a", prompt="hello Vault.withdraw", schema="phase_a", budget=1000):
    return ReasonerRequest(stage=stage, prompt=prompt, schema=schema, budget=budget)


def test_scripted_response_verbatim():
    mock = MockReasoner([ScriptEntry(stage="phase_a", match=("Vault.withdraw",),
                                     response={"items": [{"verdict": "REAL"}]})])
    response = mock.respond(_req())
    assert response.payload == {"items": [{"verdict": "REAL"}]}


def test_unscripted_returns_schema_default():
    mock = MockReasoner()
    response = mock.respond(_req(schema="sve_layer2"))
    assert response.payload == SCHEMA_DEFAULTS["sve_layer2"]
    assert response.ok


def test_budget_exceeded():
    mock = MockReasoner()
    with pytest.raises(BudgetExceededError):
        mock.respond(_req(prompt="x" * 2000, budget=100))


def test_match_requires_all_substrings():
    mock = MockReasoner([ScriptEntry(stage="phase_a", match=("alpha", "beta"),
                                     response={"items": [1]})])
    assert mock.respond(_req(prompt="has alpha only")).payload == SCHEMA_DEFAULTS["phase_a"]
    assert mock.respond(_req(prompt="alpha and beta")).payload == {"items": [1]}


def test_stage_mismatch_falls_through():
    mock = MockReasoner([ScriptEntry(stage="phase_e", match=(), response={"severity": "LOW"})])
    assert mock.respond(_req(stage="phase_a")).payload == SCHEMA_DEFAULTS["phase_a"]


def test_call_counters():
    mock = MockReasoner()
    assert mock.call_count("phase_a") == 0
    mock.respond(_req())
    mock.respond(_req())
    mock.respond(_req(stage="stage3_verify", schema="stage3_verify"))
    assert mock.call_count("phase_a") == 2
    assert mock.call_count("stage3_verify") == 1
    assert mock.total_calls() == 3


def test_determinism_identical_sequences():
    script = [ScriptEntry(stage="phase_a", match=("x",), response={"items": [{"v": 1}]})]
    a, b = MockReasoner(script), MockReasoner(script)
    reqs = [_req(prompt="x marks"), _req(prompt="no match"), _req(prompt="x again")]
    assert [a.respond(r).raw for r in reqs] == [b.respond(r).raw for r in reqs]


def test_concurrent_counting():
    mock = MockReasoner()
    threads = [threading.Thread(target=lambda: [mock.respond(_req()) for _ in range(50)])
               for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert mock.call_count("phase_a") == 400


def test_from_file(tmp_path):
    script = {
        "version": 1,
        "responses": [
            {"stage": "phase_a", "match": ["withdraw"],
             "response": {"items": [{"verdict": "REAL", "evidence_line": 3}]}},
        ],
    }
    path = tmp_path / "script.json"
    path.write_text(json.dumps(script))
    mock = MockReasoner.from_file(path)
    assert mock.respond(_req(prompt="about withdraw")).payload["items"][0]["verdict"] == "REAL"


def test_parse_structured():
    assert parse_structured('{"a": 1}') == {"a": 1}
    assert parse_structured('prose before {"a": 1} prose after') == {"a": 1}
    assert parse_structured("not json at all") is None
    assert parse_structured("[1, 2]") is None
