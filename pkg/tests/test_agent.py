import json
import os
from decimal import Decimal

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from szzkit.agent import (
    BACKEND_ERROR,
    BUDGET,
    FINAL,
    HttpBackend,
    PriceTable,
    Role,
    ScriptedBackend,
    SessionBudget,
    SessionResult,
    UsageLedger,
    read_answer,
    run_session,
    tool_glob,
    tool_grep,
    tool_read,
    tool_write,
)
from szzkit.agent.backends import Usage
from szzkit.agent.tools import dispatch, resolve_in
from szzkit.errors import BackendError, BadRegex, OutsideWorkspace, ScriptExhausted, ToolNotFound

PRICES = PriceTable.parse("scripted 1.0 5.0\n")


@pytest.fixture
def dump(tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    (ws / "INDEX.txt").write_text("000000\taaa\tt\ts1\n000001\tbbb\tt\ts2\n000002\tccc\tt\ts3\n")
    (ws / "000000_aaaaaaaaaaaa.txt").write_text("commit aaa\n+ msleep(10);\n")
    (ws / "000001_bbbbbbbbbbbb.txt").write_text("commit bbb\n+ fsleep(10);\na+b\naab\n")
    (ws / "000002_cccccccccccc.txt").write_text("commit ccc\n- nothing\n")
    return ws


# -- tools ---------------------------------------------------------------------

def test_read_numbered_lines(dump):
    out = tool_read(dump, "INDEX.txt")
    assert out.splitlines()[0] == "     1\t000000\taaa\tt\ts1"
    assert len(out.splitlines()) == 3
    assert tool_read(dump, "INDEX.txt", offset=2, limit=1).startswith("     2\t")


def test_read_eof_missing_and_escape(dump):
    assert tool_read(dump, "INDEX.txt", offset=50).startswith("[EOF")
    with pytest.raises(ToolNotFound):
        tool_read(dump, "nope.txt")
    with pytest.raises(OutsideWorkspace):
        tool_read(dump, "../../etc/passwd")


def test_read_truncation(dump):
    (dump / "big.txt").write_text("x" * 5000 + "\n")
    out = tool_read(dump, "big.txt", max_bytes=100)
    assert "truncated at 100 bytes" in out


def test_grep_literal_vs_regex(dump):
    assert [(p, n) for p, n, _ in tool_grep(dump, "a+b", "literal").matches] == [("000001_bbbbbbbbbbbb.txt", 3)]
    assert [(n, t) for _, n, t in tool_grep(dump, "a+b", "regex").matches] == [(4, "aab")]
    assert tool_grep(dump, "fsleep").matches[0][0] == "000001_bbbbbbbbbbbb.txt"
    assert tool_grep(dump, "zzz_absent").matches == []
    with pytest.raises(BadRegex):
        tool_grep(dump, "(")


def test_grep_order_and_truncation(dump):
    res = tool_grep(dump, "commit", max_matches=2)
    assert [p for p, _, _ in res.matches] == ["000000_aaaaaaaaaaaa.txt", "000001_bbbbbbbbbbbb.txt"]
    assert res.truncated and "truncated" in res.render()


def test_glob(dump):
    assert tool_glob(dump, "*.txt") == sorted(p.name for p in dump.iterdir())
    assert tool_glob(dump, "zzz*") == []
    assert tool_glob(dump, "00000[01]_*.txt") == ["000000_aaaaaaaaaaaa.txt", "000001_bbbbbbbbbbbb.txt"]


def test_write_roundtrip_and_escape(dump):
    tool_write(dump, "ANSWER.txt", "abc\n")
    assert (dump / "ANSWER.txt").read_text() == "abc\n"
    tool_write(dump, "ANSWER.txt", "def\n")
    assert (dump / "ANSWER.txt").read_text() == "def\n"
    with pytest.raises(OutsideWorkspace):
        tool_write(dump, "../escape.txt", "x")
    assert not (dump.parent / "escape.txt").exists()


def test_symlink_escape_blocked(dump, tmp_path):
    (tmp_path / "secret.txt").write_text("s")
    os.symlink(tmp_path / "secret.txt", dump / "link.txt")
    with pytest.raises(OutsideWorkspace):
        tool_read(dump, "link.txt")


_SEGMENTS = st.sampled_from(["..", ".", "a", "b", "/", "/etc", "~", "..\\", "%2e%2e", "sub"])


@settings(max_examples=300, deadline=None)
@given(st.lists(_SEGMENTS, min_size=1, max_size=6))
def test_no_path_escapes_workspace(tmp_path_factory, segs):
    ws = tmp_path_factory.mktemp("adv")
    path = "/".join(segs)
    root = ws.resolve()
    try:
        target = resolve_in(ws, path)
    except OutsideWorkspace:
        return
    assert target == root or root in target.parents
    for tool, args in (("Read", {"path": path}), ("Write", {"path": path, "content": "x"})):
        dispatch(ws, tool, json.dumps(args))
    assert all(root in p.resolve().parents for p in root.rglob("*"))


def test_unknown_tool_never_runs(dump):
    tool, _, text, err = dispatch(dump, "WebSearch", '{"q": "x"}')
    assert tool is None and err and "not available" in text


# -- backends and sessions ---------------------------------------------------

def _grep_turn(pattern):
    return {"content": "", "tool_calls": [{"name": "Grep", "arguments": {"pattern": pattern}}]}


def test_immediate_final(dump):
    res = run_session(ScriptedBackend(["done"]), "sys", "user", dump)
    assert res.trace == [] and res.stopped_by == FINAL and res.final_text == "done"


def test_one_grep_then_final(dump):
    res = run_session(ScriptedBackend([_grep_turn("fsleep"), "found it"]), "sys", "user", dump)
    assert [r.tool for r in res.trace] == ["GREP"] and res.trace[0].seq == 1
    tool_msgs = [m for m in res.transcript if m.role is Role.TOOL]
    assert len(tool_msgs) == len(res.trace) == 1
    assert tool_msgs[0].tool_call_id == res.transcript[2].tool_calls[0].id


def test_budget_turns(dump):
    res = run_session(ScriptedBackend([_grep_turn("x"), "final"]), "s", "u", dump, SessionBudget(max_turns=1))
    assert res.stopped_by == BUDGET


def test_budget_tokens(dump):
    backend = ScriptedBackend([_grep_turn("x")] * 5 + ["final"], input_tokens=1000)
    res = run_session(backend, "s", "u", dump, SessionBudget(max_total_tokens=2500))
    assert res.stopped_by == BUDGET and res.usage.input_tokens == 3000


def test_script_exhausted(dump):
    backend = ScriptedBackend([_grep_turn("x")])
    with pytest.raises(ScriptExhausted):
        run_session(backend, "s", "u", dump)
    assert backend.consumed == 1


def test_cost_from_price_table(dump):
    res = run_session(ScriptedBackend(["done"]), "s", "u", dump, prices=PRICES)
    assert res.usage.cost_usd == Decimal("0.0002")
    assert PRICES.cost("scripted", res.usage.usage) == res.usage.cost_usd
    assert PriceTable().cost("scripted", Usage(10**6, 10**6)) == Decimal("0.0000")


def test_half_even_rounding():
    table = PriceTable.parse("m 0.5 0\n")
    assert table.cost("m", Usage(250, 0)) == Decimal("0.0001")  # 0.000125 -> 0.0001
    assert table.cost("m", Usage(350, 0)) == Decimal("0.0002")  # 0.000175 -> 0.0002


def test_blocked_tool_recorded(dump):
    turn = {"content": "", "tool_calls": [{"name": "WebFetch", "arguments": {"url": "http://x"}}]}
    res = run_session(ScriptedBackend([turn, "ok"]), "s", "u", dump)
    assert res.trace[0].tool == "BLOCKED" and res.trace[0].error
    assert len([m for m in res.transcript if m.role is Role.TOOL]) == len(res.trace)


def test_deterministic_serialization(dump, tmp_path):
    script = [_grep_turn("fsleep"), {"content": "", "tool_calls": [
        {"name": "Read", "arguments": {"path": "000001_bbbbbbbbbbbb.txt"}}]}, "answer"]
    a = run_session(ScriptedBackend(script), "s", "u", dump, prices=PRICES, session_id="x")
    b = run_session(ScriptedBackend(script), "s", "u", dump, prices=PRICES, session_id="x")
    assert a.to_jsonl() == b.to_jsonl()
    a.save(tmp_path / "t.jsonl")
    back = SessionResult.load(tmp_path / "t.jsonl")
    assert back.to_jsonl() == a.to_jsonl()


def test_read_answer_prefers_file(dump):
    res = run_session(ScriptedBackend(["from text"]), "s", "u", dump)
    assert read_answer(res, dump) == "from text"
    (dump / "ANSWER.txt").write_text("from file")
    assert read_answer(res, dump) == "from file"


def test_scripted_from_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"turns": ["a"], "usage": {"input": 7, "output": 3}, "model": "m"}))
    b = ScriptedBackend.from_file(p)
    assert b.model == "m" and b.usage == Usage(7, 3)
    with pytest.raises(ValueError):
        ScriptedBackend([])


# -- http backend --------------------------------------------------------------

def _reply(request):
    body = json.loads(request.content)
    assert body["model"] == "m" and body["tools"][0]["function"]["name"] == "Read"
    assert request.headers.get("authorization") == "Bearer sekrit"
    if len(body["messages"]) == 2:
        msg = {"role": "assistant", "content": None, "tool_calls": [
            {"id": "c1", "type": "function", "function": {"name": "Glob", "arguments": '{"pattern": "*.txt"}'}}]}
    else:
        assert body["messages"][-1]["role"] == "tool"
        msg = {"role": "assistant", "content": "final"}
    return httpx.Response(200, json={"choices": [{"message": msg}],
                                     "usage": {"prompt_tokens": 120, "completion_tokens": 8,
                                               "prompt_tokens_details": {"cached_tokens": 20}}})


def test_http_backend_roundtrip(dump, monkeypatch):
    monkeypatch.setenv("BACKEND_API_KEY", "sekrit")
    backend = HttpBackend("http://test/v1/chat/completions", "m", transport=httpx.MockTransport(_reply))
    res = run_session(backend, "s", "u", dump)
    assert res.stopped_by == FINAL and [r.tool for r in res.trace] == ["GLOB"]
    assert (res.usage.input_tokens, res.usage.output_tokens, res.usage.cache_tokens) == (200, 16, 40)
    assert "sekrit" not in res.to_jsonl()


def test_http_backend_retries_then_fails(dump):
    calls = []

    def fail(request):
        calls.append(1)
        return httpx.Response(503, text="busy")
    backend = HttpBackend("http://test", "m", transport=httpx.MockTransport(fail))
    res = run_session(backend, "s", "u", dump, sleep=lambda s: None)
    assert res.stopped_by == BACKEND_ERROR and len(calls) == 3
    with pytest.raises(BackendError):
        backend.complete([], [])


def test_ledger_roundtrip():
    led = UsageLedger(1, 2, 3, Decimal("0.1235"))
    assert UsageLedger.from_dict(json.loads(json.dumps(led.to_dict()))) == led
