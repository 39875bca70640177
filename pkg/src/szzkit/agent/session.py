"""The agent loop: send the transcript, run requested tools, repeat until a plain answer."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from ..errors import BackendError
from .backends import Backend, Message, PriceTable, Role, Usage, UsageLedger
from .tools import DEFAULT_MAX_BYTES, TOOL_SCHEMAS, dispatch

log = logging.getLogger(__name__)

TRACE_SCHEMA = "trace.v1"
ANSWER_FILE = "ANSWER.txt"
FINAL, BUDGET, BACKEND_ERROR = "FINAL", "BUDGET", "BACKEND_ERROR"


@dataclass(frozen=True)
class SessionBudget:
    max_turns: int = 60
    max_total_tokens: int = 4_000_000
    max_tool_result_bytes: int = DEFAULT_MAX_BYTES

    def __post_init__(self):
        if min(self.max_turns, self.max_total_tokens, self.max_tool_result_bytes) <= 0:
            raise ValueError("budget limits must be positive")


@dataclass
class ToolCallRecord:
    seq: int
    tool: str  # READ/GREP/GLOB/WRITE, or BLOCKED for calls naming any other tool
    args: dict
    result_bytes: int
    wall_ms: int
    error: bool = False
    name: str = ""

    def to_dict(self) -> dict:
        return {"seq": self.seq, "tool": self.tool, "name": self.name, "args": self.args,
                "result_bytes": self.result_bytes, "wall_ms": self.wall_ms, "error": self.error}

    @classmethod
    def from_dict(cls, d: dict) -> "ToolCallRecord":
        return cls(d["seq"], d["tool"], d["args"], d["result_bytes"], d["wall_ms"],
                   d.get("error", False), d.get("name", ""))


@dataclass
class SessionResult:
    final_text: str
    trace: list[ToolCallRecord]
    transcript: list[Message]
    usage: UsageLedger
    stopped_by: str
    session_id: str = "session"
    model: str = ""
    meta: dict = field(default_factory=dict)

    def to_jsonl(self) -> str:
        head = {"type": "session", "schema": TRACE_SCHEMA, "session_id": self.session_id,
                "model": self.model, "stopped_by": self.stopped_by,
                "final_text": self.final_text, "usage": self.usage.to_dict(), "meta": self.meta}
        rows = [head]
        rows += [{"type": "message", **m.to_dict()} for m in self.transcript]
        rows += [{"type": "tool_call", **r.to_dict()} for r in self.trace]
        return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in rows)

    @classmethod
    def from_jsonl(cls, text: str) -> "SessionResult":
        head, msgs, recs = None, [], []
        for line in text.splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            kind = row.pop("type")
            if kind == "session":
                head = row
            elif kind == "message":
                msgs.append(Message.from_dict(row))
            elif kind == "tool_call":
                recs.append(ToolCallRecord.from_dict(row))
        if head is None or head.get("schema") != TRACE_SCHEMA:
            raise ValueError("not a trace.v1 file")
        return cls(head["final_text"], recs, msgs, UsageLedger.from_dict(head["usage"]),
                   head["stopped_by"], head["session_id"], head.get("model", ""), head.get("meta", {}))

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SessionResult":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


def _call_with_retry(backend: Backend, messages, tools, attempts: int, backoff: float,
                     sleep: Callable[[float], None]):
    for k in range(attempts):
        try:
            return backend.complete(messages, tools)
        except BackendError as exc:
            if k == attempts - 1:
                raise
            log.warning("backend error (attempt %d/%d): %s", k + 1, attempts, exc)
            sleep(backoff * 2 ** k)


def run_session(backend: Backend, system_prompt: str, user_prompt: str,
                workspace: str | os.PathLike, budget: SessionBudget | None = None, *,
                prices: PriceTable | None = None, session_id: str = "session",
                meta: dict | None = None, attempts: int = 3, backoff: float = 2.0,
                sleep: Callable[[float], None] = time.sleep) -> SessionResult:
    """Run one tool-using conversation to completion or until the budget runs out.

    ``ScriptExhausted`` from a scripted backend propagates; transport
    failures end the session with ``stopped_by == "BACKEND_ERROR"``.
    """
    budget = budget or SessionBudget()
    workspace = Path(workspace)
    if not workspace.is_dir():
        raise FileNotFoundError(f"workspace {workspace} does not exist")
    transcript = [Message(Role.SYSTEM, system_prompt), Message(Role.USER, user_prompt)]
    trace: list[ToolCallRecord] = []
    usage = Usage()
    clock = (lambda: 0) if getattr(backend, "deterministic", False) else time.perf_counter_ns
    final_text, stopped = "", BUDGET
    turns = 0
    while True:
        if turns >= budget.max_turns:
            stopped = BUDGET
            break
        try:
            turn = _call_with_retry(backend, transcript, TOOL_SCHEMAS, attempts, backoff, sleep)
        except BackendError as exc:
            log.error("session %s: %s", session_id, exc)
            stopped = BACKEND_ERROR
            break
        turns += 1
        usage = usage + turn.usage
        transcript.append(turn.message)
        if not turn.message.tool_calls:
            final_text = turn.message.content
            stopped = FINAL if final_text.strip() else BACKEND_ERROR
            break
        if usage.total > budget.max_total_tokens:
            stopped = BUDGET
            break
        for tc in turn.message.tool_calls:
            t0 = clock()
            tool, args, text, is_error = dispatch(workspace, tc.name, tc.arguments,
                                                  budget.max_tool_result_bytes)
            wall_ms = (clock() - t0) // 1_000_000
            trace.append(ToolCallRecord(len(trace) + 1, tool or "BLOCKED", args,
                                        len(text.encode()), wall_ms, is_error, tc.name))
            transcript.append(Message(Role.TOOL, text, tool_call_id=tc.id))
    return SessionResult(final_text, trace, transcript,
                         UsageLedger.priced(usage, backend.model, prices), stopped,
                         session_id, backend.model, dict(meta or {}))


def read_answer(result: SessionResult, workspace: str | os.PathLike) -> str:
    """The ANSWER file when the agent wrote one, else the final message."""
    path = Path(workspace) / ANSWER_FILE
    if path.is_file():
        return path.read_text(encoding="utf-8", errors="replace")
    return result.final_text
