"""Chat backends: a deterministic scripted double and an OpenAI-compatible HTTP client."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from enum import Enum
from pathlib import Path
from typing import Protocol

import httpx

from ..errors import BackendError, ScriptExhausted


class Role(str, Enum):
    SYSTEM = "SYSTEM"
    USER = "USER"
    ASSISTANT = "ASSISTANT"
    TOOL = "TOOL"


@dataclass
class ToolCall:
    id: str
    name: str
    arguments: str  # JSON text, exactly as the model produced it

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "arguments": self.arguments}


@dataclass
class Message:
    role: Role
    content: str = ""
    tool_calls: list[ToolCall] | None = None
    tool_call_id: str | None = None

    def to_dict(self) -> dict:
        d: dict = {"role": self.role.value, "content": self.content}
        if self.tool_calls:
            d["tool_calls"] = [tc.to_dict() for tc in self.tool_calls]
        if self.tool_call_id is not None:
            d["tool_call_id"] = self.tool_call_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Message":
        calls = [ToolCall(**tc) for tc in d.get("tool_calls") or []] or None
        return cls(Role(d["role"]), d.get("content", ""), calls, d.get("tool_call_id"))


@dataclass
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0
    cache_tokens: int = 0

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(self.input_tokens + other.input_tokens,
                     self.output_tokens + other.output_tokens,
                     self.cache_tokens + other.cache_tokens)

    @property
    def total(self) -> int:
        return self.input_tokens + self.output_tokens + self.cache_tokens


@dataclass
class AssistantTurn:
    message: Message
    usage: Usage


# -- pricing -------------------------------------------------------------------

_FOUR_PLACES = Decimal("0.0001")
_MILLION = Decimal(1_000_000)


@dataclass(frozen=True)
class Price:
    """USD per million tokens."""

    input: Decimal
    output: Decimal
    cache: Decimal = Decimal(0)


@dataclass
class PriceTable:
    prices: dict[str, Price] = field(default_factory=dict)

    def cost(self, model: str, usage: Usage) -> Decimal:
        p = self.prices.get(model)
        if p is None:
            return Decimal("0.0000")
        raw = (usage.input_tokens * p.input + usage.output_tokens * p.output
               + usage.cache_tokens * p.cache) / _MILLION
        return raw.quantize(_FOUR_PLACES, rounding=ROUND_HALF_EVEN)

    @classmethod
    def parse(cls, text: str) -> "PriceTable":
        """One model per line: ``name input_per_M output_per_M [cache_per_M]``."""
        table = cls()
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            name, *vals = line.split()
            if len(vals) not in (2, 3):
                raise ValueError(f"bad price line: {raw!r}")
            table.prices[name] = Price(*(Decimal(v) for v in vals))
        return table

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PriceTable":
        return cls.parse(Path(path).read_text())


@dataclass
class UsageLedger:
    input_tokens: int = 0
    output_tokens: int = 0
    cache_tokens: int = 0
    cost_usd: Decimal = Decimal("0.0000")

    @classmethod
    def priced(cls, usage: Usage, model: str, prices: PriceTable | None) -> "UsageLedger":
        cost = (prices or PriceTable()).cost(model, usage)
        return cls(usage.input_tokens, usage.output_tokens, usage.cache_tokens, cost)

    @property
    def usage(self) -> Usage:
        return Usage(self.input_tokens, self.output_tokens, self.cache_tokens)

    def to_dict(self) -> dict:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens,
                "cache_tokens": self.cache_tokens, "cost_usd": str(self.cost_usd)}

    @classmethod
    def from_dict(cls, d: dict) -> "UsageLedger":
        return cls(d["input_tokens"], d["output_tokens"], d.get("cache_tokens", 0),
                   Decimal(d["cost_usd"]))


# -- backends ------------------------------------------------------------------

class Backend(Protocol):
    model: str
    deterministic: bool

    def complete(self, messages: list[Message], tools: list[dict]) -> AssistantTurn: ...


class ScriptedBackend:
    """Replays canned assistant turns in order, ignoring the conversation.

    A turn is ``{"content": str, "tool_calls": [{"name": ..., "arguments": {...}}]}``
    or a bare string, shorthand for a final answer.
    Each turn reports the same synthetic token usage.
    """

    deterministic = True

    def __init__(self, turns: list[dict], *, input_tokens: int = 100, output_tokens: int = 10,
                 model: str = "scripted"):
        if not turns:
            raise ValueError("script must contain at least one turn")
        self.turns = list(turns)
        self.usage = Usage(input_tokens, output_tokens)
        self.model = model
        self.consumed = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ScriptedBackend":
        return cls.from_spec(json.loads(Path(path).read_text()))

    @classmethod
    def from_spec(cls, spec) -> "ScriptedBackend":
        if isinstance(spec, list):
            return cls(spec)
        usage = spec.get("usage", {})
        return cls(spec["turns"], input_tokens=usage.get("input", 100),
                   output_tokens=usage.get("output", 10), model=spec.get("model", "scripted"))

    def complete(self, messages: list[Message], tools: list[dict]) -> AssistantTurn:
        with self._lock:
            if self.consumed >= len(self.turns):
                raise ScriptExhausted(f"script has only {len(self.turns)} turn(s)")
            turn = self.turns[self.consumed]
            self.consumed += 1
            n = self.consumed
        if isinstance(turn, str):
            turn = {"content": turn}
        calls = None
        if turn.get("tool_calls"):
            calls = []
            for k, tc in enumerate(turn["tool_calls"]):
                args = tc.get("arguments", {})
                calls.append(ToolCall(tc.get("id", f"call_{n}_{k}"), tc["name"],
                                      args if isinstance(args, str) else json.dumps(args, sort_keys=True)))
        return AssistantTurn(Message(Role.ASSISTANT, turn.get("content", ""), calls), self.usage)


_WIRE_ROLE = {Role.SYSTEM: "system", Role.USER: "user", Role.ASSISTANT: "assistant", Role.TOOL: "tool"}


def to_wire(messages: list[Message]) -> list[dict]:
    out = []
    for m in messages:
        d: dict = {"role": _WIRE_ROLE[m.role], "content": m.content}
        if m.tool_calls:
            d["tool_calls"] = [{"id": tc.id, "type": "function",
                                "function": {"name": tc.name, "arguments": tc.arguments}}
                               for tc in m.tool_calls]
        if m.tool_call_id is not None:
            d["tool_call_id"] = m.tool_call_id
        out.append(d)
    return out


def from_wire(payload: dict) -> AssistantTurn:
    try:
        msg = payload["choices"][0]["message"]
    except (KeyError, IndexError, TypeError) as exc:
        raise BackendError(f"malformed response: {exc}") from exc
    calls = None
    if msg.get("tool_calls"):
        calls = [ToolCall(tc.get("id", f"call_{i}"), tc["function"]["name"],
                          tc["function"].get("arguments") or "{}")
                 for i, tc in enumerate(msg["tool_calls"])]
    u = payload.get("usage") or {}
    cached = (u.get("prompt_tokens_details") or {}).get("cached_tokens", 0) or 0
    usage = Usage(int(u.get("prompt_tokens", 0)) - cached, int(u.get("completion_tokens", 0)), cached)
    return AssistantTurn(Message(Role.ASSISTANT, msg.get("content") or "", calls), usage)


class HttpBackend:
    """Chat-completions client for any endpoint speaking the common JSON shape.

    The API key is read from the environment variable ``api_key_env`` at
    request time and never stored on the instance.
    """

    deterministic = False

    def __init__(self, endpoint: str, model: str, *, api_key_env: str = "BACKEND_API_KEY",
                 timeout: float = 600.0, transport: httpx.BaseTransport | None = None,
                 extra_body: dict | None = None):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.extra_body = extra_body or {}
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def complete(self, messages: list[Message], tools: list[dict]) -> AssistantTurn:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {"model": self.model, "messages": to_wire(messages), **self.extra_body}
        if tools:
            body["tools"] = tools
        try:
            resp = self._client.post(self.endpoint, json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise BackendError(f"request failed: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return from_wire(resp.json())
        except ValueError as exc:
            raise BackendError(f"invalid JSON response: {exc}") from exc
