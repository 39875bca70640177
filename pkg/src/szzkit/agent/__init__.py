"""Minimal tool-using agent runtime."""

from .backends import (
    AssistantTurn,
    Backend,
    HttpBackend,
    Message,
    Price,
    PriceTable,
    Role,
    ScriptedBackend,
    ToolCall,
    Usage,
    UsageLedger,
)
from .session import (
    ANSWER_FILE,
    BACKEND_ERROR,
    BUDGET,
    FINAL,
    SessionBudget,
    SessionResult,
    ToolCallRecord,
    read_answer,
    run_session,
)
from .tools import TOOL_SCHEMAS, TOOLS, GrepResult, tool_glob, tool_grep, tool_read, tool_write

__all__ = [
    "ANSWER_FILE", "BACKEND_ERROR", "BUDGET", "FINAL", "TOOLS", "TOOL_SCHEMAS",
    "AssistantTurn", "Backend", "GrepResult", "HttpBackend", "Message", "Price", "PriceTable",
    "Role", "ScriptedBackend", "SessionBudget", "SessionResult", "ToolCall", "ToolCallRecord",
    "Usage", "UsageLedger", "read_answer", "run_session", "tool_glob", "tool_grep", "tool_read",
    "tool_write",
]
