"""The fixed agent toolset: Read, Grep, Glob and Write, confined to a workspace.

Every path argument is resolved against the workspace root (symlinks
included) and rejected if it lands outside. There is deliberately no
shell, web or sub-agent tool.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import BadRegex, OutsideWorkspace, ToolError, ToolNotFound

TOOLS = ("READ", "GREP", "GLOB", "WRITE")
DEFAULT_READ_LIMIT = 2000
DEFAULT_MAX_MATCHES = 200
DEFAULT_MAX_BYTES = 64 * 1024


def resolve_in(workspace: str | os.PathLike, path: str) -> Path:
    root = Path(workspace).resolve()
    target = (root / path).resolve()
    if target != root and root not in target.parents:
        raise OutsideWorkspace(f"{path!r} escapes the workspace")
    return target


def _clip(text: str, max_bytes: int) -> str:
    data = text.encode()
    if len(data) <= max_bytes:
        return text
    cut = data[:max_bytes].decode("utf-8", errors="ignore")
    return cut + f"\n[... truncated at {max_bytes} bytes]"


def _files_under(root: Path) -> list[Path]:
    out = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            p = Path(dirpath) / name
            if p.is_file() and not p.is_symlink():
                out.append(p)
    return sorted(out, key=lambda p: p.relative_to(root).as_posix())


def tool_read(workspace, path: str, offset: int | None = None, limit: int | None = None,
              max_bytes: int = DEFAULT_MAX_BYTES) -> str:
    """Return lines ``offset..offset+limit-1`` (1-based), each prefixed with its number."""
    target = resolve_in(workspace, path)
    if not target.is_file():
        raise ToolNotFound(f"no such file: {path}")
    lines = target.read_bytes().decode("utf-8", errors="replace").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    start = max(1, offset or 1)
    count = DEFAULT_READ_LIMIT if limit is None else max(0, limit)
    if start > len(lines):
        return f"[EOF: {path} has {len(lines)} lines]"
    chunk = lines[start - 1:start - 1 + count]
    body = "".join(f"{start + i:6d}\t{ln}\n" for i, ln in enumerate(chunk))
    return _clip(body, max_bytes)


@dataclass
class GrepResult:
    matches: list[tuple[str, int, str]] = field(default_factory=list)
    truncated: bool = False

    def render(self) -> str:
        if not self.matches:
            return "No matches."
        text = "".join(f"{p}:{n}:{t}\n" for p, n, t in self.matches)
        if self.truncated:
            text += f"[... truncated after {len(self.matches)} matches]\n"
        return text


def tool_grep(workspace, pattern: str, mode: str = "regex",
              max_matches: int = DEFAULT_MAX_MATCHES) -> GrepResult:
    """Search every regular file under the workspace, path order then line order."""
    if not pattern:
        raise ToolError("empty pattern")
    mode = mode.lower()
    if mode == "literal":
        test = lambda line: pattern in line  # noqa: E731
    elif mode == "regex":
        try:
            rx = re.compile(pattern)
        except re.error as exc:
            raise BadRegex(f"{pattern!r}: {exc}") from exc
        test = lambda line: rx.search(line) is not None  # noqa: E731
    else:
        raise ToolError(f"unknown grep mode {mode!r}")
    root = Path(workspace).resolve()
    result = GrepResult()
    for f in _files_under(root):
        rel = f.relative_to(root).as_posix()
        text = f.read_bytes().decode("utf-8", errors="replace")
        for n, line in enumerate(text.split("\n"), 1):
            if test(line):
                if len(result.matches) >= max_matches:
                    result.truncated = True
                    return result
                result.matches.append((rel, n, line))
    return result


def tool_glob(workspace, pattern: str) -> list[str]:
    """Sorted workspace-relative paths of regular files matching ``pattern``."""
    root = Path(workspace).resolve()
    if not pattern or os.path.isabs(pattern):
        return []
    try:
        hits = list(root.glob(pattern))
    except (ValueError, NotImplementedError):
        return []
    out = set()
    for h in hits:
        try:
            resolved = resolve_in(root, str(h.relative_to(root)))
        except (OutsideWorkspace, ValueError):
            continue
        if resolved.is_file():
            out.add(resolved.relative_to(root).as_posix())
    return sorted(out)


def tool_write(workspace, path: str, content: str) -> None:
    """Atomically create or replace a file inside the workspace."""
    target = resolve_in(workspace, path)
    if target == Path(workspace).resolve():
        raise ToolError("cannot write to the workspace root")
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(content)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# JSON-schema tool definitions in the chat-completions "function" shape.
TOOL_SCHEMAS = [
    {"type": "function", "function": {
        "name": "Read",
        "description": "Read a text file from the workspace. Lines come back numbered from 1.",
        "parameters": {"type": "object", "properties": {
            "path": {"type": "string", "description": "Path relative to the workspace."},
            "offset": {"type": "integer", "description": "First line to return (1-based)."},
            "limit": {"type": "integer", "description": "Maximum number of lines."},
        }, "required": ["path"]},
    }},
    {"type": "function", "function": {
        "name": "Grep",
        "description": "Search all workspace files line by line. Returns path:line:text rows.",
        "parameters": {"type": "object", "properties": {
            "pattern": {"type": "string"},
            "mode": {"type": "string", "enum": ["regex", "literal"],
                     "description": "Python regex (default) or plain substring."},
            "max_matches": {"type": "integer"},
        }, "required": ["pattern"]},
    }},
    {"type": "function", "function": {
        "name": "Glob",
        "description": "List workspace files matching a glob pattern such as '*.txt'.",
        "parameters": {"type": "object", "properties": {
            "pattern": {"type": "string"},
        }, "required": ["pattern"]},
    }},
    {"type": "function", "function": {
        "name": "Write",
        "description": "Create or overwrite a file in the workspace.",
        "parameters": {"type": "object", "properties": {
            "path": {"type": "string"},
            "content": {"type": "string"},
        }, "required": ["path", "content"]},
    }},
]


def canonical_tool(name: str) -> str | None:
    upper = name.strip().upper()
    return upper if upper in TOOLS else None


def dispatch(workspace, name: str, arguments: str | dict,
             max_bytes: int = DEFAULT_MAX_BYTES) -> tuple[str | None, dict, str, bool]:
    """Run one tool call. Returns ``(tool, args, result_text, is_error)``.

    Unknown tools are never executed; they come back as an error result
    with ``tool`` set to ``None``.
    """
    try:
        args = json.loads(arguments) if isinstance(arguments, str) else dict(arguments)
        if not isinstance(args, dict):
            raise ValueError("arguments must be a JSON object")
    except ValueError as exc:
        return canonical_tool(name), {}, f"error: malformed arguments ({exc})", True
    tool = canonical_tool(name)
    if tool is None:
        return None, args, f"error: tool {name!r} is not available", True
    try:
        if tool == "READ":
            text = tool_read(workspace, args["path"], args.get("offset"), args.get("limit"), max_bytes)
        elif tool == "GREP":
            res = tool_grep(workspace, args["pattern"], args.get("mode", "regex"),
                            int(args.get("max_matches", DEFAULT_MAX_MATCHES)))
            text = res.render()
        elif tool == "GLOB":
            text = "\n".join(tool_glob(workspace, args["pattern"])) or "No files."
        else:
            tool_write(workspace, args["path"], args["content"])
            text = f"wrote {args['path']}"
    except KeyError as exc:
        return tool, args, f"error: missing argument {exc}", True
    except (ToolError, OSError, TypeError, ValueError) as exc:
        return tool, args, f"error: {type(exc).__name__}: {exc}", True
    return tool, args, _clip(text, max_bytes), False
