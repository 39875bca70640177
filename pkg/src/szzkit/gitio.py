"""Read-only access to a local git repository through the ``git`` binary.

Every query shells out with porcelain-stable flags. Output is decoded as
UTF-8 with replacement, because real histories (the Linux kernel among
them) contain byte sequences that are not valid UTF-8. Lines are always
split on ``\\n`` only so diff content and file content agree byte for byte.
"""

from __future__ import annotations

import json
import os
import re
import subprocess
import threading
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

from .errors import (
    Ambiguous,
    BinaryFile,
    FileAbsent,
    LineOutOfRange,
    NotFound,
    RepoIOError,
)

HEX40 = re.compile(r"^[0-9a-f]{40}$")
_HEXISH = re.compile(r"^[0-9a-fA-F]{4,40}$")
_HUNK = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@ ?(.*)$")
_BLAME_HEAD = re.compile(r"^([0-9a-f]{40}) (\d+) (\d+)(?: (\d+))?$")

DEFAULT_CONTEXT = 5
# binary sniffing window used by git itself (buffer_is_binary)
_BINARY_SNIFF = 8000

CommitId = str


class LineKind(str, Enum):
    ADDED = "ADDED"
    REMOVED = "REMOVED"
    CONTEXT = "CONTEXT"


class FileStatus(str, Enum):
    MODIFIED = "MODIFIED"
    ADDED = "ADDED"
    DELETED = "DELETED"
    RENAMED = "RENAMED"


@dataclass(frozen=True)
class CommitMeta:
    id: CommitId
    parents: tuple[CommitId, ...]
    author_ts: int
    commit_ts: int
    subject: str
    message: str


@dataclass(frozen=True)
class DiffLine:
    kind: LineKind
    content: str
    old_lineno: int | None = None
    new_lineno: int | None = None


@dataclass
class Hunk:
    old_start: int
    old_count: int
    new_start: int
    new_count: int
    header: str = ""
    lines: list[DiffLine] = field(default_factory=list)


@dataclass
class FileDiff:
    old_path: str | None
    new_path: str | None
    status: FileStatus
    hunks: list[Hunk] = field(default_factory=list)
    binary: bool = False

    @property
    def path(self) -> str:
        """The path used to name this change: new path, or old path for deletions."""
        return self.new_path if self.new_path is not None else self.old_path  # type: ignore[return-value]

    def removed(self) -> list[DiffLine]:
        return [ln for h in self.hunks for ln in h.lines if ln.kind is LineKind.REMOVED]

    def added(self) -> list[DiffLine]:
        return [ln for h in self.hunks for ln in h.lines if ln.kind is LineKind.ADDED]


@dataclass
class CommitDiff:
    commit: CommitId
    files: list[FileDiff]
    context_width: int = DEFAULT_CONTEXT

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class BlameEntry:
    """One blamed line: the introducing commit plus where the line sat in it."""

    commit: CommitId
    orig_path: str
    orig_lineno: int
    final_lineno: int


# -- unified diff parsing ------------------------------------------------------

_ESCAPES = {"a": "\a", "b": "\b", "t": "\t", "n": "\n", "v": "\v", "f": "\f",
            "r": "\r", '"': '"', "\\": "\\"}


def unquote_path(raw: str) -> str:
    """Undo git's C-style quoting of paths (``"a\\tb"``, octal escapes)."""
    if not (len(raw) >= 2 and raw[0] == '"' and raw[-1] == '"'):
        return raw
    body, out, i = raw[1:-1], bytearray(), 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            if re.match(r"[0-7]{3}", body[i + 1:i + 4]):
                out.append(int(body[i + 1:i + 4], 8))
                i += 4
                continue
            out += _ESCAPES.get(nxt, nxt).encode()
            i += 2
            continue
        out += ch.encode()
        i += 1
    return out.decode("utf-8", errors="replace")


def _strip_prefix(path: str, prefix: str) -> str | None:
    path = unquote_path(path.rstrip("\t"))
    if path == "/dev/null":
        return None
    return path[len(prefix):] if path.startswith(prefix) else path


def _paths_from_git_line(line: str) -> tuple[str, str]:
    rest = line[len("diff --git "):]
    if rest.startswith('"'):
        m = re.match(r'^("(?:[^"\\]|\\.)*") (.*)$', rest)
        a, b = m.group(1), m.group(2)
    else:
        # unquoted a/X b/X: for non-renames both halves are equal length
        half = (len(rest) - 1) // 2
        if rest[half] == " " and rest[:half][2:] == rest[half + 1:][2:]:
            a, b = rest[:half], rest[half + 1:]
        else:
            a, _, b = rest.partition(" b/")
            b = "b/" + b
    return _strip_prefix(a, "a/") or "", _strip_prefix(b, "b/") or ""


def parse_unified_diff(text: str) -> list[FileDiff]:
    """Decompose ``git diff`` output (``a/``/``b/`` prefixes) into FileDiffs."""
    files: list[FileDiff] = []
    cur: FileDiff | None = None
    hunk: Hunk | None = None
    old_no = new_no = 0
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for line in lines:
        if line.startswith("diff --git "):
            a, b = _paths_from_git_line(line)
            cur = FileDiff(old_path=a, new_path=b, status=FileStatus.MODIFIED)
            files.append(cur)
            hunk = None
            continue
        if cur is None:
            continue
        if hunk is not None:
            remaining_old = hunk.old_start + hunk.old_count - old_no if hunk.old_count else 0
            remaining_new = hunk.new_start + hunk.new_count - new_no if hunk.new_count else 0
            inside = remaining_old > 0 or remaining_new > 0
            if inside and line[:1] in (" ", "-", "+", ""):
                tag, content = line[:1], line[1:]
                if tag == "-":
                    hunk.lines.append(DiffLine(LineKind.REMOVED, content, old_lineno=old_no))
                    old_no += 1
                elif tag == "+":
                    hunk.lines.append(DiffLine(LineKind.ADDED, content, new_lineno=new_no))
                    new_no += 1
                else:
                    hunk.lines.append(DiffLine(LineKind.CONTEXT, content, old_no, new_no))
                    old_no += 1
                    new_no += 1
                continue
            if line.startswith("\\"):
                continue  # "\ No newline at end of file"
        m = _HUNK.match(line)
        if m:
            os_, oc, ns, nc, header = m.groups()
            hunk = Hunk(int(os_), 1 if oc is None else int(oc),
                        int(ns), 1 if nc is None else int(nc), header)
            cur.hunks.append(hunk)
            # zero-count sides report the line *before* the change
            old_no = hunk.old_start if hunk.old_count else hunk.old_start + 1
            new_no = hunk.new_start if hunk.new_count else hunk.new_start + 1
            continue
        if hunk is not None:
            hunk = None
        if line.startswith("new file mode"):
            cur.status, cur.old_path = FileStatus.ADDED, None
        elif line.startswith("deleted file mode"):
            cur.status, cur.new_path = FileStatus.DELETED, None
        elif line.startswith("rename from "):
            cur.status, cur.old_path = FileStatus.RENAMED, unquote_path(line[len("rename from "):])
        elif line.startswith("rename to "):
            cur.status, cur.new_path = FileStatus.RENAMED, unquote_path(line[len("rename to "):])
        elif line.startswith("--- "):
            p = _strip_prefix(line[4:], "a/")
            if p is None:
                cur.status, cur.old_path = FileStatus.ADDED, None
            else:
                cur.old_path = p
        elif line.startswith("+++ "):
            p = _strip_prefix(line[4:], "b/")
            if p is None:
                cur.status, cur.new_path = FileStatus.DELETED, None
            else:
                cur.new_path = p
        elif line.startswith("Binary files ") or line == "GIT binary patch":
            cur.binary = True
    for f in files:
        if f.status is FileStatus.MODIFIED and f.old_path != f.new_path:
            f.status = FileStatus.RENAMED
    return files


def split_lines(text: str) -> list[str]:
    """Split file text into lines the way diffs count them (``\\n`` only)."""
    if text == "":
        return []
    parts = text.split("\n")
    if parts[-1] == "":
        parts.pop()
    return parts


def is_binary(data: bytes) -> bool:
    return b"\0" in data[:_BINARY_SNIFF]


# -- repository handle ---------------------------------------------------------

class Repo:
    """Read-only handle over a local repository; safe to share between threads.

    ``first_parent_merges`` controls merge handling: when true (default) a
    merge is diffed against its first parent, otherwise merges report no
    changes at all.
    """

    def __init__(self, path: str | os.PathLike, *, cache_size: int = 512,
                 first_parent_merges: bool = True):
        self.path = Path(path)
        if not (self.path / ".git").exists() and not (self.path / "HEAD").exists():
            raise RepoIOError(f"not a git repository: {self.path}")
        self.first_parent_merges = first_parent_merges
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()
        self._empty_tree: str | None = None

    def __repr__(self) -> str:
        return f"Repo({str(self.path)!r})"

    # plumbing

    def git(self, *args: str, input: bytes | None = None, check: bool = True) -> bytes:
        cmd = ["git", "-c", "core.quotePath=true", "-c", "diff.noprefix=false",
               "-c", "log.showSignature=false", *args]
        try:
            proc = subprocess.run(cmd, cwd=self.path, input=input, capture_output=True)
        except OSError as exc:
            raise RepoIOError(str(exc)) from exc
        if check and proc.returncode != 0:
            raise RepoIOError(proc.stderr.decode(errors="replace").strip() or f"git {args[0]} failed")
        return proc.stdout

    def _text(self, *args: str) -> str:
        return self.git(*args).decode("utf-8", errors="replace")

    def _memo(self, key, compute):
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        value = compute()
        with self._lock:
            self._cache[key] = value
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return value

    # commits

    def resolve_commit(self, ref: str) -> CommitId:
        """Resolve a full hash, a hex prefix (4+ chars) or a symbolic ref."""
        if _HEXISH.match(ref):
            out = self.git("rev-parse", f"--disambiguate={ref.lower()}", check=False)
            hits = [h for h in out.decode().split() if self._is_commit(h)]
            if len(hits) == 1:
                return hits[0]
            if len(hits) > 1:
                raise Ambiguous(f"{ref} matches {len(hits)} commits")
        out = self.git("rev-parse", "--verify", "--quiet", "--end-of-options",
                       f"{ref}^{{commit}}", check=False).decode().strip()
        if HEX40.match(out):
            return out
        raise NotFound(f"cannot resolve {ref!r}")

    def _is_commit(self, sha: str) -> bool:
        out = self.git("cat-file", "-t", sha, check=False)
        return out.strip() == b"commit"

    _META_FMT = "%H%x1f%P%x1f%at%x1f%ct%x1f%B%x1e"

    @staticmethod
    def _parse_meta(raw: str) -> list[CommitMeta]:
        metas = []
        for rec in raw.split("\x1e"):
            rec = rec.lstrip("\n")
            if not rec:
                continue
            sha, parents, ats, cts, body = rec.split("\x1f", 4)
            body = body.rstrip("\n")
            metas.append(CommitMeta(
                id=sha, parents=tuple(parents.split()), author_ts=int(ats),
                commit_ts=int(cts), subject=body.split("\n", 1)[0], message=body))
        return metas

    def commit_meta(self, id: CommitId) -> CommitMeta:
        def compute():
            raw = self._text("log", "-1", "--no-walk", f"--format={self._META_FMT}", id, "--")
            metas = self._parse_meta(raw)
            if not metas:
                raise NotFound(id)
            return metas[0]
        try:
            return self._memo(("meta", id), compute)
        except RepoIOError as exc:
            raise NotFound(f"{id}: {exc}") from exc

    def first_parent(self, id: CommitId) -> CommitId | None:
        parents = self.commit_meta(id).parents
        return parents[0] if parents else None

    def is_ancestor(self, ancestor: CommitId, descendant: CommitId) -> bool:
        proc = subprocess.run(["git", "merge-base", "--is-ancestor", ancestor, descendant],
                              cwd=self.path, capture_output=True)
        return proc.returncode == 0

    def iter_commits(self, rev: str = "HEAD") -> list[CommitMeta]:
        """Every commit reachable from ``rev``, newest first."""
        return self._parse_meta(self._text("log", f"--format={self._META_FMT}", rev, "--"))

    # diffs

    def _empty_tree_id(self) -> str:
        if self._empty_tree is None:
            self._empty_tree = self.git("hash-object", "-t", "tree", "--stdin", input=b"").decode().strip()
        return self._empty_tree

    def _diff_base(self, meta: CommitMeta) -> str | None:
        if not meta.parents:
            return self._empty_tree_id()
        if len(meta.parents) > 1 and not self.first_parent_merges:
            return None
        return meta.parents[0]

    def get_commit_diff(self, id: CommitId, context_width: int = DEFAULT_CONTEXT) -> CommitDiff:
        """Diff of ``id`` against its first parent (or the empty tree for roots)."""
        if context_width < 0:
            raise ValueError("context_width must be >= 0")

        def compute():
            meta = self.commit_meta(id)
            base = self._diff_base(meta)
            if base is None:
                return CommitDiff(id, [], context_width)
            raw = self._text("diff", "--no-color", "--no-ext-diff", "--no-textconv",
                             "-M", f"-U{context_width}", "--src-prefix=a/", "--dst-prefix=b/",
                             base, id, "--")
            files = sorted(parse_unified_diff(raw), key=lambda f: (f.path, f.old_path or ""))
            return CommitDiff(id, files, context_width)
        return self._memo(("diff", id, context_width), compute)

    def commit_diff_text(self, id: CommitId, context_width: int = DEFAULT_CONTEXT) -> str:
        """Raw unified diff text of ``id`` against its first parent."""
        meta = self.commit_meta(id)
        base = self._diff_base(meta)
        if base is None:
            return ""
        return self._text("diff", "--no-color", "--no-ext-diff", "--no-textconv", "-M",
                          f"-U{context_width}", "--src-prefix=a/", "--dst-prefix=b/",
                          base, id, "--")

    def list_modified_files(self, id: CommitId) -> list[str]:
        paths = {f.path for f in self.get_commit_diff(id, 0).files}
        return sorted(paths)

    # file contents

    def file_bytes(self, id: CommitId, path: str) -> bytes | None:
        def compute():
            proc = subprocess.run(["git", "cat-file", "blob", f"{id}:{path}"],
                                  cwd=self.path, capture_output=True)
            return proc.stdout if proc.returncode == 0 else None
        return self._memo(("blob", id, path), compute)

    def file_at(self, id: CommitId, path: str) -> str | None:
        """File text at ``id``; ``None`` when the path is not in that tree."""
        data = self.file_bytes(id, path)
        return None if data is None else data.decode("utf-8", errors="replace")

    def file_is_binary(self, id: CommitId, path: str) -> bool:
        data = self.file_bytes(id, path)
        return data is not None and is_binary(data)

    # blame

    def blame_file(self, at: CommitId, path: str) -> list[BlameEntry]:
        """Blame every line of ``path`` as of ``at`` (renames are followed)."""
        data = self.file_bytes(at, path)
        if data is None:
            raise FileAbsent(f"{path} not present at {at}")
        if is_binary(data):
            raise BinaryFile(path)

        def compute():
            raw = self._text("blame", "--porcelain", at, "--", path)
            return _parse_porcelain(raw, path)
        return self._memo(("blame", at, path), compute)

    def blame_line(self, at: CommitId, path: str, line: int) -> BlameEntry:
        entries = self.blame_file(at, path)
        if not 1 <= line <= len(entries):
            raise LineOutOfRange(f"{path}:{line} (file has {len(entries)} lines)")
        return entries[line - 1]

    def blame_introducer(self, at: CommitId, path: str, line: int) -> CommitId:
        return self.blame_line(at, path, line).commit

    # history

    def file_history(self, path: str, until: CommitId, follow_renames: bool = True) -> list[CommitMeta]:
        """Commits reachable from ``until`` that touched ``path``, newest first.

        Returns ``[]`` for paths that never existed.
        """
        args = ["log", "--full-history", f"--format={self._META_FMT}"]
        if follow_renames:
            args.append("--follow")
        raw = self._text(*args, until, "--", path)
        seen: dict[str, CommitMeta] = {}
        for meta in self._parse_meta(raw):
            seen.setdefault(meta.id, meta)
        return sorted(seen.values(), key=lambda m: (-m.commit_ts, m.id))


def _parse_porcelain(raw: str, path: str) -> list[BlameEntry]:
    entries: dict[int, BlameEntry] = {}
    filenames: dict[str, str] = {}
    current: tuple[str, int, int] | None = None
    for line in raw.split("\n"):
        if current is None:
            m = _BLAME_HEAD.match(line)
            if m:
                current = (m.group(1), int(m.group(2)), int(m.group(3)))
            continue
        if line.startswith("filename "):
            filenames[current[0]] = unquote_path(line[len("filename "):])
        elif line.startswith("\t"):
            sha, orig, final = current
            entries[final] = BlameEntry(sha, filenames.get(sha, path), orig, final)
            current = None
    return [entries[i] for i in sorted(entries)]
