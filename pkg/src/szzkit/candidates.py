"""Candidate commit sets, ground-truth hash redaction and on-disk dumps.

A candidate set is the union of the histories of every file the fix
touches, taken at the fix's first parent and ordered by committer time.
Before anything reaches an agent, references to ground-truth commits are
scrubbed: ``Fixes:`` lines naming them are dropped and any remaining hex
run containing a long-enough prefix of one becomes ``COMMIT_HASH``.

Dump layout (``dump.v1``), one directory per fix::

    INDEX.txt                 NNNNNN<TAB>hash<TAB>iso-time<TAB>subject, one row per candidate
    000000_<12 hex>.txt       header, blank line, message, blank line, diff
    000001_<12 hex>.txt
    ...
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import NoParent, NonEmptyDir
from .gitio import DEFAULT_CONTEXT, CommitId, CommitMeta, Repo

log = logging.getLogger(__name__)

PLACEHOLDER = "COMMIT_HASH"
DUMP_VERSION = "dump.v1"
INDEX_NAME = "INDEX.txt"

_FIXES_TAG = re.compile(r"fixes:\s*([0-9a-f]+)", re.IGNORECASE)
_LINE_SPLIT = re.compile(r"(?<=\n)")


@dataclass(frozen=True)
class RedactionSpec:
    gt_hashes: frozenset[str] = frozenset()
    min_prefix: int = 7
    placeholder: str = PLACEHOLDER

    def __post_init__(self):
        if self.min_prefix < 7:
            raise ValueError("min_prefix must be >= 7")
        object.__setattr__(self, "gt_hashes", frozenset(h.lower() for h in self.gt_hashes))

    def names_gt(self, token: str) -> bool:
        t = token.lower()
        return len(t) >= self.min_prefix and any(g.startswith(t) for g in self.gt_hashes)


def _scrub_run(run: str, spec: RedactionSpec) -> str:
    low = run.lower()
    out, i = [], 0
    while i < len(run):
        best = 0
        for g in spec.gt_hashes:
            if low.startswith(g[:spec.min_prefix], i):
                n = spec.min_prefix
                while n < len(g) and i + n < len(run) and low[i + n] == g[n]:
                    n += 1
                best = max(best, n)
        if best:
            out.append(spec.placeholder)
            i += best
        else:
            out.append(run[i])
            i += 1
    return "".join(out)


def redact(text: str, spec: RedactionSpec) -> str:
    """Remove ground-truth hash references from ``text``.

    Lines carrying a ``Fixes:`` tag that names a ground-truth commit are
    deleted. Every other occurrence of a ``min_prefix``-or-longer prefix of
    a ground-truth hash inside a hex run is replaced by the placeholder.
    Idempotent.
    """
    if not spec.gt_hashes or not text:
        return text
    hexrun = re.compile(r"[0-9a-fA-F]{%d,}" % spec.min_prefix)
    while True:
        kept = [line for line in _LINE_SPLIT.split(text)
                if not any(spec.names_gt(m.group(1)[:40]) for m in _FIXES_TAG.finditer(line))]
        new = hexrun.sub(lambda m: _scrub_run(m.group(0), spec), "".join(kept))
        if new == text:
            return text
        text = new


def leaked_hashes(text: str, spec: RedactionSpec) -> set[str]:
    """Ground-truth hashes that still have a ``min_prefix`` slice in ``text``."""
    low = text.lower()
    return {g for g in spec.gt_hashes if g[:spec.min_prefix] in low}


# -- candidate sets ------------------------------------------------------------

@dataclass
class CandidateCommit:
    meta: CommitMeta
    diff_text: str | None
    ordinal: int

    @property
    def id(self) -> CommitId:
        return self.meta.id


@dataclass
class CandidateSet:
    fix: CommitId
    members: list[CandidateCommit] = field(default_factory=list)
    source_files: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)

    def ids(self) -> list[CommitId]:
        return [m.id for m in self.members]


def collect_candidates(repo: Repo, fix: CommitId, follow_renames: bool = True, *,
                       redaction: RedactionSpec | None = None, with_diffs: bool = True,
                       context_width: int = DEFAULT_CONTEXT) -> CandidateSet:
    """Union of the file histories of every path the fix touches.

    Both sides of a rename are looked up, since the new name may not exist
    before the fix. Diffs are rendered (and redacted) only when
    ``with_diffs`` is set; binary search needs them for a handful of
    commits at most.
    """
    parent = repo.first_parent(fix)
    if parent is None:
        raise NoParent(f"{fix} is a root commit")
    fix_ts = repo.commit_meta(fix).commit_ts
    paths: set[str] = set()
    for fd in repo.get_commit_diff(fix, 0).files:
        paths.update(p for p in (fd.old_path, fd.new_path) if p is not None)
    seen: dict[CommitId, CommitMeta] = {}
    for path in sorted(paths):
        for meta in repo.file_history(path, parent, follow_renames):
            seen.setdefault(meta.id, meta)
    seen.pop(fix, None)
    skewed = [m.id for m in seen.values() if m.commit_ts >= fix_ts]
    if skewed:
        log.warning("%s: dropping %d ancestor(s) committed at or after the fix", fix[:12], len(skewed))
    metas = sorted((m for m in seen.values() if m.commit_ts < fix_ts),
                   key=lambda m: (m.commit_ts, m.id))
    members = []
    for i, meta in enumerate(metas):
        diff = None
        if with_diffs:
            diff = render_diff(repo, meta.id, redaction, context_width)
        members.append(CandidateCommit(meta, diff, i))
    return CandidateSet(fix, members, repo.list_modified_files(fix))


def render_diff(repo: Repo, commit: CommitId, redaction: RedactionSpec | None = None,
                context_width: int = DEFAULT_CONTEXT) -> str:
    text = repo.commit_diff_text(commit, context_width)
    return redact(text, redaction) if redaction else text


def iso_time(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# -- dumps ---------------------------------------------------------------------

@dataclass
class DumpManifest:
    dir: Path
    files: dict[int, str]
    index_path: str
    bytes_total: int


def dump_filename(c: CandidateCommit) -> str:
    return f"{c.ordinal:06d}_{c.id[:12]}.txt"


def render_candidate(c: CandidateCommit, spec: RedactionSpec) -> str:
    subject = redact(c.meta.subject, spec).replace("\n", " ")
    parts = [
        f"commit {c.id}\ndate: {iso_time(c.meta.commit_ts)}\nsubject: {subject}\n",
        redact(c.meta.message, spec).rstrip("\n") + "\n",
        redact(c.diff_text or "", spec),
    ]
    return "\n".join(parts)


def materialize_dump(cset: CandidateSet, out_dir: str | Path, spec: RedactionSpec,
                     repo: Repo | None = None) -> DumpManifest:
    """Write one text file per candidate plus ``INDEX.txt`` into ``out_dir``.

    ``repo`` is only needed when the set was collected without diffs.
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        raise NonEmptyDir(str(out))
    out.mkdir(parents=True, exist_ok=True)
    files: dict[int, str] = {}
    index_rows = []
    total = 0
    for c in cset.members:
        if c.diff_text is None and repo is not None:
            c.diff_text = render_diff(repo, c.id, spec)
        name = dump_filename(c)
        data = render_candidate(c, spec).encode()
        with open(out / name, "xb") as fh:
            fh.write(data)
        total += len(data)
        files[c.ordinal] = name
        subject = redact(c.meta.subject, spec).replace("\t", " ")
        index_rows.append(f"{c.ordinal:06d}\t{c.id}\t{iso_time(c.meta.commit_ts)}\t{subject}\n")
    index = "".join(index_rows).encode()
    with open(out / INDEX_NAME, "xb") as fh:
        fh.write(index)
    total += len(index)
    return DumpManifest(out, files, INDEX_NAME, total)
