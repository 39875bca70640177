"""Classic SZZ candidate generation and the L-SZZ / R-SZZ / V-SZZ variants.

SZZ blames every line the fix deletes, as of the fix's first parent; the
blamed commits are the bug-introducing candidates. L-SZZ and R-SZZ reduce
that set to one commit, V-SZZ keeps walking each line back past commits
that only re-formatted it.

Tie rules for L-SZZ and R-SZZ are our own (the original tools leave them
implicit): L-SZZ prefers the older commit, then the smaller hash; R-SZZ
prefers the smaller hash.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

from .errors import NoParent
from .gitio import CommitId, FileDiff, LineKind, Repo

DEFAULT_MAX_DEPTH = 16
SCHEMA = "szz_result.v1"


@dataclass(frozen=True)
class Attribution:
    file: str
    old_lineno: int
    content: str
    introducer: CommitId


@dataclass
class SzzResult:
    fix: CommitId
    attributions: list[Attribution] = field(default_factory=list)
    commit_ts: dict[CommitId, int] = field(default_factory=dict)

    @property
    def candidates(self) -> set[CommitId]:
        return {a.introducer for a in self.attributions}

    @property
    def per_candidate_line_count(self) -> dict[CommitId, int]:
        return dict(Counter(a.introducer for a in self.attributions))

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "fix": self.fix,
            "candidates": sorted(self.candidates),
            "per_candidate_line_count": dict(sorted(self.per_candidate_line_count.items())),
            "attributions": [
                {"file": a.file, "old_lineno": a.old_lineno, "content": a.content,
                 "introducer": a.introducer}
                for a in self.attributions
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


def _require_parent(repo: Repo, fix: CommitId) -> CommitId:
    parent = repo.first_parent(fix)
    if parent is None:
        raise NoParent(f"{fix} is a root commit")
    return parent


def _traceable(fd: FileDiff) -> bool:
    return not fd.binary and fd.old_path is not None


def _deleted_lines(repo: Repo, fix: CommitId, skip_whitespace: bool):
    for fd in repo.get_commit_diff(fix, 0).files:
        if not _traceable(fd):
            continue
        for ln in fd.removed():
            if skip_whitespace and not ln.content.strip():
                continue
            yield fd.old_path, ln


def _finish(repo: Repo, result: SzzResult) -> SzzResult:
    result.attributions.sort(key=lambda a: (a.file, a.old_lineno))
    result.commit_ts = {c: repo.commit_meta(c).commit_ts for c in sorted(result.candidates)}
    return result


def szz_candidates(repo: Repo, fix: CommitId, *, skip_whitespace: bool = True) -> SzzResult:
    """Blame each line deleted by ``fix`` at its first parent."""
    parent = _require_parent(repo, fix)
    result = SzzResult(fix)
    for path, ln in _deleted_lines(repo, fix, skip_whitespace):
        who = repo.blame_introducer(parent, path, ln.old_lineno)
        result.attributions.append(Attribution(path, ln.old_lineno, ln.content, who))
    return _finish(repo, result)


def lszz_select(result: SzzResult) -> CommitId | None:
    """Candidate blamed for the most deleted lines."""
    counts = result.per_candidate_line_count
    if not counts:
        return None
    return min(counts, key=lambda c: (-counts[c], result.commit_ts.get(c, 0), c))


def rszz_select(result: SzzResult, repo: Repo | None = None) -> CommitId | None:
    """Most recently committed candidate."""
    if not result.candidates:
        return None

    def ts(c: CommitId) -> int:
        if c in result.commit_ts:
            return result.commit_ts[c]
        return repo.commit_meta(c).commit_ts if repo is not None else 0
    return min(result.candidates, key=lambda c: (-ts(c), c))


def _earlier_version(repo: Repo, commit: CommitId, path: str, lineno: int):
    """If ``commit`` merely rewrote line ``path:lineno`` (same text modulo
    surrounding whitespace), return where that earlier text lived in the
    first parent; otherwise ``None``."""
    meta = repo.commit_meta(commit)
    if not meta.parents:
        return None
    for fd in repo.get_commit_diff(commit, 0).files:
        if fd.new_path != path or not _traceable(fd):
            continue
        for hunk in fd.hunks:
            added = next((ln for ln in hunk.lines
                          if ln.kind is LineKind.ADDED and ln.new_lineno == lineno), None)
            if added is None:
                continue
            key = added.content.strip()
            for ln in hunk.lines:
                if ln.kind is LineKind.REMOVED and ln.content.strip() == key:
                    return meta.parents[0], fd.old_path, ln.old_lineno
            return None
    return None


def vszz_candidates(repo: Repo, fix: CommitId, max_depth: int = DEFAULT_MAX_DEPTH,
                    *, skip_whitespace: bool = True) -> SzzResult:
    """SZZ, then follow each line back through whitespace-only rewrites.

    Recursion stops where the line text first appears or after ``max_depth``
    hops, so ``max_depth=0`` reproduces ``szz_candidates``.
    """
    parent = _require_parent(repo, fix)
    result = SzzResult(fix)
    for path, ln in _deleted_lines(repo, fix, skip_whitespace):
        entry = repo.blame_line(parent, path, ln.old_lineno)
        for _ in range(max_depth):
            prev = _earlier_version(repo, entry.commit, entry.orig_path, entry.orig_lineno)
            if prev is None:
                break
            entry = repo.blame_line(*prev)
        result.attributions.append(Attribution(path, ln.old_lineno, ln.content, entry.commit))
    return _finish(repo, result)
