"""Bug-introducing commit identification pipelines.

``szz_agent`` is the two-stage pipeline: an agent first picks among the
SZZ candidates (or abstains), and when that fails a binary search over the
histories of the fixed files narrows the window until an agent can choose
directly. ``simple_szz_agent`` skips both refinements and hands the whole
candidate set, dumped to disk, to one tool-using session.

Baseline SZZ variants are exposed through ``run_baseline`` with the same
``Prediction`` output so every approach is scored the same way.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import shutil
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from string import Template
from typing import Callable

from . import szz
from .agent import (
    Backend,
    PriceTable,
    SessionBudget,
    SessionResult,
    UsageLedger,
    read_answer,
    run_session,
)
from .agent.backends import Usage
from .agent.session import ANSWER_FILE
from .candidates import (
    CandidateCommit,
    CandidateSet,
    RedactionSpec,
    collect_candidates,
    iso_time,
    materialize_dump,
    redact,
    render_diff,
)
from .errors import EmptyCandidates
from .gitio import CommitId, Repo

log = logging.getLogger(__name__)

PRED_SCHEMA = "pred.v1"
INFINITY = math.inf

SZZ, LSZZ, RSZZ, VSZZ = "SZZ", "LSZZ", "RSZZ", "VSZZ"
SZZ_AGENT, SIMPLE_AGENT = "SZZ_AGENT", "SIMPLE_AGENT"
STAGE1, STAGE2 = "STAGE1", "STAGE2"
PRESENT, ABSENT = "PRESENT", "ABSENT"
PIPELINES = (SZZ, LSZZ, RSZZ, VSZZ, SZZ_AGENT, SIMPLE_AGENT)

_HEX_TOKEN = re.compile(r"(?<![0-9A-Za-z])[0-9a-fA-F]{7,40}(?![0-9A-Za-z])")
_ANSWER_LINE = re.compile(r"^\W*answer\W*:\s*(.*)$", re.IGNORECASE | re.MULTILINE)


def _prompt(name: str) -> Template:
    return Template(resources.files("szzkit").joinpath("prompts", f"{name}.txt").read_text())


@dataclass(frozen=True)
class PipelineConfig:
    selection_threshold: float = 33
    context_width: int = 5
    include_message: bool = True
    include_diff: bool = True
    follow_renames: bool = True
    max_bics: int = 3
    file_cap_bytes: int = 200 * 1024
    total_file_cap_bytes: int = 1024 * 1024
    budget: SessionBudget = field(default_factory=SessionBudget)

    def __post_init__(self):
        t = self.selection_threshold
        if not (t == INFINITY or (t >= 1 and float(t).is_integer())):
            raise ValueError("selection_threshold must be a positive integer or INFINITY")

    def to_dict(self) -> dict:
        t = self.selection_threshold
        return {
            "selection_threshold": "inf" if t == INFINITY else int(t),
            "context_width": self.context_width,
            "include_message": self.include_message,
            "include_diff": self.include_diff,
            "follow_renames": self.follow_renames,
            "max_bics": self.max_bics,
            "file_cap_bytes": self.file_cap_bytes,
            "total_file_cap_bytes": self.total_file_cap_bytes,
            "budget": {"max_turns": self.budget.max_turns,
                       "max_total_tokens": self.budget.max_total_tokens,
                       "max_tool_result_bytes": self.budget.max_tool_result_bytes},
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Prediction:
    fix: CommitId
    bics: set[CommitId]
    pipeline: str
    stage: str | None = None
    sessions: list[SessionResult] = field(default_factory=list)
    usage: UsageLedger = field(default_factory=UsageLedger)
    candidate_count: int | None = None

    @property
    def session_ids(self) -> list[str]:
        return [s.session_id for s in self.sessions]

    def to_dict(self) -> dict:
        return {"fix": self.fix, "bics": sorted(self.bics), "pipeline": self.pipeline,
                "stage": self.stage, "session_ids": self.session_ids,
                "usage": self.usage.to_dict(), "candidate_count": self.candidate_count}


# -- sessions ------------------------------------------------------------------

class SessionRunner:
    """Runs the agent sessions belonging to one fix commit, strictly in sequence.

    Each session gets its own scratch workspace under ``workdir`` unless
    one is supplied, and a deterministic id ``<fix12>-<nn>-<kind>``.
    """

    def __init__(self, backend: Backend, fix: CommitId, *, workdir: str | Path | None = None,
                 prices: PriceTable | None = None, budget: SessionBudget | None = None,
                 meta: dict | None = None):
        self.backend = backend
        self.fix = fix
        self.prices = prices
        self.budget = budget or SessionBudget()
        self.meta = dict(meta or {})
        self.sessions: list[SessionResult] = []
        self._tmp = None
        if workdir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="szzkit-")
            workdir = self._tmp.name
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self._system = _prompt("system").template

    def close(self):
        if self._tmp is not None:
            self._tmp.cleanup()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def run(self, kind: str, user_prompt: str, *, workspace: Path | None = None,
            meta: dict | None = None) -> tuple[SessionResult, str]:
        sid = f"{self.fix[:12]}-{len(self.sessions) + 1:02d}-{kind}"
        if workspace is None:
            workspace = self.workdir / sid
            workspace.mkdir(parents=True, exist_ok=True)
        (workspace / ANSWER_FILE).unlink(missing_ok=True)
        result = run_session(self.backend, self._system, user_prompt, workspace, self.budget,
                             prices=self.prices, session_id=sid,
                             meta={"fix": self.fix, "kind": kind, **self.meta, **(meta or {})})
        self.sessions.append(result)
        return result, read_answer(result, workspace)

    def usage(self) -> UsageLedger:
        total = Usage()
        for s in self.sessions:
            total = total + s.usage.usage
        return UsageLedger.priced(total, self.backend.model, self.prices)


# -- materials -----------------------------------------------------------------

@dataclass
class FixContext:
    """Redacted fix-commit materials shared by every prompt for one fix."""

    fix: CommitId
    parent: CommitId
    message: str
    diff: str
    redaction: RedactionSpec

    @classmethod
    def build(cls, repo: Repo, fix: CommitId, redaction: RedactionSpec,
              context_width: int = 5) -> "FixContext":
        parent = repo.first_parent(fix)
        meta = repo.commit_meta(fix)
        return cls(fix, parent, redact(meta.message, redaction),
                   redact(repo.commit_diff_text(fix, context_width), redaction), redaction)

    def section(self, cfg: PipelineConfig) -> str:
        return _prompt("fix_section").substitute(
            message=self.message if cfg.include_message else "(withheld)",
            diff=self.diff.rstrip("\n") if cfg.include_diff else "(withheld)",
        )


def _candidate_block(meta, diff: str, redaction: RedactionSpec) -> str:
    return (f"## Candidate {meta.id}\n\ndate: {iso_time(meta.commit_ts)}\n\n"
            f"### Message\n\n{redact(meta.message, redaction)}\n\n"
            f"### Diff\n\n```diff\n{diff.rstrip(chr(10))}\n```\n")


def _with_retry_note(prompt: str, problem: str) -> str:
    return prompt + _prompt("retry").substitute(problem=problem)


# -- answer parsing ------------------------------------------------------------

def _answer_region(text: str) -> str:
    hits = _ANSWER_LINE.findall(text)
    return hits[-1] if hits else text


def parse_hashes(text: str, universe: list[CommitId]) -> list[CommitId] | None:
    """Resolve every hash-like token of the answer against ``universe``.

    Returns ``None`` if any token fails to name exactly one member.
    """
    resolved: list[CommitId] = []
    for tok in _HEX_TOKEN.findall(_answer_region(text)):
        hits = [u for u in universe if u.startswith(tok.lower())]
        if len(hits) != 1:
            return None
        if hits[0] not in resolved:
            resolved.append(hits[0])
    return resolved


def parse_verdict(text: str) -> str | None:
    region = _answer_region(text).upper()
    present = re.search(r"\bPRESENT\b", region) is not None
    absent = re.search(r"\bABSENT\b", region) is not None
    if present == absent:
        return None
    return PRESENT if present else ABSENT


# -- stage 1 -------------------------------------------------------------------

def stage1_identify(repo: Repo, ctx: FixContext, szz_result: szz.SzzResult,
                    runner: SessionRunner, cfg: PipelineConfig) -> Prediction | None:
    """Let the agent pick the earliest SZZ candidate that introduced the bug.

    Returns ``None`` (abstain) on an explicit NONE or on two unusable answers.
    """
    cands = sorted(szz_result.candidates, key=lambda c: (szz_result.commit_ts.get(c, 0), c))
    blocks = [_candidate_block(repo.commit_meta(c), render_diff(repo, c, ctx.redaction, cfg.context_width),
                               ctx.redaction) for c in cands]
    prompt = _prompt("stage1").substitute(fix=ctx.section(cfg), count=len(cands),
                                          candidates="\n".join(blocks))
    for attempt in range(2):
        _, answer = runner.run("stage1", prompt if attempt == 0 else
                               _with_retry_note(prompt, "answer was not a single candidate hash or NONE"),
                               meta={"candidate_count": len(cands)})
        picked = parse_hashes(answer, cands)
        if picked == [] and re.search(r"\bNONE\b", _answer_region(answer), re.IGNORECASE):
            return None
        if picked is not None and len(picked) == 1:
            return Prediction(ctx.fix, set(picked), SZZ_AGENT, STAGE1, candidate_count=len(cands))
    log.info("%s: stage 1 gave no usable answer, abstaining", ctx.fix[:12])
    return None


# -- stage 2 -------------------------------------------------------------------

def binary_search_window(n: int, threshold: float,
                         probe: Callable[[int], bool]) -> tuple[int, int, int]:
    """Narrow ``[0, n-1]`` until at most ``threshold`` ordinals remain.

    ``probe(i)`` answers "is the bug already present at ordinal i". Returns
    ``(lo, hi, probes)``.
    """
    lo, hi, calls = 0, n - 1, 0
    while hi - lo + 1 > threshold:
        mid = (lo + hi) // 2
        calls += 1
        if probe(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo, hi, calls


def _read_capped(repo: Repo, commit: CommitId, path: str | None, cap: int, spec: RedactionSpec) -> str:
    if path is None:
        return "(file does not exist)"
    data = repo.file_bytes(commit, path)
    if data is None:
        return "(file does not exist)"
    if b"\0" in data[:8000]:
        return "(binary file)"
    text = data[:cap].decode("utf-8", errors="replace")
    if len(data) > cap:
        text += f"\n[... truncated at {cap} bytes of {len(data)}]"
    return redact(text, spec)


def fix_file_triples(repo: Repo, ctx: FixContext, candidate: CommitId,
                     cfg: PipelineConfig) -> list[tuple[str, str, str, str]]:
    """(path, at-candidate, buggy, fixed) for files the fix touches, largest change first."""
    diff = repo.get_commit_diff(ctx.fix, 0)
    files = sorted(diff.files, key=lambda f: (-(len(f.removed()) + len(f.added())), f.path))
    out, used = [], 0
    for fd in files:
        if used >= cfg.total_file_cap_bytes:
            break
        at_path = fd.old_path if repo.file_bytes(candidate, fd.old_path or "") is not None else fd.new_path
        triple = (
            fd.path,
            _read_capped(repo, candidate, at_path, cfg.file_cap_bytes, ctx.redaction),
            _read_capped(repo, ctx.parent, fd.old_path, cfg.file_cap_bytes, ctx.redaction),
            _read_capped(repo, ctx.fix, fd.new_path, cfg.file_cap_bytes, ctx.redaction),
        )
        used += sum(len(t.encode()) for t in triple[1:])
        out.append(triple)
    return out


def file_analysis(ctx: FixContext, candidate: CandidateCommit,
                  files: list[tuple[str, str, str, str]], runner: SessionRunner,
                  cfg: PipelineConfig) -> str:
    """Ask whether the bug already exists at ``candidate``; PRESENT or ABSENT.

    Two unusable answers count as PRESENT, which keeps earlier commits in
    the search window instead of skipping past the culprit for good.
    """
    if not files:
        raise ValueError("file_analysis needs at least one file")
    blocks = []
    for path, at_cand, buggy, fixed in files:
        blocks.append(f"## {path}\n\n### At candidate {candidate.id}\n\n```\n{at_cand}\n```\n\n"
                      f"### Buggy (before the fix)\n\n```\n{buggy}\n```\n\n"
                      f"### Fixed\n\n```\n{fixed}\n```\n")
    prompt = _prompt("file_analysis").substitute(
        fix=ctx.section(cfg), candidate=candidate.id, date=iso_time(candidate.meta.commit_ts),
        files="\n".join(blocks))
    for attempt in range(2):
        _, answer = runner.run("file_analysis", prompt if attempt == 0 else
                               _with_retry_note(prompt, "verdict was not PRESENT or ABSENT"),
                               meta={"candidate": candidate.id, "ordinal": candidate.ordinal})
        verdict = parse_verdict(answer)
        if verdict is not None:
            return verdict
    return PRESENT


def commit_identifier(ctx: FixContext, remaining: list[CandidateCommit], runner: SessionRunner,
                      cfg: PipelineConfig, *, stage: str = STAGE2,
                      candidate_count: int | None = None) -> Prediction:
    """Let the agent choose among the remaining candidates.

    Falls back to the most recent candidate after two unusable answers.
    """
    if not remaining:
        raise ValueError("commit_identifier needs at least one candidate")
    universe = [c.id for c in remaining]
    blocks = [_candidate_block(c.meta, c.diff_text or "", ctx.redaction) for c in remaining]
    prompt = _prompt("commit_identifier").substitute(
        fix=ctx.section(cfg), count=len(remaining), candidates="\n".join(blocks), max_bics=cfg.max_bics)
    for attempt in range(2):
        _, answer = runner.run("commit_identifier", prompt if attempt == 0 else
                               _with_retry_note(prompt, "answer did not name listed candidates"),
                               meta={"candidate_count": len(remaining)})
        picked = parse_hashes(answer, universe)
        if picked and len(picked) <= cfg.max_bics:
            return Prediction(ctx.fix, set(picked), SZZ_AGENT, stage, candidate_count=candidate_count)
    log.info("%s: commit identifier fell back to the most recent candidate", ctx.fix[:12])
    return Prediction(ctx.fix, {remaining[-1].id}, SZZ_AGENT, stage, candidate_count=candidate_count)


def stage2_binary_search(repo: Repo, ctx: FixContext, cset: CandidateSet, runner: SessionRunner,
                         cfg: PipelineConfig) -> Prediction:
    if not cset.members:
        raise EmptyCandidates(f"{ctx.fix}: no candidates to search")
    members = cset.members

    def probe(i: int) -> bool:
        files = fix_file_triples(repo, ctx, members[i].id, cfg)
        if not files:
            return True
        return file_analysis(ctx, members[i], files, runner, cfg) == PRESENT

    lo, hi, _ = binary_search_window(len(members), cfg.selection_threshold, probe)
    window = members[lo:hi + 1]
    for c in window:
        if c.diff_text is None:
            c.diff_text = render_diff(repo, c.id, ctx.redaction, cfg.context_width)
    return commit_identifier(ctx, window, runner, cfg, candidate_count=len(members))


# -- full pipelines ------------------------------------------------------------

def _finish(pred: Prediction, runner: SessionRunner) -> Prediction:
    pred.sessions = list(runner.sessions)
    pred.usage = runner.usage()
    return pred


def szz_agent(repo: Repo, fix: CommitId, backend: Backend, cfg: PipelineConfig | None = None, *,
              redaction: RedactionSpec | None = None, workdir: str | Path | None = None,
              prices: PriceTable | None = None) -> Prediction:
    """Stage 1 on the SZZ candidates; stage 2 binary search when it abstains or cannot run."""
    cfg = cfg or PipelineConfig()
    redaction = redaction or RedactionSpec()
    fix = repo.resolve_commit(fix)
    ctx = FixContext.build(repo, fix, redaction, cfg.context_width)
    with SessionRunner(backend, fix, workdir=workdir, prices=prices, budget=cfg.budget,
                       meta={"pipeline": SZZ_AGENT}) as runner:
        if ctx.parent is None:
            return _finish(Prediction(fix, set(), SZZ_AGENT, None, candidate_count=0), runner)
        if any(fd.removed() for fd in repo.get_commit_diff(fix, 0).files if not fd.binary):
            result = szz.szz_candidates(repo, fix)
            if result.candidates:
                pred = stage1_identify(repo, ctx, result, runner, cfg)
                if pred is not None:
                    return _finish(pred, runner)
        cset = collect_candidates(repo, fix, cfg.follow_renames, redaction=redaction, with_diffs=False)
        if not cset.members:
            return _finish(Prediction(fix, set(), SZZ_AGENT, STAGE2, candidate_count=0), runner)
        runner.meta["candidate_count"] = len(cset)
        return _finish(stage2_binary_search(repo, ctx, cset, runner, cfg), runner)


def simple_szz_agent(repo: Repo, fix: CommitId, backend: Backend, cfg: PipelineConfig | None = None, *,
                     redaction: RedactionSpec | None = None, workdir: str | Path | None = None,
                     prices: PriceTable | None = None) -> Prediction:
    """One tool-using session over a dump of the whole candidate set."""
    cfg = cfg or PipelineConfig()
    redaction = redaction or RedactionSpec()
    fix = repo.resolve_commit(fix)
    ctx = FixContext.build(repo, fix, redaction, cfg.context_width)
    with SessionRunner(backend, fix, workdir=workdir, prices=prices, budget=cfg.budget,
                       meta={"pipeline": SIMPLE_AGENT}) as runner:
        if ctx.parent is None:
            return _finish(Prediction(fix, set(), SIMPLE_AGENT, candidate_count=0), runner)
        cset = collect_candidates(repo, fix, cfg.follow_renames, redaction=redaction,
                                  context_width=cfg.context_width)
        if not cset.members:
            return _finish(Prediction(fix, set(), SIMPLE_AGENT, candidate_count=0), runner)
        runner.meta["candidate_count"] = len(cset)
        dump = runner.workdir / f"{fix[:12]}-dump"
        if dump.exists():
            shutil.rmtree(dump)
        materialize_dump(cset, dump, redaction)
        universe = cset.ids()
        prompt = _prompt("simple_agent").substitute(fix=ctx.section(cfg), count=len(cset),
                                                    max_bics=cfg.max_bics)
        bics: set[CommitId] = set()
        for attempt in range(2):
            _, answer = runner.run("simple", prompt if attempt == 0 else
                                   _with_retry_note(prompt, "ANSWER.txt did not list candidate hashes"),
                                   workspace=dump)
            picked = parse_hashes(answer, universe)
            if picked and len(picked) <= cfg.max_bics:
                bics = set(picked)
                break
        return _finish(Prediction(fix, bics, SIMPLE_AGENT, candidate_count=len(cset)), runner)


def run_baseline(repo: Repo, fix: CommitId, variant: str, *,
                 max_depth: int = szz.DEFAULT_MAX_DEPTH) -> Prediction:
    """SZZ, L-SZZ, R-SZZ or V-SZZ as a Prediction (empty for root commits)."""
    fix = repo.resolve_commit(fix)
    if repo.first_parent(fix) is None:
        return Prediction(fix, set(), variant)
    if variant == VSZZ:
        result = szz.vszz_candidates(repo, fix, max_depth)
    else:
        result = szz.szz_candidates(repo, fix)
    if variant in (SZZ, VSZZ):
        bics = result.candidates
    elif variant == LSZZ:
        bics = {c for c in [szz.lszz_select(result)] if c}
    elif variant == RSZZ:
        bics = {c for c in [szz.rszz_select(result, repo)] if c}
    else:
        raise ValueError(f"unknown baseline {variant!r}")
    return Prediction(fix, set(bics), variant, candidate_count=len(result.candidates))


def run_pipeline(name: str, repo: Repo, fix: CommitId, backend: Backend | None,
                 cfg: PipelineConfig, **kw) -> Prediction:
    if name == SZZ_AGENT:
        return szz_agent(repo, fix, backend, cfg, **kw)
    if name == SIMPLE_AGENT:
        return simple_szz_agent(repo, fix, backend, cfg, **kw)
    return run_baseline(repo, fix, name)
