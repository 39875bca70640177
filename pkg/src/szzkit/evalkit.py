"""Datasets, per-fix and macro-averaged scores, paired significance tests.

Precision and recall are computed per fix commit as set overlaps between
the ground-truth and predicted bug-introducing commits, averaged across
fixes, and combined into F1 by harmonic mean. An empty prediction scores
zero on both.

Paired comparisons use the Wilcoxon signed-rank test. For up to 20
nonzero differences the two-sided p-value is exact, obtained by counting
sign assignments with a subset-sum table over doubled ranks (average
ranks of ties are half-integers). Larger samples use the normal
approximation with tie and continuity corrections.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .errors import (
    Ambiguous,
    AllZeroDifferences,
    EmptyGroundTruth,
    EmptyInput,
    NotFound,
    SchemaViolation,
)
from .gitio import CommitId, Repo

log = logging.getLogger(__name__)

DATASET_SCHEMA = "dataset.v1"
REPORT_SCHEMA = "report.v1"
EXACT_MAX_N = 20

_FIXES_LINE = re.compile(r"^\s*fixes:\s*([0-9a-f]+)", re.IGNORECASE | re.MULTILINE)
_HASH = re.compile(r"^[0-9a-f]{7,64}$")


# -- dataset -------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetEntry:
    repo_id: str
    fix: CommitId
    gt_bics: frozenset[CommitId]
    collected_at: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "gt_bics", frozenset(self.gt_bics))
        if not self.gt_bics:
            raise EmptyGroundTruth(f"{self.fix}: empty ground truth")
        if self.fix in self.gt_bics:
            raise ValueError(f"{self.fix} lists itself as a bug-introducing commit")

    def to_dict(self) -> dict:
        d = {"repo_id": self.repo_id, "fix": self.fix, "gt_bics": sorted(self.gt_bics)}
        if self.collected_at is not None:
            d["collected_at"] = self.collected_at
        return d


def _entry_from_row(row, lineno: int) -> DatasetEntry:
    if not isinstance(row, dict):
        raise SchemaViolation("entry must be a JSON object", lineno)
    missing = {"repo_id", "fix", "gt_bics"} - row.keys()
    if missing:
        raise SchemaViolation(f"missing field(s) {sorted(missing)}", lineno)
    repo_id, fix, gt = row["repo_id"], row["fix"], row["gt_bics"]
    if not isinstance(repo_id, str) or not repo_id:
        raise SchemaViolation("repo_id must be a non-empty string", lineno)
    if not isinstance(fix, str) or not _HASH.match(fix):
        raise SchemaViolation(f"fix {fix!r} is not a lowercase hex commit id", lineno)
    if not isinstance(gt, list) or not gt:
        raise SchemaViolation("gt_bics must be a non-empty list", lineno)
    for h in gt:
        if not isinstance(h, str) or not _HASH.match(h):
            raise SchemaViolation(f"gt_bics entry {h!r} is not a lowercase hex commit id", lineno)
    if fix in gt:
        raise SchemaViolation("fix appears in its own gt_bics", lineno)
    ts = row.get("collected_at")
    if ts is not None and not isinstance(ts, int):
        raise SchemaViolation("collected_at must be an integer timestamp", lineno)
    return DatasetEntry(repo_id, fix, frozenset(gt), ts)


def parse_dataset(text: str) -> list[DatasetEntry]:
    entries, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON ({exc.msg})", lineno) from exc
        entry = _entry_from_row(row, lineno)
        key = (entry.repo_id, entry.fix)
        if key in seen:
            raise SchemaViolation(f"duplicate entry for {key}", lineno)
        seen.add(key)
        entries.append(entry)
    return entries


def dump_dataset(entries: Iterable[DatasetEntry]) -> str:
    return "".join(json.dumps(e.to_dict()) + "\n" for e in entries)


def load_dataset(path: str | os.PathLike) -> list[DatasetEntry]:
    return parse_dataset(Path(path).read_text(encoding="utf-8"))


def save_dataset(entries: Iterable[DatasetEntry], path: str | os.PathLike) -> None:
    Path(path).write_text(dump_dataset(entries), encoding="utf-8")


@dataclass
class CollectStats:
    fixes: int = 0
    tags_resolved: int = 0
    tags_skipped: int = 0


def collect_fixes_dataset(repo: Repo, since: int, until: int, *, repo_id: str | None = None,
                          rev: str = "HEAD", stats: CollectStats | None = None) -> list[DatasetEntry]:
    """Build ground truth from ``Fixes:`` trailers of commits with ``since <= commit_ts < until``.

    Tags that are too short, unknown, ambiguous or self-referencing are
    skipped with one warning each. Entries come out oldest fix first.
    """
    if until < since:
        raise ValueError("until must not precede since")
    repo_id = repo_id or Path(repo.path).name
    stats = stats if stats is not None else CollectStats()
    entries = []
    metas = [m for m in repo.iter_commits(rev) if since <= m.commit_ts < until]
    for meta in sorted(metas, key=lambda m: (m.commit_ts, m.id)):
        gt: set[CommitId] = set()
        for token in _FIXES_LINE.findall(meta.message):
            token = token.lower()
            problem = None
            if len(token) < 7:
                problem = "shorter than 7 hex digits"
            else:
                try:
                    target = repo.resolve_commit(token)
                except Ambiguous:
                    problem = "ambiguous"
                except NotFound:
                    problem = "does not resolve"
                else:
                    if target == meta.id:
                        problem = "names the fixing commit itself"
            if problem:
                stats.tags_skipped += 1
                log.warning("%s: skipping Fixes: tag %s (%s)", meta.id[:12], token, problem)
                continue
            stats.tags_resolved += 1
            gt.add(target)
        if gt:
            entries.append(DatasetEntry(repo_id, meta.id, frozenset(gt), meta.commit_ts))
    stats.fixes = len(entries)
    return entries


# -- scores --------------------------------------------------------------------

@dataclass(frozen=True)
class PerFixScore:
    fix: CommitId
    precision: float
    recall: float
    intersection: int
    pred_size: int
    gt_size: int

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    def to_dict(self) -> dict:
        return {"fix": self.fix, "precision": self.precision, "recall": self.recall,
                "intersection": self.intersection, "pred_size": self.pred_size, "gt_size": self.gt_size}


def score_fix(gt: Iterable[CommitId], pred: Iterable[CommitId], fix: CommitId = "") -> PerFixScore:
    gt_set, pred_set = set(gt), set(pred)
    if not gt_set:
        raise EmptyGroundTruth(f"{fix or 'fix'}: empty ground truth")
    hit = len(gt_set & pred_set)
    precision = hit / len(pred_set) if pred_set else 0.0
    return PerFixScore(fix, precision, hit / len(gt_set), hit, len(pred_set), len(gt_set))


def harmonic_f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass
class EvalReport:
    macro_precision: float
    macro_recall: float
    f1: float
    per_fix: list[PerFixScore] = field(default_factory=list)
    n: int = 0

    def display(self) -> str:
        return f"{self.macro_precision:.2f} {self.macro_recall:.2f} {self.f1:.2f}"

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, "n": self.n,
                "macro_precision": self.macro_precision, "macro_recall": self.macro_recall,
                "f1": self.f1,
                "display": dict(zip(("precision", "recall", "f1"), self.display().split())),
                "per_fix": [s.to_dict() for s in self.per_fix]}


def aggregate(scores: Sequence[PerFixScore]) -> EvalReport:
    if not scores:
        raise EmptyInput("no scores to aggregate")
    p = math.fsum(s.precision for s in scores) / len(scores)
    r = math.fsum(s.recall for s in scores) / len(scores)
    return EvalReport(p, r, harmonic_f1(p, r), list(scores), len(scores))


# -- paired tests --------------------------------------------------------------

@dataclass(frozen=True)
class PairedTestResult:
    statistic_w: float
    p_value: float
    effect_r: float
    n_effective: int
    method: str = "exact"

    def to_dict(self) -> dict:
        return {"statistic_w": self.statistic_w, "p_value": self.p_value, "effect_r": self.effect_r,
                "n_effective": self.n_effective, "method": self.method}


def _signed_ranks(a: Sequence[float], b: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    if len(a) != len(b):
        raise ValueError("paired samples must have equal length")
    if not len(a):
        raise EmptyInput("no pairs")
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    if d.size == 0:
        raise AllZeroDifferences("every paired difference is zero")
    return d, rankdata(np.abs(d))


def _exact_p(ranks: np.ndarray, w: float) -> float:
    doubled = [int(round(2 * r)) for r in ranks]
    total = sum(doubled)
    counts = [0] * (total + 1)  # counts[s]: sign assignments whose doubled W equals s
    counts[0] = 1
    for r in doubled:
        for s in range(total, r - 1, -1):
            counts[s] += counts[s - r]
    target = int(round(2 * w))
    n_all = 2 ** len(doubled)
    lower = sum(counts[: target + 1]) / n_all
    upper = sum(counts[target:]) / n_all
    return min(1.0, 2 * min(lower, upper))


def _normal_p(ranks: np.ndarray, w: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4
    _, tie_sizes = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48
    if var <= 0:
        return 1.0
    shift = w - mean
    z = (abs(shift) - 0.5) / math.sqrt(var) if abs(shift) >= 0.5 else 0.0
    return min(1.0, 2 * float(norm.sf(z)))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float], method: str = "auto") -> PairedTestResult:
    """Two-sided signed-rank test of ``a - b``; zero differences are dropped."""
    d, ranks = _signed_ranks(a, b)
    w = float(ranks[d > 0].sum())
    if method == "auto":
        method = "exact" if d.size <= EXACT_MAX_N else "normal"
    if method == "exact":
        p = _exact_p(ranks, w)
    elif method == "normal":
        p = _normal_p(ranks, w)
    else:
        raise ValueError(f"unknown method {method!r}")
    return PairedTestResult(w, p, _biserial(d, ranks), int(d.size), method)


def _biserial(d: np.ndarray, ranks: np.ndarray) -> float:
    pos, neg = float(ranks[d > 0].sum()), float(ranks[d < 0].sum())
    return (pos - neg) / (pos + neg)


def rank_biserial(a: Sequence[float], b: Sequence[float]) -> float:
    d, ranks = _signed_ranks(a, b)
    return _biserial(d, ranks)
