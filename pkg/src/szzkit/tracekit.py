"""Post-hoc analysis of agent session traces.

Answers three questions about finished runs: which tools the agent used
and how often, where its grep patterns came from (which part of the fix
commit contains them), and what each fix cost.

Provenance is decided by case-sensitive substring containment, per line
of each source, after light normalization of the pattern: surrounding
whitespace is trimmed and a regex that is only an escaped literal (for
example ``blk->size \\>\\> 2`` or ``foo\\(``) is unescaped. ``RAW_MATCH``
covers patterns found in the raw diff text (with its ``+``/``-``
markers and file headers) but in none of the parsed diff categories.
"""

from __future__ import annotations

import csv
import json
import math
import re
import statistics
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Sequence

from .agent import PriceTable, SessionResult
from .agent.backends import Usage
from .agent.tools import TOOLS
from .candidates import PLACEHOLDER
from .errors import EmptyInput, NoGrepCalls
from .gitio import LineKind, parse_unified_diff

ANALYSIS_SCHEMA = "analysis.v1"

REMOVED_LINES = "REMOVED_LINES"
ADDED_LINES = "ADDED_LINES"
CONTEXT_LINES = "CONTEXT_LINES"
MESSAGE = "MESSAGE"
FUNCTION_NAMES = "FUNCTION_NAMES"
HUNK_HEADERS = "HUNK_HEADERS"
FILE_PATHS = "FILE_PATHS"
PATH_COMPONENTS = "PATH_COMPONENTS"
RAW_MATCH = "RAW_MATCH"
COMMIT_HASH_PATTERN = "COMMIT_HASH_PATTERN"
UNDETERMINED = "UNDETERMINED"
LABELS = (REMOVED_LINES, ADDED_LINES, CONTEXT_LINES, MESSAGE, FUNCTION_NAMES, HUNK_HEADERS,
          FILE_PATHS, PATH_COMPONENTS, RAW_MATCH, COMMIT_HASH_PATTERN, UNDETERMINED)

_META = set(".^$*+?{}[]|()")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_CALLED = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*\(")
_HEX_ONLY = re.compile(r"[0-9a-fA-F]{7,}")


@dataclass
class FixMaterials:
    message: str = ""
    removed_lines: list[str] = field(default_factory=list)
    added_lines: list[str] = field(default_factory=list)
    context_lines: list[str] = field(default_factory=list)
    hunk_headers: list[str] = field(default_factory=list)
    function_names: list[str] = field(default_factory=list)
    file_paths: list[str] = field(default_factory=list)
    path_components: list[str] = field(default_factory=list)
    raw_diff: str = ""

    @classmethod
    def from_fix(cls, message: str, diff_text: str) -> "FixMaterials":
        m = cls(message=message, raw_diff=diff_text)
        paths: list[str] = []
        for fd in parse_unified_diff(diff_text):
            for p in (fd.old_path, fd.new_path):
                if p is not None and p not in paths:
                    paths.append(p)
            for h in fd.hunks:
                if h.header and h.header not in m.hunk_headers:
                    m.hunk_headers.append(h.header)
                for ln in h.lines:
                    bucket = {LineKind.REMOVED: m.removed_lines, LineKind.ADDED: m.added_lines}
                    bucket.get(ln.kind, m.context_lines).append(ln.content)
        m.file_paths = paths
        m.path_components = sorted({seg for p in paths for seg in p.split("/") if seg})
        m.function_names = function_names(m.hunk_headers)
        return m

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FixMaterials":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def sources(self) -> dict[str, list[str]]:
        return {
            REMOVED_LINES: self.removed_lines,
            ADDED_LINES: self.added_lines,
            CONTEXT_LINES: self.context_lines,
            MESSAGE: self.message.splitlines(),
            FUNCTION_NAMES: self.function_names,
            HUNK_HEADERS: self.hunk_headers,
            FILE_PATHS: self.file_paths,
            PATH_COMPONENTS: self.path_components,
        }


def function_names(headers: Iterable[str]) -> list[str]:
    """Identifier before the first ``(`` of each hunk header, else its last identifier."""
    out: list[str] = []
    for h in headers:
        called = _CALLED.search(h)
        idents = _IDENT.findall(h)
        name = called.group(1) if called else (idents[-1] if idents else None)
        if name and name not in out:
            out.append(name)
    return out


@dataclass(frozen=True)
class GrepProvenance:
    pattern: str
    literal: bool
    labels: frozenset[str]


# -- pattern helpers -----------------------------------------------------------

def is_literal_pattern(pattern: str, mode: str = "regex") -> bool:
    """True for literal-mode calls and regexes without unescaped metacharacters."""
    if mode.lower() == "literal":
        return True
    i = 0
    while i < len(pattern):
        ch = pattern[i]
        if ch == "\\":
            if i + 1 < len(pattern) and pattern[i + 1].isalnum():
                return False  # \d, \w, \b ... are classes, not escapes
            i += 2
            continue
        if ch in _META:
            return False
        i += 1
    return True


def normalize_pattern(pattern: str, mode: str = "regex") -> str:
    p = pattern.strip()
    if mode.lower() != "literal" and "\\" in p and is_literal_pattern(p):
        p = re.sub(r"\\(.)", r"\1", p)
    return p


def _grep_calls(trace: SessionResult):
    for rec in trace.trace:
        if rec.tool == "GREP" and isinstance(rec.args.get("pattern"), str):
            yield rec.args["pattern"], str(rec.args.get("mode", "regex"))


def _contains(items: Iterable[str], needle: str) -> bool:
    return any(needle in item for item in items)


def classify_pattern(pattern: str, mode: str, materials: FixMaterials) -> GrepProvenance:
    needle = normalize_pattern(pattern, mode)
    labels: set[str] = set()
    if needle:
        for label, items in materials.sources().items():
            if _contains(items, needle):
                labels.add(label)
        diff_labels = labels - {MESSAGE}
        if not diff_labels and _contains(materials.raw_diff.splitlines(), needle):
            labels.add(RAW_MATCH)
        if _HEX_ONLY.fullmatch(needle) or PLACEHOLDER in needle:
            labels.add(COMMIT_HASH_PATTERN)
    if not labels:
        labels = {UNDETERMINED}
    return GrepProvenance(pattern, is_literal_pattern(pattern, mode), frozenset(labels))


def classify_grep_sources(trace: SessionResult, materials: FixMaterials) -> list[GrepProvenance]:
    return [classify_pattern(p, mode, materials) for p, mode in _grep_calls(trace)]


# -- aggregates ----------------------------------------------------------------

def _fix_of(trace: SessionResult) -> str:
    return str(trace.meta.get("fix") or trace.session_id)


def _group_by_fix(traces: Sequence[SessionResult]) -> dict[str, list[SessionResult]]:
    groups: dict[str, list[SessionResult]] = defaultdict(list)
    for t in traces:
        groups[_fix_of(t)].append(t)
    return dict(groups)


def tool_distribution(traces: Sequence[SessionResult]) -> dict[str, float]:
    """Mean number of calls per fix commit for each tool."""
    if not traces:
        raise EmptyInput("no traces")
    groups = _group_by_fix(traces)
    counts = Counter(rec.tool for t in traces for rec in t.trace)
    return {tool: counts.get(tool, 0) / len(groups) for tool in TOOLS}


def pattern_stats(traces: Sequence[SessionResult]) -> dict[str, float]:
    calls = [(p, m) for t in traces for p, m in _grep_calls(t)]
    if not calls:
        raise NoGrepCalls("no grep calls in the given traces")
    lengths = [len(p) for p, _ in calls]
    return {
        "count": len(lengths),
        "median_len": statistics.median(lengths),
        "mean_len": statistics.fmean(lengths),
        "std_len": statistics.stdev(lengths) if len(lengths) > 1 else 0.0,
        "min_len": min(lengths),
        "max_len": max(lengths),
        "literal_fraction": sum(is_literal_pattern(p, m) for p, m in calls) / len(calls),
    }


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Correlation coefficient, or ``None`` when either side has zero variance."""
    n = len(xs)
    if n != len(ys) or n < 2:
        return None
    mx, my = math.fsum(xs) / n, math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    syy = math.fsum((y - my) ** 2 for y in ys)
    if sxx == 0 or syy == 0:
        return None
    return math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys)) / math.sqrt(sxx * syy)


def usage_report(traces: Sequence[SessionResult], prices: PriceTable | None = None) -> dict:
    """Per-fix tokens, cost and tool calls, their means, and candidates-vs-cost correlation.

    With a price table the cost is recomputed from the summed tokens of each
    model; otherwise the cost recorded in each trace is summed.
    """
    if not traces:
        raise EmptyInput("no traces")
    rows = []
    for fix, group in _group_by_fix(traces).items():
        by_model: dict[str, Usage] = defaultdict(Usage)
        for t in group:
            by_model[t.model] = by_model[t.model] + t.usage.usage
        if prices is not None:
            cost = sum((prices.cost(m, u) for m, u in by_model.items()), Decimal("0.0000"))
        else:
            cost = sum((t.usage.cost_usd for t in group), Decimal("0.0000"))
        total = sum((u for u in by_model.values()), Usage())
        counts = [t.meta.get("candidate_count") for t in group if t.meta.get("candidate_count") is not None]
        rows.append({
            "fix": fix,
            "sessions": len(group),
            "candidate_count": max(counts) if counts else None,
            "input_tokens": total.input_tokens,
            "output_tokens": total.output_tokens,
            "cache_tokens": total.cache_tokens,
            "total_tokens": total.total,
            "tool_calls": sum(len(t.trace) for t in group),
            "cost_usd": str(cost),
        })
    n = len(rows)
    paired = [(r["candidate_count"], float(r["cost_usd"])) for r in rows if r["candidate_count"] is not None]
    return {
        "per_fix": rows,
        "mean_cost_usd": math.fsum(float(r["cost_usd"]) for r in rows) / n,
        "mean_tokens": sum(r["total_tokens"] for r in rows) / n,
        "mean_tool_calls": sum(r["tool_calls"] for r in rows) / n,
        "correlation_candidates_vs_cost": pearson([p[0] for p in paired], [p[1] for p in paired]),
    }


# -- report --------------------------------------------------------------------

def provenance_histogram(items: Sequence[GrepProvenance]) -> dict[str, dict]:
    """Count and percentage of grep calls carrying each label (percentages may sum past 100)."""
    counts = Counter(label for g in items for label in g.labels)
    n = len(items)
    return {label: {"count": counts[label], "percent": 100.0 * counts[label] / n if n else 0.0}
            for label in LABELS if counts[label]}


def build_analysis(traces: Sequence[SessionResult], materials: dict[str, FixMaterials],
                   prices: PriceTable | None = None) -> dict:
    provenance: list[GrepProvenance] = []
    missing = set()
    for t in traces:
        fm = materials.get(_fix_of(t))
        if fm is None:
            if any(True for _ in _grep_calls(t)):
                missing.add(_fix_of(t))
            continue
        provenance.extend(classify_grep_sources(t, fm))
    try:
        stats = pattern_stats(traces)
    except NoGrepCalls:
        stats = None
    return {
        "schema": ANALYSIS_SCHEMA,
        "n_sessions": len(traces),
        "n_fixes": len(_group_by_fix(traces)),
        "tool_distribution": tool_distribution(traces),
        "grep_provenance": {"n_classified": len(provenance), "fixes_without_materials": sorted(missing),
                            "labels": provenance_histogram(provenance)},
        "pattern_stats": stats,
        "usage": usage_report(traces, prices),
    }


def write_analysis(analysis: dict, out_dir: str | Path) -> list[Path]:
    """``analysis.json`` plus one CSV per table, for external plotting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "analysis.json"]
    written[0].write_text(json.dumps(analysis, indent=2, sort_keys=True) + "\n")

    def table(name: str, header: list[str], rows: Iterable[Sequence]):
        path = out / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        written.append(path)

    table("tool_distribution.csv", ["tool", "mean_calls_per_fix"],
          analysis["tool_distribution"].items())
    table("grep_provenance.csv", ["label", "count", "percent"],
          [(k, v["count"], f"{v['percent']:.2f}") for k, v in analysis["grep_provenance"]["labels"].items()])
    if analysis["pattern_stats"] is not None:
        table("pattern_stats.csv", ["stat", "value"], analysis["pattern_stats"].items())
    cols = ["fix", "sessions", "candidate_count", "input_tokens", "output_tokens", "cache_tokens",
            "total_tokens", "tool_calls", "cost_usd"]
    table("usage.csv", cols, [[r[c] for c in cols] for r in analysis["usage"]["per_fix"]])
    return written
