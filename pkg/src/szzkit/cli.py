"""Command-line entry point: ``szzkit run|score|trace-report|collect|szz``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import re
import shutil
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import evalkit, pipelines, szz, tracekit
from .agent import HttpBackend, PriceTable, ScriptedBackend, SessionBudget, SessionResult
from .candidates import RedactionSpec
from .errors import AllZeroDifferences, SchemaViolation, SzzkitError
from .gitio import Repo

log = logging.getLogger("szzkit")

PRED_FILE = "predictions.jsonl"
EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


class ConfigError(Exception):
    pass


# -- config --------------------------------------------------------------------

_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def parse_config(text: str, env: dict[str, str] | None = None) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; ``${VAR}`` reads the environment."""
    env = os.environ if env is None else env
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))

        def sub(m):
            if m.group(1) not in env:
                raise ConfigError(f"config line {n}: environment variable {m.group(1)} is not set")
            return env[m.group(1)]
        out[key.replace("-", "_")] = _VAR.sub(sub, value)
    return out


def _bool(v: str) -> bool:
    low = str(v).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _threshold(v) -> float:
    if str(v).strip().lower() in ("inf", "infinity", "∞"):
        return math.inf
    return int(v)


@dataclass
class RunConfig:
    dataset_path: Path
    repo_root: Path
    pipeline: str
    output_dir: Path
    backend: dict = field(default_factory=dict)
    pipeline_config: pipelines.PipelineConfig = field(default_factory=pipelines.PipelineConfig)
    parallelism: int = 1
    prices: PriceTable | None = None
    force: bool = False

    def __post_init__(self):
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.pipeline not in pipelines.PIPELINES:
            raise ConfigError(f"unknown pipeline {self.pipeline!r}; choose from {', '.join(pipelines.PIPELINES)}")

    @property
    def uses_agent(self) -> bool:
        return self.pipeline in (pipelines.SZZ_AGENT, pipelines.SIMPLE_AGENT)

    def config_hash(self) -> str:
        extra = {"pipeline": self.pipeline}
        if self.uses_agent:
            extra["pipeline_config"] = self.pipeline_config.digest()
            extra["model"] = self.backend.get("model", "")
        return hashlib.sha256(json.dumps(extra, sort_keys=True).encode()).hexdigest()[:16]


def build_run_config(args: argparse.Namespace) -> RunConfig:
    values: dict[str, str] = {}
    if args.config:
        values.update(parse_config(Path(args.config).read_text()))
    for key in ("dataset", "repo_root", "pipeline", "output_dir", "parallelism", "backend", "script",
                "endpoint", "model", "api_key_env", "prices", "selection_threshold", "context_width",
                "max_bics", "max_turns"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    for flag, key in (("no_message", "include_message"), ("no_diff", "include_diff"),
                      ("no_follow_renames", "follow_renames")):
        if getattr(args, flag, False):
            values[key] = "false"
    for key in ("dataset", "repo_root", "pipeline", "output_dir"):
        if key not in values:
            raise ConfigError(f"missing required setting {key!r}")
    pcfg_kw = {}
    try:
        if "selection_threshold" in values:
            pcfg_kw["selection_threshold"] = _threshold(values["selection_threshold"])
        for key in ("context_width", "max_bics"):
            if key in values:
                pcfg_kw[key] = int(values[key])
        for key in ("include_message", "include_diff", "follow_renames"):
            if key in values:
                pcfg_kw[key] = _bool(values[key])
        if "max_turns" in values:
            pcfg_kw["budget"] = SessionBudget(max_turns=int(values["max_turns"]))
        pcfg = pipelines.PipelineConfig(**pcfg_kw)
        parallelism = int(values.get("parallelism", 1))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    backend = {k: values[k] for k in ("backend", "script", "endpoint", "model", "api_key_env") if k in values}
    prices = PriceTable.load(values["prices"]) if "prices" in values else None
    return RunConfig(Path(values["dataset"]), Path(values["repo_root"]), values["pipeline"].upper(),
                     Path(values["output_dir"]), backend, pcfg, parallelism, prices,
                     bool(getattr(args, "force", False)))


# -- backends ------------------------------------------------------------------

class _Throttled:
    """Shares one backend across workers with a bound on in-flight requests."""

    def __init__(self, inner, sem: threading.Semaphore):
        self.inner, self.sem = inner, sem
        self.model = inner.model
        self.deterministic = inner.deterministic

    def complete(self, messages, tools):
        with self.sem:
            return self.inner.complete(messages, tools)


class BackendFactory:
    """Hands each fix its own backend.

    Scripted backends are stateful, so every fix replays a fresh copy of its
    script. A script file is either a single script (list of turns or
    ``{"turns": ...}``) or ``{"default": script, "by_fix": {hash-prefix: script}}``.
    """

    def __init__(self, settings: dict, parallelism: int):
        kind = settings.get("backend", "scripted" if "script" in settings else "http")
        self.kind = kind
        if kind == "scripted":
            if "script" not in settings:
                raise ConfigError("scripted backend needs a script file")
            path = Path(settings["script"])
            if not path.is_file():
                raise ConfigError(f"script {path} not found")
            spec = json.loads(path.read_text())
            if isinstance(spec, dict) and ("by_fix" in spec or "default" in spec):
                self.default = spec.get("default")
                self.by_fix = spec.get("by_fix", {})
            else:
                self.default, self.by_fix = spec, {}
            self.model = settings.get("model", "scripted")
        elif kind == "http":
            if "endpoint" not in settings or "model" not in settings:
                raise ConfigError("http backend needs endpoint and model")
            self.shared = _Throttled(HttpBackend(settings["endpoint"], settings["model"],
                                                 api_key_env=settings.get("api_key_env", "BACKEND_API_KEY")),
                                     threading.Semaphore(parallelism))
            self.model = settings["model"]
        else:
            raise ConfigError(f"unknown backend kind {kind!r}")

    def for_fix(self, fix: str):
        if self.kind == "http":
            return self.shared
        spec = next((s for k, s in self.by_fix.items() if fix.startswith(k.lower())), self.default)
        if spec is None:
            raise ConfigError(f"no script for fix {fix[:12]}")
        return ScriptedBackend.from_spec(spec)


# -- run -----------------------------------------------------------------------

def _repo_path(root: Path, repo_id: str) -> Path | None:
    for cand in (root / repo_id, root):
        if (cand / ".git").exists() or (cand / "HEAD").is_file():
            return cand
    return None


def _pred_key(row: dict) -> tuple:
    return (row.get("repo_id"), row["fix"], row["pipeline"], row.get("config_hash"))


def _read_predictions(path: Path) -> list[dict]:
    if not path.exists():
        return []
    rows = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"invalid JSON in predictions ({exc.msg})", n) from exc
    return rows


def _dump_rows(rows: list[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def _write_materials(path: Path, repo: Repo, fix: str, spec: RedactionSpec, width: int) -> None:
    ctx = pipelines.FixContext.build(repo, fix, spec, width)
    fm = tracekit.FixMaterials.from_fix(ctx.message, ctx.diff)
    path.write_text(json.dumps(fm.to_dict(), indent=1, sort_keys=True) + "\n")


def cmd_run(cfg: RunConfig) -> int:
    try:
        dataset = evalkit.load_dataset(cfg.dataset_path)
    except (OSError, SchemaViolation) as exc:
        log.error("cannot load dataset: %s", exc)
        return EXIT_CONFIG
    repos = {}
    for e in dataset:
        path = _repo_path(cfg.repo_root, e.repo_id)
        if path is None:
            log.error("repository for %s not found under %s", e.repo_id, cfg.repo_root)
            return EXIT_CONFIG
        repos[e.repo_id] = path
    factory = BackendFactory(cfg.backend, cfg.parallelism) if cfg.uses_agent else None

    out = cfg.output_dir
    for sub in ("traces", "materials"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    pred_path = out / PRED_FILE
    chash = cfg.config_hash()
    existing = _read_predictions(pred_path)
    done = {_pred_key(r) for r in existing}
    todo = [e for e in dataset
            if cfg.force or (e.repo_id, e.fix, cfg.pipeline, chash) not in done]
    log.info("%d of %d entries to run (%s, config %s)", len(todo), len(dataset), cfg.pipeline, chash)

    lock = threading.Lock()
    results: dict[tuple, dict] = {}
    failures = []

    def work(entry: evalkit.DatasetEntry) -> None:
        repo = Repo(repos[entry.repo_id])
        spec = RedactionSpec(entry.gt_bics)
        try:
            if cfg.uses_agent:
                workdir = out / "work" / entry.fix[:12]
                shutil.rmtree(workdir, ignore_errors=True)
                pred = pipelines.run_pipeline(cfg.pipeline, repo, entry.fix, factory.for_fix(entry.fix),
                                              cfg.pipeline_config, redaction=spec, workdir=workdir,
                                              prices=cfg.prices)
                shutil.rmtree(workdir, ignore_errors=True)
                for s in pred.sessions:
                    s.save(out / "traces" / f"{s.session_id}.jsonl")
                _write_materials(out / "materials" / f"{entry.fix}.json", repo, entry.fix, spec,
                                 cfg.pipeline_config.context_width)
            else:
                pred = pipelines.run_baseline(repo, entry.fix, cfg.pipeline)
        except (SzzkitError, OSError, ConfigError) as exc:
            log.error("%s: %s: %s", entry.fix[:12], type(exc).__name__, exc)
            with lock:
                failures.append(entry.fix)
            return
        row = {"schema": pipelines.PRED_SCHEMA, "repo_id": entry.repo_id, "config_hash": chash,
               **pred.to_dict()}
        with lock:
            results[_pred_key(row)] = row
            with pred_path.open("a") as fh:  # incremental, so an interrupted run can resume
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    if cfg.parallelism == 1:
        for e in todo:
            work(e)
    else:
        with ThreadPoolExecutor(cfg.parallelism) as pool:
            list(pool.map(work, todo))

    merged: dict[tuple, dict] = {}
    for r in existing:
        merged[_pred_key(r)] = r
    merged.update(results)
    ordered = []
    for e in dataset:
        key = (e.repo_id, e.fix, cfg.pipeline, chash)
        if key in merged:
            ordered.append(merged.pop(key))
    ordered.extend(merged.values())
    pred_path.write_text(_dump_rows(ordered))
    shutil.rmtree(out / "work", ignore_errors=True)
    print(f"{len(todo) - len(failures)} predicted, {len(dataset) - len(todo)} resumed, "
          f"{len(failures)} failed -> {pred_path}")
    return EXIT_PARTIAL if failures else EXIT_OK


# -- score ---------------------------------------------------------------------

def _predictions_by_fix(rows: list[dict], pipeline: str | None) -> dict[str, set[str]]:
    if pipeline:
        rows = [r for r in rows if r["pipeline"] == pipeline.upper()]
    out: dict[str, set[str]] = {}
    for r in rows:
        if r["fix"] in out:
            raise SchemaViolation(f"several predictions for {r['fix'][:12]}; select one with --pipeline")
        out[r["fix"]] = set(r["bics"])
    return out


def _scores(dataset, preds: dict[str, set[str]]) -> list[evalkit.PerFixScore]:
    return [evalkit.score_fix(e.gt_bics, preds.get(e.fix, set()), e.fix) for e in dataset]


def cmd_score(dataset_path, predictions_path, *, compare=None, out=None, pipeline=None) -> int:
    try:
        dataset = evalkit.load_dataset(dataset_path)
        preds = _predictions_by_fix(_read_predictions(Path(predictions_path)), pipeline)
        other = _predictions_by_fix(_read_predictions(Path(compare)), pipeline) if compare else None
    except (OSError, SchemaViolation, KeyError) as exc:
        log.error("cannot load inputs: %s", exc)
        return EXIT_CONFIG
    known = {e.fix for e in dataset}
    for name, p in (("predictions", preds), ("comparison", other or {})):
        unmatched = sorted(set(p) - known)
        if unmatched:
            log.error("%s contain %d fix(es) absent from the dataset, e.g. %s", name, len(unmatched),
                      unmatched[0][:12])
            return EXIT_CONFIG
    missing = known - set(preds)
    if missing:
        log.warning("%d fix(es) have no prediction and score zero", len(missing))
    report = evalkit.aggregate(_scores(dataset, preds))
    doc = report.to_dict()
    print("precision recall f1")
    print(report.display())
    if other is not None:
        mine = [s.f1 for s in report.per_fix]
        theirs = [s.f1 for s in _scores(dataset, other)]
        try:
            res = evalkit.wilcoxon_signed_rank(mine, theirs)
        except AllZeroDifferences:
            doc["comparison"] = {"status": "ALL_ZERO_DIFFERENCES"}
            print("compare: ALL_ZERO_DIFFERENCES")
        else:
            doc["comparison"] = {"status": "OK", "paired_on": "per_fix_f1", **res.to_dict()}
            print(f"compare: W={res.statistic_w:g} p={res.p_value:.4g} r={res.effect_r:.3f} "
                  f"n={res.n_effective} ({res.method})")
    out_path = Path(out) if out else Path(predictions_path).with_name("report.json")
    out_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# -- trace-report --------------------------------------------------------------

def cmd_trace_report(trace_dir, materials_dir=None, *, out=None, prices=None) -> int:
    files = sorted(Path(trace_dir).glob("*.jsonl")) if Path(trace_dir).is_dir() else []
    if not files:
        log.error("no trace files in %s", trace_dir)
        return EXIT_CONFIG
    try:
        traces = [SessionResult.load(f) for f in files]
        materials = {}
        if materials_dir and Path(materials_dir).is_dir():
            for f in sorted(Path(materials_dir).glob("*.json")):
                materials[f.stem] = tracekit.FixMaterials.from_dict(json.loads(f.read_text()))
        table = PriceTable.load(prices) if prices else None
    except (ValueError, KeyError, TypeError, OSError) as exc:
        log.error("cannot parse traces: %s", exc)
        return EXIT_CONFIG
    analysis = tracekit.build_analysis(traces, materials, table)
    out = Path(out) if out else Path(trace_dir).parent / "analysis"
    tracekit.write_analysis(analysis, out)
    print(json.dumps({"tool_distribution": analysis["tool_distribution"],
                      "grep_provenance": analysis["grep_provenance"]["labels"],
                      "pattern_stats": analysis["pattern_stats"] or "absent",
                      "mean_cost_usd": analysis["usage"]["mean_cost_usd"]}, indent=2))
    return EXIT_OK


# -- collect -------------------------------------------------------------------

def _timestamp(text: str) -> int:
    if re.fullmatch(r"-?\d+", text):
        return int(text)
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def cmd_collect(repo_root, since, until, out, *, repo_id=None, rev="HEAD") -> int:
    try:
        lo, hi = _timestamp(str(since)), _timestamp(str(until))
    except ValueError as exc:
        log.error("bad timestamp: %s", exc)
        return EXIT_CONFIG
    if hi < lo:
        log.error("until precedes since")
        return EXIT_CONFIG
    try:
        repo = Repo(repo_root)
        stats = evalkit.CollectStats()
        entries = evalkit.collect_fixes_dataset(repo, lo, hi, repo_id=repo_id, rev=rev, stats=stats)
    except SzzkitError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    evalkit.save_dataset(entries, out)
    print(f"fixes found: {stats.fixes}, tags resolved: {stats.tags_resolved}, tags skipped: {stats.tags_skipped}")
    return EXIT_OK


# -- szz -----------------------------------------------------------------------

def cmd_szz(repo_root, fix, variant, *, max_depth=szz.DEFAULT_MAX_DEPTH) -> int:
    try:
        repo = Repo(repo_root)
        pred = pipelines.run_baseline(repo, fix, variant.upper(), max_depth=max_depth)
    except (SzzkitError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    print(json.dumps({"fix": pred.fix, "pipeline": pred.pipeline, "bics": sorted(pred.bics),
                      "candidate_count": pred.candidate_count}))
    return EXIT_OK


# -- argparse ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="szzkit", description="Bug-introducing commit identification toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a pipeline over a dataset")
    r.add_argument("--config", help="key = value settings file")
    r.add_argument("--dataset")
    r.add_argument("--repo-root")
    r.add_argument("--pipeline", help="|".join(pipelines.PIPELINES))
    r.add_argument("--output-dir")
    r.add_argument("--parallelism", type=int)
    r.add_argument("--backend", choices=["scripted", "http"])
    r.add_argument("--script", help="scripted backend turns (JSON)")
    r.add_argument("--endpoint")
    r.add_argument("--model")
    r.add_argument("--api-key-env")
    r.add_argument("--prices", help="price table: model input_per_M output_per_M [cache_per_M]")
    r.add_argument("--selection-threshold", help="integer or inf")
    r.add_argument("--context-width", type=int)
    r.add_argument("--max-bics", type=int)
    r.add_argument("--max-turns", type=int)
    r.add_argument("--no-message", action="store_true", help="withhold the fix commit message")
    r.add_argument("--no-diff", action="store_true", help="withhold the fix commit diff")
    r.add_argument("--no-follow-renames", action="store_true")
    r.add_argument("--force", action="store_true", help="recompute existing predictions")

    s = sub.add_parser("score", help="score predictions against a dataset")
    s.add_argument("dataset")
    s.add_argument("predictions")
    s.add_argument("--compare", help="second predictions file for a paired test")
    s.add_argument("--pipeline", help="only score rows of this pipeline")
    s.add_argument("--out", help="report.v1 output path")

    t = sub.add_parser("trace-report", help="analyze session traces")
    t.add_argument("trace_dir")
    t.add_argument("--materials", help="directory of per-fix materials JSON")
    t.add_argument("--prices")
    t.add_argument("--out")

    c = sub.add_parser("collect", help="build a dataset from Fixes: tags")
    c.add_argument("repo")
    c.add_argument("--since", required=True, help="epoch seconds or ISO date")
    c.add_argument("--until", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--repo-id")
    c.add_argument("--rev", default="HEAD")

    z = sub.add_parser("szz", help="run a baseline SZZ variant on one fix")
    z.add_argument("repo")
    z.add_argument("fix")
    z.add_argument("--variant", default="szz", choices=["szz", "lszz", "rszz", "vszz"])
    z.add_argument("--max-depth", type=int, default=szz.DEFAULT_MAX_DEPTH)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "run":
        try:
            cfg = build_run_config(args)
            return cmd_run(cfg)
        except (ConfigError, OSError, ValueError) as exc:
            log.error("configuration error: %s", exc)
            return EXIT_CONFIG
    if args.command == "score":
        return cmd_score(args.dataset, args.predictions, compare=args.compare, out=args.out,
                         pipeline=args.pipeline)
    if args.command == "trace-report":
        return cmd_trace_report(args.trace_dir, args.materials, out=args.out, prices=args.prices)
    if args.command == "collect":
        return cmd_collect(args.repo, args.since, args.until, args.out, repo_id=args.repo_id, rev=args.rev)
    return cmd_szz(args.repo, args.fix, args.variant, max_depth=args.max_depth)


if __name__ == "__main__":
    sys.exit(main())
