import json
import subprocess
import sys

import pytest

from szzkit.cli import EXIT_CONFIG, EXIT_OK, ConfigError, main, parse_config

from conftest import write_story_inputs

PRICES = "scripted 1.0 5.0\n"


@pytest.fixture
def inputs(story, tmp_path):
    dataset, script = write_story_inputs(story, tmp_path / "in")
    prices = tmp_path / "in" / "prices.txt"
    prices.write_text(PRICES)
    return dataset, script, prices


def _run(story, inputs, out, *extra):
    dataset, script, prices = inputs
    return main(["run", "--dataset", str(dataset), "--repo-root", str(story.path.parent),
                 "--pipeline", "SIMPLE_AGENT", "--output-dir", str(out), "--backend", "scripted",
                 "--script", str(script), "--prices", str(prices), *extra])


def _rows(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_run_writes_predictions_and_traces(story, inputs, tmp_path, capsys):
    out = tmp_path / "out"
    assert _run(story, inputs, out) == EXIT_OK
    rows = _rows(out / "predictions.jsonl")
    assert [(r["fix"], r["bics"]) for r in rows] == [(f, [b]) for f, b in story.fixes]
    assert len(list((out / "traces").glob("*.jsonl"))) == 3
    assert len(list((out / "materials").glob("*.json"))) == 3
    assert not (out / "work").exists()


def test_run_resumes_without_new_sessions(story, inputs, tmp_path, capsys):
    out = tmp_path / "out"
    _run(story, inputs, out)
    before = (out / "predictions.jsonl").read_bytes()
    traces = {p: p.stat().st_mtime_ns for p in (out / "traces").iterdir()}
    capsys.readouterr()
    assert _run(story, inputs, out) == EXIT_OK
    assert "0 predicted, 3 resumed" in capsys.readouterr().out
    assert (out / "predictions.jsonl").read_bytes() == before
    assert {p: p.stat().st_mtime_ns for p in (out / "traces").iterdir()} == traces
    assert _run(story, inputs, out, "--force") == EXIT_OK
    assert (out / "predictions.jsonl").read_bytes() == before


def test_run_changed_config_is_not_resumed(story, inputs, tmp_path, capsys):
    out = tmp_path / "out"
    _run(story, inputs, out)
    _run(story, inputs, out, "--max-bics", "2")
    rows = _rows(out / "predictions.jsonl")
    assert len(rows) == 6 and len({r["config_hash"] for r in rows}) == 2


def test_run_twice_from_scratch_is_byte_identical(story, inputs, tmp_path):
    for name in ("a", "b"):
        assert _run(story, inputs, tmp_path / name) == EXIT_OK
    assert (tmp_path / "a" / "predictions.jsonl").read_bytes() == (tmp_path / "b" / "predictions.jsonl").read_bytes()
    for f in (tmp_path / "a" / "traces").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / "traces" / f.name).read_bytes()


def test_run_parallel_matches_serial(story, inputs, tmp_path):
    _run(story, inputs, tmp_path / "serial")
    _run(story, inputs, tmp_path / "par", "--parallelism", "3")
    assert (tmp_path / "serial" / "predictions.jsonl").read_bytes() == \
        (tmp_path / "par" / "predictions.jsonl").read_bytes()


def test_run_missing_repo(inputs, tmp_path):
    dataset, script, _ = inputs
    out = tmp_path / "out"
    code = main(["run", "--dataset", str(dataset), "--repo-root", str(tmp_path / "nowhere"),
                 "--pipeline", "SIMPLE_AGENT", "--output-dir", str(out), "--script", str(script)])
    assert code == EXIT_CONFIG and not out.exists()


def test_run_bad_settings(story, inputs, tmp_path):
    dataset, script, _ = inputs
    base = ["run", "--dataset", str(dataset), "--repo-root", str(story.path.parent), "--output-dir",
            str(tmp_path / "o")]
    assert main(base + ["--pipeline", "NOPE"]) == EXIT_CONFIG
    assert main(base + ["--pipeline", "SZZ", "--parallelism", "0"]) == EXIT_CONFIG
    assert main(base + ["--pipeline", "SZZ_AGENT", "--selection-threshold", "0"]) == EXIT_CONFIG


def test_baseline_run(story, inputs, tmp_path):
    dataset, _, _ = inputs
    out = tmp_path / "b"
    assert main(["run", "--dataset", str(dataset), "--repo-root", str(story.path.parent),
                 "--pipeline", "LSZZ", "--output-dir", str(out)]) == EXIT_OK
    bics = [r["bics"] for r in _rows(out / "predictions.jsonl")]
    assert bics == [[story.c["c3"]], [story.c["c4"]], []]


def test_config_file_with_env(story, inputs, tmp_path, monkeypatch):
    dataset, script, prices = inputs
    monkeypatch.setenv("STORY_ROOT", str(story.path.parent))
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# settings\ndataset = {dataset}\nrepo_root = ${{STORY_ROOT}}\npipeline = simple_agent\n"
                   f"output_dir = {tmp_path / 'out'}\nscript = {script}\nprices = {prices}\n")
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    assert len(_rows(tmp_path / "out" / "predictions.jsonl")) == 3
    with pytest.raises(ConfigError):
        parse_config("key = ${UNSET_VARIABLE_XYZ}", {})
    assert parse_config("a-b = 1 # c", {}) == {"a_b": "1"}


def test_api_key_never_written(story, tmp_path, monkeypatch):
    """The key reaches the request headers but no file under the output directory."""
    import httpx

    secret = "sk-test-0123456789abcdef"
    monkeypatch.setenv("BACKEND_API_KEY", secret)
    dataset, _ = write_story_inputs(story, tmp_path / "in")
    seen = []

    def handler(request):
        seen.append(request.headers["authorization"])
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": "ANSWER: NONE"}}],
                                         "usage": {"prompt_tokens": 5, "completion_tokens": 1}})

    real_client = httpx.Client
    monkeypatch.setattr(httpx, "Client", lambda *a, **kw: real_client(*a, transport=httpx.MockTransport(handler),
                                                                       **{k: v for k, v in kw.items()
                                                                          if k != "transport"}))
    out = tmp_path / "out"
    main(["run", "--dataset", str(dataset), "--repo-root", str(story.path.parent), "--pipeline", "SZZ_AGENT",
          "--output-dir", str(out), "--backend", "http", "--endpoint", "http://mock/v1", "--model", "m"])
    assert seen and all(secret in h for h in seen)
    files = [p for p in out.rglob("*") if p.is_file()]
    assert files and not any(secret.encode() in p.read_bytes() for p in files)


# -- score ---------------------------------------------------------------------

def _pred_file(path, story, picks):
    path.write_text("".join(json.dumps({"fix": f, "bics": b, "pipeline": "X"}) + "\n"
                            for (f, _), b in zip(story.fixes, picks)))
    return path


def test_score_perfect(story, inputs, tmp_path, capsys):
    dataset = inputs[0]
    preds = _pred_file(tmp_path / "p.jsonl", story, [[b] for _, b in story.fixes])
    assert main(["score", str(dataset), str(preds)]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[-1] == "1.00 1.00 1.00"
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["schema"] == "report.v1" and report["n"] == 3


def test_score_half_right(story, inputs, tmp_path, capsys):
    dataset = inputs[0]
    (_, b1), (_, b2), _ = story.fixes
    # P = (1/2 + 1 + 0)/3 = 0.5, R = (1 + 1 + 0)/3 = 2/3, F1 = 4/7
    preds = _pred_file(tmp_path / "p.jsonl", story, [[b1, b2], [b2], []])
    main(["score", str(dataset), str(preds), "--out", str(tmp_path / "r.json")])
    assert capsys.readouterr().out.splitlines()[-1] == "0.50 0.67 0.57"
    r = json.loads((tmp_path / "r.json").read_text())
    assert (r["macro_precision"], r["macro_recall"]) == (0.5, 2 / 3)
    assert r["f1"] == pytest.approx(4 / 7, abs=1e-15)


def test_score_compare(story, inputs, tmp_path, capsys):
    dataset = inputs[0]
    a = _pred_file(tmp_path / "a.jsonl", story, [[b] for _, b in story.fixes])
    assert main(["score", str(dataset), str(a), "--compare", str(a)]) == EXIT_OK
    assert "ALL_ZERO_DIFFERENCES" in capsys.readouterr().out
    b = _pred_file(tmp_path / "b.jsonl", story, [[], [], []])
    assert main(["score", str(dataset), str(a), "--compare", str(b), "--out", str(tmp_path / "c.json")]) == EXIT_OK
    cmp_ = json.loads((tmp_path / "c.json").read_text())["comparison"]
    assert cmp_["statistic_w"] == 6.0 and cmp_["p_value"] == 0.25 and cmp_["effect_r"] == 1.0


def test_score_unmatched_fix(story, inputs, tmp_path):
    dataset = inputs[0]
    bad = tmp_path / "p.jsonl"
    bad.write_text(json.dumps({"fix": "f" * 40, "bics": [], "pipeline": "X"}) + "\n")
    assert main(["score", str(dataset), str(bad)]) == EXIT_CONFIG


# -- trace-report --------------------------------------------------------------

def test_trace_report(story, inputs, tmp_path, capsys):
    out = tmp_path / "out"
    _run(story, inputs, out)
    capsys.readouterr()
    assert main(["trace-report", str(out / "traces"), "--materials", str(out / "materials"),
                 "--prices", str(inputs[2])]) == EXIT_OK
    shown = json.loads(capsys.readouterr().out)
    assert {"REMOVED_LINES", "MESSAGE"} <= set(shown["grep_provenance"])
    analysis = json.loads((out / "analysis" / "analysis.json").read_text())
    assert analysis["tool_distribution"] == {"READ": 1.0, "GREP": 1.0, "GLOB": 0.0, "WRITE": 1.0}
    assert (out / "analysis" / "usage.csv").exists()


def test_trace_report_empty_and_broken(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["trace-report", str(tmp_path / "empty")]) == EXIT_CONFIG
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad" / "x.jsonl").write_text("{not json\n")
    assert main(["trace-report", str(tmp_path / "bad")]) == EXIT_CONFIG


def test_trace_report_without_greps(tmp_path, capsys):
    from szzkit.agent import ScriptedBackend, run_session
    ws = tmp_path / "ws"
    ws.mkdir()
    res = run_session(ScriptedBackend([{"content": "", "tool_calls": [{"name": "Glob", "arguments": {"pattern": "*"}}]},
                                       "x"]), "s", "u", ws, meta={"fix": "a" * 40})
    (tmp_path / "traces").mkdir()
    res.save(tmp_path / "traces" / "t.jsonl")
    assert main(["trace-report", str(tmp_path / "traces")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["pattern_stats"] == "absent"


# -- collect and szz -----------------------------------------------------------

def test_collect(story, tmp_path, capsys):
    out = tmp_path / "d.jsonl"
    assert main(["collect", str(story.path), "--since", "0", "--until", "100000", "--out", str(out)]) == EXIT_OK
    rows = _rows(out)
    assert [(r["fix"], r["gt_bics"]) for r in rows] == [(f, [b]) for f, b in story.fixes]
    assert "fixes found: 3" in capsys.readouterr().out
    assert main(["collect", str(story.path), "--since", "1970-01-01T01:50:00", "--until", "1970-01-01T02:20:00",
                 "--out", str(out)]) == EXIT_OK
    assert len(_rows(out)) == 2  # 6600 s to 8400 s covers the first two fixes
    assert main(["collect", str(story.path), "--since", "50000", "--until", "60000", "--out", str(out)]) == EXIT_OK
    assert out.read_text() == ""
    assert main(["collect", str(story.path), "--since", "10", "--until", "5", "--out", str(out)]) == EXIT_CONFIG


def test_szz_command(story, capsys):
    fix, bic = story.fixes[0]
    assert main(["szz", str(story.path), fix[:12], "--variant", "rszz"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["bics"] == [bic]
    assert main(["szz", str(story.path), "0000000"]) == EXIT_CONFIG


def test_module_entry_point(story):
    proc = subprocess.run([sys.executable, "-m", "szzkit", "szz", str(story.path), story.fixes[1][0]],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and story.fixes[1][1] in proc.stdout
