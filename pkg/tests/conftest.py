from __future__ import annotations

import json
from pathlib import Path

import pytest

from szzkit.candidates import collect_candidates, dump_filename
from szzkit.gitio import Repo
from szzkit.synth import DriverStory, GitAppender, build_driver_story  # noqa: F401

Story = DriverStory
build_story = build_driver_story
_Appender = GitAppender


@pytest.fixture(scope="session")
def story(tmp_path_factory) -> Story:
    return build_story(tmp_path_factory.mktemp("story") / "drivers")


def simple_agent_script(repo: Repo, fix: str, bic: str, pattern: str) -> list[dict]:
    """Scripted turns: grep for ``pattern``, read the culprit's dump file, write the answer."""
    cset = collect_candidates(repo, fix, with_diffs=False)
    member = next(m for m in cset.members if m.id == bic)
    return [
        {"content": "", "tool_calls": [{"name": "Grep", "arguments": {"pattern": pattern, "mode": "literal"}}]},
        {"content": "", "tool_calls": [{"name": "Read", "arguments": {"path": dump_filename(member)}}]},
        {"content": "", "tool_calls": [{"name": "Write", "arguments": {"path": "ANSWER.txt", "content": bic + "\n"}}]},
        "The reset delay change introduced the bug.",
    ]


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1))
    return path


STORY_PATTERNS = {"fixA": "fsleep", "fixB": "blk->size >> 2", "fixC": "smc_ib_is_sg_need_sync"}


def write_story_inputs(story: Story, out: Path) -> tuple[Path, Path]:
    """dataset.v1 file and a per-fix simple-agent script for the story repo."""
    out.mkdir(parents=True, exist_ok=True)
    rows, by_fix = [], {}
    for name, (fix, bic) in zip(("fixA", "fixB", "fixC"), story.fixes):
        rows.append({"repo_id": story.path.name, "fix": fix, "gt_bics": [bic]})
        by_fix[fix[:12]] = simple_agent_script(story.repo, fix, bic, STORY_PATTERNS[name])
    dataset = out / "dataset.jsonl"
    dataset.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return dataset, write_json(out / "script.json", {"by_fix": by_fix})


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
