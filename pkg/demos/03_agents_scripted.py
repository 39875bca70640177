"""Both agent pipelines with a scripted model
=============================================

No network access is needed: a scripted backend replays canned turns.

* The two-stage agent first sees the blame candidates and answers with
  one hash, so it finishes in stage 1 with a single session.
* The single-session agent greps the candidate dump, reads the match and
  writes its answer to ``ANSWER.txt``.
"""

import tempfile
from pathlib import Path

from szzkit.agent import PriceTable, ScriptedBackend
from szzkit.candidates import collect_candidates, dump_filename
from szzkit.pipelines import simple_szz_agent, szz_agent
from szzkit.synth import build_driver_story

PRICES = PriceTable.parse("scripted 1.0 5.0\n")

with tempfile.TemporaryDirectory() as tmp:
    story = build_driver_story(Path(tmp) / "drivers")
    repo = story.repo
    fix, truth = story.fixes[0]

    pred = szz_agent(repo, fix, ScriptedBackend([f"The fsleep change is at fault.\nANSWER: {truth}"]),
                     prices=PRICES)
    print(f"two-stage agent: stage={pred.stage} bics={[b[:12] for b in pred.bics]} "
          f"sessions={len(pred.sessions)} cost=${pred.usage.cost_usd}")

    member = next(m for m in collect_candidates(repo, fix, with_diffs=False).members if m.id == truth)
    turns = [
        {"content": "", "tool_calls": [{"name": "Grep", "arguments": {"pattern": "fsleep", "mode": "literal"}}]},
        {"content": "", "tool_calls": [{"name": "Read", "arguments": {"path": dump_filename(member)}}]},
        {"content": "", "tool_calls": [{"name": "Write",
                                        "arguments": {"path": "ANSWER.txt", "content": truth + "\n"}}]},
        "Done.",
    ]
    pred = simple_szz_agent(repo, fix, ScriptedBackend(turns), prices=PRICES)
    session = pred.sessions[0]
    print(f"single-session agent: bics={[b[:12] for b in pred.bics]} cost=${pred.usage.cost_usd}")
    for step in session.trace:
        print(f"  {step.seq}. {step.tool}")
    print(f"correct: {pred.bics == {truth}}")
