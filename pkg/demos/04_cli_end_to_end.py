"""Command-line workflow from dataset to trace report
=====================================================

Drives ``szzkit collect``, ``run``, ``score`` and ``trace-report`` in a
temporary directory, exactly as a shell user would, but in-process.
"""

import json
import tempfile
from pathlib import Path

from szzkit.cli import main
from szzkit.synth import build_driver_story

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    story = build_driver_story(root / "repos" / "drivers")

    # 1. Dataset from the Fixes: tags in the history.
    main(["collect", str(story.path), "--since", "0", "--until", "10000", "--out", str(root / "dataset.jsonl")])
    print((root / "dataset.jsonl").read_text())

    # 2. A plain blame baseline and a scripted two-stage agent.
    main(["run", "--dataset", str(root / "dataset.jsonl"), "--repo-root", str(root / "repos"),
          "--pipeline", "LSZZ", "--output-dir", str(root / "lszz")])
    answers = {fix[:12]: [f"ANSWER: {truth}"] for fix, truth in story.fixes}
    (root / "script.json").write_text(json.dumps({"by_fix": answers}))
    main(["run", "--dataset", str(root / "dataset.jsonl"), "--repo-root", str(root / "repos"),
          "--pipeline", "SZZ_AGENT", "--backend", "scripted", "--script", str(root / "script.json"),
          "--output-dir", str(root / "agent")])

    # 3. Scores and a paired comparison.
    main(["score", str(root / "dataset.jsonl"), str(root / "lszz" / "predictions.jsonl")])
    main(["score", str(root / "dataset.jsonl"), str(root / "agent" / "predictions.jsonl"),
          "--compare", str(root / "lszz" / "predictions.jsonl")])

    # 4. Tool usage and grep provenance from the agent's traces.
    main(["trace-report", str(root / "agent" / "traces"), "--out", str(root / "report")])
    print(sorted(p.name for p in (root / "report").iterdir()))
