"""Blame-based baselines on a small driver history
=================================================

Builds a throwaway repository with three bug/fix pairs and runs the four
blame-based variants on every fix. The third fix only adds lines, so blame
has nothing to trace and every variant comes back empty.
"""

import tempfile
from pathlib import Path

from szzkit import szz
from szzkit.pipelines import LSZZ, RSZZ, SZZ, VSZZ, run_baseline
from szzkit.synth import build_driver_story

with tempfile.TemporaryDirectory() as tmp:
    story = build_driver_story(Path(tmp) / "drivers")
    repo = story.repo
    names = {sha: name for name, sha in story.c.items()}

    for fix, truth in story.fixes:
        print(f"{names[fix]}: {repo.commit_meta(fix).subject}")
        print(f"  true culprit    {names[truth]}")

        # Raw blame output: which commit last touched each deleted line.
        result = szz.szz_candidates(repo, fix)
        for a in result.attributions:
            print(f"  blame {a.file}:{a.old_lineno} -> {names[a.introducer]}   {a.content.strip()}")

        for variant in (SZZ, LSZZ, RSZZ, VSZZ):
            pred = run_baseline(repo, fix, variant)
            picked = ", ".join(sorted(names[b] for b in pred.bics)) or "(none)"
            print(f"  {variant:<5} {picked}")
        print()
