"""Candidate sets, redaction and on-disk dumps
=============================================

An agent must never see the answer it is asked for. This script collects
the candidate commits for one fix, shows how the fix message loses its
``Fixes:`` line under redaction, and writes the dump directory an agent
would browse.
"""

import tempfile
from pathlib import Path

from szzkit.candidates import RedactionSpec, collect_candidates, leaked_hashes, materialize_dump, redact
from szzkit.synth import build_driver_story

with tempfile.TemporaryDirectory() as tmp:
    story = build_driver_story(Path(tmp) / "drivers")
    repo = story.repo
    fix, truth = story.fixes[1]
    spec = RedactionSpec(frozenset({truth}))

    message = repo.commit_meta(fix).message
    print("fix message as committed:\n" + message)
    print("fix message after redaction:\n" + redact(message, spec))
    assert not leaked_hashes(redact(message, spec), spec)

    # Every earlier commit touching a file the fix modifies, oldest first.
    cset = collect_candidates(repo, fix, redaction=spec)
    print(f"{len(cset)} candidates for files {cset.source_files}:")
    for c in cset.members:
        print(f"  #{c.ordinal} {c.id[:12]} {c.meta.subject}")

    manifest = materialize_dump(cset, Path(tmp) / "dump", spec)
    print(f"\ndump written: {len(manifest.files)} files, {manifest.bytes_total} bytes")
    for p in sorted((Path(tmp) / "dump").iterdir()):
        print("  " + p.name)
