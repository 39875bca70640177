import hashlib
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from szzkit.candidates import (
    INDEX_NAME,
    PLACEHOLDER,
    RedactionSpec,
    collect_candidates,
    leaked_hashes,
    materialize_dump,
    redact,
)
from szzkit.errors import NoParent, NonEmptyDir
from szzkit.gitio import Repo
from szzkit.synth import RepoBuilder
from szzkit.szz import szz_candidates

GT = "0ef69e788411cf1a1b9d6ccbb0e8f5e8c7d0a123"


def test_redact_fixes_line_removed():
    text = 'net/smc: fix sync\n\nFixes: 0ef69e788411 ("net/smc: optimize for smc_sndbuf_sync_sg_for_device")\nSigned-off-by: x\n'
    assert redact(text, RedactionSpec({GT})) == "net/smc: fix sync\n\nSigned-off-by: x\n"


def test_redact_full_hash_in_body():
    out = redact(f"introduced in commit {GT}.", RedactionSpec({GT}))
    assert out == f"introduced in commit {PLACEHOLDER}."


def test_redact_keeps_unrelated_hex():
    text = "see deadbeef1234 and Fixes: 123456789abc"
    assert redact(text, RedactionSpec({GT})) == text


def test_redact_short_and_embedded_prefixes():
    spec = RedactionSpec({GT})
    assert redact("0ef69e7", spec) == PLACEHOLDER
    assert redact("0ef69e", spec) == "0ef69e"  # below min_prefix
    assert PLACEHOLDER in redact("ff0ef69e788411", spec)
    assert redact("FIXES: 0EF69E788411", spec) == ""


def test_min_prefix_floor():
    with pytest.raises(ValueError):
        RedactionSpec({GT}, min_prefix=6)


_HEXISH = st.text(alphabet="0123456789abcdefABCDEF :\n()fixesFIXES", max_size=120)


@settings(max_examples=300, deadline=None)
@given(_HEXISH, st.integers(0, 40), st.integers(7, 40))
def test_redact_idempotent_and_sound(noise, cut, width):
    spec = RedactionSpec({GT, "abcdef0123456789abcdef0123456789abcdef01"})
    text = noise[:cut] + GT[:width] + noise[cut:]
    once = redact(text, spec)
    assert redact(once, spec) == once
    assert leaked_hashes(once, spec) == set()


# -- candidate sets ------------------------------------------------------------

@pytest.fixture(scope="module")
def hist(tmp_path_factory):
    b = RepoBuilder(tmp_path_factory.mktemp("cand") / "r")
    m = {}
    m["c1"] = b.commit({"main.c": "a\nb\n", "other.c": "o\n"}, "c1", ts=100)
    m["c2"] = b.commit({"other.c": "o2\n"}, "c2", ts=200)
    m["c3"] = b.commit({"main.c": "a\nbug\n"}, f"c3\n\nfollows up {GT}", ts=300)
    m["c4"] = b.commit({"lib.c": "l\n", "other.c": "o3\n"}, "c4", ts=400)
    m["c6"] = b.commit({"main.c": "a\nbug\nc\n"}, "c6", ts=600)
    m["c9"] = b.commit({"main.c": "a\nfixed\nc\n"}, "c9", ts=900)
    m["c10"] = b.commit({"main.c": "a\nfixed\nc\nd\n", "other.c": "o4\n"}, "c10", ts=1000)
    m["c11"] = b.commit({"new.c": "n\n"}, "c11", ts=1100)
    b.build()
    return Repo(b.path), {k: b.sha(v) for k, v in m.items()}


def test_collect_single_file(hist):
    repo, c = hist
    cs = collect_candidates(repo, c["c9"])
    assert cs.ids() == [c["c1"], c["c3"], c["c6"]]
    assert [m.ordinal for m in cs.members] == [0, 1, 2]
    assert cs.source_files == ["main.c"]


def test_collect_union_without_duplicates(hist):
    repo, c = hist
    cs = collect_candidates(repo, c["c10"])
    assert cs.ids() == [c["c1"], c["c2"], c["c3"], c["c4"], c["c6"], c["c9"]]
    keys = [(m.meta.commit_ts, m.id) for m in cs.members]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)


def test_collect_new_file_only(hist):
    repo, c = hist
    assert len(collect_candidates(repo, c["c11"])) == 0
    with pytest.raises(NoParent):
        collect_candidates(repo, c["c1"])


def test_szz_subset_of_candidates(hist):
    repo, c = hist
    for fix in ("c9", "c10"):
        assert szz_candidates(repo, c[fix]).candidates <= set(collect_candidates(repo, c[fix]).ids())


def _tree_digest(path):
    h = hashlib.sha256()
    for f in sorted(path.iterdir()):
        h.update(f.name.encode() + b"\0" + f.read_bytes())
    return h.hexdigest()


def test_dump_layout_and_determinism(hist, tmp_path):
    repo, c = hist
    spec = RedactionSpec({GT})
    cs = collect_candidates(repo, c["c9"], redaction=spec)
    man = materialize_dump(cs, tmp_path / "d1", spec)
    assert len(list((tmp_path / "d1").iterdir())) == 4
    assert man.index_path == INDEX_NAME and len(man.files) == 3
    assert all(re.fullmatch(r"\d{6}_[0-9a-f]{12}\.txt", n) for n in man.files.values())
    index = (tmp_path / "d1" / INDEX_NAME).read_text().splitlines()
    assert [row.split("\t")[1] for row in index] == cs.ids()
    first = (tmp_path / "d1" / man.files[1]).read_text()
    assert first.startswith(f"commit {c['c3']}\ndate: ")
    assert PLACEHOLDER in first and GT[:7] not in first
    assert man.bytes_total == sum(f.stat().st_size for f in (tmp_path / "d1").iterdir())
    materialize_dump(collect_candidates(repo, c["c9"], redaction=spec), tmp_path / "d2", spec)
    assert _tree_digest(tmp_path / "d1") == _tree_digest(tmp_path / "d2")
    with pytest.raises(NonEmptyDir):
        materialize_dump(cs, tmp_path / "d1", spec)
