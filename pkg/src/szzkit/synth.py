"""Build small synthetic git repositories with fully controlled history.

Used by the test suite and the demo scripts. Commits are streamed through
``git fast-import`` so timestamps, authors and ordering are exact and a
thirty-commit repository builds in a single subprocess call.

    b = RepoBuilder(tmp_path / "repo")
    c1 = b.commit({"main.c": "int x;\\n"}, "add main", ts=1_000)
    c2 = b.commit({"main.c": "int y;\\n"}, "change main", ts=2_000)
    b.build()
    b.sha(c2)  # full 40-hex hash
"""

from __future__ import annotations

import json
import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

_DELETE = None


def _quote(path: str) -> str:
    return json.dumps(path)


def _data(payload: bytes) -> bytes:
    return b"data %d\n" % len(payload) + payload + b"\n"


@dataclass
class _Commit:
    mark: int
    branch: str
    files: dict[str, bytes | None]
    renames: dict[str, str]
    message: str
    ts: int
    author_ts: int
    parent: int | None
    merges: list[int]


@dataclass
class RepoBuilder:
    path: Path
    author: str = "Synth Dev <synth@example.org>"
    _commits: list[_Commit] = field(default_factory=list)
    _tips: dict[str, int] = field(default_factory=dict)
    _shas: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.path = Path(self.path).resolve()

    def commit(
        self,
        files: dict[str, str | bytes | None] | None = None,
        message: str = "change",
        *,
        ts: int,
        author_ts: int | None = None,
        branch: str = "main",
        parent: int | None = None,
        merges: list[int] | None = None,
        renames: dict[str, str] | None = None,
    ) -> int:
        """Queue a commit and return its mark.

        ``files`` maps path to full new content; ``None`` deletes the path.
        ``renames`` maps old path to new path and is applied before ``files``.
        ``parent`` defaults to the current tip of ``branch``.
        """
        mark = len(self._commits) + 1
        encoded: dict[str, bytes | None] = {}
        for p, content in (files or {}).items():
            encoded[p] = content.encode() if isinstance(content, str) else content
        if parent is None:
            parent = self._tips.get(branch)
        self._commits.append(_Commit(
            mark=mark, branch=branch, files=encoded, renames=dict(renames or {}),
            message=message, ts=ts, author_ts=ts if author_ts is None else author_ts,
            parent=parent, merges=list(merges or []),
        ))
        self._tips[branch] = mark
        return mark

    def _stream(self) -> bytes:
        name = self.author.encode()
        out = bytearray()
        for c in self._commits:
            out += b"commit refs/heads/%s\n" % c.branch.encode()
            out += b"mark :%d\n" % c.mark
            out += b"author %s %d +0000\n" % (name, c.author_ts)
            out += b"committer %s %d +0000\n" % (name, c.ts)
            msg = c.message if c.message.endswith("\n") else c.message + "\n"
            out += _data(msg.encode())
            if c.parent is not None:
                out += b"from :%d\n" % c.parent
            for m in c.merges:
                out += b"merge :%d\n" % m
            for old, new in c.renames.items():
                out += b"R %s %s\n" % (_quote(old).encode(), _quote(new).encode())
            for p, content in c.files.items():
                if content is _DELETE:
                    out += b"D %s\n" % _quote(p).encode()
                else:
                    out += b"M 100644 inline %s\n" % _quote(p).encode()
                    out += _data(content)
            out += b"\n"
        out += b"done\n"
        return bytes(out)

    def build(self) -> "RepoBuilder":
        self.path.mkdir(parents=True, exist_ok=True)
        run = lambda *a, **kw: subprocess.run(  # noqa: E731
            ["git", *a], cwd=self.path, check=True, capture_output=True, **kw)
        run("init", "-q", "-b", "main")
        marks = self.path / ".git" / "synth-marks"
        run("fast-import", "--quiet", "--done", f"--export-marks={marks}",
            input=self._stream())
        for line in marks.read_text().splitlines():
            mark, sha = line.split()
            self._shas[int(mark[1:])] = sha
        marks.unlink()
        if self._commits:
            run("checkout", "-q", "-f", "main")
        return self

    def sha(self, mark: int) -> str:
        return self._shas[mark]


# -- a small driver history with three documented bug/fix pairs ---------------

PHY_V1 = """\
#include "util.h"

static int phy_reset(struct phy *p)
{
\tint ret;

\tret = phy_write(p, RESET, 1);
\tmsleep(10);
\treturn ret;
}

static int phy_read_block(struct phy *p, struct blk *blk)
{
\tint words = blk->size / 4;

\treturn phy_copy(p, blk->data, words);
}
"""

SMC_V1 = """\
#include "smc.h"

static bool smc_ib_is_sg_need_sync(struct smc_link *lnk, struct buf *b)
{
\tbool need = b->synced;

\treturn need;
}
"""


@dataclass
class DriverStory:
    """A small driver repository with three documented bug/fix pairs."""

    path: Path
    c: dict[str, str]  # name -> sha

    @property
    def repo(self):
        from .gitio import Repo
        return Repo(self.path)

    @property
    def fixes(self) -> list[tuple[str, str]]:
        """(fix, bug-introducing commit) pairs in history order."""
        return [(self.c["fixA"], self.c["c3"]), (self.c["fixB"], self.c["c4"]),
                (self.c["fixC"], self.c["c2"])]


def build_driver_story(path: str | Path) -> DriverStory:
    b = RepoBuilder(path)
    phy = PHY_V1
    m = {}
    m["c1"] = b.commit({"drivers/net/phy.c": phy, "include/util.h": "#define RESET 1\n"},
                       "net: phy: add basic driver", ts=1_000)
    m["c2"] = b.commit({"net/smc/smc.c": SMC_V1}, "net/smc: add sync helper", ts=2_000)
    phy = phy.replace("msleep(10);", "fsleep(10);")
    m["c3"] = b.commit({"drivers/net/phy.c": phy}, "net: phy: use fsleep for reset delay\n\n"
                       "fsleep picks the best sleeping primitive for the duration.", ts=3_000)
    phy = phy.replace("blk->size / 4;", "blk->size >> 2;")
    m["c4"] = b.commit({"drivers/net/phy.c": phy}, "net: phy: compute block words with a shift", ts=4_000)
    smc = SMC_V1.replace("bool need = b->synced;", "bool need = b->synced && b->mapped;")
    m["c5"] = b.commit({"net/smc/smc.c": smc}, "net/smc: only sync mapped buffers", ts=5_000)
    m["c6"] = b.commit({"include/util.h": "#define RESET 1\n#define TIMEOUT 100\n"},
                       "util: add timeout constant", ts=6_000)
    b.build()
    shas = {k: b.sha(v) for k, v in m.items()}
    # Fix commits need the hashes of earlier commits in their messages, so
    # they are appended afterwards with plain git commits.
    b2 = GitAppender(path)
    phy_a = phy.replace("fsleep(10);", "usleep_range(10, 20);")
    shas["fixA"] = b2.commit({"drivers/net/phy.c": phy_a},
                             "net: phy: fix reset delay in atomic context\n\n"
                             "phy_reset() runs in atomic context but fsleep(10) may sleep.\n"
                             "Use usleep_range instead.\n\n"
                             f"Fixes: {shas['c3'][:12]} (\"net: phy: use fsleep for reset delay\")\n",
                             ts=7_000)
    phy_b = phy_a.replace("blk->size >> 2;", "(blk->size + 3) >> 2;")
    shas["fixB"] = b2.commit({"drivers/net/phy.c": phy_b},
                             "net: phy: round up block word count\n\n"
                             f"The shift added in commit {shas['c4']} drops trailing bytes.\n\n"
                             f"Fixes: {shas['c4']}\n", ts=8_000)
    smc_c = smc.replace("{\n\tbool need", "{\n\tif (!lnk)\n\t\treturn false;\n\tbool need")
    shas["fixC"] = b2.commit({"net/smc/smc.c": smc_c},
                             "net/smc: handle a missing link in smc_ib_is_sg_need_sync\n\n"
                             f"Fixes: {shas['c2'][:12]}\n", ts=9_000)
    return DriverStory(Path(path).resolve(), shas)


class GitAppender:
    """Adds commits on top of an existing checkout with plain git commands."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._run = lambda *a, **kw: subprocess.run(["git", *a], cwd=self.path, check=True,
                                                    capture_output=True, text=True, **kw)

    def commit(self, files: dict[str, str], message: str, *, ts: int) -> str:
        for p, content in files.items():
            (self.path / p).write_text(content)
            self._run("add", p)
        env = {"GIT_AUTHOR_DATE": f"@{ts} +0000", "GIT_COMMITTER_DATE": f"@{ts} +0000",
               "GIT_AUTHOR_NAME": "Synth Dev", "GIT_AUTHOR_EMAIL": "synth@example.org",
               "GIT_COMMITTER_NAME": "Synth Dev", "GIT_COMMITTER_EMAIL": "synth@example.org",
               }
        env = {**os.environ, **env}
        self._run("commit", "-q", "-m", message, env=env)
        return self._run("rev-parse", "HEAD").stdout.strip()
