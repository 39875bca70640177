"""Independent reference implementations the library is checked against.

None of these import the code under test; they recompute each result the
slow, obvious way.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from szzkit.synth import RepoBuilder


# -- last-writer replay --------------------------------------------------------

@dataclass
class ReplayRepo:
    builder: RepoBuilder
    marks: list[int]
    creator: dict[str, int] = field(default_factory=dict)  # line token -> mark that wrote it
    snapshots: list[dict[str, list[str]]] = field(default_factory=list)  # tree after each commit

    @property
    def fix_mark(self) -> int:
        return self.marks[-1]

    def oracle_candidates(self) -> set[str]:
        """Writers of every line present before the fix but gone after it, in touched files."""
        before, after = self.snapshots[-2], self.snapshots[-1]
        gone = set()
        for path, lines in after.items():
            if before.get(path) != lines:
                gone |= set(before.get(path, [])) - set(lines)
        return {self.builder.sha(self.creator[t]) for t in gone}


def random_replay_repo(path: Path, seed: int, max_commits: int = 30, max_files: int = 3) -> ReplayRepo:
    """Random linear history in which every line ever written is a unique token.

    Unique lines make "last writer" unambiguous: a token is written once and
    only ever survives or disappears, so the commit that wrote it is the
    one any correct blame must report.
    """
    rng = random.Random(seed)
    b = RepoBuilder(path)
    counter = itertools.count()
    tree: dict[str, list[str]] = {}
    rr = ReplayRepo(b, [])
    n_commits = rng.randint(3, max_commits)
    names = [f"f{i}.c" for i in range(max_files)]
    for i in range(n_commits):
        mark_next = len(rr.marks) + 1
        is_fix = i == n_commits - 1
        touched: dict[str, list[str]] = {}

        def fresh() -> str:
            tok = f"tok_{seed}_{next(counter)}"
            rr.creator[tok] = mark_next
            return tok

        if not tree or (not is_fix and len(tree) < max_files and rng.random() < 0.2):
            name = next(n for n in names if n not in tree)
            touched[name] = [fresh() for _ in range(rng.randint(1, 8))]
        else:
            for name in rng.sample(sorted(tree), rng.randint(1, len(tree))):
                lines = list(tree[name])
                for _ in range(rng.randint(1, 3)):
                    op = rng.choice(["replace", "insert", "delete"] if lines else ["insert"])
                    if op == "insert":
                        lines.insert(rng.randint(0, len(lines)), fresh())
                    else:
                        k = rng.randrange(len(lines))
                        if op == "replace":
                            lines[k] = fresh()
                        elif len(lines) > 1:
                            del lines[k]
                touched[name] = lines
        tree = {**tree, **touched}
        rr.marks.append(b.commit({p: "\n".join(ls) + "\n" for p, ls in touched.items()},
                                 f"commit {i}", ts=10_000 + 100 * i))
        rr.snapshots.append({p: list(ls) for p, ls in tree.items()})
    b.build()
    return rr


# -- signed-rank enumeration ---------------------------------------------------

def average_ranks(values: list[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def brute_force_wilcoxon(diffs: list[float]) -> tuple[float, float]:
    """(W+, two-sided p) by enumerating all 2^n sign flips of the nonzero differences."""
    d = [x for x in diffs if x != 0]
    ranks = average_ranks([abs(x) for x in d])
    w = sum(r for r, x in zip(ranks, d) if x > 0)
    le = ge = 0
    total = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        s = sum(r for r, on in zip(ranks, signs) if on)
        total += 1
        le += s <= w + 1e-9
        ge += s >= w - 1e-9
    return w, min(1.0, 2 * min(le, ge) / total)


# -- order statistics ----------------------------------------------------------

def sorted_stats(lengths: list[int]) -> dict[str, float]:
    xs = sorted(lengths)
    n = len(xs)
    median = xs[n // 2] if n % 2 else (xs[n // 2 - 1] + xs[n // 2]) / 2
    mean = sum(xs) / n
    std = math.sqrt(sum((x - mean) ** 2 for x in xs) / (n - 1)) if n > 1 else 0.0
    return {"median_len": median, "mean_len": mean, "std_len": std, "min_len": xs[0], "max_len": xs[-1]}


# -- binary search bound -------------------------------------------------------

def probe_bound(h: int, t: float) -> int:
    if t == math.inf or h <= t:
        return 0
    return math.ceil(math.log2(h / t)) + 1
