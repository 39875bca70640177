"""Macro-averaged scores and the paired signed-rank test
========================================================

Precision and recall are averaged across fixes first; F1 is the harmonic
mean of those two averages, not the mean of per-fix F1 values.
"""

from szzkit.evalkit import aggregate, harmonic_f1, rank_biserial, score_fix, wilcoxon_signed_rank

A, B, C = "a" * 40, "b" * 40, "c" * 40

scores = [score_fix({A}, {A, B}), score_fix({A, B}, {A})]
rep = aggregate(scores)
print(f"macro P/R/F1: {rep.display()}")
print(f"mean of per-fix F1: {sum(s.f1 for s in scores) / len(scores):.2f}")

print(f"F1 from a printed pair 0.65/0.64: {harmonic_f1(0.65, 0.64):.4f}")

# Per-fix F1 for two tools over eight fixes.
tool_a = [1.0, 1.0, 0.5, 1.0, 0.0, 1.0, 0.67, 1.0]
tool_b = [0.0, 1.0, 0.0, 0.5, 0.0, 0.0, 0.67, 0.5]
res = wilcoxon_signed_rank(tool_a, tool_b)
print(f"W={res.statistic_w} p={res.p_value:.4f} ({res.method}, n={res.n_effective}) "
      f"r={rank_biserial(tool_a, tool_b):.2f}")
