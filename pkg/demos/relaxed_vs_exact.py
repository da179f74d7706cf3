"""Relaxation lower bound, rounded upper bound and the exact optimum.

On small random steps the relaxed objective never exceeds the exact
cardinality, and threshold rounding never beats it.
"""

import numpy as np

from crnreduce.benchmarks import random_step_problem
from crnreduce.exact import solve_step_exact
from crnreduce.relaxed import round_threshold, solve_step_relaxed
from crnreduce.selection import InfeasibleStepError

rng = np.random.default_rng(7)
print(f"{'n':>3} {'m':>3} {'eps':>5} {'relaxed':>8} {'exact':>6} {'rounded':>8}")
for _ in range(15):
    p = random_step_problem(rng)
    ex = solve_step_exact(p)
    if not ex.optimal:
        print(f"{p.A.shape[0]:3d} {p.A.shape[1]:3d} {p.epsilon:5.2f} {'-':>8} {ex.status:>6}")
        continue
    rel = solve_step_relaxed(p)
    try:
        rounded = round_threshold(rel.w.w, p).cardinality
    except InfeasibleStepError:
        rounded = None
    assert rel.objective <= ex.cardinality + 1e-9
    assert rounded is None or rounded >= ex.cardinality
    print(f"{p.A.shape[0]:3d} {p.A.shape[1]:3d} {p.epsilon:5.2f} {rel.objective:8.3f} "
          f"{ex.cardinality:6d} {rounded!s:>8}")
