"""Why the union bound is audited rather than assumed.

``A -> B`` and ``B -> A`` have equal rate constants.  Starting from pure A
the forward reaction alone fits each step; at equilibrium the two rates
cancel and the empty selection fits.  The union keeps only ``A -> B``,
which is far from the data at equilibrium, and the audit flags those steps.
"""

from crnreduce.benchmarks import canceling_pair_conditions, canceling_pair_mechanism
from crnreduce.kinetics import generate_dataset
from crnreduce.pipeline import audit_bound, reduce

mech = canceling_pair_mechanism()
trajs = generate_dataset(mech, canceling_pair_conditions(), dt=0.01, T=3)
result = reduce(mech, trajs, epsilon=0.1, solver="exact")
print("per-step supports:")
for (cid, t), s in sorted(result.per_step_supports.items()):
    print(f"  condition {cid} t={t}: {s}")
print("union:", result.union)

report = audit_bound(mech, trajs, result)
print(f"violations: {report.violation_count} of {len(report.rows)} steps, "
      f"max D/tau = {report.max_ratio:.2f}")
for row in report.violations:
    print(f"  condition {row.condition_id} t={row.t}: D={row.D:.3e} tau={row.tau:.3e}")
