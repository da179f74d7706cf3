"""Tolerance sweep on the 58-reaction hydrogen/oxygen network.

Trains on 46 of the 48 sweep conditions, then checks the reduced networks
on the two held-out conditions.  Takes a few minutes on one core; pass a
worker count as the first argument to use more.
"""

import sys

from crnreduce.benchmarks import h2o2_conditions, h2o2_mechanism
from crnreduce.kinetics import generate_dataset
from crnreduce.pipeline import sweep_epsilon, validate_holdout

workers = int(sys.argv[1]) if len(sys.argv) > 1 else 1
mech = h2o2_mechanism()
trajs = generate_dataset(mech, h2o2_conditions(mech), dt=1e-3, T=200, workers=workers)
train, holdout = trajs[:46], trajs[46:]

sweep = sweep_epsilon(mech, train, [0.05, 0.1, 0.2], solver="relaxed", workers=workers)
print(f"{'epsilon':>8} {'union':>6} {'holdout ok':>11} {'max D/tau':>10}")
for eps, result in sorted(sweep.items()):
    report = validate_holdout(mech, holdout, result)
    print(f"{eps:8.2f} {result.size:6d} {report.satisfied_fraction:11.1%} {report.max_ratio:10.3f}")
