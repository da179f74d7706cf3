import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crnreduce.benchmarks import h2o2_conditions, h2o2_mechanism
from crnreduce.kinetics import (
    Condition,
    NoiseSpec,
    SimulationError,
    Trajectory,
    generate_dataset,
    reaction_rates,
    read_trajectory,
    recompute_rates,
    simulate_trajectory,
    write_trajectory,
)
from crnreduce.mechanism import mechanism_digest, parse_mechanism

AB = parse_mechanism("species: A B\nA -> B ; k=1.0\n")


def test_rate_examples():
    mech = parse_mechanism("species: A B\nA -> B ; k=2\n2 A -> B ; k=1\nA + B -> A ; k=5\n")
    r = reaction_rates(mech, np.array([3.0, 0.0]))
    assert r[0] == 6.0
    assert r[1] == 9.0
    assert r[2] == 0.0  # B absent
    r = reaction_rates(mech, np.array([2.0, 1.0]))
    assert r[1] == 4.0


def test_rate_scale_and_validation():
    mech = parse_mechanism("species: A B\nA -> B ; k=2\n")
    cond = Condition(0, [1.0, 0.0], [3.0])
    assert reaction_rates(mech, np.array([1.0, 0.0]), cond)[0] == 6.0
    with pytest.raises(ValueError):
        reaction_rates(mech, np.array([np.nan, 0.0]))
    with pytest.raises(ValueError):
        reaction_rates(mech, np.array([-1.0, 0.0]))
    with pytest.raises(ValueError):
        Condition(0, [1.0, -0.1])
    with pytest.raises(ValueError):
        Condition(0, [1.0, 0.0], [0.0])


def test_single_euler_step():
    traj = simulate_trajectory(AB, Condition(0, [1.0, 0.0]), dt=0.1, T=1)
    np.testing.assert_allclose(traj.state(2), [0.9, 0.1], rtol=0, atol=1e-15)
    assert traj.rate(1).tolist() == [1.0]


def test_substeps_approach_exponential():
    traj = simulate_trajectory(AB, Condition(0, [1.0, 0.0]), dt=0.1, T=1, substeps=10)
    x = traj.state(2)
    assert abs(x[0] - math.exp(-0.1)) < 1e-3
    assert abs(x[1] - (1 - math.exp(-0.1))) < 1e-3


def test_substep_refinement_trend():
    mech = h2o2_mechanism()
    cond = h2o2_conditions(mech)[20]
    ref = simulate_trajectory(mech, cond, 1e-3, 50, substeps=40).states
    errs = [np.abs(simulate_trajectory(mech, cond, 1e-3, 50, substeps=s).states - ref).max() for s in (1, 2, 4)]
    assert errs[0] > errs[1] > errs[2]


def test_euler_consistency_noiseless():
    mech = h2o2_mechanism()
    traj = simulate_trajectory(mech, h2o2_conditions(mech)[7], 1e-3, 100)
    M = mech.M.astype(float)
    for t in range(1, traj.T + 1):
        res = traj.increment(t) - M @ traj.rate(t) * traj.dt
        assert np.abs(res).max() <= 1e-15


def test_stored_rates_match_stored_states():
    mech = h2o2_mechanism()
    cond = h2o2_conditions(mech)[3]
    traj = simulate_trajectory(mech, cond, 1e-3, 40, substeps=5, noise=NoiseSpec(1e-4, 7))
    again = recompute_rates(mech, traj, cond)
    np.testing.assert_array_equal(again.rates, traj.rates)
    assert np.all(traj.states >= 0) and np.all(traj.rates >= 0)


def test_clipping_counted():
    mech = parse_mechanism("species: A B\nA -> B ; k=30\n")
    traj = simulate_trajectory(mech, Condition(0, [1.0, 0.0]), dt=0.1, T=3)
    assert traj.clip_count > 0
    assert np.all(traj.states >= 0)


def test_divergence_reports_step():
    mech = parse_mechanism("species: A\n2 A -> 3 A ; k=1\n")
    with pytest.raises(SimulationError) as info:
        simulate_trajectory(mech, Condition(5, [10.0]), dt=0.5, T=50)
    assert info.value.condition_id == 5
    assert info.value.t is not None and info.value.t >= 2
    assert "condition 5" in str(info.value)


def test_argument_checks():
    with pytest.raises(ValueError):
        simulate_trajectory(AB, Condition(0, [1.0, 0.0]), dt=0.0, T=1)
    with pytest.raises(ValueError):
        simulate_trajectory(AB, Condition(0, [1.0, 0.0]), dt=0.1, T=0)
    with pytest.raises(ValueError):
        simulate_trajectory(AB, Condition(0, [1.0, 0.0]), dt=0.1, T=1, substeps=0)
    with pytest.raises(ValueError):
        simulate_trajectory(AB, Condition(0, [1.0]), dt=0.1, T=1)
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)
    with pytest.raises(ValueError):
        generate_dataset(AB, [], 0.1, 1)


def test_trajectory_indexing():
    traj = simulate_trajectory(AB, Condition(0, [1.0, 0.0]), dt=0.1, T=3)
    assert traj.T == 3 and traj.states.shape == (4, 2)
    with pytest.raises(IndexError):
        traj.rate(0)
    with pytest.raises(IndexError):
        traj.rate(4)
    traj.state(4)
    with pytest.raises(IndexError):
        traj.state(5)


def test_dataset_order_independent_and_deterministic():
    mech = h2o2_mechanism()
    conds = h2o2_conditions(mech)[:4]
    noise = NoiseSpec(1e-4, 99)
    a = generate_dataset(mech, conds, 1e-3, 30, noise=noise)
    b = generate_dataset(mech, conds[::-1], 1e-3, 30, noise=noise)
    c = generate_dataset(mech, conds, 1e-3, 30, noise=noise, workers=2)
    by_id = {t.condition_id: t for t in b}
    for t, u in zip(a, c):
        assert t == by_id[t.condition_id]
        assert t == u


def test_noise_seed_changes_output():
    cond = Condition(0, [1.0, 0.0])
    a = simulate_trajectory(AB, cond, 0.1, 5, noise=NoiseSpec(0.01, 1))
    b = simulate_trajectory(AB, cond, 0.1, 5, noise=NoiseSpec(0.01, 2))
    assert a != b
    assert a == simulate_trajectory(AB, cond, 0.1, 5, noise=NoiseSpec(0.01, 1))


def test_desk_dataset_runtime():
    mech = h2o2_mechanism()
    conds = h2o2_conditions(mech)
    start = time.perf_counter()
    trajs = generate_dataset(mech, conds, 1e-3, 200)
    assert len(trajs) == 48
    assert time.perf_counter() - start < 10.0


def test_csv_round_trip(tmp_path):
    mech = h2o2_mechanism()
    traj = simulate_trajectory(mech, h2o2_conditions(mech)[1], 1e-3, 12, substeps=3, noise=NoiseSpec(1e-5, 3))
    path = write_trajectory(traj, tmp_path / "c1.csv", mech, {"note": "x"})
    lines = path.read_text().splitlines()
    assert lines[0] == "t," + ",".join(f"X_{n}" for n in mech.species_names) + "," + ",".join(
        f"r_{i}" for i in range(1, 59))
    assert len(lines) == traj.T + 2
    assert lines[-1].endswith("," * 58)
    back = read_trajectory(path)
    assert back == traj
    assert back.substeps == 3 and back.sigma == 1e-5 and back.seed == 3
    assert back.meta["mechanism_sha256"] == mechanism_digest(mech)
    assert back.meta["note"] == "x"


@given(
    k=st.floats(0.01, 5.0),
    a0=st.floats(0.0, 2.0),
    b0=st.floats(0.0, 2.0),
    dt=st.floats(1e-3, 0.05),
)
def test_two_species_mass_conserved(k, a0, b0, dt):
    mech = parse_mechanism(f"species: A B\nA -> B ; k={k!r}\nB -> A ; k={k / 2!r}\n")
    traj = simulate_trajectory(mech, Condition(0, [a0, b0]), dt, 20, substeps=2)
    totals = traj.states.sum(axis=1)
    np.testing.assert_allclose(totals, a0 + b0, rtol=1e-12, atol=1e-12)


def test_trajectory_shape_check():
    with pytest.raises(ValueError):
        Trajectory(0, 0.1, np.zeros((3, 2)), np.zeros((3, 1)))
