"""Built-in test networks and condition sweeps.

``h2o2`` is the desk-scale hydrogen/oxygen network (8 species, 58
reactions) with a 48-point sweep over temperature-, pressure- and
mixture-like knobs.  The remaining builders are small constructed cases with
known answers.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .kinetics import Condition
from .mechanism import Mechanism, parse_mechanism
from .selection import StepProblem, tolerance

__all__ = [
    "BUILTIN_MECHANISMS",
    "h2o2_text",
    "h2o2_mechanism",
    "h2o2_conditions",
    "planted_mechanism",
    "planted_conditions",
    "PLANTED_DOMINANT",
    "sign_consistent_mechanism",
    "canceling_pair_mechanism",
    "canceling_pair_conditions",
    "sign_consistent_conditions",
    "random_step_problem",
]

BUILTIN_MECHANISMS = {"h2o2_58": "h2o2_58.mech"}

# temperature-like levels, pressure-like factors, H2:O2 mixture ratios
SWEEP_THETA = (-0.6, -0.2, 0.2, 0.6)
SWEEP_PRESSURE = (0.5, 1.0, 2.0)
SWEEP_PHI = (0.5, 0.8, 1.25, 2.0)
# small H-atom seed so that the first sampled steps are not pure initiation
RADICAL_SEED = 0.01


def h2o2_text() -> str:
    return resources.files("crnreduce").joinpath("data").joinpath("h2o2_58.mech").read_text(encoding="utf-8")


def h2o2_mechanism() -> Mechanism:
    return parse_mechanism(h2o2_text())


def _activation(mech: Mechanism) -> np.ndarray:
    # Fixed per-reaction sensitivity to the temperature-like knob: slow
    # (reverse, initiation) channels respond more strongly than fast ones.
    k = mech.rate_constants
    return 0.5 + 1.5 * (np.log10(k.max()) - np.log10(k)) / np.ptp(np.log10(k))


def h2o2_conditions(mech: Mechanism | None = None, n: int = 48) -> list[Condition]:
    """Sweep of ``n`` conditions (at most 48) over theta x pressure x phi.

    Ordering is theta-major, so the last conditions belong to the hottest
    slice; the default hold-out (last two ids) interpolates in pressure and
    mixture within that slice.
    """
    mech = mech or h2o2_mechanism()
    if not 1 <= n <= 48:
        raise ValueError("the sweep has 48 points")
    act = _activation(mech)
    third = np.array([sum(r.reactants.values()) >= 3 for r in mech.reactions])
    h2, o2, h = mech.index("H2"), mech.index("O2"), mech.index("H")
    conds = []
    cid = 0
    for theta in SWEEP_THETA:
        for pressure in SWEEP_PRESSURE:
            for phi in SWEEP_PHI:
                scale = np.exp(act * theta) * np.where(third, pressure, 1.0)
                x0 = np.zeros(mech.n_species)
                x0[h2] = 2.0 * phi / (1.0 + phi)
                x0[o2] = 1.0 / (1.0 + phi)
                x0[h] = RADICAL_SEED
                conds.append(Condition(cid, x0, scale))
                cid += 1
    return conds[:n]


# -- planted-support network -------------------------------------------------

PLANTED_DOMINANT = tuple(range(8))

_PLANTED = """\
species: A B C D E F G H
# dominant: two four-member cycles
A -> B ; k=9.0
B -> C ; k=7.0
C -> D ; k=5.0
D -> A ; k=3.0
E -> F ; k=8.0
F -> G ; k=6.0
G -> H ; k=4.0
H -> E ; k=2.0
# weak cross links, 1000x slower
A -> E ; k=0.009
E -> A ; k=0.008
B -> F ; k=0.007
F -> B ; k=0.006
C -> G ; k=0.005
G -> C ; k=0.004
D -> H ; k=0.003
H -> D ; k=0.002
A + E -> B + F ; k=0.009
C + G -> D + H ; k=0.008
B + H -> C + E ; k=0.007
D + F -> A + G ; k=0.006
"""


def planted_mechanism() -> Mechanism:
    """8 species, 20 reactions; reactions 0-7 are 1000x faster than the rest."""
    return parse_mechanism(_PLANTED)


def planted_conditions() -> list[Condition]:
    x0 = np.zeros(8)
    x0[0] = 1.0
    x0[4] = 1.0
    y0 = np.zeros(8)
    y0[2] = 1.0
    y0[5] = 0.5
    return [Condition(0, x0), Condition(1, y0)]


def sign_consistent_mechanism() -> Mechanism:
    """Every species is only consumed or only produced, so every step's
    columns share one sign pattern and, on noiseless single-step data,
    enlarging a selection never increases the fitting error."""
    return parse_mechanism(
        "species: A B C D P Q\n"
        "A -> P ; k=2.0\n"
        "B -> P ; k=0.05\n"
        "A + B -> Q ; k=3.0\n"
        "C -> P + Q ; k=0.02\n"
        "D -> Q ; k=0.5\n"
        "A + C -> P ; k=0.01\n"
        "2 D -> Q ; k=0.1\n"
    )


def sign_consistent_conditions(n: int = 6, seed: int = 0) -> list[Condition]:
    rng = np.random.default_rng(seed)
    return [Condition(i, np.r_[rng.uniform(0.2, 2.0, 4), 0.0, 0.0]) for i in range(n)]


def canceling_pair_mechanism() -> Mechanism:
    """``A -> B`` and ``B -> A`` with equal rate constants."""
    return parse_mechanism("species: A B\nA -> B ; k=1.0\nB -> A ; k=1.0\n")


def canceling_pair_conditions() -> list[Condition]:
    """A start with no B, where the forward reaction alone fits the first
    few steps, and the equilibrium point, where the two rates are equal and
    the empty selection fits.  The union keeps only the forward reaction,
    which is far off at equilibrium (use ``dt=0.01, T=3``)."""
    return [Condition(0, [1.0, 0.0]), Condition(1, [0.5, 0.5])]


def random_step_problem(rng: np.random.Generator, max_species: int = 6, max_reactions: int = 12) -> StepProblem:
    """A small random selection instance shaped like real step data.

    Stoichiometric columns are sparse integers, rates are log-uniform over
    three decades, and ``b`` is the increment of a random sub-network plus
    noise.  Noise levels are drawn so that roughly a quarter of the
    instances are infeasible even with every reaction kept.
    """
    ns = int(rng.integers(2, max_species + 1))
    nr = int(rng.integers(4, max_reactions + 1))
    M = rng.integers(-2, 3, size=(ns, nr)) * (rng.random((ns, nr)) < 0.6)
    M[rng.integers(ns, size=nr), np.arange(nr)] = rng.choice([-1, 1], size=nr)
    r = 10.0 ** rng.uniform(-3.0, 0.0, size=nr)
    r[rng.random(nr) < 0.1] = 0.0
    dt = 10.0 ** rng.uniform(-3.0, -1.0)
    A = M * (r * dt)[None, :]
    active = rng.random(nr) < rng.uniform(0.3, 1.0)
    norm = float(np.linalg.norm(r) * dt)
    noise = rng.normal(size=ns)
    noise *= rng.choice([0.0, 0.01, 0.05, 0.2]) * norm / max(np.linalg.norm(noise), 1e-300)
    b = A @ np.ones(nr) * rng.uniform(0.9, 1.1) if rng.random() < 0.5 else A @ active
    b = b + noise
    eps = float(rng.choice([0.02, 0.05, 0.1, 0.2, 0.5]))
    return StepProblem(A, b, tolerance(eps, norm), norm=norm, epsilon=eps)
