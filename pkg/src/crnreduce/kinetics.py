"""Mass-action rate evaluation and sub-stepped explicit Euler trajectories.

Trajectories are sampled every ``dt`` while the integrator takes
``substeps`` internal steps per sample, so the sampled data carries a
genuine discretization error relative to a single Euler step of size ``dt``.
Stiffness is the caller's problem: keep ``dt / substeps`` well below the
fastest time scale.  Divergence is detected and reported, not prevented.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mechanism import Mechanism, mechanism_digest

__all__ = [
    "Condition",
    "NoiseSpec",
    "Trajectory",
    "SimulationError",
    "reaction_rates",
    "simulate_trajectory",
    "generate_dataset",
    "recompute_rates",
    "write_trajectory",
    "read_trajectory",
]

log = logging.getLogger(__name__)

DEFAULT_OVERFLOW = 1e12


class SimulationError(RuntimeError):
    def __init__(self, message, t=None, condition_id=None):
        self.t = t
        self.condition_id = condition_id
        prefix = "" if condition_id is None else f"condition {condition_id}: "
        super().__init__(prefix + message)


@dataclass(frozen=True, eq=False)
class Condition:
    """Initial state plus a per-reaction rate multiplier.

    The multipliers stand in for temperature, pressure and mixture effects;
    they let the set of influential reactions change across conditions.
    """

    id: int
    initial: np.ndarray
    rate_scale: np.ndarray | None = None

    def __post_init__(self):
        x0 = np.asarray(self.initial, dtype=float)
        if not np.all(np.isfinite(x0)) or np.any(x0 < 0):
            raise ValueError(f"condition {self.id}: initial concentrations must be finite and >= 0")
        object.__setattr__(self, "initial", x0)
        if self.rate_scale is not None:
            sc = np.asarray(self.rate_scale, dtype=float)
            if not np.all(np.isfinite(sc)) or np.any(sc <= 0):
                raise ValueError(f"condition {self.id}: rate_scale entries must be > 0")
            object.__setattr__(self, "rate_scale", sc)

    def scale(self, n_reactions: int) -> np.ndarray:
        if self.rate_scale is None:
            return np.ones(n_reactions)
        if self.rate_scale.shape != (n_reactions,):
            raise ValueError(f"condition {self.id}: rate_scale has {self.rate_scale.size} entries, expected {n_reactions}")
        return self.rate_scale

    def restrict(self, support) -> "Condition":
        """Condition for a mechanism reduced with the same ``support``."""
        if self.rate_scale is None:
            return self
        return Condition(self.id, self.initial, self.rate_scale[sorted(support)])


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(eq=False)
class Trajectory:
    """States ``X_1 .. X_{T+1}`` (rows of ``states``) and rates ``r_1 .. r_T``.

    Time indices are 1-based in the public API: ``state(t)`` and ``rate(t)``.
    """

    condition_id: int
    dt: float
    states: np.ndarray
    rates: np.ndarray
    substeps: int = 1
    sigma: float = 0.0
    seed: int = 0
    clip_count: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        if self.states.ndim != 2 or self.rates.ndim != 2:
            raise ValueError("states and rates must be 2-D")
        if self.states.shape[0] != self.rates.shape[0] + 1:
            raise ValueError("need exactly one more state than rate vectors")

    @property
    def T(self) -> int:
        return self.rates.shape[0]

    def _check(self, t):
        if not 1 <= t <= self.T:
            raise IndexError(f"time index {t} outside 1..{self.T}")

    def state(self, t: int) -> np.ndarray:
        if not 1 <= t <= self.T + 1:
            raise IndexError(f"time index {t} outside 1..{self.T + 1}")
        return self.states[t - 1]

    def rate(self, t: int) -> np.ndarray:
        self._check(t)
        return self.rates[t - 1]

    def increment(self, t: int) -> np.ndarray:
        self._check(t)
        return self.states[t] - self.states[t - 1]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.condition_id == other.condition_id
            and self.dt == other.dt
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.rates, other.rates)
        )


class _RateLaw:
    def __init__(self, mech: Mechanism, cond: Condition | None):
        self.nu = mech.reactant_orders.astype(float)
        self.k = mech.rate_constants * (np.ones(mech.n_reactions) if cond is None else cond.scale(mech.n_reactions))
        # only the species that appear as reactants matter for each row
        self._mask = self.nu > 0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        powers = np.where(self._mask, X[None, :] ** self.nu, 1.0)
        return self.k * powers.prod(axis=1)


def reaction_rates(mech: Mechanism, X, cond: Condition | None = None) -> np.ndarray:
    """Mass-action rates ``k_i * scale_i * prod_s X_s ** nu_si``."""
    X = np.asarray(X, dtype=float)
    if X.shape != (mech.n_species,):
        raise ValueError(f"state has shape {X.shape}, expected ({mech.n_species},)")
    if not np.all(np.isfinite(X)):
        raise ValueError("state contains non-finite values")
    if np.any(X < 0):
        raise ValueError("state contains negative concentrations")
    return _RateLaw(mech, cond)(X)


def simulate_trajectory(
    mech: Mechanism,
    cond: Condition,
    dt: float,
    T: int,
    substeps: int = 1,
    noise: NoiseSpec | None = None,
    overflow: float = DEFAULT_OVERFLOW,
) -> Trajectory:
    """Integrate with explicit Euler at ``dt / substeps`` and sample every ``dt``.

    Negative intermediate concentrations are clipped to zero and counted in
    ``clip_count``.  With ``noise.sigma > 0`` each sampled state receives
    i.i.d. Gaussian noise (then clipping) and integration continues from the
    noisy state, so stored rates are always the rates of the stored states.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if T < 1 or substeps < 1:
        raise ValueError("T and substeps must be >= 1")
    noise = noise or NoiseSpec()
    x0 = cond.initial
    if x0.shape != (mech.n_species,):
        raise ValueError(f"condition {cond.id}: initial state has {x0.size} entries, expected {mech.n_species}")
    law = _RateLaw(mech, cond)
    M = mech.M.astype(float)
    h = dt / substeps
    rng = np.random.default_rng(noise.seed ^ cond.id) if noise.sigma > 0 else None

    states = np.empty((T + 1, mech.n_species))
    rates = np.empty((T, mech.n_reactions))
    states[0] = x0
    X = x0.copy()
    clips = 0
    for t in range(T):
        rates[t] = law(X)
        for sub in range(substeps):
            r = rates[t] if sub == 0 else law(X)
            X = X + M @ (r * h)
            neg = X < 0
            if neg.any():
                clips += int(neg.sum())
                X[neg] = 0.0
            if not np.all(np.isfinite(X)) or np.abs(X).max(initial=0.0) > overflow:
                raise SimulationError(f"state diverged at t={t + 2}", t=t + 2, condition_id=cond.id)
        if rng is not None:
            X = X + rng.normal(0.0, noise.sigma, size=X.shape)
            neg = X < 0
            if neg.any():
                clips += int(neg.sum())
                X[neg] = 0.0
        states[t + 1] = X
    if clips:
        log.info("condition %d: %d negative concentrations clipped", cond.id, clips)
    return Trajectory(cond.id, dt, states, rates, substeps, noise.sigma, noise.seed, clips)


def _simulate_one(args):
    return simulate_trajectory(*args)


def generate_dataset(
    mech: Mechanism,
    conds,
    dt: float,
    T: int,
    substeps: int = 1,
    noise: NoiseSpec | None = None,
    workers: int = 1,
    overflow: float = DEFAULT_OVERFLOW,
) -> list[Trajectory]:
    """One trajectory per condition, in the order given.

    Each condition draws from its own generator seeded with
    ``noise.seed ^ condition.id``, so results do not depend on order or on
    the number of workers.
    """
    conds = list(conds)
    if not conds:
        raise ValueError("no conditions given")
    jobs = [(mech, c, dt, T, substeps, noise, overflow) for c in conds]
    if workers <= 1 or len(conds) == 1:
        return [_simulate_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_simulate_one, jobs))


def recompute_rates(mech: Mechanism, traj: Trajectory, cond: Condition | None = None) -> Trajectory:
    """Same states, rates re-evaluated under ``mech`` (e.g. the full mechanism
    for data generated by a reduced one)."""
    law = _RateLaw(mech, cond)
    rates = np.array([law(x) for x in traj.states[:-1]])
    return Trajectory(traj.condition_id, traj.dt, traj.states.copy(), rates.reshape(traj.T, mech.n_reactions),
                      traj.substeps, traj.sigma, traj.seed, traj.clip_count, dict(traj.meta))


# -- CSV + sidecar -----------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory(traj: Trajectory, path, mech: Mechanism, extra: dict | None = None) -> Path:
    """Write ``<path>`` (CSV) and ``<path>.meta`` (key=value sidecar)."""
    path = Path(path)
    names = mech.species_names
    header = ["t"] + [f"X_{n}" for n in names] + [f"r_{i + 1}" for i in range(mech.n_reactions)]
    lines = [",".join(header)]
    empty = [""] * mech.n_reactions
    for t in range(traj.T + 1):
        rate = [_fmt(v) for v in traj.rates[t]] if t < traj.T else empty
        lines.append(",".join([str(t + 1)] + [_fmt(v) for v in traj.states[t]] + rate))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "condition_id": traj.condition_id,
        "dt": _fmt(traj.dt),
        "T": traj.T,
        "substeps": traj.substeps,
        "sigma": _fmt(traj.sigma),
        "seed": traj.seed,
        "mechanism_sha256": mechanism_digest(mech),
        "clip_count": traj.clip_count,
    }
    meta.update(extra or {})
    sidecar = path.with_name(path.name + ".meta")
    sidecar.write_text("".join(f"{k}={v}\n" for k, v in meta.items()), encoding="utf-8")
    return path


def read_key_values(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    meta = read_key_values(path.with_name(path.name + ".meta"))
    rows = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
    header = rows[0].split(",")
    ns = sum(1 for h in header if h.startswith("X_"))
    states, rates = [], []
    for row in rows[1:]:
        cells = row.split(",")
        states.append([float(c) for c in cells[1:1 + ns]])
        if cells[1 + ns] != "":
            rates.append([float(c) for c in cells[1 + ns:]])
    nr = len(header) - 1 - ns
    return Trajectory(
        int(meta["condition_id"]),
        float(meta["dt"]),
        np.array(states),
        np.array(rates).reshape(len(rates), nr),
        int(meta.get("substeps", 1)),
        float(meta.get("sigma", 0.0)),
        int(meta.get("seed", 0)),
        int(meta.get("clip_count", 0)),
        meta,
    )
