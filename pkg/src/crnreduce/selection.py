"""Per-step reaction-selection instances.

For time step ``t`` of a trajectory the fitting error of a selection ``w`` is

    D(w) = || X[t+1] - X[t] - M (w * r[t]) dt ||_2 = || b - A w ||_2

with ``b = X[t+1] - X[t]`` and column ``i`` of ``A`` equal to
``M[:, i] * r[t, i] * dt``.  The budget is ``tau = epsilon * ||r[t]||_2 dt``
(``relative`` mode) or ``tau = epsilon / (||r[t]||_2 dt)`` (``paper-literal``
mode, kept for comparison; it is not dimensionless).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kinetics import Trajectory
from .mechanism import Mechanism

__all__ = [
    "TOLERANCE_MODES",
    "SelectionVector",
    "StepProblem",
    "DegenerateStepError",
    "InfeasibleStepError",
    "fitting_error",
    "normalization",
    "step_matrix",
    "tolerance",
    "assemble_step_problem",
    "forward_select",
    "write_step_problem",
    "read_step_problem",
]

log = logging.getLogger(__name__)

TOLERANCE_MODES = ("relative", "paper-literal")
ORIGINS = ("exact", "relaxed", "rounded-threshold", "rounded-randomized", "union", "greedy", "given")


class DegenerateStepError(ValueError):
    """A step whose tolerance collapses (zero total reaction rate)."""


class InfeasibleStepError(RuntimeError):
    """No admissible selection meets the step's error budget."""


@dataclass(frozen=True, eq=False)
class SelectionVector:
    w: np.ndarray
    kind: str = "binary"
    origin: str = "given"

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 1:
            raise ValueError("selection vector must be 1-D")
        if np.any(w < 0) or np.any(w > 1) or not np.all(np.isfinite(w)):
            raise ValueError("selection weights must lie in [0, 1]")
        if self.kind not in ("binary", "fractional"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == "binary" and not np.all((w == 0) | (w == 1)):
            raise ValueError("binary selection vector has entries other than 0 and 1")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_support(cls, support, n: int, origin: str = "given") -> "SelectionVector":
        w = np.zeros(n)
        w[list(support)] = 1.0
        return cls(w, "binary", origin)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.w > 0))

    @property
    def cardinality(self) -> int:
        return len(self.support)

    def __len__(self):
        return self.w.size

    def __eq__(self, other):
        if not isinstance(other, SelectionVector):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.w, other.w)

    def __repr__(self):
        if self.kind == "binary":
            return f"SelectionVector(support={list(self.support)}, n={self.w.size}, origin={self.origin!r})"
        return f"SelectionVector(w={self.w!r}, origin={self.origin!r})"


@dataclass(frozen=True, eq=False)
class StepProblem:
    """``min sum(w)  s.t.  ||b - A w||_2 <= tau``, one per (condition, t).

    ``degenerate`` marks steps with zero total rate where ``b != 0`` (relative
    mode) or any zero-rate step (paper-literal mode); solvers refuse them.
    """

    A: np.ndarray
    b: np.ndarray
    tau: float
    t: int = 0
    condition_id: int = 0
    norm: float = float("nan")
    epsilon: float = float("nan")
    mode: str = "relative"
    degenerate: bool = False

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.ndim != 2 or b.shape != (A.shape[0],):
            raise ValueError(f"incompatible shapes A{A.shape}, b{b.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("A and b must be finite")
        if not self.tau >= 0:
            raise ValueError("tau must be >= 0")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n_reactions(self) -> int:
        return self.A.shape[1]

    @property
    def key(self) -> tuple[int, int]:
        return (self.condition_id, self.t)

    def residual(self, w) -> float:
        if isinstance(w, SelectionVector):
            w = w.w
        return float(np.linalg.norm(self.b - self.A @ np.asarray(w, dtype=float)))

    def is_feasible(self, w, feas_tol: float = 1e-9) -> bool:
        return self.residual(w) <= self.tau + feas_tol

    @property
    def full_feasible(self) -> bool:
        return self.is_feasible(np.ones(self.n_reactions))

    @property
    def zero_columns(self) -> np.ndarray:
        return ~np.any(self.A != 0, axis=0)

    def require_valid(self):
        if self.degenerate:
            raise DegenerateStepError(f"step (condition {self.condition_id}, t={self.t}) is degenerate")


def _weights(w, n: int) -> np.ndarray:
    if isinstance(w, SelectionVector):
        w = w.w
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"selection has {w.size} entries, expected {n}")
    return w


def step_matrix(mech: Mechanism, traj: Trajectory, t: int) -> np.ndarray:
    """Columns ``M[:, i] * r[t, i] * dt``."""
    return mech.M * (traj.rate(t) * traj.dt)[None, :]


def fitting_error(mech: Mechanism, traj: Trajectory, t: int, w) -> float:
    """One-step prediction error of the reduced mechanism selected by ``w``.

    Fractional ``w`` is accepted and scales each reaction's contribution.
    """
    r = traj.rate(t)
    w = _weights(w, mech.n_reactions)
    pred = mech.M @ (w * r * traj.dt)
    return float(np.linalg.norm(traj.increment(t) - pred))


def normalization(traj: Trajectory, t: int) -> float:
    """``||r[t]||_2 * dt``."""
    return float(np.linalg.norm(traj.rate(t)) * traj.dt)


def tolerance(epsilon: float, norm: float, mode: str = "relative") -> float:
    if mode == "relative":
        return epsilon * norm
    if mode == "paper-literal":
        return epsilon / norm if norm > 0 else float("inf")
    raise ValueError(f"unknown tolerance mode {mode!r}; expected one of {TOLERANCE_MODES}")


def assemble_step_problem(
    mech: Mechanism,
    traj: Trajectory,
    t: int,
    epsilon: float,
    tolerance_mode: str = "relative",
) -> StepProblem:
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if tolerance_mode not in TOLERANCE_MODES:
        raise ValueError(f"unknown tolerance mode {tolerance_mode!r}; expected one of {TOLERANCE_MODES}")
    A = step_matrix(mech, traj, t)
    b = traj.increment(t)
    norm = normalization(traj, t)
    degenerate = False
    if norm == 0:
        tau = 0.0
        # quiescent step: only an exactly unchanged state is consistent
        degenerate = tolerance_mode == "paper-literal" or bool(np.any(b != 0))
        if degenerate:
            log.warning("condition %d, t=%d: zero total rate, step marked degenerate", traj.condition_id, t)
    else:
        tau = tolerance(epsilon, norm, tolerance_mode)
    return StepProblem(A, b, tau, t, traj.condition_id, norm, epsilon, tolerance_mode, degenerate)


def forward_select(p: StepProblem, start=None, feas_tol: float = 1e-9) -> np.ndarray | None:
    """Greedy forward selection from the boolean mask ``start``.

    Adds, one at a time, the nonzero column whose inclusion gives the smallest
    residual (lowest id on ties) until the budget is met.  Returns the mask or
    ``None`` when every nonzero column has been added without success.
    """
    n = p.n_reactions
    mask = np.zeros(n, dtype=bool) if start is None else np.array(start, dtype=bool)
    candidates = ~mask & ~p.zero_columns
    r = p.b - p.A[:, mask].sum(axis=1)
    limit = p.tau + feas_tol
    while np.linalg.norm(r) > limit:
        idx = np.flatnonzero(candidates)
        if idx.size == 0:
            return None
        trial = np.linalg.norm(r[:, None] - p.A[:, idx], axis=0)
        j = idx[int(np.argmin(trial))]
        mask[j] = True
        candidates[j] = False
        r = r - p.A[:, j]
    return mask


def write_step_problem(p: StepProblem, path) -> Path:
    """Debug dump: ``tau``, ``b`` and the rows of ``A`` as CSV lines."""
    path = Path(path)
    lines = [
        f"meta,{p.condition_id},{p.t},{p.mode},{p.epsilon!r},{int(p.degenerate)}",
        f"tau,{p.tau!r}",
        "b," + ",".join(repr(float(v)) for v in p.b),
    ]
    lines += ["A," + ",".join(repr(float(v)) for v in row) for row in p.A]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_step_problem(path) -> StepProblem:
    rows, tau, b, meta = [], None, None, None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        kind, _, rest = line.partition(",")
        if kind == "meta":
            meta = rest.split(",")
        elif kind == "tau":
            tau = float(rest)
        elif kind == "b":
            b = [float(v) for v in rest.split(",")] if rest else []
        elif kind == "A":
            rows.append([float(v) for v in rest.split(",")] if rest else [])
    A = np.array(rows, dtype=float).reshape(len(b), -1) if rows else np.zeros((len(b), 0))
    cid, t, mode, eps, deg = meta
    return StepProblem(A, np.array(b), tau, int(t), int(cid), epsilon=float(eps), mode=mode, degenerate=bool(int(deg)))
