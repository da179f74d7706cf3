"""Union reduction over many steps and conditions, with audit and hold-out checks.

One selection problem is solved per (condition, step) of the training
trajectories.  The reduced mechanism keeps every reaction selected at least
once (optionally only those selected at least ``prune_min_count`` times).
Whether the union really stays inside every step's budget is not assumed:
:func:`audit_bound` recomputes the fitting error of the union at every step
and reports the steps where it does not.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import __version__
from .exact import greedy_incumbent, solve_step_exact
from .kinetics import Trajectory
from .mechanism import Mechanism
from .relaxed import round_randomized, round_threshold, solve_step_relaxed
from .selection import (
    TOLERANCE_MODES,
    InfeasibleStepError,
    StepProblem,
    assemble_step_problem,
    fitting_error,
)

__all__ = [
    "SOLVERS",
    "ReductionResult",
    "AuditRow",
    "AuditReport",
    "InfeasibleStepsError",
    "MonotonicityError",
    "SweepResult",
    "reduce",
    "audit_bound",
    "validate_holdout",
    "sweep_epsilon",
    "monotonicity_violations",
    "write_result",
    "read_result",
    "write_audit",
    "read_audit",
    "write_curves",
]

log = logging.getLogger(__name__)

SOLVERS = ("exact", "relaxed")
ROUNDINGS = ("threshold", "randomized")
_SOLVER_LABEL = {"exact": "exact", "relaxed": "relaxed+rounding"}


class InfeasibleStepsError(RuntimeError):
    """Steps that miss the budget even with every reaction kept."""

    def __init__(self, steps, epsilon):
        self.steps = sorted(steps)
        self.epsilon = epsilon
        shown = ", ".join(f"(condition {j}, t={t})" for j, t in self.steps[:10])
        more = f" and {len(self.steps) - 10} more" if len(self.steps) > 10 else ""
        super().__init__(
            f"{len(self.steps)} step(s) infeasible at full support for epsilon={epsilon}: {shown}{more}. "
            "The data deviate from the one-step model by more than the budget; raise epsilon "
            "or reduce noise / the time step."
        )


class MonotonicityError(AssertionError):
    """Exact per-step cardinality increased with epsilon."""

    def __init__(self, violations, sweep):
        self.violations = violations
        self.sweep = sweep
        super().__init__(f"{len(violations)} per-step cardinality increase(s) across epsilon, first {violations[0]}")


@dataclass(frozen=True, eq=False)
class ReductionResult:
    """Outcome of :func:`reduce`.

    ``union`` is the union of all per-step supports; ``support`` is the union
    after frequency pruning (identical when ``prune_min_count`` is 0).
    Supports are sorted tuples of reaction ids.
    """

    support: tuple[int, ...]
    union: tuple[int, ...]
    per_step_supports: dict
    frequency: dict
    epsilon: float
    tolerance_mode: str
    solver: str
    n_reactions: int
    prune_min_count: float = 0
    statuses: dict = field(default_factory=dict)
    degenerate: tuple = ()
    condition_ids: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return len(self.support)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n_reactions)
        m[list(self.support)] = 1.0
        return m

    def step_cardinality(self) -> dict:
        return {k: len(v) for k, v in self.per_step_supports.items()}

    def status_counts(self) -> dict:
        out: dict[str, int] = {}
        for s in self.statuses.values():
            out[s] = out.get(s, 0) + 1
        return dict(sorted(out.items()))

    def __eq__(self, other):
        if not isinstance(other, ReductionResult):
            return NotImplemented
        return (
            self.support == other.support
            and self.union == other.union
            and self.per_step_supports == other.per_step_supports
            and self.frequency == other.frequency
            and self.epsilon == other.epsilon
            and self.tolerance_mode == other.tolerance_mode
            and self.solver == other.solver
            and self.n_reactions == other.n_reactions
            and self.statuses == other.statuses
            and tuple(self.degenerate) == tuple(other.degenerate)
        )


class AuditRow(NamedTuple):
    condition_id: int
    t: int
    D: float
    tau: float
    satisfied: bool


@dataclass(frozen=True, eq=False)
class AuditReport:
    rows: tuple[AuditRow, ...]
    feas_tol: float = 1e-9

    @property
    def violation_count(self) -> int:
        return sum(not r.satisfied for r in self.rows)

    @property
    def violations(self) -> list[AuditRow]:
        return [r for r in self.rows if not r.satisfied]

    @property
    def max_ratio(self) -> float:
        best = 0.0
        for r in self.rows:
            if r.tau > 0:
                best = max(best, r.D / r.tau)
            elif r.D > 0:
                return math.inf
        return best

    @property
    def satisfied_fraction(self) -> float:
        return 1.0 if not self.rows else 1.0 - self.violation_count / len(self.rows)

    @property
    def condition_ids(self) -> tuple[int, ...]:
        return tuple(sorted({r.condition_id for r in self.rows}))

    def curve(self, condition_id: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(t, D, tau)`` arrays of one condition, ordered by ``t``."""
        rows = sorted((r for r in self.rows if r.condition_id == condition_id), key=lambda r: r.t)
        return (
            np.array([r.t for r in rows], dtype=int),
            np.array([r.D for r in rows]),
            np.array([r.tau for r in rows]),
        )

    def __len__(self):
        return len(self.rows)


# -- per-step solves ---------------------------------------------------------

def _step_seed(seed: int, key) -> int:
    return int(np.random.SeedSequence([seed, key[0], key[1]]).generate_state(1)[0])


def _solve_step(job):
    p, solver, opts = job
    if solver == "exact":
        sol = solve_step_exact(p, node_limit=opts["node_limit"], feas_tol=opts["feas_tol"])
        if sol.w is None:
            # unreachable when the full support is feasible, kept as a guard
            g = greedy_incumbent(p, opts["feas_tol"])
            if g is None:
                raise InfeasibleStepError(f"step (condition {p.condition_id}, t={p.t}) has no feasible selection")
            return p.key, g.support, sol.status
        return p.key, sol.support, sol.status
    rel = solve_step_relaxed(p, feas_tol=opts["feas_tol"])
    if opts["rounding"] == "randomized":
        w = round_randomized(rel.w, p, draws=opts["draws"], seed=_step_seed(opts["seed"], p.key),
                             feas_tol=opts["feas_tol"])
    else:
        w = round_threshold(rel.w, p, feas_tol=opts["feas_tol"])
    return p.key, w.support, rel.status


def _run_jobs(jobs, workers: int):
    if workers <= 1 or len(jobs) < 2:
        return [_solve_step(j) for j in jobs]
    chunk = max(1, len(jobs) // (8 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_solve_step, jobs, chunksize=chunk))


def _problems(mech, trajectories, epsilon, tolerance_mode):
    out = []
    for traj in sorted(trajectories, key=lambda tr: tr.condition_id):
        for t in range(1, traj.T + 1):
            out.append(assemble_step_problem(mech, traj, t, epsilon, tolerance_mode))
    return out


def _check_trajectories(mech: Mechanism, trajectories) -> list[Trajectory]:
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("the training set is empty")
    ids = [tr.condition_id for tr in trajectories]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate condition ids in the trajectory set")
    for tr in trajectories:
        if tr.states.shape[1] != mech.n_species or tr.rates.shape[1] != mech.n_reactions:
            raise ValueError(f"trajectory {tr.condition_id} does not match the mechanism's dimensions")
    return trajectories


def reduce(
    mech: Mechanism,
    trajectories,
    epsilon: float,
    solver: str = "relaxed",
    prune_min_count: float = 0,
    tolerance_mode: str = "relative",
    *,
    workers: int = 1,
    rounding: str = "threshold",
    node_limit: int = 100_000,
    seed: int = 0,
    draws: int = 100,
    feas_tol: float = 1e-9,
) -> ReductionResult:
    """Solve every training step and take the union of the selections.

    Parameters
    ----------
    solver : {"exact", "relaxed"}
        Branch and bound, or box relaxation followed by rounding.
    prune_min_count : int or inf
        Reactions selected at fewer than this many steps are dropped from
        the final support.  0 keeps the plain union.
    rounding : {"threshold", "randomized"}
        Rounding used by the relaxed solver.

    Raises
    ------
    InfeasibleStepsError
        Some step misses its budget even with every reaction kept.
    """
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
    if rounding not in ROUNDINGS:
        raise ValueError(f"unknown rounding {rounding!r}; expected one of {ROUNDINGS}")
    if tolerance_mode not in TOLERANCE_MODES:
        raise ValueError(f"unknown tolerance mode {tolerance_mode!r}")
    if not prune_min_count >= 0:
        raise ValueError("prune_min_count must be >= 0")
    trajectories = _check_trajectories(mech, trajectories)

    problems = _problems(mech, trajectories, epsilon, tolerance_mode)
    degenerate = tuple(p.key for p in problems if p.degenerate)
    live = [p for p in problems if not p.degenerate]
    bad = [p.key for p in live if not p.is_feasible(np.ones(p.n_reactions), feas_tol)]
    if bad:
        raise InfeasibleStepsError(bad, epsilon)

    opts = dict(node_limit=node_limit, feas_tol=feas_tol, rounding=rounding, seed=seed, draws=draws)
    results = sorted(_run_jobs([(p, solver, opts) for p in live], workers))
    per_step = {key: tuple(sup) for key, sup, _ in results}
    statuses = {key: status for key, _, status in results}
    limited = sum(s == "node_limit" for s in statuses.values())
    if limited:
        log.warning("epsilon=%g: %d step(s) hit the node limit; incumbents used", epsilon, limited)

    freq = {i: 0 for i in range(mech.n_reactions)}
    for sup in per_step.values():
        for i in sup:
            freq[i] += 1
    union = tuple(i for i in range(mech.n_reactions) if freq[i] > 0)
    support = tuple(i for i in union if freq[i] >= prune_min_count)
    return ReductionResult(
        support=support,
        union=union,
        per_step_supports=per_step,
        frequency=freq,
        epsilon=float(epsilon),
        tolerance_mode=tolerance_mode,
        solver=_SOLVER_LABEL[solver],
        n_reactions=mech.n_reactions,
        prune_min_count=prune_min_count,
        statuses=statuses,
        degenerate=degenerate,
        condition_ids=tuple(sorted(tr.condition_id for tr in trajectories)),
    )


# -- audits ------------------------------------------------------------------

def audit_bound(
    mech: Mechanism,
    trajectories,
    result: ReductionResult,
    epsilon: float | None = None,
    tolerance_mode: str | None = None,
    feas_tol: float = 1e-9,
) -> AuditReport:
    """Fitting error of the reduced support against the budget at every
    non-degenerate step.  Violations are reported, never raised."""
    epsilon = result.epsilon if epsilon is None else epsilon
    tolerance_mode = result.tolerance_mode if tolerance_mode is None else tolerance_mode
    if result.n_reactions != mech.n_reactions:
        raise ValueError("result and mechanism disagree on the number of reactions")
    mask = result.mask
    rows = []
    for traj in sorted(trajectories, key=lambda tr: tr.condition_id):
        for t in range(1, traj.T + 1):
            p = assemble_step_problem(mech, traj, t, epsilon, tolerance_mode)
            if p.degenerate:
                continue
            D = fitting_error(mech, traj, t, mask)
            rows.append(AuditRow(traj.condition_id, t, D, p.tau, D <= p.tau + feas_tol))
    report = AuditReport(tuple(rows), feas_tol)
    if report.violation_count:
        log.info("audit: %d of %d steps exceed the budget (max D/tau %.3g)",
                 report.violation_count, len(rows), report.max_ratio)
    return report


def validate_holdout(
    mech: Mechanism,
    holdout,
    result: ReductionResult,
    epsilon: float | None = None,
    tolerance_mode: str | None = None,
    feas_tol: float = 1e-9,
) -> AuditReport:
    """:func:`audit_bound` on conditions that were not used for training."""
    holdout = list(holdout)
    overlap = sorted({tr.condition_id for tr in holdout} & set(result.condition_ids))
    if overlap:
        log.warning("hold-out conditions %s were also used for training", overlap)
    return audit_bound(mech, holdout, result, epsilon, tolerance_mode, feas_tol)


# -- epsilon sweeps ----------------------------------------------------------

class SweepResult(dict):
    """``epsilon -> ReductionResult`` for the values that succeeded.

    ``errors`` maps the remaining values to the exception they raised.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.errors: dict[float, Exception] = {}

    def union_sizes(self) -> dict[float, int]:
        return {eps: len(res.union) for eps, res in sorted(self.items())}


def monotonicity_violations(sweep) -> list[tuple]:
    """Steps whose per-step cardinality grows with epsilon.

    Only steps solved to proven optimality at both values are compared.
    Entries are ``(condition_id, t, eps_lo, card_lo, eps_hi, card_hi)``.
    """
    out = []
    eps = sorted(sweep)
    for lo, hi in zip(eps, eps[1:]):
        a, b = sweep[lo], sweep[hi]
        for key, sup in a.per_step_supports.items():
            if key not in b.per_step_supports:
                continue
            if a.statuses.get(key) != "optimal" or b.statuses.get(key) != "optimal":
                continue
            if len(b.per_step_supports[key]) > len(sup):
                out.append((key[0], key[1], lo, len(sup), hi, len(b.per_step_supports[key])))
    return out


def sweep_epsilon(
    mech: Mechanism,
    trajectories,
    epsilons,
    solver: str = "relaxed",
    *,
    strict: bool = True,
    **kwargs,
) -> SweepResult:
    """Run :func:`reduce` for each epsilon.

    A failure at one value is recorded in ``errors`` and the sweep goes on.
    With the exact solver, per-step cardinalities must not increase with
    epsilon; when ``strict`` a :class:`MonotonicityError` carrying the
    sweep is raised otherwise.
    """
    epsilons = [float(e) for e in epsilons]
    if not epsilons:
        raise ValueError("no epsilon values given")
    if any(not e > 0 for e in epsilons):
        raise ValueError("epsilon values must be positive")
    if len(set(epsilons)) != len(epsilons):
        raise ValueError("epsilon values must be distinct")
    trajectories = list(trajectories)
    sweep = SweepResult()
    for eps in sorted(epsilons):
        try:
            sweep[eps] = reduce(mech, trajectories, eps, solver, **kwargs)
        except (InfeasibleStepsError, InfeasibleStepError) as exc:
            log.error("epsilon=%g failed: %s", eps, exc)
            sweep.errors[eps] = exc
    if solver == "exact":
        bad = monotonicity_violations(sweep)
        if bad and strict:
            raise MonotonicityError(bad, sweep)
    return sweep


# -- files -------------------------------------------------------------------

def _provenance(provenance: dict | None) -> str:
    items = {"crnreduce": __version__}
    items.update(provenance or {})
    return "# " + " ".join(f"{k}={v}" for k, v in items.items())


def _ids(ids) -> str:
    return ",".join(str(i) for i in ids)


def write_result(result: ReductionResult, path, provenance: dict | None = None) -> Path:
    """Key=value header followed by ``[frequency]``, ``[per_step]`` and
    ``[degenerate]`` CSV sections.  Per-step supports are space separated."""
    path = Path(path)
    prune = result.prune_min_count
    lines = [
        _provenance(provenance),
        f"epsilon={result.epsilon!r}",
        f"tolerance_mode={result.tolerance_mode}",
        f"solver={result.solver}",
        f"n_reactions={result.n_reactions}",
        f"prune_min_count={'inf' if prune == math.inf else int(prune)}",
        f"condition_ids={_ids(result.condition_ids)}",
        f"support={_ids(result.support)}",
        f"union={_ids(result.union)}",
        "",
        "[frequency]",
        "reaction_id,count",
    ]
    lines += [f"{i},{c}" for i, c in sorted(result.frequency.items())]
    lines += ["", "[per_step]", "condition_id,t,status,support"]
    for (j, t), sup in sorted(result.per_step_supports.items()):
        lines.append(f"{j},{t},{result.statuses.get((j, t), '')},{' '.join(map(str, sup))}")
    lines += ["", "[degenerate]", "condition_id,t"]
    lines += [f"{j},{t}" for j, t in sorted(result.degenerate)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _parse_ids(text: str, sep: str = ",") -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(sep) if v.strip())


def read_result(path) -> ReductionResult:
    head: dict[str, str] = {}
    sections: dict[str, list[list[str]]] = {}
    current = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
            continue
        if current is None:
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}: malformed header line {line!r}")
            head[key.strip()] = value.strip()
        else:
            sections[current].append(line.split(","))
    try:
        freq = {int(i): int(c) for i, c in sections["frequency"][1:]}
        per_step, statuses = {}, {}
        for j, t, status, sup in sections["per_step"][1:]:
            key = (int(j), int(t))
            per_step[key] = _parse_ids(sup, " ")
            statuses[key] = status
        degenerate = tuple((int(j), int(t)) for j, t in sections.get("degenerate", [["", ""]])[1:])
        prune = head.get("prune_min_count", "0")
        return ReductionResult(
            support=_parse_ids(head["support"]),
            union=_parse_ids(head["union"]),
            per_step_supports=per_step,
            frequency=freq,
            epsilon=float(head["epsilon"]),
            tolerance_mode=head["tolerance_mode"],
            solver=head["solver"],
            n_reactions=int(head["n_reactions"]),
            prune_min_count=math.inf if prune == "inf" else int(prune),
            statuses=statuses,
            degenerate=degenerate,
            condition_ids=_parse_ids(head.get("condition_ids", "")),
        )
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: not a reduction result file ({exc})") from exc


def write_audit(report: AuditReport, path, provenance: dict | None = None) -> Path:
    path = Path(path)
    lines = [_provenance(provenance), "condition_id,t,D,tau,satisfied"]
    lines += [f"{r.condition_id},{r.t},{r.D!r},{r.tau!r},{str(r.satisfied).lower()}" for r in report.rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_audit(path, feas_tol: float = 1e-9) -> AuditReport:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#") or line.startswith("condition_id"):
            continue
        j, t, D, tau, ok = line.split(",")
        rows.append(AuditRow(int(j), int(t), float(D), float(tau), ok == "true"))
    return AuditReport(tuple(rows), feas_tol)


def write_curves(report: AuditReport, directory, prefix: str = "curve", provenance: dict | None = None) -> list[Path]:
    """One ``t,D,bound`` file per condition, named ``<prefix>_<id>.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for cid in report.condition_ids:
        t, D, tau = report.curve(cid)
        lines = [_provenance(provenance), "t,D,bound"]
        lines += [f"{a},{b!r},{c!r}" for a, b, c in zip(t.tolist(), D.tolist(), tau.tolist())]
        path = directory / f"{prefix}_{cid}.csv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(path)
    return paths
