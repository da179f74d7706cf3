"""Minimum-cardinality binary selection by best-first branch and bound.

Each node pins some coordinates to 0 or 1 and is bounded by the box
relaxation over the remaining ones, rounded up to the next integer.  Among
optimal selections the lexicographically smallest support (ascending ids)
is returned, so nodes whose bound ties the incumbent are kept while they can
still contain a lexicographically smaller support.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .relaxed import relax_box
from .selection import SelectionVector, StepProblem, forward_select

__all__ = [
    "ExactSolution",
    "solve_step_exact",
    "brute_force_oracle",
    "greedy_incumbent",
    "BRUTE_FORCE_MAX",
]

log = logging.getLogger(__name__)

BRUTE_FORCE_MAX = 20
_INT_TOL = 1e-9
_BOUND_SLACK = 1e-6


@dataclass(frozen=True, eq=False)
class ExactSolution:
    w: SelectionVector | None
    cardinality: int
    status: str
    nodes_explored: int
    gap: float

    @property
    def support(self) -> tuple[int, ...]:
        return () if self.w is None else self.w.support

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def greedy_incumbent(p: StepProblem, feas_tol: float = 1e-9) -> SelectionVector | None:
    """Forward selection by largest residual decrease; ``None`` if it never
    becomes feasible."""
    mask = forward_select(p, None, feas_tol)
    if mask is None:
        return None
    return SelectionVector(mask.astype(float), "binary", "greedy")


def brute_force_oracle(p: StepProblem, feas_tol: float = 1e-9) -> ExactSolution:
    """Enumerate supports by increasing size, each size in lexicographic order."""
    p.require_valid()
    n = p.n_reactions
    if n > BRUTE_FORCE_MAX:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX} reactions, got {n}")
    limit = p.tau + feas_tol
    evaluated = 0
    for k in range(n + 1):
        if k == 0:
            combos = np.zeros((1, 0), dtype=np.int64)
            res = np.array([np.linalg.norm(p.b)])
        else:
            combos = np.array(list(itertools.combinations(range(n), k)), dtype=np.int64)
            res = np.linalg.norm(p.b[:, None] - p.A[:, combos].sum(axis=2), axis=0)
        hits = np.flatnonzero(res <= limit)
        if hits.size:
            evaluated += int(hits[0]) + 1
            w = SelectionVector.from_support(combos[hits[0]], n, "exact")
            return ExactSolution(w, k, "optimal", evaluated, 0.0)
        evaluated += len(combos)
    return ExactSolution(None, 0, "infeasible", evaluated, 0.0)


@dataclass(order=True)
class _Node:
    bound: int
    seq: int
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)
    w: np.ndarray | None = field(compare=False)


def _lexmin_support(lo, hi, k):
    """Smallest sorted support of size ``k`` respecting the pins, or None."""
    ones = np.flatnonzero(lo == 1)
    free = np.flatnonzero(lo < hi)
    need = k - ones.size
    if need < 0 or need > free.size:
        return None
    return tuple(sorted(ones.tolist() + free[:need].tolist()))


def solve_step_exact(
    p: StepProblem,
    node_limit: int = 100_000,
    feas_tol: float = 1e-9,
    verbose: bool = False,
) -> ExactSolution:
    """Provably minimum-cardinality binary selection for one step.

    ``status`` is ``optimal``, ``infeasible`` (no binary vector meets the
    budget) or ``node_limit`` (best incumbent so far with the remaining
    ``gap`` between incumbent and best open bound).
    """
    p.require_valid()
    if node_limit < 1:
        raise ValueError("node_limit must be >= 1")
    n = p.n_reactions
    A, b = p.A, p.b
    tau = p.tau + feas_tol

    def feasible(mask) -> bool:
        return float(np.linalg.norm(b - A @ mask)) <= tau

    inc_card = math.inf
    inc_support: tuple[int, ...] | None = None

    def offer(mask):
        nonlocal inc_card, inc_support
        support = tuple(int(i) for i in np.flatnonzero(mask))
        key = (len(support), support)
        if inc_support is None or key < (inc_card, inc_support):
            inc_card, inc_support = len(support), support
            if verbose:
                log.info("incumbent %s", support)

    greedy = greedy_incumbent(p, feas_tol)
    if greedy is not None:
        offer(greedy.w)

    def bound_of(lo, hi):
        w, status, _, _ = relax_box(A, b, tau, lo, hi)
        if status == "infeasible":
            return None, None
        if status != "converged":
            # trivial but valid bound: the pinned ones
            return int(lo.sum()), None
        return max(int(lo.sum()), math.ceil(w.sum() - _BOUND_SLACK * max(1.0, w.sum()))), w

    lo0, hi0 = np.zeros(n), np.ones(n)
    hi0[p.zero_columns] = 0.0
    seq = itertools.count()
    nodes = 1
    root_bound, root_w = bound_of(lo0, hi0)
    if root_bound is None:
        if inc_support is not None:
            # relaxation says infeasible but a binary point is feasible: trust the point
            log.warning("step (%d, %d): relaxation infeasible despite feasible incumbent", p.condition_id, p.t)
            return ExactSolution(SelectionVector.from_support(inc_support, n, "exact"), inc_card, "node_limit", nodes, math.inf)
        return ExactSolution(None, 0, "infeasible", nodes, 0.0)
    heap = [_Node(root_bound, next(seq), lo0, hi0, root_w)]

    def worth(node_bound, lo, hi) -> bool:
        if node_bound < inc_card:
            return True
        if node_bound > inc_card or inc_support is None:
            return False
        lex = _lexmin_support(lo, hi, inc_card)
        return lex is not None and lex < inc_support

    status = "optimal"
    while heap:
        node = heapq.heappop(heap)
        if not worth(node.bound, node.lo, node.hi):
            continue
        lo, hi, w = node.lo, node.hi, node.w
        free = np.flatnonzero(lo < hi)
        if verbose:
            log.info("node %d bound=%d ones=%s zeros=%s", node.seq, node.bound,
                     np.flatnonzero(lo == 1).tolist(), np.flatnonzero((hi == 0) & (lo == 0)).tolist())
        branch = None
        if w is not None and free.size:
            frac = np.minimum(w[free], 1.0 - w[free])
            if frac.max() > _INT_TOL:
                branch = int(free[int(np.argmax(frac))])
            else:
                mask = np.round(w)
                if feasible(mask):
                    offer(mask)
                else:
                    branch = int(free[int(np.argmax(frac))])
        elif w is None and free.size == 0:
            if feasible(lo):
                offer(lo)
        if branch is None and free.size:
            # integral (or unbounded) node: keep splitting while it may hold
            # a lexicographically smaller optimum
            if not worth(node.bound, lo, hi):
                continue
            branch = int(free[0])
        if branch is None:
            continue
        if nodes + 2 > node_limit:
            status = "node_limit"
            heapq.heappush(heap, node)
            break
        for value in (1.0, 0.0):
            clo, chi = lo.copy(), hi.copy()
            clo[branch] = chi[branch] = value
            nodes += 1
            cb, cw = bound_of(clo, chi)
            if cb is None or not worth(cb, clo, chi):
                continue
            if cw is not None and not np.any(clo < chi):
                if feasible(clo):
                    offer(clo)
                continue
            heapq.heappush(heap, _Node(cb, next(seq), clo, chi, cw))

    if inc_support is None:
        if status == "node_limit":
            return ExactSolution(None, 0, "node_limit", nodes, math.inf)
        return ExactSolution(None, 0, "infeasible", nodes, 0.0)
    w = SelectionVector.from_support(inc_support, n, "exact")
    gap = 0.0
    if status == "node_limit":
        open_bounds = [nd.bound for nd in heap if worth(nd.bound, nd.lo, nd.hi)]
        gap = float(max(0, inc_card - min(open_bounds))) if open_bounds else 0.0
        if not open_bounds:
            status = "optimal"
    return ExactSolution(w, inc_card, status, nodes, gap)
