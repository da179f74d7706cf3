"""Box relaxation of the selection problem and rounding back to binary.

The relaxation

    min sum(w)   s.t.  ||b - A w||_2 <= tau,   lo <= w <= hi

is a linear objective over a convex set.  Two solvers are provided:

``homotopy`` (default)
    Follows the solution path of ``min lam * sum(w) + 0.5 ||b - A w||^2``
    over the box as ``lam`` decreases from ``max_j a_j^T b`` to 0.  The path
    is piecewise linear; the residual norm decreases monotonically along it,
    so the relaxed optimum is the path point where it equals ``tau``.  Each
    segment costs one small linear solve with the Gram matrix of the free
    columns, and the method terminates in finitely many segments.

``bisection``
    Bisects the multiplier ``lam`` of the penalized problem
    ``min sum(w) + lam (||b - A w||^2 - tau^2)``, each inner problem solved by
    projected gradient with fixed step ``1/L``, ``L = 2 lam ||A||_2^2``.
    Slow on ill-conditioned data; kept as an independent second route.

Both report a KKT residual computed from the final iterate alone.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

from .selection import InfeasibleStepError, SelectionVector, StepProblem, forward_select

__all__ = [
    "RelaxedSolution",
    "solve_step_relaxed",
    "relax_box",
    "kkt_residual",
    "box_least_squares",
    "spectral_norm",
    "round_threshold",
    "round_randomized",
    "DEFAULT_THETAS",
]

log = logging.getLogger(__name__)

DEFAULT_THETAS = (0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1)
_SEARCH_NODES = 10_000


@dataclass(frozen=True, eq=False)
class RelaxedSolution:
    w: SelectionVector
    objective: float
    kkt_residual: float
    iterations: int
    status: str
    multiplier: float = 0.0
    residual: float = float("nan")

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def spectral_norm(A: np.ndarray, iters: int = 100, rtol: float = 1e-10) -> float:
    """Largest singular value by power iteration on ``A^T A``."""
    if A.size == 0:
        return 0.0
    x = np.ones(A.shape[1]) / math.sqrt(A.shape[1])
    sigma2 = 0.0
    for _ in range(iters):
        y = A.T @ (A @ x)
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            return 0.0
        x = y / ny
        if abs(ny - sigma2) <= rtol * ny:
            sigma2 = ny
            break
        sigma2 = ny
    return math.sqrt(sigma2)


def kkt_residual(A, b, tau, w, lo, hi, mu, atol: float = 1e-12) -> float:
    """KKT violation of ``w`` with multiplier ``mu`` on ``0.5 (||r||^2 - tau^2) <= 0``.

    Maximum of the projected Lagrangian gradient and the complementary
    slackness term ``0.5 mu |tau^2 - ||r||^2|``.
    """
    r = b - A @ w
    free = lo < hi
    if not free.any():
        return 0.0
    g = 1.0 - mu * (A[:, free].T @ r)
    wf, lf, hf = w[free], lo[free], hi[free]
    at_lo = wf <= lf + atol
    at_hi = wf >= hf - atol
    viol = np.abs(g)
    viol = np.where(at_lo, np.maximum(0.0, -g), viol)
    viol = np.where(at_hi, np.maximum(0.0, g), viol)
    both = at_lo & at_hi
    viol = np.where(both, 0.0, viol)
    slack = 0.5 * mu * abs(tau * tau - float(r @ r))
    return float(max(viol.max(initial=0.0), slack))


# -- homotopy ----------------------------------------------------------------

_L, _F, _U = 0, 1, 2


def _solve_gram(AF: np.ndarray) -> np.ndarray:
    G = AF.T @ AF
    ones = np.ones(G.shape[0])
    try:
        d = np.linalg.solve(G, ones)
        if np.all(np.isfinite(d)):
            return d
    except np.linalg.LinAlgError:
        pass
    return np.linalg.lstsq(G, ones, rcond=None)[0]


def _homotopy(A, b, tau, lo, hi, max_iter):
    n = A.shape[1]
    w = lo.astype(float).copy()
    r = b - A @ w
    if np.linalg.norm(r) <= tau:
        return w, "converged", 0.0, 0
    var = np.flatnonzero((lo < hi) & np.any(A != 0, axis=0))
    if var.size == 0:
        return w, "infeasible", 0.0, 0
    Av = A[:, var]
    state = np.full(var.size, _L)
    c = Av.T @ r
    lam = float(c.max())
    if lam <= 0:
        return w, "infeasible", 0.0, 0

    def enter_ties(level):
        cand = (state == _L) & (c >= level - 1e-12 * abs(level))
        state[cand] = _F

    enter_ties(lam)
    stalls = 0
    seen = set()
    for it in range(1, max_iter + 1):
        F = state == _F
        if not F.any():
            low = c[state == _L]
            lam = float(low.max()) if low.size else 0.0
            if lam <= 0:
                break
            enter_ties(lam)
            continue
        fi = np.flatnonzero(F)
        AF = Av[:, fi]
        d = _solve_gram(AF)
        v = AF @ d
        wF = w[var[fi]]

        best, event, who = lam, "zero", -1
        vv, rv, rr = float(v @ v), float(r @ v), float(r @ r)
        disc = rv * rv - vv * (rr - tau * tau)
        if vv > 0 and disc >= 0 and rv > 0:
            g = (rr - tau * tau) / (rv + math.sqrt(disc))
            if g < best:
                best, event = max(g, 0.0), "tau"
        s = Av.T @ v
        with np.errstate(divide="ignore", invalid="ignore"):
            Lm = state == _L
            den = 1.0 - s
            g = np.where(Lm & (den > 1e-14), np.maximum(lam - c, 0.0) / den, np.inf)
            j = int(np.argmin(g))
            if g[j] < best:
                best, event, who = float(g[j]), "enter", j
            Um = state == _U
            den = s - 1.0
            g = np.where(Um & (den > 1e-14), np.maximum(c - lam, 0.0) / den, np.inf)
            j = int(np.argmin(g))
            if g[j] < best:
                best, event, who = float(g[j]), "release", j
            g = np.where(d < 0, wF / -d, np.where(d > 0, (1.0 - wF) / d, np.inf))
            k = int(np.argmin(g))
            if g[k] < best:
                best, event, who = float(g[k]), ("drop" if d[k] < 0 else "cap"), int(fi[k])

        stalls = stalls + 1 if best <= 0 else 0
        if stalls > 2 * n + 10:
            return w, "max_iter", lam, it
        w[var[fi]] = np.clip(wF + best * d, 0.0, 1.0)
        lam -= best
        if event == "drop":
            w[var[who]] = 0.0
            state[who] = _L
        elif event == "cap":
            w[var[who]] = 1.0
            state[who] = _U
        elif event in ("enter", "release"):
            state[who] = _F
        r = b - A @ w
        c = Av.T @ r
        if event != "tau" and (state == _F).any():
            lam = float(np.mean(c[state == _F]))
        if event == "tau":
            return w, "converged", lam, it
        if event == "zero" or lam <= 0:
            break
        # an active-set pattern seen before means the path is cycling
        key = state.tobytes()
        if key in seen:
            return w, "max_iter", lam, it
        seen.add(key)
    else:
        return w, "max_iter", lam, max_iter
    status = "converged" if np.linalg.norm(r) <= tau else "infeasible"
    return w, status, max(lam, 0.0), it


# -- dual bisection with projected gradient ----------------------------------

def _pg_inner(A, b, lam, w, lo, hi, tol, max_iter, L):
    step = 1.0 / L
    for k in range(1, max_iter + 1):
        grad = 1.0 - 2.0 * lam * (A.T @ (b - A @ w))
        w_new = np.clip(w - step * grad, lo, hi)
        if np.max(np.abs(w_new - w), initial=0.0) <= tol:
            return w_new, k
        w = w_new
    return w, max_iter


def _bisection(A, b, tau, lo, hi, tol, max_iter):
    w = lo.astype(float).copy()
    if np.linalg.norm(b - A @ w) <= tau:
        return w, "converged", 0.0, 0
    sig = spectral_norm(A)
    if sig == 0:
        return w, "infeasible", 0.0, 0
    iters = 0

    def inner(lam, w0):
        nonlocal iters
        wl, k = _pg_inner(A, b, lam, w0, lo, hi, tol, max_iter, 2.0 * lam * sig * sig)
        iters += k
        return wl, float(np.linalg.norm(b - A @ wl)), k >= max_iter

    lam_lo, lam_hi = 0.0, 1.0
    w_hi, res_hi, capped = inner(lam_hi, w)
    while res_hi > tau:
        if lam_hi > 1e12:
            return w_hi, "infeasible", 2.0 * lam_hi, iters
        lam_lo, lam_hi = lam_hi, 2.0 * lam_hi
        w_hi, res_hi, capped = inner(lam_hi, w_hi)
    scale = tol * max(1.0, tau)
    w_cur = w_hi
    for _ in range(200):
        if tau - res_hi <= scale or lam_hi - lam_lo <= 1e-15 * lam_hi:
            break
        mid = 0.5 * (lam_lo + lam_hi)
        w_mid, res_mid, capped = inner(mid, w_cur)
        w_cur = w_mid
        if res_mid > tau:
            lam_lo = mid
        else:
            lam_hi, w_hi, res_hi = mid, w_mid, res_mid
    status = "max_iter" if capped else "converged"
    return w_hi, status, 2.0 * lam_hi, iters


def box_least_squares(A, b, lo, hi) -> np.ndarray:
    """``argmin ||b - A w||`` over the box; pinned coordinates stay put."""
    w = lo.astype(float).copy()
    free = np.flatnonzero(lo < hi)
    if free.size == 0:
        return w
    rhs = b - A @ w
    res = lsq_linear(A[:, free], rhs, bounds=(lo[free], hi[free]), method="bvls")
    w[free] = np.clip(res.x, lo[free], hi[free])
    return w


def relax_box(A, b, tau, lo=None, hi=None, *, method="homotopy", tol=1e-8, max_iter=100_000):
    """Array-level relaxed solve.  Returns ``(w, status, mu, iterations)``.

    ``mu`` is the multiplier of ``0.5 (||b - A w||^2 - tau^2) <= 0``.
    Coordinates with ``lo == hi`` stay pinned.
    """
    n = A.shape[1]
    lo = np.zeros(n) if lo is None else np.asarray(lo, dtype=float)
    hi = np.ones(n) if hi is None else np.asarray(hi, dtype=float)
    if method == "homotopy":
        w, status, lam, iters = _homotopy(A, b, tau, lo, hi, max_iter)
        if status != "max_iter":
            mu = 1.0 / lam if lam > 0 else 0.0
            return w, status, mu, iters
        # degenerate path: settle feasibility first, then take the slow route
        w_ls = box_least_squares(A, b, lo, hi)
        if np.linalg.norm(b - A @ w_ls) > tau * (1.0 + 1e-9) + 1e-15:
            return w_ls, "infeasible", 0.0, iters
        log.debug("homotopy cycled after %d events; falling back to bisection", iters)
        w, status, mu, more = _bisection(A, b, tau, lo, hi, tol, max_iter)
        return w, status, mu, iters + more
    if method == "bisection":
        return _bisection(A, b, tau, lo, hi, tol, max_iter)
    raise ValueError(f"unknown method {method!r}")


def solve_step_relaxed(
    p: StepProblem,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    *,
    method: str = "homotopy",
    fixed_zero=(),
    fixed_one=(),
    feas_tol: float = 1e-9,
) -> RelaxedSolution:
    """Solve the box relaxation of one step.

    ``fixed_zero`` / ``fixed_one`` pin coordinates (used by branch and bound);
    pinned coordinates are never moved.  ``status`` is ``converged``,
    ``max_iter`` or ``infeasible``.
    """
    p.require_valid()
    n = p.n_reactions
    lo, hi = np.zeros(n), np.ones(n)
    hi[list(fixed_zero)] = 0.0
    lo[list(fixed_one)] = 1.0
    if np.any(lo > hi):
        raise ValueError("a coordinate is pinned to both 0 and 1")
    w, status, mu, iters = relax_box(p.A, p.b, p.tau, lo, hi, method=method, tol=tol, max_iter=max_iter)
    w = np.clip(w, lo, hi)
    res = p.residual(w)
    kkt = kkt_residual(p.A, p.b, p.tau, w, lo, hi, mu)
    if status == "converged" and res > p.tau + feas_tol:
        status = "max_iter"
    if status == "converged" and kkt > tol:
        log.debug("relaxed solve at (%d, %d): KKT residual %.3g above tol", p.condition_id, p.t, kkt)
    return RelaxedSolution(
        SelectionVector(w, "fractional", "relaxed"), float(w.sum()), kkt, iters, status, mu, res
    )


# -- rounding ----------------------------------------------------------------

def _lex_best(masks: np.ndarray) -> np.ndarray:
    """Row with fewest ones, lexicographically smallest support among ties."""
    card = masks.sum(axis=1)
    rows = np.flatnonzero(card == card.min())
    best = min(rows, key=lambda i: tuple(np.flatnonzero(masks[i])))
    return masks[best]


def _flip_descent(p: StepProblem, mask: np.ndarray, feas_tol: float) -> np.ndarray | None:
    """Single add-or-drop moves by steepest residual decrease.

    Only reached when the full support misses the budget, so adding alone
    cannot help.
    """
    mask = mask.copy()
    flips = np.eye(p.n_reactions, dtype=bool) & ~p.zero_columns[None, :]
    limit = p.tau + feas_tol
    current = p.residual(mask)
    while current > limit:
        trial = mask[None, :] ^ flips
        res = np.linalg.norm(p.b[None, :] - trial.astype(float) @ p.A.T, axis=1)
        j = int(np.argmin(res))
        if res[j] >= current:
            return None
        mask, current = trial[j], float(res[j])
    return mask


def _prune_backward(p: StepProblem, mask: np.ndarray, feas_tol: float) -> np.ndarray:
    """Drop selected reactions one at a time while the budget still holds,
    each time the one whose removal leaves the smallest residual."""
    mask = mask.copy()
    limit = p.tau + feas_tol
    while mask.any():
        idx = np.flatnonzero(mask)
        r = p.b - p.A[:, idx].sum(axis=1)
        res = np.linalg.norm(r[:, None] + p.A[:, idx], axis=0)
        j = int(np.argmin(res))
        if res[j] > limit:
            break
        mask[idx[j]] = False
    return mask


def round_threshold(w, p: StepProblem, theta_grid=DEFAULT_THETAS, feas_tol: float = 1e-9) -> SelectionVector:
    """Smallest feasible threshold set ``{i : w_i >= theta}`` over the grid.

    When no threshold set is feasible, the support at the smallest threshold
    is completed greedily, then repaired by single flips, then by a
    node-limited branch and bound; the completed set is thinned by backward
    elimination.  Raises :class:`InfeasibleStepError` when even that
    fails.
    """
    w = np.asarray(w.w if isinstance(w, SelectionVector) else w, dtype=float)
    thetas = sorted(theta_grid, reverse=True)
    masks = np.array([w >= th for th in thetas])
    res = np.linalg.norm(p.b[None, :] - masks.astype(float) @ p.A.T, axis=1)
    ok = res <= p.tau + feas_tol
    if ok.any():
        return SelectionVector(_lex_best(masks[ok]).astype(float), "binary", "rounded-threshold")
    mask = forward_select(p, masks[-1], feas_tol)
    if mask is None:
        mask = _flip_descent(p, masks[int(np.argmin(res))], feas_tol)
    if mask is None:
        # the full support misses the budget; only a search can find the
        # subsets that do
        from .exact import solve_step_exact

        sol = solve_step_exact(p, node_limit=_SEARCH_NODES, feas_tol=feas_tol)
        if sol.w is not None:
            mask = sol.w.w.astype(bool)
    if mask is None:
        raise InfeasibleStepError(
            f"step (condition {p.condition_id}, t={p.t}): no feasible rounding found"
        )
    mask = _prune_backward(p, mask, feas_tol)
    return SelectionVector(mask.astype(float), "binary", "rounded-threshold")


def round_randomized(w, p: StepProblem, draws: int = 100, seed: int = 0, feas_tol: float = 1e-9,
                     theta_grid=DEFAULT_THETAS) -> SelectionVector:
    """Best feasible sample among ``draws`` independent Bernoulli(w) vectors.

    Falls back to :func:`round_threshold` when no sample is feasible.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    w = np.asarray(w.w if isinstance(w, SelectionVector) else w, dtype=float)
    rng = np.random.default_rng(seed)
    masks = rng.random((draws, w.size)) < w[None, :]
    res = np.linalg.norm(p.b[None, :] - masks.astype(float) @ p.A.T, axis=1)
    ok = res <= p.tau + feas_tol
    if ok.any():
        return SelectionVector(_lex_best(masks[ok]).astype(float), "binary", "rounded-randomized")
    return round_threshold(w, p, theta_grid, feas_tol)
