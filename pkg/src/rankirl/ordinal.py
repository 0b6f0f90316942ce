"""Sum-of-margins ordinal regression over ranked feature expectations.

Given feature expectations ``mu_i`` with rank labels 1..k (k = best), find a
unit-ball weight vector ``w`` and thresholds ``a_1 <= b_1 <= a_2 <= ... <= b_{k-1}``
minimizing::

    sum_r (a_r - b_r) + C * sum(slacks)
    s.t.  w.mu_i <= a_r + eps_i        for mu_i in rank r      (r < k)
          b_r - sig_i <= w.mu_i        for mu_i in rank r + 1
          ||w|| <= 1,  eps, sig >= 0

For a fixed ``w`` the thresholds/slacks problem is a separable convex chain
problem, solved exactly by pool-adjacent-violators (:func:`fit_thresholds`),
which also yields optimal dual multipliers. The optimal value as a function of
``w`` is the support function of a polytope ``Z`` of dual score vectors, so the
full program equals ``-min_{z in Z} ||z||`` with ``w* = -z*/||z*||``. That
min-norm point is found with Wolfe's algorithm using the threshold fit as its
linear oracle; ``||z||`` of the final iterate certifies the duality gap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

import numpy as np

from .features import FeatureMap, Mu
from .minnorm import NonConvergenceError, min_norm_point

log = logging.getLogger(__name__)


class UnboundedProgramError(ValueError):
    """The slack price C is too low for some rank: margins can grow without limit."""


class SolverError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


def _id_key(source_id):
    return (0, source_id, "") if isinstance(source_id, (int, np.integer)) else (1, 0, str(source_id))


@dataclass(frozen=True)
class RankedDataset:
    mus: tuple
    C: float = 1.0

    def __post_init__(self):
        mus = tuple(self.mus)
        if not mus:
            raise ValueError("dataset is empty")
        ids = []
        for i, mu in enumerate(mus):
            if mu.source_id is None:
                mu = replace(mu, source_id=i)
            ids.append(mu.source_id)
            mus = mus[:i] + (mu,) + mus[i + 1:]
        if len(set(ids)) != len(ids):
            raise ValueError("source ids must be unique")
        dims = {mu.vector.size for mu in mus}
        if len(dims) != 1:
            raise ValueError(f"inconsistent mu dimensions: {sorted(dims)}")
        k = max(mu.rank for mu in mus)
        present = {mu.rank for mu in mus}
        for r in range(1, k + 1):
            if r not in present:
                raise ValueError(f"rank {r} empty")
        if not self.C > 0:
            raise ValueError("C must be positive")
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "C", float(self.C))

    @property
    def k(self) -> int:
        return max(mu.rank for mu in self.mus)

    @property
    def d(self) -> int:
        return self.mus[0].vector.size

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([mu.vector for mu in self.mus])

    @property
    def ranks(self) -> np.ndarray:
        return np.array([mu.rank for mu in self.mus])

    @property
    def ids(self) -> list:
        return [mu.source_id for mu in self.mus]

    def rank_sizes(self) -> dict[int, int]:
        sizes = {r: 0 for r in range(1, self.k + 1)}
        for mu in self.mus:
            sizes[mu.rank] += 1
        return sizes

    def without(self, source_id) -> "RankedDataset":
        return RankedDataset(tuple(mu for mu in self.mus if mu.source_id != source_id), self.C)

    def with_mu(self, mu: Mu) -> "RankedDataset":
        return RankedDataset(self.mus + (mu,), self.C)


@dataclass
class ThresholdFit:
    """Optimal thresholds, slacks and dual multipliers for fixed scores."""

    a: np.ndarray
    b: np.ndarray
    eps: np.ndarray  # zero for instances of the top rank
    sig: np.ndarray  # zero for instances of the bottom rank
    alpha: np.ndarray
    beta: np.ndarray
    objective: float
    dual_objective: float


def _chain_members(scores, ranks, k):
    """Per chain variable: (sign, sorted member scores, member indices sorted by score).

    Variable 2(r-1) is a_r (members: rank r), variable 2(r-1)+1 is b_r
    (members: rank r+1).
    """
    out = []
    for r in range(1, k):
        for sign, rank in ((+1, r), (-1, r + 1)):
            idx = np.flatnonzero(ranks == rank)
            order = idx[np.argsort(scores[idx], kind="stable")]
            out.append((sign, scores[order], order))
    return out


def _block_argmin(members, C, center):
    """Lexicographic minimizer of (objective, total slack, (t-center)^2) for a pooled block."""
    all_scores = np.concatenate([m[1] for m in members])
    points = np.unique(all_scores)
    n = points.size
    # slope on interval i = (points[i-1], points[i]); interval 0 is (-inf, points[0])
    sf = np.zeros(n + 1)
    sg = np.zeros(n + 1)
    total = 0
    for sign, sorted_scores, _ in members:
        total += sorted_scores.size
        if sign > 0:
            # #{s > t} for t inside interval i equals #{s >= points[i]}
            above = sorted_scores.size - np.searchsorted(sorted_scores, np.append(points, np.inf), "left")
            sf += 1.0 - C * above
            sg -= above
        else:
            below = np.searchsorted(sorted_scores, np.insert(points, 0, -np.inf), "right")
            sf += -1.0 + C * below
            sg += below
    zero_tol = 1e-12 * (1.0 + C * total)
    sign_f = np.where(np.abs(sf) <= zero_tol, 0, np.sign(sf))
    lex = np.where(sign_f != 0, sign_f, np.sign(sg))
    # an unbounded block alone may still be pinned by its chain neighbours
    if lex[0] > 0:
        return -np.inf
    if lex[-1] < 0:
        return np.inf
    i = int(np.argmax(lex >= 0))
    if lex[i] == 0:
        lo, hi = points[i - 1], points[i]
        return float(min(max(center, lo), hi))
    return float(points[i - 1])


def _subgradient_range(sign, sorted_scores, t, C):
    gt = sorted_scores.size - np.searchsorted(sorted_scores, t, "right")
    lt = np.searchsorted(sorted_scores, t, "left")
    eq = sorted_scores.size - gt - lt
    if sign > 0:
        return 1.0 - C * (gt + eq), 1.0 - C * gt, gt, eq
    return -1.0 + C * lt, -1.0 + C * (lt + eq), lt, eq


def fit_thresholds(scores, ranks, k: int, C: float = 1.0) -> ThresholdFit:
    """Exact optimal thresholds and slacks for fixed scores ``w . mu_i``.

    Among optimal solutions, total slack is minimized first and remaining ties
    are resolved toward the mean score, so separable data gets ``a_r`` at the
    top score of rank r and ``b_r`` at the bottom score of rank r + 1.
    """
    scores = np.asarray(scores, dtype=float)
    ranks = np.asarray(ranks)
    members = _chain_members(scores, ranks, k)
    center = float(scores.mean())
    m = len(members)

    blocks = []  # [start, end, value]
    for j in range(m):
        blocks.append([j, j, _block_argmin(members[j:j + 1], C, center)])
        while len(blocks) > 1 and blocks[-2][2] > blocks[-1][2]:
            start, end = blocks[-2][0], blocks[-1][1]
            blocks[-2:] = [[start, end, _block_argmin(members[start:end + 1], C, center)]]

    if not np.isfinite(blocks[0][2]) or not np.isfinite(blocks[-1][2]):
        raise UnboundedProgramError(f"threshold problem is unbounded at C={C}; increase C")

    t = np.empty(m)
    alpha = np.zeros(scores.size)
    beta = np.zeros(scores.size)
    for start, end, value in blocks:
        t[start:end + 1] = value
        ranges = [_subgradient_range(*members[j][:2], value, C) for j in range(start, end + 1)]
        d = np.array([lo for lo, _, _, _ in ranges])
        room = np.array([hi - lo for lo, hi, _, _ in ranges])
        deficit = -d.sum()
        # raising late variables first keeps every prefix sum (chain multiplier) <= 0
        for j in range(len(d) - 1, -1, -1):
            inc = min(room[j], max(deficit, 0.0))
            d[j] += inc
            deficit -= inc
        for offset, (dj, (_, _, strict, eq)) in enumerate(zip(d, ranges)):
            sign, sorted_scores, order = members[start + offset]
            total = 1.0 - dj if sign > 0 else 1.0 + dj
            weights = alpha if sign > 0 else beta
            # strict: members beyond the threshold (above for a_r, below for b_r)
            if sign > 0:
                beyond = order[sorted_scores.size - strict:]
                tied = order[sorted_scores.size - strict - eq: sorted_scores.size - strict]
            else:
                beyond = order[:strict]
                tied = order[strict: strict + eq]
            weights[beyond] = C
            rest = total - C * strict
            for i in tied:
                share = min(C, max(rest, 0.0))
                weights[i] = share
                rest -= share

    a, b = t[0::2], t[1::2]
    eps = np.zeros(scores.size)
    sig = np.zeros(scores.size)
    low = ranks < k
    high = ranks > 1
    eps[low] = np.maximum(0.0, scores[low] - a[ranks[low] - 1])
    sig[high] = np.maximum(0.0, b[ranks[high] - 2] - scores[high])
    objective = float(np.sum(a - b) + C * (eps.sum() + sig.sum()))
    dual = float((alpha - beta) @ scores)
    return ThresholdFit(a, b, eps, sig, alpha, beta, objective, dual)


@dataclass
class RankSolution:
    w: np.ndarray
    a: np.ndarray
    b: np.ndarray
    eps: dict
    sig: dict
    objective: float
    margins: np.ndarray
    feasibility_residual: float
    degenerate: bool
    duality_gap: float
    C: float = 1.0
    n_iter: int = 0
    source_ids: list = field(default_factory=list)

    def total_slack(self) -> dict:
        out = {sid: 0.0 for sid in self.source_ids}
        for table in (self.eps, self.sig):
            for sid, value in table.items():
                out[sid] += value
        return out

    @property
    def max_slack(self) -> float:
        return max(self.total_slack().values(), default=0.0)

    def recomputed_objective(self) -> float:
        return float(np.sum(self.a - self.b) + self.C * (sum(self.eps.values()) + sum(self.sig.values())))


def feasibility_residual(data: RankedDataset, w, a, b, eps, sig) -> float:
    """Largest violation of any constraint of the program."""
    w = np.asarray(w, dtype=float)
    scores = data.matrix @ w
    ranks = data.ranks
    k = data.k
    viol = [0.0, float(np.linalg.norm(w)) - 1.0]
    viol.extend(a - b)
    viol.extend(b[:-1] - a[1:])
    for i, (sid, r) in enumerate(zip(data.ids, ranks)):
        if r < k:
            viol.append(scores[i] - a[r - 1] - eps[sid])
            viol.append(-eps[sid])
        if r > 1:
            viol.append(b[r - 2] - sig[sid] - scores[i])
            viol.append(-sig[sid])
    return max(0.0, float(max(viol)))


def _solution_from_fit(data, w, fit, degenerate, gap, n_iter) -> RankSolution:
    ranks = data.ranks
    ids = data.ids
    eps = {sid: float(fit.eps[i]) for i, sid in enumerate(ids) if ranks[i] < data.k}
    sig = {sid: float(fit.sig[i]) for i, sid in enumerate(ids) if ranks[i] > 1}
    return RankSolution(
        w=w,
        a=fit.a,
        b=fit.b,
        eps=eps,
        sig=sig,
        objective=fit.objective,
        margins=fit.b - fit.a,
        feasibility_residual=feasibility_residual(data, w, fit.a, fit.b, eps, sig),
        degenerate=degenerate,
        duality_gap=gap,
        C=data.C,
        n_iter=n_iter,
        source_ids=list(ids),
    )


def solve_sum_of_margins(data: RankedDataset, tol: float = 1e-9, max_iter: int = 10_000) -> RankSolution:
    """Globally optimal sum-of-margins solution; deterministic for a fixed input.

    When no direction achieves a negative objective (the ranks conflict), the
    solution is ``w = 0`` with collapsed thresholds and ``degenerate=True``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    k, C = data.k, data.C
    if k < 2:
        raise ValueError("need at least two ranks")
    M = data.matrix
    ranks = data.ranks
    # boundedness does not depend on w; check it once at w = 0
    fit_thresholds(np.zeros(len(ranks)), ranks, k, C)

    def lmo(x):
        fit = fit_thresholds(M @ -x, ranks, k, C)
        return (fit.alpha - fit.beta) @ M

    scale = max(1.0, float(np.max(np.abs(M))))
    zero_tol = 1e-10 * scale
    direction = M[ranks == k].mean(axis=0) - M[ranks == 1].mean(axis=0)
    try:
        result = min_norm_point(lmo, lmo(-direction), tol=tol, zero_tol=zero_tol, max_iter=max_iter)
    except NonConvergenceError as exc:
        best = exc.result
        w = -best.x / max(best.norm, zero_tol)
        fit = fit_thresholds(M @ w, ranks, k, C)
        raise SolverError(str(exc), _solution_from_fit(data, w, fit, False, best.gap, best.n_iter)) from exc

    norm = result.norm
    if norm <= zero_tol:
        w = np.zeros(data.d)
        degenerate = True
    else:
        w = -result.x / norm
        degenerate = False
    fit = fit_thresholds(M @ w, ranks, k, C)
    if not degenerate and fit.objective >= 0.0:
        # no direction beats w = 0 within rounding
        w = np.zeros(data.d)
        degenerate = True
        fit = fit_thresholds(M @ w, ranks, k, C)
    gap = fit.objective + norm
    return _solution_from_fit(data, w, fit, degenerate, max(gap, 0.0), result.n_iter)


def reward_from_w(w, fmap: FeatureMap) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (fmap.d,):
        raise ValueError(f"w has length {w.size} but features have dimension {fmap.d}")
    return fmap.phi @ w


@dataclass
class RepairReport:
    data: RankedDataset
    removed: list
    residual_slack: float
    resolved: bool
    degenerate: bool
    refused: list = field(default_factory=list)


def _needs_repair(sol: RankSolution, slack_tol: float) -> bool:
    return sol.degenerate or sol.max_slack > slack_tol


def prune_misranked(
    data: RankedDataset, slack_tol: float = 1e-6, max_removals: int = 1, tol: float = 1e-9
) -> RepairReport:
    """Repeatedly drop the demonstrator with the largest total slack.

    Members that are the sole representative of their rank are never removed;
    the next-highest-slack member is taken instead. If the data are fully
    conflicted (degenerate solution, so all slacks vanish) the demonstrator
    whose removal lowers the optimal objective most is dropped instead.
    Equal scores go to the lowest source id.
    """
    removed, refused = [], []
    sol = solve_sum_of_margins(data, tol=tol)
    while _needs_repair(sol, slack_tol) and len(removed) < max_removals:
        sizes = data.rank_sizes()
        if sol.degenerate:
            # removing a sole member would empty its rank, so it is never scored
            score = {mu.source_id: -solve_sum_of_margins(data.without(mu.source_id), tol=tol).objective
                     for mu in data.mus if sizes[mu.rank] > 1}
        else:
            score = sol.total_slack()
        order = sorted(score, key=lambda sid: (-score[sid], _id_key(sid)))
        rank_of = {mu.source_id: mu.rank for mu in data.mus}
        victim = None
        for sid in order:
            if sizes[rank_of[sid]] > 1:
                victim = sid
                break
            if sid not in refused:
                refused.append(sid)
        if victim is None:
            break
        log.info("pruning %r (score %.6g)", victim, score[victim])
        data = data.without(victim)
        removed.append(victim)
        sol = solve_sum_of_margins(data, tol=tol)
    return RepairReport(
        data=data,
        removed=removed,
        residual_slack=sol.max_slack,
        resolved=not _needs_repair(sol, slack_tol),
        degenerate=sol.degenerate,
        refused=refused,
    )


def incremental_build(
    seed: RankedDataset, candidates: Iterable[Mu], slack_tol: float = 1e-6, tol: float = 1e-9
) -> tuple[RankedDataset, list]:
    """Grow ``seed`` with candidates (in order) that keep the program slack-free."""
    sol = solve_sum_of_margins(seed, tol=tol)
    if _needs_repair(sol, slack_tol):
        raise ValueError(
            f"seed is not cleanly solvable (max slack {sol.max_slack:.3g}, degenerate={sol.degenerate})"
        )
    data, rejected = seed, []
    for mu in candidates:
        if mu.rank > seed.k:
            raise ValueError(f"candidate {mu.source_id!r} has rank {mu.rank} beyond k={seed.k}")
        trial = data.with_mu(mu)
        if _needs_repair(solve_sum_of_margins(trial, tol=tol), slack_tol):
            rejected.append(mu.source_id)
        else:
            data = trial
    return data, rejected


def dataset_from_arrays(vectors: Sequence, ranks: Sequence[int], C: float = 1.0, ids: Sequence[Any] | None = None):
    ids = list(range(len(ranks))) if ids is None else list(ids)
    return RankedDataset(tuple(Mu(v, r, sid) for v, r, sid in zip(vectors, ranks, ids)), C)
