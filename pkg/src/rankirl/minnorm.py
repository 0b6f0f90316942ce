"""Minimum-norm point of a polytope given only a linear minimization oracle.

Wolfe's algorithm keeps a "corral" of polytope vertices and alternates two
steps: an exact affine minimum-norm solve over the corral, and a call to the
oracle ``lmo(x) = argmin_{z in Z} x . z`` that either certifies optimality
(``(x . x - x . v) / ||x|| <= tol``) or supplies a new vertex. It terminates finitely on
polytopes and every iterate is a convex combination of vertices, so the
distance ``||x||`` is always a valid upper bound on the optimum.

Both max-margin problems in this package reduce to it: the sum-of-margins
ranking program is ``-min_{z in Z} ||z||`` over the polytope of dual scores,
and the apprenticeship separation step is a min-norm point over a finite set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class MinNormResult:
    x: np.ndarray
    vertices: np.ndarray  # corral, one vertex per row
    weights: np.ndarray
    gap: float  # (x.x - min_z x.z) / ||x|| at termination
    n_iter: int
    converged: bool

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.x))


class NonConvergenceError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


def _affine_minimizer(S: np.ndarray) -> np.ndarray:
    """Weights ``a`` (summing to one) minimizing ``||a @ S||``."""
    m = S.shape[0]
    if m == 1:
        return np.ones(1)
    G = S @ S.T
    K = np.zeros((m + 1, m + 1))
    K[:m, :m] = G
    K[:m, m] = K[m, :m] = 1.0
    rhs = np.zeros(m + 1)
    rhs[m] = 1.0
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    a = sol[:m]
    return a / a.sum()


def min_norm_point(
    lmo: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    *,
    tol: float = 1e-12,
    zero_tol: float = 1e-12,
    max_iter: int = 10_000,
) -> MinNormResult:
    """Run Wolfe's algorithm from the vertex ``x0``.

    Stops when ``(x.x - min_z x.z) / ||x|| <= tol``: for both callers this is
    the gap between the best primal objective and the dual bound ``||x||``.
    Also stops once ``||x|| <= zero_tol`` (the origin is in the polytope).
    """
    S = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    lam = np.ones(1)
    x = S[0].copy()
    gap = np.inf
    weight_eps = 1e-14

    for it in range(1, max_iter + 1):
        norm = float(np.linalg.norm(x))
        if norm <= zero_tol:
            return MinNormResult(x, S, lam, 0.0, it, True)
        v = np.asarray(lmo(x), dtype=float)
        gap = float(x @ x - x @ v) / norm
        if gap <= tol:
            return MinNormResult(x, S, lam, max(gap, 0.0), it, True)
        if np.any(np.all(np.abs(S - v) <= 1e-15 * (1.0 + np.abs(v)), axis=1)):
            # oracle returned a corral vertex: x is optimal up to rounding
            scale = float(np.max(np.linalg.norm(S, axis=1)))
            return MinNormResult(x, S, lam, gap, it, gap <= max(tol, 1e-10 * scale))
        S = np.vstack([S, v])
        lam = np.append(lam, 0.0)

        for _ in range(S.shape[0] + 1):  # minor cycles
            alpha = _affine_minimizer(S)
            if np.all(alpha > weight_eps):
                lam = alpha
                break
            neg = alpha <= weight_eps
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg, lam / (lam - alpha), np.inf)
            theta = min(1.0, float(np.min(ratios)))
            lam = theta * alpha + (1.0 - theta) * lam
            lam[lam < weight_eps] = 0.0
            keep = lam > 0
            if not keep.any():  # numerical breakdown; restart from the best vertex
                keep[np.argmin(np.einsum("ij,ij->i", S, S))] = True
                lam = keep.astype(float)
            S, lam = S[keep], lam[keep] / lam[keep].sum()
        x = lam @ S

    raise NonConvergenceError(
        f"min-norm point not certified after {max_iter} iterations (gap {gap:.3e})",
        MinNormResult(x, S, lam, gap, max_iter, False),
    )


def min_norm_in_hull(points: np.ndarray, **kwargs) -> MinNormResult:
    """Minimum-norm point of the convex hull of a finite point set (rows)."""
    P = np.atleast_2d(np.asarray(points, dtype=float))

    def lmo(x):
        # lowest index among exact ties keeps the result deterministic
        return P[int(np.argmin(P @ x))]

    start = P[int(np.argmin(np.einsum("ij,ij->i", P, P)))]
    return min_norm_point(lmo, start, **kwargs)
