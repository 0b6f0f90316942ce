"""Independent reference computations used only by the test-suite."""

import itertools

import numpy as np
from scipy.optimize import linprog


def threshold_lp(scores, ranks, k, C):
    """Optimal value of the fixed-w threshold/slack LP via HiGHS (None if unbounded)."""
    scores = np.asarray(scores, float)
    ranks = np.asarray(ranks)
    n = scores.size
    m = 2 * (k - 1)
    # variables: t (a_1, b_1, ..., a_{k-1}, b_{k-1}), eps (n), sig (n)
    nv = m + 2 * n
    c = np.zeros(nv)
    c[0:m:2] = 1.0
    c[1:m:2] = -1.0
    c[m:] = C
    A, b = [], []
    for j in range(m - 1):
        row = np.zeros(nv)
        row[j], row[j + 1] = 1.0, -1.0
        A.append(row)
        b.append(0.0)
    bounds = [(None, None)] * m
    for i in range(n):
        r = ranks[i]
        if r < k:
            row = np.zeros(nv)  # s_i - a_r - eps_i <= 0
            row[2 * (r - 1)] = -1.0
            row[m + i] = -1.0
            A.append(row)
            b.append(-scores[i])
        if r > 1:
            row = np.zeros(nv)  # b_{r-1} - sig_i - s_i <= 0
            row[2 * (r - 2) + 1] = 1.0
            row[m + n + i] = -1.0
            A.append(row)
            b.append(scores[i])
    for i in range(n):
        bounds.append((0, None) if ranks[i] < k else (0, 0))
    for i in range(n):
        bounds.append((0, None) if ranks[i] > 1 else (0, 0))
    res = linprog(c, A_ub=np.array(A), b_ub=np.array(b), bounds=bounds, method="highs")
    if res.status == 3:
        return None
    assert res.status == 0, res.message
    return res.fun


def _threshold_sequences(values, m):
    """All nondecreasing length-m sequences drawn from ``values`` (rows)."""
    idx = np.array(list(itertools.combinations_with_replacement(range(len(values)), m)))
    return np.asarray(values)[idx]


def enumerated_threshold_values(score_rows, ranks, k, C):
    """Exact fixed-w optimum for each row of scores by enumerating thresholds.

    Some LP vertex puts every threshold on a score value, so scanning all
    ordered threshold sequences over the score set is exact whenever the
    program is bounded (C >= 1 always is).
    """
    score_rows = np.atleast_2d(score_rows)
    ranks = np.asarray(ranks)
    m = 2 * (k - 1)
    out = np.empty(score_rows.shape[0])
    for row, scores in enumerate(score_rows):
        T = _threshold_sequences(np.unique(scores), m)  # (n_seq, m)
        a, b = T[:, 0::2], T[:, 1::2]
        obj = (a - b).sum(axis=1)
        for i, r in enumerate(ranks):
            if r < k:
                obj += C * np.maximum(0.0, scores[i] - a[:, r - 1])
            if r > 1:
                obj += C * np.maximum(0.0, b[:, r - 2] - scores[i])
        out[row] = obj.min()
    return out


def brute_force_objective(mus, ranks, k, C=1.0, resolution=1e-3, refine=True):
    """Global optimum by scanning unit directions (d <= 2) with an exact inner solve.

    The program is positively homogeneous in w, so its optimum is
    min(0, min over unit directions). For d = 2 the circle is scanned at
    ``resolution`` radians and the three best cells are rescanned 100x finer.
    """
    mus = np.atleast_2d(np.asarray(mus, float))
    if mus.shape[0] != len(ranks):
        mus = mus.T
    d = mus.shape[1]
    f = lambda W: enumerated_threshold_values(W @ mus.T, ranks, k, C)
    if d == 1:
        return min(0.0, float(f(np.array([[1.0], [-1.0]])).min()))
    assert d == 2
    circle = lambda th: np.column_stack([np.cos(th), np.sin(th)])
    thetas = np.arange(0.0, 2 * np.pi, resolution)
    vals = f(circle(thetas))
    best = vals.min()
    if refine:
        for t0 in thetas[np.argsort(vals)[:3]]:
            best = min(best, f(circle(np.linspace(t0 - resolution, t0 + resolution, 201))).min())
    return min(0.0, float(best))
