"""Slow, obviously-correct reference computations used by the tests.

Nothing here imports the code under test.
"""

import math
from fractions import Fraction
from itertools import product

import numpy as np


def frame_cosine_distance(x, y):
    u = x / math.sqrt(float(np.dot(x, x)))
    v = y / math.sqrt(float(np.dot(y, y)))
    diff = u - v
    return float(np.dot(diff, diff)) / 4.0


def monotone_paths(n, m):
    """Every alignment path from (0,0) to (n-1,m-1) with steps (1,0),(0,1),(1,1)."""
    def extend(path):
        i, j = path[-1]
        if (i, j) == (n - 1, m - 1):
            yield path
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < n and j + dj < m:
                yield from extend(path + [(i + di, j + dj)])
    yield from extend([(0, 0)])


def dtw_exhaustive(x, y):
    """Minimum over all paths of (accumulated cost, length); cost / length of the
    lexicographically smallest (cost, length) pair. Costs are summed from the
    start of the path, frame by frame."""
    d = [[frame_cosine_distance(a, b) for b in y] for a in x]
    best = None
    for path in monotone_paths(len(x), len(y)):
        cost = 0.0
        for i, j in path:
            cost = cost + d[i][j]
        key = (cost, len(path))
        if best is None or key < best:
            best = key
    return best[0] / best[1]


def ap_threshold_sweep(distances, same):
    """Area under the PR curve by brute force: for every distinct threshold t,
    count pairs with distance <= t."""
    distances = np.asarray(distances, dtype=float)
    same = np.asarray(same, dtype=bool)
    n_pos = int(same.sum())
    ap = 0.0
    prev_recall = 0.0
    for t in sorted(set(distances.tolist())):
        sel = distances <= t
        tp = int(np.sum(sel & same))
        precision = tp / int(np.sum(sel))
        recall = tp / n_pos
        ap += precision * (recall - prev_recall)
        prev_recall = recall
    return ap


def ap_exact(distances, same):
    """Same sweep in exact rational arithmetic."""
    n_pos = sum(bool(s) for s in same)
    ap = Fraction(0)
    prev = Fraction(0)
    for t in sorted(set(distances)):
        sel = [k for k, d in enumerate(distances) if d <= t]
        tp = sum(1 for k in sel if same[k])
        recall = Fraction(tp, n_pos)
        ap += Fraction(tp, len(sel)) * (recall - prev)
        prev = recall
    return ap


def adadelta_scalar(grads, rho=0.9, eps=1e-6, x=0.0):
    """Scalar ADADELTA, one plain-float step per gradient; returns the deltas."""
    eg = ed = 0.0
    deltas = []
    for g in grads:
        eg = rho * eg + (1 - rho) * g * g
        dx = -math.sqrt(ed + eps) / math.sqrt(eg + eps) * g
        ed = rho * ed + (1 - rho) * dx * dx
        x += dx
        deltas.append(dx)
    return deltas


def all_pairs(n):
    return [(i, j) for i, j in product(range(n), repeat=2) if i < j]
