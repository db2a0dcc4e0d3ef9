"""Same-different word discrimination: score every segment pair, sweep a
distance threshold, and summarize the precision-recall curve by its area (AP).
"""

from __future__ import annotations

import csv
import io
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .data import SegmentArchive
from .embeddings import EmbeddingSet
from .losses import MIN_NORM, DegenerateVectorError


class UndefinedAPError(ValueError):
    """Average precision needs at least one same-type pair."""


@dataclass
class ScoredPairList:
    """Distances and same-type flags for all pairs (i, j), i < j, in row-major order."""

    distances: np.ndarray
    same: np.ndarray
    n: int

    def __post_init__(self):
        self.distances = np.asarray(self.distances, dtype=np.float64)
        self.same = np.asarray(self.same, dtype=bool)
        if len(self.distances) != len(self.same):
            raise ValueError("distances and flags differ in length")
        if self.n >= 0 and len(self.distances) != self.n * (self.n - 1) // 2:
            raise ValueError(f"{len(self.distances)} pairs is not n(n-1)/2 for n={self.n}")
        if not np.all(np.isfinite(self.distances)):
            raise ValueError("pair distances must be finite")

    def __len__(self):
        return len(self.distances)


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    ap: float


def same_flags(labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=object)
    iu, ju = np.triu_indices(len(labels), k=1)
    return labels[iu] == labels[ju]


def _unit_rows(x, what="segment"):
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms < MIN_NORM)
    if bad.size:
        raise DegenerateVectorError(f"{what} {int(bad[0])} has a near-zero norm")
    return x / norms[:, None]


def pairwise_distances(vectors: np.ndarray, metric: str = "cosine") -> np.ndarray:
    """Condensed distances for all i < j. Cosine distance is computed as
    ``|u - v|^2 / 4`` on unit vectors, which equals ``(1 - cos) / 2`` and is
    exactly zero for identical directions."""
    x = np.asarray(vectors, dtype=np.float64)
    if metric == "cosine":
        x = _unit_rows(x)
    elif metric != "euclidean":
        raise ValueError(f"unknown metric {metric!r}")
    n = len(x)
    out = np.empty(n * (n - 1) // 2)
    pos = 0
    for i in range(n - 1):
        diff = x[i + 1:] - x[i]
        sq = np.einsum("ij,ij->i", diff, diff)
        out[pos:pos + n - 1 - i] = sq / 4.0 if metric == "cosine" else np.sqrt(sq)
        pos += n - 1 - i
    return out


def score_pairs_cosine(embeddings: EmbeddingSet, metric: str = "cosine") -> ScoredPairList:
    if len(embeddings) < 2:
        raise ValueError("need at least two segments to form pairs")
    dist = pairwise_distances(embeddings.vectors, metric)
    return ScoredPairList(dist, same_flags(embeddings.labels), len(embeddings))


# ---------------------------------------------------------------------------
# DTW

@njit(cache=True, nogil=True)
def _dtw_dp(d):
    n, m = d.shape
    cost = np.empty((n, m))
    length = np.empty((n, m), dtype=np.int64)
    cost[0, 0] = d[0, 0]
    length[0, 0] = 1
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                continue
            best = np.inf
            best_len = 0
            if i > 0 and j > 0:
                best = cost[i - 1, j - 1]
                best_len = length[i - 1, j - 1]
            if i > 0:
                c = cost[i - 1, j]
                if c < best or (c == best and length[i - 1, j] < best_len):
                    best = c
                    best_len = length[i - 1, j]
            if j > 0:
                c = cost[i, j - 1]
                if c < best or (c == best and length[i, j - 1] < best_len):
                    best = c
                    best_len = length[i, j - 1]
            cost[i, j] = best + d[i, j]
            length[i, j] = best_len + 1
    return cost[n - 1, m - 1], length[n - 1, m - 1]


def frame_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cosine distance between every frame of x and every frame of y."""
    u = _unit_rows(np.asarray(x, dtype=np.float64), "frame")
    v = _unit_rows(np.asarray(y, dtype=np.float64), "frame")
    diff = u[:, None, :] - v[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff) / 4.0


def dtw_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Minimum accumulated frame cosine distance over monotone alignments with
    steps (1,0), (0,1), (1,1), divided by the length of that alignment.

    Among equal-cost alignments the shortest one is used.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"frame dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    if len(x) < 1 or len(y) < 1:
        raise ValueError("sequences must have at least one frame")
    cost, length = _dtw_dp(frame_distances(x, y))
    return float(cost / length)


def score_pairs_dtw(archive: SegmentArchive, threads: int = 1) -> ScoredPairList:
    n = len(archive)
    if n < 2:
        raise ValueError("need at least two segments to form pairs")
    units = [_unit_rows(s.frames, f"frame of segment {i}") for i, s in enumerate(archive.segments)]
    offsets = np.concatenate([[0], np.cumsum(np.arange(n - 1, 0, -1))])
    out = np.empty(n * (n - 1) // 2)

    def row(i):
        u = units[i]
        for k, j in enumerate(range(i + 1, n)):
            diff = u[:, None, :] - units[j][None, :, :]
            cost, length = _dtw_dp(np.einsum("ijk,ijk->ij", diff, diff) / 4.0)
            out[offsets[i] + k] = cost / length

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(row, range(n - 1)))
    else:
        for i in range(n - 1):
            row(i)
    return ScoredPairList(out, same_flags(archive.labels), n)


# ---------------------------------------------------------------------------
# average precision

def average_precision(scored: ScoredPairList) -> PRCurve:
    """Threshold sweep over ascending distance.

    Pairs sharing a distance cross the threshold together, so each distinct
    distance contributes one (precision, recall) point and
    AP = sum_k precision_k * (recall_k - recall_{k-1}).
    """
    same = scored.same
    n_pos = int(same.sum())
    if n_pos == 0:
        raise UndefinedAPError("no same-type pairs: AP is undefined")
    order = np.argsort(scored.distances, kind="stable")
    d = scored.distances[order]
    hits = same[order].astype(np.int64)
    last = np.flatnonzero(np.append(d[1:] != d[:-1], True))
    tp = np.cumsum(hits)[last]
    retrieved = last + 1
    precision = tp / retrieved
    recall = tp / n_pos
    gained = np.diff(np.concatenate([[0], tp]))
    ap = float(np.sum(precision * gained) / n_pos)
    return PRCurve(d[last], precision, recall, ap)


# ---------------------------------------------------------------------------
# reports

def report_text(curve: PRCurve, scored: ScoredPairList, title: str = "same-different") -> str:
    n_same = int(scored.same.sum())
    lines = [
        f"{title}",
        f"  segments:        {scored.n}",
        f"  pairs:           {len(scored)}",
        f"  same-type pairs: {n_same}",
        f"  AP:              {curve.ap:.6f}",
    ]
    return "\n".join(lines) + "\n"


def pr_csv(curve: PRCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "precision", "recall"])
    for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
        w.writerow([repr(float(t)), repr(float(p)), repr(float(r))])
    return buf.getvalue()


def pair_dump(scored: ScoredPairList) -> bytes:
    """u32 n, then per pair (i < j, row-major): f64 distance, u8 same flag."""
    rec = np.empty(len(scored), dtype=[("d", "<f8"), ("s", "u1")])
    rec["d"] = scored.distances
    rec["s"] = scored.same
    return struct.pack("<I", scored.n) + rec.tobytes()


def read_pair_dump(data: bytes) -> ScoredPairList:
    (n,) = struct.unpack_from("<I", data, 0)
    rec = np.frombuffer(data, dtype=[("d", "<f8"), ("s", "u1")], offset=4)
    return ScoredPairList(rec["d"].copy(), rec["s"].astype(bool), n)


def same_different_report(source, mode: str = "cosine", threads: int = 1,
                          title: str | None = None):
    """Score all pairs of an EmbeddingSet (cosine/euclidean) or a SegmentArchive
    (dtw, on the unpadded frames). Returns ``(curve, scored, text)``."""
    if mode == "dtw":
        if not isinstance(source, SegmentArchive):
            raise TypeError("dtw mode needs a SegmentArchive")
        scored = score_pairs_dtw(source, threads)
    else:
        if not isinstance(source, EmbeddingSet):
            raise TypeError(f"{mode} mode needs an EmbeddingSet")
        scored = score_pairs_cosine(source, mode)
    curve = average_precision(scored)
    return curve, scored, report_text(curve, scored, title or f"same-different ({mode})")
