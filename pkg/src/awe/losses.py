"""Cosine distance and the training objectives, with gradients.

Batched functions take embeddings as ``(N, d)`` arrays and return per-row
losses plus gradients w.r.t. every input row.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

MIN_NORM = 1e-12
CROSS_ENTROPY = "cross_entropy"
COSCOS2 = "coscos2"
COS_HINGE = "cos_hinge"
KINDS = (CROSS_ENTROPY, COSCOS2, COS_HINGE)


class DegenerateVectorError(ValueError):
    """An embedding with (near-)zero norm was given to a cosine-based function."""


@dataclass(frozen=True)
class LossConfig:
    kind: str = COS_HINGE
    margin: Optional[float] = 0.15
    distance: str = "cosine"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if (self.margin is not None) != (self.kind == COS_HINGE):
            raise ValueError("margin is required for cos_hinge and only for it")
        if self.margin is not None and not 0.0 <= self.margin <= 1.0:
            raise ValueError(f"margin must lie in [0, 1], got {self.margin}")
        if self.distance not in ("cosine", "euclidean"):
            raise ValueError(f"unknown distance {self.distance!r}")


def _rows(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 1 else x


def _cos_parts(a, b):
    """Cosine of row pairs plus gradients of the cosine w.r.t. a and b."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    bad = np.flatnonzero((na < MIN_NORM) | (nb < MIN_NORM))
    if bad.size:
        raise DegenerateVectorError(f"near-zero norm embedding in row {int(bad[0])}")
    ua = a / na[:, None]
    ub = b / nb[:, None]
    # rounding can push the cosine of (anti-)parallel rows just past +-1
    cos = np.clip(np.sum(ua * ub, axis=1), -1.0, 1.0)
    da = (ub - cos[:, None] * ua) / na[:, None]
    db = (ua - cos[:, None] * ub) / nb[:, None]
    return cos, da, db


def _euclid_parts(a, b):
    diff = a - b
    dist = np.linalg.norm(diff, axis=1)
    safe = np.where(dist > 0, dist, 1.0)
    g = diff / safe[:, None]
    return dist, g, -g


def cosine_distance(x1, x2) -> float:
    """(1 - cos) / 2: 0 for parallel, 0.5 for orthogonal, 1 for anti-parallel."""
    cos, _, _ = _cos_parts(_rows(x1), _rows(x2))
    return float(np.clip((1.0 - cos[0]) / 2.0, 0.0, 1.0))


def pair_distance(a, b, distance: str = "cosine"):
    """Row-wise distances and their gradients w.r.t. a and b."""
    a, b = _rows(a), _rows(b)
    if distance == "euclidean":
        return _euclid_parts(a, b)
    cos, da, db = _cos_parts(a, b)
    return (1.0 - cos) / 2.0, -0.5 * da, -0.5 * db


def coscos2_batch(a, b, same):
    """Per-pair coscos^2 loss: (1 - cos)/2 for same pairs, cos^2 otherwise."""
    a, b = _rows(a), _rows(b)
    same = np.broadcast_to(np.asarray(same, dtype=bool), (a.shape[0],))
    cos, da, db = _cos_parts(a, b)
    loss = np.where(same, (1.0 - cos) / 2.0, cos * cos)
    coef = np.where(same, -0.5, 2.0 * cos)[:, None]
    return loss, coef * da, coef * db


def cos_hinge_batch(anchor, same, diff, margin: float = 0.15, distance: str = "cosine"):
    """Per-triplet hinge loss max(0, m + d(anchor, same) - d(anchor, diff)).

    At the boundary (argument exactly 0) the gradient is taken as zero.
    """
    d12, g1a, g2 = pair_distance(anchor, same, distance)
    d13, g1b, g3 = pair_distance(anchor, diff, distance)
    arg = margin + d12 - d13
    active = (arg > 0.0)[:, None].astype(np.float64)
    loss = np.maximum(arg, 0.0)
    return loss, active * (g1a - g1b), active * g2, -active * g3


def coscos2_loss(x1, x2, same: bool) -> float:
    loss, _, _ = coscos2_batch(x1, x2, same)
    return float(loss[0])


def cos_hinge_loss(x1, x2, x3, margin: float = 0.15) -> float:
    loss, _, _, _ = cos_hinge_batch(x1, x2, x3, margin)
    return float(loss[0])


def cross_entropy_batch(probs, targets):
    """Per-row -ln p[target] plus the gradient w.r.t. the softmax logits."""
    probs = _rows(probs)
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if np.any(targets < 0) or np.any(targets >= probs.shape[1]):
        raise IndexError(f"target class out of range for {probs.shape[1]} classes")
    picked = probs[np.arange(len(targets)), targets]
    if np.any(picked < 1e-300):
        log.warning("clamping %d predicted probabilities below 1e-300", int(np.sum(picked < 1e-300)))
        picked = np.maximum(picked, 1e-300)
    loss = -np.log(picked)
    grad = probs.copy()
    grad[np.arange(len(targets)), targets] -= 1.0
    return loss, grad


def cross_entropy_loss(predicted, target: int) -> float:
    loss, _ = cross_entropy_batch(predicted, [target])
    return float(loss[0])


def loss_gradients(kind: str, *inputs, margin: float = 0.15):
    """Gradients of a loss w.r.t. its inputs.

    cross_entropy: (probs, target) -> gradient w.r.t. logits
    coscos2: (x1, x2, same) -> (d/dx1, d/dx2)
    cos_hinge: (x1, x2, x3) -> (d/dx1, d/dx2, d/dx3)
    """
    if kind == CROSS_ENTROPY:
        probs, target = inputs
        _, g = cross_entropy_batch(probs, [target])
        return g[0]
    if kind == COSCOS2:
        x1, x2, same = inputs
        _, g1, g2 = coscos2_batch(x1, x2, same)
        return g1[0], g2[0]
    if kind == COS_HINGE:
        x1, x2, x3 = inputs
        _, g1, g2, g3 = cos_hinge_batch(x1, x2, x3, margin)
        return g1[0], g2[0], g3[0]
    raise ValueError(f"unknown loss kind {kind!r}")

