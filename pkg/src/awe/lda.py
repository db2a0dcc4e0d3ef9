"""Linear discriminant analysis for compacting embeddings.

Serialized layout (little-endian)::

    b"AWEL" | u32 d_in | u32 d_out | mean f64[d_in] | eigenvalues f64[d_out]
    | projection f64[d_in * d_out], row-major
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSet

log = logging.getLogger(__name__)

MAGIC = b"AWEL"


@dataclass
class LdaModel:
    mean: np.ndarray
    projection: np.ndarray  # (d_in, d_out)
    eigenvalues: np.ndarray

    @property
    def d_in(self) -> int:
        return self.projection.shape[0]

    @property
    def d_out(self) -> int:
        return self.projection.shape[1]


def scatter_matrices(x: np.ndarray, labels):
    """Within-class and between-class scatter of the rows of ``x``."""
    labels = np.asarray(labels, dtype=object)
    mu = x.mean(axis=0)
    d = x.shape[1]
    s_w = np.zeros((d, d))
    s_b = np.zeros((d, d))
    for lab in sorted(set(labels.tolist())):
        xc = x[labels == lab]
        mc = xc.mean(axis=0)
        centered = xc - mc
        s_w += centered.T @ centered
        diff = (mc - mu)[:, None]
        s_b += len(xc) * (diff @ diff.T)
    return s_w, s_b


def lda_fit(embeddings: EmbeddingSet, target_dim: int, shrinkage: float = 1e-4) -> LdaModel:
    """Fit the projection onto the leading eigenvectors of S_w^-1 S_b.

    S_w is regularized as ``S_w + shrinkage * trace(S_w) / d * I`` and the
    generalized problem is solved after whitening by its Cholesky factor.
    Eigenvectors are S_w-orthonormal, ordered by descending eigenvalue, with
    the first nonzero component made positive.
    """
    if target_dim < 1:
        raise ValueError("target_dim must be >= 1")
    x = embeddings.vectors
    labels = embeddings.labels
    classes, counts = np.unique(np.asarray(labels, dtype=object), return_counts=True)
    if len(classes) < 2:
        raise ValueError("LDA needs at least two classes")
    if counts.min() < 2:
        raise ValueError("every class needs at least two samples")
    if target_dim > len(classes) - 1:
        log.warning("target_dim %d exceeds num_classes - 1; clamping to %d",
                    target_dim, len(classes) - 1)
        target_dim = len(classes) - 1
    target_dim = min(target_dim, x.shape[1])
    s_w, s_b = scatter_matrices(x, labels)
    d = x.shape[1]
    s_w = s_w + shrinkage * np.trace(s_w) / d * np.eye(d)
    try:
        chol = np.linalg.cholesky(s_w)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("regularized within-class scatter is singular") from None
    inv_l = np.linalg.solve(chol, np.eye(d))
    m = inv_l @ s_b @ inv_l.T
    m = (m + m.T) / 2
    vals, vecs = np.linalg.eigh(m)
    order = np.argsort(-vals, kind="stable")[:target_dim]
    vals = np.maximum(vals[order], 0.0)
    w = inv_l.T @ vecs[:, order]
    for k in range(w.shape[1]):
        nz = np.flatnonzero(np.abs(w[:, k]) > 1e-12 * np.abs(w[:, k]).max())
        if nz.size and w[nz[0], k] < 0:
            w[:, k] = -w[:, k]
    return LdaModel(x.mean(axis=0), w, vals)


def lda_transform(model: LdaModel, embeddings: EmbeddingSet) -> EmbeddingSet:
    if embeddings.d != model.d_in:
        raise ValueError(f"embedding dimension {embeddings.d} != LDA input dimension {model.d_in}")
    return EmbeddingSet((embeddings.vectors - model.mean) @ model.projection,
                        embeddings.labels, embeddings.groups)


def write_lda(model: LdaModel) -> bytes:
    return (MAGIC + struct.pack("<II", model.d_in, model.d_out)
            + model.mean.astype("<f8").tobytes()
            + model.eigenvalues.astype("<f8").tobytes()
            + model.projection.astype("<f8").tobytes())


def read_lda(data: bytes) -> LdaModel:
    if data[:4] != MAGIC:
        raise ValueError("not an LDA model file (bad magic)")
    d_in, d_out = struct.unpack_from("<II", data, 4)
    expected = 12 + 8 * (d_in + d_out + d_in * d_out)
    if len(data) != expected:
        raise ValueError(f"LDA file has {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype="<f8", offset=12).astype(np.float64)
    mean = arr[:d_in]
    vals = arr[d_in:d_in + d_out]
    proj = arr[d_in + d_out:].reshape(d_in, d_out)
    return LdaModel(mean, proj, vals)
