"""Fixed-dimensional embeddings aligned with their word labels.

File layout (little-endian)::

    b"AWEE" | u32 n | u32 d | per item: u16 len | label utf-8 | u16 len | group utf-8
    | n * d float64, row-major
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"AWEE"


@dataclass(eq=False)
class EmbeddingSet:
    vectors: np.ndarray
    labels: list
    groups: list = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError(f"vectors must be (n, d), got {self.vectors.shape}")
        self.labels = list(self.labels)
        if not self.groups:
            self.groups = [""] * len(self.labels)
        if len(self.labels) != len(self.vectors) or len(self.groups) != len(self.vectors):
            raise ValueError("labels/groups do not match the number of vectors")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding vectors must be finite")

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.vectors)


def write_embeddings(emb: EmbeddingSet, stream=None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", len(emb), emb.d))
    for label, group in zip(emb.labels, emb.groups):
        for text in (label, group):
            raw = text.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
    buf.write(emb.vectors.astype("<f8").tobytes())
    data = buf.getvalue()
    if stream is not None:
        stream.write(data)
    return data


def read_embeddings(source) -> EmbeddingSet:
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    if data[:4] != MAGIC:
        raise ValueError("not an embedding file (bad magic)")
    n, d = struct.unpack_from("<II", data, 4)
    pos = 12
    labels, groups = [], []
    for _ in range(n):
        for out in (labels, groups):
            (length,) = struct.unpack_from("<H", data, pos)
            pos += 2
            out.append(bytes(data[pos:pos + length]).decode("utf-8"))
            pos += length
    if len(data) - pos != 8 * n * d:
        raise ValueError(f"embedding payload has {len(data) - pos} bytes, expected {8 * n * d}")
    vectors = np.frombuffer(data, dtype="<f8", offset=pos).reshape(n, d).astype(np.float64)
    return EmbeddingSet(vectors, labels, groups)


def load_embeddings(path) -> EmbeddingSet:
    with open(path, "rb") as f:
        return read_embeddings(f)


def save_embeddings(emb: EmbeddingSet, path) -> None:
    with open(path, "wb") as f:
        write_embeddings(emb, f)
