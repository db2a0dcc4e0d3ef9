"""Word segments: archive I/O, per-group CMVN, padding and pair supervision.

Archive layout (little-endian)::

    b"AWE1" | u32 n_segments | u32 dim
    per segment: u16 len | label utf-8 | u16 len | group utf-8 | u32 n_frames
                 | n_frames * dim float32, frame-major
"""

from __future__ import annotations

import io
import struct
from collections import Counter
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np

MAGIC = b"AWE1"


class ArchiveError(ValueError):
    """Malformed archive stream; ``offset`` is where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class PadOverflowError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Segment:
    """One word token: its type label, recording group and ``(T, b)`` frames."""

    word_label: str
    group_id: str
    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError(f"segment {self.word_label!r}: frames must be (T>=1, b), got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError(f"segment {self.word_label!r}: non-finite frame values")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


class SegmentArchive(Sequence):
    """Ordered segments sharing one frame dimension."""

    def __init__(self, dim: int, segments: Iterable[Segment] = ()):
        self.dim = int(dim)
        self.segments = list(segments)
        for i, seg in enumerate(self.segments):
            if seg.frames.shape[1] != self.dim:
                raise ValueError(f"non-uniform frame dimension: segment {i} has "
                                 f"{seg.frames.shape[1]}, archive has {self.dim}")

    @classmethod
    def from_segments(cls, segments: Sequence[Segment]) -> "SegmentArchive":
        return cls(check_uniform_dim(segments), segments)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return SegmentArchive(self.dim, self.segments[i])
        return self.segments[i]

    def __len__(self):
        return len(self.segments)

    @property
    def labels(self) -> list:
        return [s.word_label for s in self.segments]

    def subset(self, indices) -> "SegmentArchive":
        return SegmentArchive(self.dim, [self.segments[i] for i in indices])

    def __repr__(self):
        return f"SegmentArchive(dim={self.dim}, n={len(self)})"


# ---------------------------------------------------------------------------
# binary format

def write_archive(archive: SegmentArchive, stream: BinaryIO | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", len(archive), archive.dim))
    for seg in archive.segments:
        for text in (seg.word_label, seg.group_id):
            raw = text.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"string too long for archive: {text[:20]!r}...")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
        buf.write(struct.pack("<I", seg.n_frames))
        buf.write(seg.frames.astype("<f4").tobytes())
    data = buf.getvalue()
    if stream is not None:
        stream.write(data)
    return data


def read_archive(source) -> SegmentArchive:
    """Parse an archive from bytes or a binary stream."""
    data = source if isinstance(source, (bytes, bytearray, memoryview)) else source.read()
    data = bytes(data)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise ArchiveError(f"truncated {what}: need {n} bytes, {len(data) - pos} left", pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise ArchiveError("bad magic", 0)
    count, dim = struct.unpack("<II", take(8, "header"))
    segments = []
    for _ in range(count):
        strings = []
        for what in ("label", "group"):
            (length,) = struct.unpack("<H", take(2, f"{what} length"))
            start = pos
            raw = take(length, what)
            try:
                strings.append(raw.decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise ArchiveError(f"invalid UTF-8 in {what}", start + exc.start) from None
        (n_frames,) = struct.unpack("<I", take(4, "frame count"))
        if n_frames < 1:
            raise ArchiveError("segment with zero frames", pos - 4)
        start = pos
        raw = take(4 * n_frames * dim, "frame payload")
        frames = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(n_frames, dim)
        if not np.all(np.isfinite(frames)):
            raise ArchiveError("non-finite frame value", start)
        segments.append(Segment(strings[0], strings[1], frames))
    if pos != len(data):
        raise ArchiveError(f"{len(data) - pos} trailing bytes", pos)
    return SegmentArchive(dim, segments)


def check_uniform_dim(segments: Sequence[Segment]) -> int:
    dims = {s.frames.shape[1] for s in segments}
    if len(dims) > 1:
        raise ValueError(f"non-uniform frame dimensions {sorted(dims)}")
    return dims.pop() if dims else 0


def load_archive(path) -> SegmentArchive:
    with open(path, "rb") as f:
        return read_archive(f)


def save_archive(archive: SegmentArchive, path) -> None:
    with open(path, "wb") as f:
        write_archive(archive, f)


# ---------------------------------------------------------------------------
# normalization and padding

def cmvn_normalize(archive: SegmentArchive, var_floor: float = 1e-8) -> SegmentArchive:
    """Per-group mean and variance normalization over the group's pooled frames.

    Coordinates whose pooled variance is below ``var_floor`` only lose their mean.
    """
    groups: dict = {}
    for i, seg in enumerate(archive.segments):
        groups.setdefault(seg.group_id, []).append(i)
    out = list(archive.segments)
    for idx in groups.values():
        pooled = np.concatenate([archive.segments[i].frames for i in idx])
        mean = pooled.mean(axis=0)
        var = pooled.var(axis=0)
        std = np.where(var < var_floor, 1.0, np.sqrt(var))
        for i in idx:
            seg = archive.segments[i]
            out[i] = Segment(seg.word_label, seg.group_id, (seg.frames - mean) / std)
    return SegmentArchive(archive.dim, out)


@dataclass(frozen=True)
class PadConfig:
    n_pad: int = 200
    overflow: str = "error"  # or "center_truncate"

    def __post_init__(self):
        if self.n_pad < 1:
            raise ValueError("n_pad must be >= 1")
        if self.overflow not in ("error", "center_truncate"):
            raise ValueError(f"unknown overflow policy {self.overflow!r}")


def pad_segment(segment: Segment, config: PadConfig = PadConfig(), name: str = "") -> np.ndarray:
    """``(b, n_pad)`` matrix: the frames as columns, zeros after them."""
    frames = segment.frames
    n, n_pad = frames.shape[0], config.n_pad
    if n > n_pad:
        if config.overflow == "error":
            who = name or repr(segment.word_label)
            raise PadOverflowError(f"segment {who} has {n} frames, more than n_pad={n_pad}")
        start = (n - n_pad) // 2
        frames = frames[start:start + n_pad]
        n = n_pad
    out = np.zeros((frames.shape[1], n_pad))
    out[:, :n] = frames.T
    return out


def pad_archive(archive: SegmentArchive, config: PadConfig = PadConfig()) -> np.ndarray:
    """Stack of padded segments, shape ``(N, b, n_pad)``."""
    out = np.zeros((len(archive), archive.dim, config.n_pad))
    for i, seg in enumerate(archive.segments):
        out[i] = pad_segment(seg, config, name=f"#{i} ({seg.word_label!r})")
    return out


# ---------------------------------------------------------------------------
# supervision

def extract_same_pairs(archive_or_labels) -> np.ndarray:
    """All unordered same-label index pairs ``(m, n)``, ``m < n``, as a ``(P, 2)`` array."""
    labels = _labels(archive_or_labels)
    by_label: dict = {}
    for i, lab in enumerate(labels):
        by_label.setdefault(lab, []).append(i)
    pairs = [(m, n) for idx in by_label.values()
             for a, m in enumerate(idx) for n in idx[a + 1:]]
    pairs.sort()
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def _labels(archive_or_labels) -> list:
    if isinstance(archive_or_labels, SegmentArchive):
        return archive_or_labels.labels
    return list(archive_or_labels)


def sample_triplets(pairs: np.ndarray, archive_or_labels, rng: np.random.Generator) -> np.ndarray:
    """One ``(anchor, same, different)`` row per pair; negatives drawn uniformly
    from segments whose label differs from the anchor's."""
    labels = np.asarray(_labels(archive_or_labels), dtype=object)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    uniq, codes = np.unique(labels, return_inverse=True)
    if len(uniq) < 2:
        raise ValueError("need at least two word types to sample negatives")
    order = np.argsort(codes, kind="stable")
    counts = np.bincount(codes, minlength=len(uniq))
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    anchor_codes = codes[pairs[:, 0]]
    n_neg = len(labels) - counts[anchor_codes]
    # index into "everything except the anchor's block" of the label-sorted order
    r = rng.integers(0, n_neg)
    skip = r >= starts[anchor_codes]
    pos = r + skip * counts[anchor_codes]
    negatives = order[pos]
    return np.column_stack([pairs, negatives])


def vocab_filter(archive: SegmentArchive, min_count: int = 3):
    """Keep segments whose label occurs at least ``min_count`` times.

    Returns the filtered archive and a label -> class index map (sorted labels).
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(archive.labels)
    keep = [i for i, s in enumerate(archive.segments) if counts[s.word_label] >= min_count]
    if not keep:
        raise ValueError(f"no word type occurs at least {min_count} times")
    filtered = archive.subset(keep)
    vocab = {lab: k for k, lab in enumerate(sorted(set(filtered.labels)))}
    return filtered, vocab
