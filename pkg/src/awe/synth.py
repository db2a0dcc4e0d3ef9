"""Synthetic word-segment corpus standing in for forced-aligned speech.

Each word type gets a smooth random trajectory in feature space, built by
blurring a sequence of targets ("phones"). Words are strings over a small
shared syllable inventory, so different types share onsets and pieces and are
only partly distinguishable frame by frame. A token is a randomly
time-warped read-out of its type's trajectory at a random duration, plus
Gaussian noise with two parts: white noise, and a slowly varying component
confined to a fixed low-rank subspace of the features (a stand-in for
speaker and channel variation). Tokens are spread over recording groups so
that per-group CMVN has something to do.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import Segment, SegmentArchive


@dataclass(frozen=True)
class SynthConfig:
    num_types: int = 30
    tokens_per_type: int = 20
    dim: int = 13
    duration_range: tuple = (40, 120)
    warp_strength: float = 0.5
    noise_sigma: float = 0.3
    unseen_type_fraction: float = 0.0
    num_groups: int = 8
    num_phones: int = 10
    num_syllables: int = 8
    phones_per_syllable: tuple = (1, 2)
    syllables_per_word: tuple = (2, 3)
    smoothing: float = 2.0
    nuisance_gain: float = 2.0
    nuisance_rank: int = 4
    split: tuple = (4, 1, 1)

    def __post_init__(self):
        object.__setattr__(self, "duration_range", tuple(self.duration_range))
        object.__setattr__(self, "split", tuple(self.split))
        object.__setattr__(self, "phones_per_syllable", tuple(self.phones_per_syllable))
        object.__setattr__(self, "syllables_per_word", tuple(self.syllables_per_word))
        lo, hi = self.duration_range
        if self.num_types < 2:
            raise ValueError("num_types must be >= 2")
        if self.tokens_per_type < 2:
            raise ValueError("tokens_per_type must be >= 2")
        if self.dim < 1 or not 1 <= lo <= hi:
            raise ValueError("invalid dim or duration_range")
        if self.warp_strength < 0 or self.noise_sigma < 0:
            raise ValueError("warp_strength and noise_sigma must be >= 0")
        if not 0.0 <= self.unseen_type_fraction < 1.0:
            raise ValueError("unseen_type_fraction must lie in [0, 1)")
        if self.num_groups < 1 or self.num_phones < 2:
            raise ValueError("num_groups must be >= 1 and num_phones >= 2")
        for name in ("phones_per_syllable", "syllables_per_word"):
            lo_, hi_ = getattr(self, name)
            if not 1 <= lo_ <= hi_:
                raise ValueError(f"invalid {name} range")
        if self.nuisance_gain < 0 or not 0 <= self.nuisance_rank <= self.dim:
            raise ValueError("invalid nuisance settings")
        if len(self.split) != 3 or min(self.split) < 0 or sum(self.split) <= 0:
            raise ValueError("split must be three nonnegative weights")

    def to_dict(self) -> dict:
        return asdict(self)


def _syllables(rng, num_phones, count, length_range):
    out = []
    for _ in range(count):
        n = int(rng.integers(length_range[0], length_range[1] + 1))
        seq = [int(rng.integers(num_phones))]
        while len(seq) < n:
            p = int(rng.integers(num_phones))
            if p != seq[-1]:
                seq.append(p)
        out.append(seq)
    return out


def _word(rng, syllables, length_range, taken):
    """Draw a syllable sequence not already used by another word type."""
    for _ in range(1000):
        n = int(rng.integers(length_range[0], length_range[1] + 1))
        picks = rng.integers(len(syllables), size=n)
        phones = tuple(p for i in picks for p in syllables[i])
        # repeated neighbours would merge into one longer phone
        phones = tuple(p for k, p in enumerate(phones) if k == 0 or p != phones[k - 1])
        if phones not in taken:
            taken.add(phones)
            return list(phones)
    raise ValueError("cannot draw enough distinct word types; enlarge the syllable inventory")


def _template(rng, phones, seq, smoothing, grid=200):
    """Smooth trajectory through a sequence of phone targets.

    Returned as a function of position in [0, 1].
    """
    n_seg = len(seq)
    share = rng.uniform(0.6, 1.4, size=n_seg)
    edges = np.concatenate([[0.0], np.cumsum(share) / share.sum()])
    s = (np.arange(grid) + 0.5) / grid
    which = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, n_seg - 1)
    path = phones[seq[which]]
    if smoothing > 0:
        # coarticulation: blur phone boundaries with a Gaussian kernel
        width = smoothing * grid / 40.0
        k = np.arange(-int(3 * width) - 1, int(3 * width) + 2)
        kernel = np.exp(-0.5 * (k / width) ** 2)
        kernel /= kernel.sum()
        padded = np.pad(path, ((len(k) // 2, len(k) // 2), (0, 0)), mode="edge")
        path = np.stack([np.convolve(padded[:, j], kernel, mode="valid") for j in range(path.shape[1])], 1)

    def curve(pos):
        return np.stack([np.interp(pos, s, path[:, j]) for j in range(path.shape[1])], 1)

    return curve


def _smooth_noise(rng, n, rank, knots=5):
    """Slowly varying Gaussian trajectories: random values at a few knots,
    linearly interpolated over n frames."""
    values = rng.normal(size=(knots, rank))
    pos = np.linspace(0, knots - 1, n)
    return np.stack([np.interp(pos, np.arange(knots), values[:, j]) for j in range(rank)], 1)


def _warp(rng, n, strength):
    """Monotone map of n frame positions onto [0, 1]."""
    if n == 1:
        return np.array([0.5])
    if strength == 0:
        return np.linspace(0.0, 1.0, n)
    knots = rng.normal(size=4)
    rate = np.exp(strength * np.interp(np.linspace(0, 3, n - 1), np.arange(4), knots))
    pos = np.concatenate([[0.0], np.cumsum(rate)])
    return pos / pos[-1]


def _split_sizes(total, weights):
    w = np.asarray(weights, dtype=float)
    raw = total * w / w.sum()
    sizes = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - sizes), kind="stable")[: total - sizes.sum()]:
        sizes[i] += 1
    return sizes


def synth_generate(config: SynthConfig = SynthConfig(), seed: int = 1):
    """Return ``(train, dev, test)`` archives with token-disjoint splits.

    A fraction of word types (``unseen_type_fraction``) is routed entirely to
    the test split so that test contains types never seen in training.
    """
    rng = np.random.default_rng(seed)
    c = config
    phones = rng.normal(size=(c.num_phones, c.dim))
    syllables = _syllables(rng, c.num_phones, c.num_syllables, c.phones_per_syllable)
    taken: set = set()
    words = [_word(rng, syllables, c.syllables_per_word, taken) for _ in range(c.num_types)]
    curves = [_template(rng, phones, np.array(w), c.smoothing) for w in words]
    basis = np.linalg.qr(rng.normal(size=(c.dim, c.dim)))[0][:, :c.nuisance_rank]
    lo, hi = c.duration_range
    labels = [f"w{t:03d}" for t in range(c.num_types)]
    tokens = []
    for t in range(c.num_types):
        for _ in range(c.tokens_per_type):
            n = int(rng.integers(lo, hi + 1))
            frames = curves[t](_warp(rng, n, c.warp_strength))
            noise = rng.normal(size=frames.shape)
            if c.nuisance_rank:
                noise += c.nuisance_gain * _smooth_noise(rng, n, c.nuisance_rank) @ basis.T
            frames = frames + c.noise_sigma * noise
            group = f"spk{int(rng.integers(c.num_groups)):02d}"
            tokens.append(Segment(labels[t], group, frames))

    total = len(tokens)
    n_train, n_dev, n_test = _split_sizes(total, c.split)
    n_unseen = int(round(c.unseen_type_fraction * c.num_types))
    unseen = set(rng.permutation(c.num_types)[:n_unseen].tolist())
    held = [i for i in range(total) if i // c.tokens_per_type in unseen]
    if len(held) > n_test:
        raise ValueError(f"{len(held)} unseen-type tokens do not fit a test split of {n_test}")
    rest = [i for i in range(total) if i // c.tokens_per_type not in unseen]
    rest = [rest[i] for i in rng.permutation(len(rest))]
    n_fill = n_test - len(held)
    test_idx = sorted(held + rest[:n_fill])
    train_idx = sorted(rest[n_fill:n_fill + n_train])
    dev_idx = sorted(rest[n_fill + n_train:])

    def pick(idx):
        return SegmentArchive(c.dim, [tokens[i] for i in idx])

    return pick(train_idx), pick(dev_idx), pick(test_idx)
