"""The trainable systems: word classifier CNN/DNN (optionally with a linear
bottleneck) and Siamese CNNs trained with coscos^2 or cos-hinge losses.

Checkpoint layout (little-endian)::

    b"AWEC" | u32 header_len | header JSON (utf-8, sorted keys)
    | parameter arrays as float64, in layer order, W before b, C order

The header holds the model spec, the list of ``[layer, name, shape]`` blocks
in payload order, and free-form metadata (e.g. the classifier vocabulary).
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import losses
from .data import PadConfig, SegmentArchive, pad_archive, sample_triplets, vocab_filter
from .embeddings import EmbeddingSet
from .net import (Affine, Conv1D, MaxPool, Network, ReLU, Softmax, init_network,
                  layer_from_dict, layer_to_dict, network_backward, network_forward,
                  output_shape)
from .optim import AdadeltaConfig, AdadeltaState, adadelta_step
from .samediff import UndefinedAPError, average_precision, score_pairs_cosine

log = logging.getLogger(__name__)

CLASSIFIER_CNN = "classifier_cnn"
CLASSIFIER_DNN = "classifier_dnn"
SIAMESE_CNN = "siamese_cnn"
MODEL_KINDS = (CLASSIFIER_CNN, CLASSIFIER_DNN, SIAMESE_CNN)

TAP_SOFTMAX = "softmax"
TAP_LOGITS = "logits"
TAP_BOTTLENECK = "bottleneck"
TAP_FINAL = "final"
TAPS = (TAP_SOFTMAX, TAP_LOGITS, TAP_BOTTLENECK, TAP_FINAL)


@dataclass(frozen=True)
class Widths:
    """Layer sizes for the default architectures."""

    num_filters: int = 96
    conv_widths: tuple = (9, 8)
    pool_width: int = 3
    classifier_hidden: int = 1024
    siamese_hidden: int = 2048
    dnn_hidden: int = 2048
    dnn_layers: int = 2


FULL_WIDTHS = Widths()
DESK_WIDTHS = Widths(num_filters=16, classifier_hidden=256, siamese_hidden=256,
                     dnn_hidden=256)


@dataclass
class ModelSpec:
    kind: str
    input_dim: int
    n_pad: int
    layers: list
    bottleneck: Optional[int] = None  # index of the bottleneck Affine layer

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == SIAMESE_CNN and self.bottleneck is not None:
            raise ValueError("bottleneck applies to classifiers only")
        if self.kind != SIAMESE_CNN and not isinstance(self.layers[-1], Softmax):
            raise ValueError("classifier specs end in a softmax")
        if self.kind == SIAMESE_CNN and not isinstance(self.layers[-1], Affine):
            raise ValueError("Siamese specs end in a linear layer")

    @property
    def input_shape(self) -> tuple:
        return (self.input_dim, self.n_pad)

    def shapes(self) -> list:
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            shapes.append(output_shape(layer, shapes[-1], i))
        return shapes

    @property
    def head_dim(self) -> int:
        return self.shapes()[-1][0]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "input_dim": self.input_dim, "n_pad": self.n_pad,
                "layers": [layer_to_dict(x) for x in self.layers],
                "bottleneck": self.bottleneck}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["kind"], d["input_dim"], d["n_pad"],
                   [layer_from_dict(x) for x in d["layers"]], d.get("bottleneck"))


def _conv_stack(w: Widths) -> list:
    layers = []
    for width in w.conv_widths:
        layers += [Conv1D(w.num_filters, width), ReLU(), MaxPool(w.pool_width)]
    return layers


def build_default_spec(kind: str, vocab_size: Optional[int] = None, *, input_dim: int = 39,
                       n_pad: int = 200, embed_dim: int = 1024, bottleneck: Optional[int] = None,
                       widths: Widths = FULL_WIDTHS) -> ModelSpec:
    """Architectures from the original setup; ``widths`` scales them down.

    classifier_cnn: conv(96,9) relu pool3 conv(96,8) relu pool3 fc1024 relu
    [linear bottleneck] softmax(vocab). classifier_dnn: two 2048-unit ReLU
    layers then softmax. siamese_cnn: the same conv stack, fc2048 relu,
    linear(embed_dim).
    """
    if kind in (CLASSIFIER_CNN, CLASSIFIER_DNN):
        if vocab_size is None or vocab_size < 2:
            raise ValueError("classifiers need vocab_size >= 2")
        if kind == CLASSIFIER_CNN:
            layers = _conv_stack(widths) + [Affine(widths.classifier_hidden), ReLU()]
        else:
            layers = []
            for _ in range(widths.dnn_layers):
                layers += [Affine(widths.dnn_hidden), ReLU()]
        bn_index = None
        if bottleneck is not None:
            bn_index = len(layers)
            layers.append(Affine(bottleneck))
        layers += [Affine(vocab_size), Softmax()]
    elif kind == SIAMESE_CNN:
        if bottleneck is not None:
            raise ValueError("bottleneck applies to classifiers only")
        bn_index = None
        layers = _conv_stack(widths) + [Affine(widths.siamese_hidden), ReLU(), Affine(embed_dim)]
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    spec = ModelSpec(kind, input_dim, n_pad, layers, bn_index)
    spec.shapes()
    return spec


@dataclass
class TrainConfig:
    seed: int = 1
    batch_size: int = 100
    max_epochs: int = 50
    patience: int = 5
    adadelta: AdadeltaConfig = field(default_factory=AdadeltaConfig)
    loss: losses.LossConfig = field(default_factory=losses.LossConfig)
    pad: PadConfig = field(default_factory=PadConfig)
    min_count: int = 3
    tap: str = TAP_SOFTMAX

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


@dataclass
class History:
    """Per-epoch records; epoch 0 is the untrained network."""

    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    vocab: list = field(default_factory=list)

    def record(self, epoch, train_loss, dev_ap):
        self.epochs.append({"epoch": epoch, "train_loss": train_loss, "dev_ap": dev_ap})

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "best_epoch": self.best_epoch, "vocab": self.vocab}


# ---------------------------------------------------------------------------
# embedding extraction

def tap_index(spec: ModelSpec, tap: str) -> int:
    """Index into a forward trace's activations for the requested tap."""
    n = len(spec.layers)
    if tap == TAP_FINAL:
        if spec.kind != SIAMESE_CNN:
            raise ValueError("the final-linear tap belongs to Siamese models")
        return n
    if spec.kind == SIAMESE_CNN:
        raise ValueError(f"tap {tap!r} is not available for Siamese models")
    if tap == TAP_SOFTMAX:
        return n
    if tap == TAP_LOGITS:
        return n - 1
    if tap == TAP_BOTTLENECK:
        if spec.bottleneck is None:
            raise ValueError("model has no bottleneck layer")
        return spec.bottleneck + 1
    raise ValueError(f"unknown tap {tap!r}")


def default_tap(spec: ModelSpec) -> str:
    return TAP_FINAL if spec.kind == SIAMESE_CNN else TAP_SOFTMAX


def embed_padded(net: Network, spec: ModelSpec, x: np.ndarray, tap: str,
                 chunk: int = 256) -> np.ndarray:
    k = tap_index(spec, tap)
    out = []
    for start in range(0, len(x), chunk):
        trace = network_forward(net, x[start:start + chunk])
        out.append(trace.activations[k].reshape(len(trace.output), -1))
    if not out:
        return np.zeros((0, int(np.prod(spec.shapes()[k]))))
    return np.concatenate(out)


def embed(net: Network, spec: ModelSpec, archive: SegmentArchive, tap: Optional[str] = None,
          pad: Optional[PadConfig] = None) -> EmbeddingSet:
    """One embedding per segment, in archive order."""
    tap = tap or default_tap(spec)
    tap_index(spec, tap)
    pad = pad or PadConfig(spec.n_pad, "center_truncate")
    x = pad_archive(archive, pad)
    vectors = embed_padded(net, spec, x, tap)
    return EmbeddingSet(vectors, archive.labels, [s.group_id for s in archive.segments])


def dev_average_precision(vectors: np.ndarray, labels) -> float:
    try:
        return average_precision(score_pairs_cosine(EmbeddingSet(vectors, labels))).ap
    except (UndefinedAPError, ValueError) as exc:
        log.warning("dev AP unavailable: %s", exc)
        return float("nan")


# ---------------------------------------------------------------------------
# training

class _Selector:
    """Keeps the parameters of the best dev-AP epoch and decides early stopping."""

    def __init__(self, net, patience):
        self.best_ap = -np.inf
        self.best = net.copy()
        self.best_epoch = 0
        self.stale = 0
        self.patience = patience

    def update(self, epoch, net, ap) -> bool:
        """Returns True when training should stop."""
        if np.isnan(ap):
            self.best = net.copy()
            self.best_epoch = epoch
            return False
        if ap > self.best_ap:
            self.best_ap = ap
            self.best = net.copy()
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def _pad_for(spec, config, archive):
    if config.pad.n_pad != spec.n_pad:
        raise ValueError(f"pad n_pad={config.pad.n_pad} does not match model n_pad={spec.n_pad}")
    return pad_archive(archive, config.pad)


def _eval_pad(spec, config):
    return PadConfig(spec.n_pad, "center_truncate") if config.pad.overflow == "error" else config.pad


def classifier_loss(net: Network, x: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy and its parameter gradients on one batch."""
    trace = network_forward(net, x)
    loss, g_logits = losses.cross_entropy_batch(trace.output, targets)
    grads, _ = network_backward(net, trace, g_logits / len(x), from_layer=len(net.layers) - 1,
                                input_gradient=False)
    return float(loss.mean()), grads, trace


def train_classifier(train: SegmentArchive, dev: SegmentArchive, spec: ModelSpec,
                     config: TrainConfig = TrainConfig()):
    """Minibatch ADADELTA on mean cross-entropy with dev-AP model selection.

    Returns ``(network, history)``; the network is the best dev-AP epoch's.
    """
    if spec.kind not in (CLASSIFIER_CNN, CLASSIFIER_DNN):
        raise ValueError(f"{spec.kind} is not a classifier")
    if len(train) == 0:
        raise ValueError("empty training archive")
    filtered, vocab = vocab_filter(train, config.min_count)
    if len(vocab) < 2:
        raise ValueError("classifier vocabulary has fewer than two word types")
    if spec.head_dim != len(vocab):
        raise ValueError(f"softmax size {spec.head_dim} != vocabulary size {len(vocab)}")
    x = _pad_for(spec, config, filtered)
    y = np.array([vocab[lab] for lab in filtered.labels], dtype=np.int64)
    x_dev = pad_archive(dev, _eval_pad(spec, config))
    tap = config.tap if config.tap in (TAP_SOFTMAX, TAP_LOGITS, TAP_BOTTLENECK) else TAP_SOFTMAX

    rng = np.random.default_rng(config.seed)
    net = init_network(spec.layers, spec.input_shape, rng)
    state = AdadeltaState(net.params)
    history = History(vocab=sorted(vocab, key=vocab.get))

    def full_loss():
        total = 0.0
        for s in range(0, len(x), 256):
            trace = network_forward(net, x[s:s + 256])
            total += losses.cross_entropy_batch(trace.output, y[s:s + 256])[0].sum()
        return total / len(x)

    ap = dev_average_precision(embed_padded(net, spec, x_dev, tap), dev.labels)
    history.record(0, full_loss(), ap)
    selector = _Selector(net, config.patience)
    selector.update(0, net, ap)
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(len(x))
        batch_losses = []
        for s in range(0, len(x), config.batch_size):
            idx = perm[s:s + config.batch_size]
            loss, grads, _ = classifier_loss(net, x[idx], y[idx])
            adadelta_step(net.params, grads, state, config.adadelta)
            batch_losses.append(loss * len(idx))
        ap = dev_average_precision(embed_padded(net, spec, x_dev, tap), dev.labels)
        history.record(epoch, float(np.sum(batch_losses) / len(x)), ap)
        log.info("classifier epoch %d loss %.4f dev AP %.4f", epoch, history.epochs[-1]["train_loss"], ap)
        if selector.update(epoch, net, ap):
            break
    history.best_epoch = selector.best_epoch
    return selector.best, history


def _siamese_values(emb, loss_config):
    b = len(emb) // 3
    e1, e2, e3 = emb[:b], emb[b:2 * b], emb[2 * b:]
    if loss_config.kind == losses.COS_HINGE:
        loss, g1, g2, g3 = losses.cos_hinge_batch(e1, e2, e3, loss_config.margin,
                                                  loss_config.distance)
        return loss, np.concatenate([g1, g2, g3]) / b
    if loss_config.kind == losses.COSCOS2:
        l_same, gs1, gs2 = losses.coscos2_batch(e1, e2, True)
        l_diff, gd1, gd3 = losses.coscos2_batch(e1, e3, False)
        return np.concatenate([l_same, l_diff]), np.concatenate([gs1 + gd1, gs2, gd3]) / (2 * b)
    raise ValueError(f"{loss_config.kind} is not a Siamese loss")


def siamese_loss(net: Network, x: np.ndarray, loss_config: losses.LossConfig,
                 index: np.ndarray | None = None):
    """Loss and gradients for a stacked batch ``[anchors; sames; differents]``.

    With ``index`` given, ``x`` holds distinct segments and row ``k`` of the
    stacked batch is ``x[index[k]]``; each segment then goes through the
    network once and the gradients of all its occurrences are summed. Every
    branch shares the one parameter store.
    """
    trace = network_forward(net, x)
    emb = trace.output if index is None else trace.output[index]
    loss, g_emb = _siamese_values(emb, loss_config)
    if index is not None:
        g = np.zeros_like(trace.output)
        np.add.at(g, index, g_emb)
        g_emb = g
    grads, _ = network_backward(net, trace, g_emb, input_gradient=False)
    return float(loss.mean()), grads, trace


def train_siamese(train: SegmentArchive, pairs: np.ndarray, dev: SegmentArchive,
                  spec: ModelSpec, config: TrainConfig = TrainConfig()):
    """Train tied-weight Siamese branches on (anchor, same, different) triplets.

    Each epoch draws one negative per same-type pair. cos-hinge uses the
    triplet directly; coscos^2 uses (anchor, same) as a same pair and
    (anchor, different) as a different pair.
    """
    if spec.kind != SIAMESE_CNN:
        raise ValueError(f"{spec.kind} is not a Siamese model")
    if config.loss.kind not in (losses.COS_HINGE, losses.COSCOS2):
        raise ValueError(f"{config.loss.kind} is not a Siamese loss")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("no same-type pairs to train on")
    labels = train.labels
    if len(set(labels)) < 2:
        raise ValueError("need at least two word types to sample negatives")
    x = _pad_for(spec, config, train)
    x_dev = pad_archive(dev, _eval_pad(spec, config))

    rng = np.random.default_rng(config.seed)
    net = init_network(spec.layers, spec.input_shape, rng)
    state = AdadeltaState(net.params)
    history = History()

    def full_loss(triplets):
        emb = embed_padded(net, spec, x, TAP_FINAL)
        return float(_siamese_values(emb[triplets.T.reshape(-1)], config.loss)[0].mean())

    ap = dev_average_precision(embed_padded(net, spec, x_dev, TAP_FINAL), dev.labels)
    history.record(0, full_loss(sample_triplets(pairs, labels, np.random.default_rng(config.seed))), ap)
    selector = _Selector(net, config.patience)
    selector.update(0, net, ap)
    for epoch in range(1, config.max_epochs + 1):
        triplets = sample_triplets(pairs, labels, rng)
        triplets = triplets[rng.permutation(len(triplets))]
        batch_losses = []
        for s in range(0, len(triplets), config.batch_size):
            t = triplets[s:s + config.batch_size]
            uniq, index = np.unique(t.T.reshape(-1), return_inverse=True)
            loss, grads, _ = siamese_loss(net, x[uniq], config.loss, index)
            adadelta_step(net.params, grads, state, config.adadelta)
            batch_losses.append(loss * len(t))
        ap = dev_average_precision(embed_padded(net, spec, x_dev, TAP_FINAL), dev.labels)
        history.record(epoch, float(np.sum(batch_losses) / len(triplets)), ap)
        log.info("siamese epoch %d loss %.4f dev AP %.4f", epoch, history.epochs[-1]["train_loss"], ap)
        if selector.update(epoch, net, ap):
            break
    history.best_epoch = selector.best_epoch
    return selector.best, history


# ---------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"AWEC"


def write_checkpoint(net: Network, spec: ModelSpec, meta: Optional[dict] = None) -> bytes:
    blocks = [[i, name, list(arr.shape)] for i, name, arr in net.flat_params()]
    header = {"spec": spec.to_dict(), "blocks": blocks, "meta": meta or {}}
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(arr.astype("<f8").tobytes() for _, _, arr in net.flat_params())
    return CKPT_MAGIC + struct.pack("<I", len(raw)) + raw + payload


def read_checkpoint(data: bytes):
    """Returns ``(network, spec, meta)``."""
    if data[:4] != CKPT_MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    (n,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8:8 + n].decode("utf-8"))
    spec = ModelSpec.from_dict(header["spec"])
    params = [{} for _ in spec.layers]
    pos = 8 + n
    for i, name, shape in header["blocks"]:
        count = int(np.prod(shape))
        if pos + 8 * count > len(data):
            raise ValueError("truncated checkpoint payload")
        params[i][name] = np.frombuffer(data, "<f8", count, pos).astype(np.float64).reshape(shape)
        pos += 8 * count
    if pos != len(data):
        raise ValueError("trailing bytes after checkpoint payload")
    return Network(spec.input_shape, list(spec.layers), params), spec, header["meta"]
