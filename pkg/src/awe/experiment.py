"""Run configuration and the multi-seed reference experiment.

A ``RunConfig`` is a JSON document; unknown keys are rejected at every level
so that a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import losses
from .data import PadConfig, cmvn_normalize, extract_same_pairs, vocab_filter
from .embeddings import EmbeddingSet
from .lda import lda_fit, lda_transform
from .models import (CLASSIFIER_CNN, CLASSIFIER_DNN, DESK_WIDTHS, FULL_WIDTHS, SIAMESE_CNN,
                     TAP_BOTTLENECK, TrainConfig, Widths, build_default_spec, embed,
                     train_classifier, train_siamese)
from .optim import AdadeltaConfig
from .samediff import same_different_report
from .synth import SynthConfig, synth_generate

log = logging.getLogger(__name__)

DTW = "dtw"
DNN = "classifier_dnn"
CNN = "classifier_cnn"
CNN_BOTTLENECK = "classifier_cnn_bottleneck"
COSCOS2 = "siamese_coscos2"
HINGE = "siamese_cos_hinge"
HINGE_LDA = "siamese_cos_hinge_lda"
MODELS = (DTW, DNN, CNN, CNN_BOTTLENECK, COSCOS2, HINGE, HINGE_LDA)

SWEEP_SIAMESE = "siamese"
SWEEP_BOTTLENECK = "bottleneck"
SWEEP_FAMILIES = (SWEEP_SIAMESE, SWEEP_BOTTLENECK)

WIDTH_PRESETS = {"desk": DESK_WIDTHS, "full": FULL_WIDTHS}


def _reject_unknown(cls, data: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {', '.join(unknown)}")


@dataclass
class RunConfig:
    """Everything one experiment needs. Defaults are the desk-scale setup."""

    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    synth: SynthConfig = field(default_factory=SynthConfig)
    synth_seed: int = 1
    widths: str = "desk"
    embed_dim: int = 8
    bottleneck: int = 8
    lda_dim: int = 10
    # width of the cos-hinge network whose outputs LDA compacts to lda_dim
    lda_source_dim: int = 50
    # LDA shrinkage candidates; the one with the best dev AP is used per seed
    shrinkage_grid: list = field(default_factory=lambda: [1e-4, 1e-3, 1e-2, 0.1, 0.3, 1.0, 3.0])
    margin: float = 0.15
    distance: str = "cosine"
    n_pad: int = 120
    batch_size: int = 100
    max_epochs: int = 40
    patience: int = 10
    rho: float = 0.9
    epsilon: float = 1e-6
    min_count: int = 3
    tap: str = "softmax"
    threads: int = 1
    models: list = field(default_factory=lambda: list(MODELS))
    sweep_dims: list = field(default_factory=lambda: [10, 50, 200, 500])
    sweep_families: list = field(default_factory=lambda: list(SWEEP_FAMILIES))

    def __post_init__(self):
        if isinstance(self.synth, dict):
            _reject_unknown(SynthConfig, self.synth, "synth")
            self.synth = SynthConfig(**self.synth)
        if not self.seeds:
            raise ValueError("seed list is empty")
        if not self.shrinkage_grid or min(self.shrinkage_grid) < 0:
            raise ValueError("shrinkage_grid must be a nonempty list of values >= 0")
        if self.widths not in WIDTH_PRESETS:
            raise ValueError(f"widths must be one of {sorted(WIDTH_PRESETS)}")
        for m in self.models:
            if m not in MODELS:
                raise ValueError(f"unknown model {m!r}; choose from {', '.join(MODELS)}")
        for f in self.sweep_families:
            if f not in SWEEP_FAMILIES:
                raise ValueError(f"unknown sweep family {f!r}")
        if min(self.n_pad, self.embed_dim, self.bottleneck, self.lda_dim, self.lda_source_dim) < 1:
            raise ValueError("n_pad and all dimensions must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        _reject_unknown(cls, data, "run config")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["synth"] = self.synth.to_dict()
        return d

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def width_preset(self) -> Widths:
        return WIDTH_PRESETS[self.widths]

    def train_config(self, seed: int, loss: Optional[losses.LossConfig] = None) -> TrainConfig:
        return TrainConfig(seed=seed, batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience=self.patience, adadelta=AdadeltaConfig(self.rho, self.epsilon),
                           loss=loss or losses.LossConfig(margin=self.margin, distance=self.distance),
                           pad=PadConfig(self.n_pad), min_count=self.min_count, tap=self.tap)


@dataclass
class Corpus:
    train: object
    dev: object
    test: object


def prepare_corpus(config: RunConfig) -> Corpus:
    """Generate the synthetic corpus and CMVN-normalize every split."""
    train, dev, test = synth_generate(config.synth, config.synth_seed)
    return Corpus(cmvn_normalize(train), cmvn_normalize(dev), cmvn_normalize(test))


def _test_ap(emb: EmbeddingSet, config: RunConfig) -> float:
    return same_different_report(emb, config.distance)[0].ap


class Trainer:
    """Trains each (model, width, seed) once per experiment and caches it."""

    def __init__(self, config: RunConfig, corpus: Corpus):
        self.config = config
        self.corpus = corpus
        self.pairs = extract_same_pairs(corpus.train)
        self.cache: dict = {}

    def classifier(self, kind, seed, bottleneck=None):
        key = (kind, bottleneck, seed)
        if key not in self.cache:
            c = self.config
            vocab = len(vocab_filter(self.corpus.train, c.min_count)[1])
            spec = build_default_spec(kind, vocab, input_dim=self.corpus.train.dim, n_pad=c.n_pad,
                                      bottleneck=bottleneck, widths=c.width_preset)
            net, _ = train_classifier(self.corpus.train, self.corpus.dev, spec, c.train_config(seed))
            self.cache[key] = (net, spec)
        return self.cache[key]

    def siamese(self, loss_kind, seed, embed_dim):
        key = (loss_kind, embed_dim, seed)
        if key not in self.cache:
            c = self.config
            loss = (losses.LossConfig(losses.COSCOS2, None) if loss_kind == losses.COSCOS2
                    else losses.LossConfig(losses.COS_HINGE, c.margin, c.distance))
            spec = build_default_spec(SIAMESE_CNN, input_dim=self.corpus.train.dim, n_pad=c.n_pad,
                                      embed_dim=embed_dim, widths=c.width_preset)
            net, _ = train_siamese(self.corpus.train, self.pairs, self.corpus.dev, spec,
                                   c.train_config(seed, loss))
            self.cache[key] = (net, spec)
        return self.cache[key]


def fit_lda_on_dev(config: RunConfig, train_emb: EmbeddingSet, dev_emb: EmbeddingSet):
    """Fit LDA on training embeddings, picking the shrinkage with the best dev AP.

    Training embeddings of a trained network are tighter than held-out ones,
    so the within-class scatter they give is optimistic and needs shrinking.
    """
    classes = len(set(train_emb.labels))
    best, best_ap = None, -1.0
    for lam in config.shrinkage_grid:
        lda = lda_fit(train_emb, min(config.lda_dim, classes - 1), lam)
        ap = _test_ap(lda_transform(lda, dev_emb), config)
        log.info("LDA shrinkage %g: dev AP %.4f", lam, ap)
        if ap > best_ap:
            best, best_ap = lda, ap
    return best


def _model_ap(trainer: Trainer, model: str, seed: int):
    """Test AP and embedding dimension of one model trained with one seed."""
    c = trainer.config
    test = trainer.corpus.test
    if model in (DNN, CNN):
        net, spec = trainer.classifier(CLASSIFIER_DNN if model == DNN else CLASSIFIER_CNN, seed)
        emb = embed(net, spec, test, c.tap)
    elif model == CNN_BOTTLENECK:
        net, spec = trainer.classifier(CLASSIFIER_CNN, seed, c.bottleneck)
        emb = embed(net, spec, test, TAP_BOTTLENECK)
    elif model in (COSCOS2, HINGE):
        net, spec = trainer.siamese(losses.COSCOS2 if model == COSCOS2 else losses.COS_HINGE,
                                    seed, c.embed_dim)
        emb = embed(net, spec, test)
    elif model == HINGE_LDA:
        net, spec = trainer.siamese(losses.COS_HINGE, seed, c.lda_source_dim)
        lda = fit_lda_on_dev(c, embed(net, spec, trainer.corpus.train),
                             embed(net, spec, trainer.corpus.dev))
        emb = lda_transform(lda, embed(net, spec, test))
    else:
        raise ValueError(f"unknown model {model!r}")
    return _test_ap(emb, c), emb.d


@dataclass
class ResultRow:
    model: str
    dim: int
    aps: list

    @property
    def ap_mean(self) -> float:
        return float(np.mean(self.aps))

    @property
    def ap_std(self) -> float:
        # population standard deviation over seeds
        return float(np.std(self.aps))


def run_reference_experiment(config: RunConfig, corpus: Optional[Corpus] = None,
                             trainer: Optional[Trainer] = None) -> list:
    """Train and evaluate every configured model over the seed list.

    Returns one ``ResultRow`` per model, in ``config.models`` order. The DTW
    baseline has no seed dependence; its row repeats the one AP per seed.
    """
    corpus = corpus or prepare_corpus(config)
    trainer = trainer or Trainer(config, corpus)
    rows = []
    for model in config.models:
        if model == DTW:
            ap = same_different_report(corpus.test, "dtw", config.threads)[0].ap
            rows.append(ResultRow(model, corpus.test.dim, [ap] * len(config.seeds)))
            continue
        aps, dim = [], 0
        for seed in config.seeds:
            ap, dim = _model_ap(trainer, model, seed)
            log.info("%s seed %d: test AP %.4f", model, seed, ap)
            aps.append(ap)
        rows.append(ResultRow(model, dim, aps))
    return rows


def lda_source_row(config: RunConfig, corpus: Optional[Corpus] = None,
                   trainer: Optional[Trainer] = None) -> ResultRow:
    """Test AP of the unprojected cos-hinge embeddings that the LDA row starts from."""
    corpus = corpus or prepare_corpus(config)
    trainer = trainer or Trainer(config, corpus)
    aps = []
    for seed in config.seeds:
        net, spec = trainer.siamese(losses.COS_HINGE, seed, config.lda_source_dim)
        aps.append(_test_ap(embed(net, spec, corpus.test), config))
    return ResultRow(HINGE, config.lda_source_dim, aps)


def sweep_dim(config: RunConfig, corpus: Optional[Corpus] = None,
              trainer: Optional[Trainer] = None) -> list:
    """Test AP against embedding dimension for the Siamese cos-hinge final
    layer and/or the classifier bottleneck. Returns ``(family, ResultRow)``."""
    corpus = corpus or prepare_corpus(config)
    trainer = trainer or Trainer(config, corpus)
    out = []
    for family in config.sweep_families:
        for dim in config.sweep_dims:
            aps = []
            for seed in config.seeds:
                if family == SWEEP_SIAMESE:
                    net, spec = trainer.siamese(losses.COS_HINGE, seed, dim)
                    emb = embed(net, spec, corpus.test)
                else:
                    net, spec = trainer.classifier(CLASSIFIER_CNN, seed, dim)
                    emb = embed(net, spec, corpus.test, TAP_BOTTLENECK)
                aps.append(_test_ap(emb, config))
                log.info("sweep %s dim %d seed %d: test AP %.4f", family, dim, seed, aps[-1])
            out.append((family, ResultRow(family, dim, aps)))
    return out


def results_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "dim", "ap_mean", "ap_std"])
    for r in rows:
        w.writerow([r.model, r.dim, repr(r.ap_mean), repr(r.ap_std)])
    return buf.getvalue()


def sweep_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "dim", "ap_mean", "ap_std"])
    for family, r in results:
        w.writerow([family, r.dim, repr(r.ap_mean), repr(r.ap_std)])
    return buf.getvalue()
