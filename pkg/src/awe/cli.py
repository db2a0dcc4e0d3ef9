"""Command-line interface: ``awe <subcommand> [options]``.

Every subcommand writes only inside its ``--out`` directory. Exit status is
0 on success, 1 on a runtime error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import losses
from .data import (cmvn_normalize, extract_same_pairs, load_archive, save_archive,
                   vocab_filter)
from .embeddings import load_embeddings, save_embeddings
from .experiment import (RunConfig, WIDTH_PRESETS, prepare_corpus, results_csv,
                         run_reference_experiment, sweep_csv, sweep_dim)
from .lda import lda_fit, lda_transform, read_lda, write_lda
from .models import (CLASSIFIER_CNN, CLASSIFIER_DNN, SIAMESE_CNN, TAPS, build_default_spec,
                     classifier_loss, embed, read_checkpoint, siamese_loss, train_classifier,
                     train_siamese, write_checkpoint)
from .net import (Affine, Conv1D, LossEval, MaxPool, ReLU, Softmax, finite_difference_check,
                  init_network)
from .samediff import pair_dump, pr_csv, same_different_report
from .synth import synth_generate

log = logging.getLogger("awe")

# Flags that map onto RunConfig fields; a flag given on the command line wins
# over the --config file.
RUN_FLAGS = {
    "seed": ("seeds", lambda v: [v]),
    "seeds": ("seeds", lambda v: [int(s) for s in v.split(",")]),
    "widths": ("widths", str),
    "embed_dim": ("embed_dim", int),
    "bottleneck": ("bottleneck", int),
    "lda_dim": ("lda_dim", int),
    "lda_source_dim": ("lda_source_dim", int),
    "n_pad": ("n_pad", int),
    "batch_size": ("batch_size", int),
    "epochs": ("max_epochs", int),
    "patience": ("patience", int),
    "margin": ("margin", float),
    "distance": ("distance", str),
    "min_count": ("min_count", int),
    "threads": ("threads", int),
    "dims": ("sweep_dims", lambda v: [int(s) for s in v.split(",")]),
    "families": ("sweep_families", lambda v: v.split(",")),
    "models": ("models", lambda v: v.split(",")),
}

SYNTH_FLAGS = ("num_types", "tokens_per_type", "dim", "noise_sigma", "warp_strength",
               "unseen_type_fraction")


def _run_config(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
    config = RunConfig.from_dict(data)
    changes = {}
    for flag, (key, convert) in RUN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = convert(value)
    synth = {k: getattr(args, k) for k in SYNTH_FLAGS if getattr(args, k, None) is not None}
    if synth:
        changes["synth"] = {**config.synth.to_dict(), **synth}
    if getattr(args, "synth_seed", None) is not None:
        changes["synth_seed"] = args.synth_seed
    if not changes:
        return config
    merged = config.to_dict()
    merged.update(changes)
    return RunConfig.from_dict(merged)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(out: Path, name: str, data) -> Path:
    path = out / name
    if isinstance(data, str):
        path.write_text(data)
    else:
        path.write_bytes(data)
    return path


def _emit_report(out: Path, curve, scored, text):
    sys.stdout.write(text)
    _write(out, "report.txt", text)
    _write(out, "pr.csv", pr_csv(curve))
    _write(out, "pairs.bin", pair_dump(scored))


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args):
    config = _run_config(args)
    out = _out(args)
    splits = synth_generate(config.synth, config.synth_seed if args.seed is None else args.seed)
    for name, arc in zip(("train", "dev", "test"), splits):
        save_archive(arc, out / f"{name}.awe")
        print(f"{name}: {len(arc)} segments, {len(set(arc.labels))} types")
    _write(out, "synth.json", json.dumps(config.synth.to_dict(), indent=2, sort_keys=True) + "\n")


def cmd_cmvn(args):
    out = _out(args)
    for path in args.inputs:
        arc = cmvn_normalize(load_archive(path))
        save_archive(arc, out / Path(path).name)
        print(f"{Path(path).name}: {len(arc)} segments normalized")


def cmd_pairs(args):
    arc = load_archive(args.input)
    pairs = extract_same_pairs(arc)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "n"])
    w.writerows(pairs.tolist())
    _write(_out(args), "pairs.csv", buf.getvalue())
    print(f"{len(pairs)} same-type pairs")


def _read_pairs(path):
    rows = list(csv.reader(Path(path).read_text().splitlines()))
    if not rows or rows[0] != ["m", "n"]:
        raise ValueError(f"{path}: expected a pairs CSV with header m,n")
    return np.array([[int(m), int(n)] for m, n in rows[1:]], dtype=np.int64).reshape(-1, 2)


def _save_model(out, net, spec, history, meta):
    _write(out, "model.ckpt", write_checkpoint(net, spec, meta))
    _write(out, "history.json", json.dumps(history.to_dict(), indent=2, sort_keys=True) + "\n")
    best = history.epochs[history.best_epoch]
    print(f"best epoch {history.best_epoch}: dev AP {best['dev_ap']:.6f}")


def cmd_train_classifier(args):
    config = _run_config(args)
    train, dev = load_archive(args.train), load_archive(args.dev)
    vocab = len(vocab_filter(train, config.min_count)[1])
    kind = CLASSIFIER_DNN if args.kind == "dnn" else CLASSIFIER_CNN
    spec = build_default_spec(kind, vocab, input_dim=train.dim, n_pad=config.n_pad,
                              bottleneck=args.bottleneck, widths=config.width_preset)
    tconf = config.train_config(config.seeds[0])
    if args.tap:
        tconf.tap = args.tap
    net, history = train_classifier(train, dev, spec, tconf)
    _save_model(_out(args), net, spec, history, {"vocab": history.vocab, "seed": tconf.seed})


def cmd_train_siamese(args):
    config = _run_config(args)
    train, dev = load_archive(args.train), load_archive(args.dev)
    pairs = _read_pairs(args.pairs) if args.pairs else extract_same_pairs(train)
    loss = (losses.LossConfig(losses.COSCOS2, None) if args.loss == losses.COSCOS2
            else losses.LossConfig(losses.COS_HINGE, config.margin, config.distance))
    spec = build_default_spec(SIAMESE_CNN, input_dim=train.dim, n_pad=config.n_pad,
                              embed_dim=config.embed_dim, widths=config.width_preset)
    tconf = config.train_config(config.seeds[0], loss)
    net, history = train_siamese(train, pairs, dev, spec, tconf)
    _save_model(_out(args), net, spec, history, {"seed": tconf.seed, "loss": loss.kind})


def cmd_embed(args):
    net, spec, _ = read_checkpoint(Path(args.model).read_bytes())
    emb = embed(net, spec, load_archive(args.input), args.tap)
    save_embeddings(emb, _out(args) / "embeddings.awee")
    print(f"{len(emb)} embeddings of dimension {emb.d}")


def cmd_lda_fit(args):
    emb = load_embeddings(args.input)
    model = lda_fit(emb, args.dim, args.shrinkage)
    _write(_out(args), "lda.awel", write_lda(model))
    print(f"LDA {model.d_in} -> {model.d_out}")


def cmd_lda_apply(args):
    model = read_lda(Path(args.model).read_bytes())
    emb = lda_transform(model, load_embeddings(args.input))
    save_embeddings(emb, _out(args) / "embeddings.awee")
    print(f"{len(emb)} embeddings of dimension {emb.d}")


def cmd_eval_ap(args):
    emb = load_embeddings(args.input)
    _emit_report(_out(args), *same_different_report(emb, args.metric))


def cmd_eval_dtw(args):
    arc = load_archive(args.input)
    _emit_report(_out(args), *same_different_report(arc, "dtw", args.threads or 1))


def cmd_sweep_dim(args):
    config = _run_config(args)
    text = sweep_csv(sweep_dim(config))
    _write(_out(args), "sweep.csv", text)
    sys.stdout.write(text)


def cmd_experiment(args):
    config = _run_config(args)
    out = _out(args)
    text = results_csv(run_reference_experiment(config, prepare_corpus(config)))
    _write(out, "results.csv", text)
    _write(out, "config.json", json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    sys.stdout.write(text)


def grad_check_networks(count: int, seed: int, b: int = 5, n_pad: int = 20):
    """Random small conv+pool+affine stacks for gradient checking."""
    rng = np.random.default_rng(seed)
    nets = []
    for _ in range(count):
        filters = int(rng.integers(2, 5))
        width = int(rng.integers(2, 5))
        pool = int(rng.integers(2, 4))
        out_dim = int(rng.integers(3, 7))
        layers = [Conv1D(filters, width), ReLU(), MaxPool(pool), Affine(out_dim)]
        nets.append(init_network(layers, (b, n_pad), rng))
    return nets, rng


def _siamese_check_fn(kind, margin):
    config = losses.LossConfig(kind, margin if kind == losses.COS_HINGE else None)

    def fn(net, sample):
        loss, grads, trace = siamese_loss(net, sample, config)
        pattern = trace.pattern()
        if kind == losses.COS_HINGE:
            e = trace.output
            d12 = losses.pair_distance(e[:1], e[1:2])[0]
            d13 = losses.pair_distance(e[:1], e[2:])[0]
            pattern += bytes([int(margin + d12[0] - d13[0] > 0)])
        return LossEval(loss, grads, pattern)

    return fn


def _classifier_check_fn(net, sample):
    x, target = sample
    loss, grads, trace = classifier_loss(net, x[None], np.array([target]))
    return LossEval(loss, grads, trace.pattern())


def run_grad_check(count: int = 20, seed: int = 1, margin: float = 0.15):
    """Max finite-difference error per loss over ``count`` random networks.

    The hinge sample is redrawn until the triplet is active, so its gradient
    is not trivially zero.
    """
    nets, rng = grad_check_networks(count, seed)
    results = {losses.CROSS_ENTROPY: 0.0, losses.COSCOS2: 0.0, losses.COS_HINGE: 0.0}
    for net in nets:
        b, n_pad = net.input_shape
        clf = init_network(list(net.layers) + [Softmax()], net.input_shape, rng)
        clf.params[:4] = net.params
        x = rng.normal(size=(b, n_pad))
        target = int(rng.integers(net.output_dim))
        results[losses.CROSS_ENTROPY] = max(results[losses.CROSS_ENTROPY],
                                            finite_difference_check(clf, _classifier_check_fn, (x, target)))
        trip = rng.normal(size=(3, b, n_pad))
        results[losses.COSCOS2] = max(results[losses.COSCOS2],
                                      finite_difference_check(net, _siamese_check_fn(losses.COSCOS2, None), trip))
        hinge = _siamese_check_fn(losses.COS_HINGE, margin)
        while hinge(net, trip).loss == 0.0:
            trip = rng.normal(size=(3, b, n_pad))
        results[losses.COS_HINGE] = max(results[losses.COS_HINGE], finite_difference_check(net, hinge, trip))
    return results


def cmd_grad_check(args):
    results = run_grad_check(args.count, args.seed if args.seed is not None else 1)
    lines = ["loss,max_relative_error"] + [f"{k},{v!r}" for k, v in results.items()]
    _write(_out(args), "grad_check.csv", "\n".join(lines) + "\n")
    worst = max(results.values())
    for k, v in results.items():
        print(f"{k}: {v:.3e}")
    if worst > args.tolerance:
        raise RuntimeError(f"gradient check failed: {worst:.3e} > {args.tolerance:g}")


# ---------------------------------------------------------------------------
# argument parsing

def _add_run_flags(p, training=True):
    p.add_argument("--config", help="RunConfig JSON file; flags override its values")
    p.add_argument("--seed", type=int, help="random seed (replaces the seed list)")
    p.add_argument("--widths", choices=sorted(WIDTH_PRESETS), help="layer size preset")
    p.add_argument("--n-pad", type=int, help="padded input length in frames")
    if training:
        p.add_argument("--batch-size", type=int)
        p.add_argument("--epochs", type=int, help="maximum training epochs")
        p.add_argument("--patience", type=int, help="early-stopping patience in epochs")
        p.add_argument("--min-count", type=int, help="classifier vocabulary threshold")


def _add_synth_flags(p):
    p.add_argument("--synth-seed", type=int)
    p.add_argument("--num-types", type=int)
    p.add_argument("--tokens-per-type", type=int)
    p.add_argument("--dim", type=int, help="frame dimension b")
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--warp-strength", type=float)
    p.add_argument("--unseen-type-fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="awe", description="Acoustic word embedding toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate synthetic train/dev/test archives")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, help="generator seed (overrides synth_seed)")
    _add_synth_flags(p)

    p = add("cmvn", cmd_cmvn, "per-group mean and variance normalization")
    p.add_argument("inputs", nargs="+", help="archive files")

    p = add("pairs", cmd_pairs, "list same-type segment pairs as CSV")
    p.add_argument("input", help="archive file")

    p = add("train-classifier", cmd_train_classifier, "train a word classifier CNN or DNN")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--kind", choices=["cnn", "dnn"], default="cnn")
    p.add_argument("--bottleneck", type=int, help="linear bottleneck width before the softmax")
    p.add_argument("--tap", choices=["softmax", "logits", "bottleneck"],
                   help="embedding used for dev-AP model selection")
    _add_run_flags(p)

    p = add("train-siamese", cmd_train_siamese, "train a Siamese CNN")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--pairs", help="pairs CSV (default: all same-type pairs of --train)")
    p.add_argument("--loss", choices=[losses.COS_HINGE, losses.COSCOS2], default=losses.COS_HINGE)
    p.add_argument("--margin", type=float)
    p.add_argument("--distance", choices=["cosine", "euclidean"])
    p.add_argument("--embed-dim", type=int)
    _add_run_flags(p)

    p = add("embed", cmd_embed, "embed every segment of an archive")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--tap", choices=TAPS)
    p.add_argument("input", help="archive file")

    p = add("lda-fit", cmd_lda_fit, "fit an LDA projection on labelled embeddings")
    p.add_argument("--dim", type=int, required=True, help="target dimension")
    p.add_argument("--shrinkage", type=float, default=1e-4)
    p.add_argument("input", help="embedding file")

    p = add("lda-apply", cmd_lda_apply, "project embeddings with a fitted LDA model")
    p.add_argument("--model", required=True, help="LDA model file")
    p.add_argument("input", help="embedding file")

    p = add("eval-ap", cmd_eval_ap, "same-different AP of an embedding set")
    p.add_argument("--metric", choices=["cosine", "euclidean"], default="cosine")
    p.add_argument("input", help="embedding file")

    p = add("eval-dtw", cmd_eval_dtw, "same-different AP of frame-level DTW on an archive")
    p.add_argument("--threads", type=int)
    p.add_argument("input", help="archive file")

    p = add("sweep-dim", cmd_sweep_dim, "test AP against embedding dimension (CSV)")
    p.add_argument("--dims", help="comma-separated dimensions, e.g. 10,50,200,500")
    p.add_argument("--families", help="comma-separated subset of siamese,bottleneck")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--threads", type=int)
    _add_run_flags(p)
    _add_synth_flags(p)

    p = add("experiment", cmd_experiment, "train and evaluate all reference models (CSV)")
    p.add_argument("--models", help="comma-separated model list")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--bottleneck", type=int)
    p.add_argument("--lda-dim", type=int)
    p.add_argument("--lda-source-dim", type=int, help="cos-hinge width that LDA compacts")
    p.add_argument("--threads", type=int)
    _add_run_flags(p)
    _add_synth_flags(p)

    p = add("grad-check", cmd_grad_check, "finite-difference check of all three losses")
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int, default=20, help="number of random networks")
    p.add_argument("--tolerance", type=float, default=1e-6)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except Exception as exc:  # report, don't dump a traceback on the user
        log.debug("command failed", exc_info=True)
        print(f"awe {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
