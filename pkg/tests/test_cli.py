import json

import numpy as np
import pytest

from awe.cli import main, run_grad_check
from awe.data import Segment, SegmentArchive, load_archive, save_archive
from awe.embeddings import EmbeddingSet, load_embeddings, save_embeddings
from awe.samediff import read_pair_dump

SYNTH = ["--num-types", "4", "--tokens-per-type", "12", "--dim", "4"]
TRAIN = ["--epochs", "1", "--n-pad", "120", "--seed", "2"]


@pytest.fixture
def corpus(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--seed", "5"] + SYNTH) == 0
    paths = [str(tmp_path / "s" / f"{n}.awe") for n in ("train", "dev", "test")]
    assert main(["cmvn", "--out", str(tmp_path / "c")] + paths) == 0
    return {n: str(tmp_path / "c" / f"{n}.awe") for n in ("train", "dev", "test")}


class TestSynth:
    def test_outputs_readable(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path)] + SYNTH) == 0
        archives = [load_archive(tmp_path / f"{n}.awe") for n in ("train", "dev", "test")]
        assert sum(len(a) for a in archives) == 48
        assert all(a.dim == 4 for a in archives)
        assert json.loads((tmp_path / "synth.json").read_text())["num_types"] == 4

    def test_seed_changes_output(self, tmp_path):
        main(["synth", "--out", str(tmp_path / "a"), "--seed", "1"] + SYNTH)
        main(["synth", "--out", str(tmp_path / "b"), "--seed", "2"] + SYNTH)
        assert (tmp_path / "a" / "train.awe").read_bytes() != (tmp_path / "b" / "train.awe").read_bytes()


class TestEvalAp:
    def test_orthogonal_identical_vectors(self, tmp_path, capsys):
        # two tokens per type, identical within a type, orthogonal across types
        v = np.repeat(np.eye(3), 2, axis=0)
        save_embeddings(EmbeddingSet(v, ["a", "a", "b", "b", "c", "c"]), tmp_path / "e.awee")
        assert main(["eval-ap", "--out", str(tmp_path / "r"), str(tmp_path / "e.awee")]) == 0
        assert "AP:              1.000000" in capsys.readouterr().out
        assert (tmp_path / "r" / "pr.csv").read_text().startswith("threshold,precision,recall\n")
        assert read_pair_dump((tmp_path / "r" / "pairs.bin").read_bytes()).n == 6

    def test_eval_dtw(self, tmp_path, rng):
        x = rng.normal(size=(5, 2))
        save_archive(SegmentArchive(2, [Segment("a", "g", x), Segment("a", "g", x),
                                        Segment("b", "g", rng.normal(size=(4, 2)))]), tmp_path / "a.awe")
        assert main(["eval-dtw", "--out", str(tmp_path / "r"), str(tmp_path / "a.awe")]) == 0
        assert "AP:              1.000000" in (tmp_path / "r" / "report.txt").read_text()


class TestErrors:
    def test_unknown_flag_exit_2(self, tmp_path):
        out = tmp_path / "out"
        assert main(["synth", "--out", str(out), "--bogus"]) == 2
        assert not out.exists()

    def test_missing_out_exit_2(self):
        assert main(["synth"]) == 2

    def test_runtime_error_exit_1(self, tmp_path, capsys):
        assert main(["eval-ap", "--out", str(tmp_path), str(tmp_path / "missing.awee")]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_config_key_exit_1(self, tmp_path):
        (tmp_path / "c.json").write_text('{"epochz": 1}')
        assert main(["synth", "--out", str(tmp_path / "o"), "--config", str(tmp_path / "c.json")]) == 1


class TestPipeline:
    def test_siamese_lda_round(self, tmp_path, corpus):
        out = tmp_path / "m"
        assert main(["train-siamese", "--out", str(out), "--train", corpus["train"],
                     "--dev", corpus["dev"], "--embed-dim", "5"] + TRAIN) == 0
        history = json.loads((out / "history.json").read_text())
        assert [e["epoch"] for e in history["epochs"]] == [0, 1]
        assert main(["embed", "--out", str(tmp_path / "e"), "--model", str(out / "model.ckpt"),
                     corpus["train"]]) == 0
        emb = load_embeddings(tmp_path / "e" / "embeddings.awee")
        assert emb.d == 5
        assert main(["lda-fit", "--out", str(tmp_path / "l"), "--dim", "2",
                     str(tmp_path / "e" / "embeddings.awee")]) == 0
        assert main(["lda-apply", "--out", str(tmp_path / "p"), "--model", str(tmp_path / "l" / "lda.awel"),
                     str(tmp_path / "e" / "embeddings.awee")]) == 0
        assert load_embeddings(tmp_path / "p" / "embeddings.awee").d == 2

    def test_pairs_file(self, tmp_path, corpus):
        assert main(["pairs", "--out", str(tmp_path / "p"), corpus["train"]]) == 0
        lines = (tmp_path / "p" / "pairs.csv").read_text().splitlines()
        counts = np.unique(load_archive(corpus["train"]).labels, return_counts=True)[1]
        assert lines[0] == "m,n" and len(lines) == 1 + sum(c * (c - 1) // 2 for c in counts)
        out = tmp_path / "m"
        assert main(["train-siamese", "--out", str(out), "--train", corpus["train"], "--dev", corpus["dev"],
                     "--pairs", str(tmp_path / "p" / "pairs.csv"), "--loss", "coscos2"] + TRAIN) == 0

    @pytest.mark.parametrize("kind", ["cnn", "dnn"])
    def test_classifier_deterministic(self, tmp_path, corpus, kind):
        runs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["train-classifier", "--out", str(out), "--train", corpus["train"],
                         "--dev", corpus["dev"], "--kind", kind, "--min-count", "2"] + TRAIN) == 0
            runs.append((out / "model.ckpt").read_bytes() + (out / "history.json").read_bytes())
        assert runs[0] == runs[1]


class TestGradCheck:
    def test_all_losses_pass(self, tmp_path):
        results = run_grad_check(count=2, seed=4)
        assert set(results) == {"cross_entropy", "coscos2", "cos_hinge"}
        assert max(results.values()) <= 1e-6
        assert main(["grad-check", "--out", str(tmp_path), "--count", "1"]) == 0
        assert (tmp_path / "grad_check.csv").read_text().startswith("loss,max_relative_error\n")
