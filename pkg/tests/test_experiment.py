import json

import numpy as np
import pytest

from awe.embeddings import EmbeddingSet
from awe.experiment import (CNN, DTW, HINGE, HINGE_LDA, MODELS, ResultRow, RunConfig,
                            fit_lda_on_dev, prepare_corpus, results_csv, run_reference_experiment, sweep_csv,
                            sweep_dim)


def small_config(**kw):
    base = dict(seeds=[1], synth=dict(num_types=5, tokens_per_type=12, duration_range=[10, 20],
                                      dim=4, num_groups=2),
                n_pad=40, max_epochs=1, embed_dim=6, bottleneck=4, lda_dim=10,
                models=[DTW, CNN, HINGE, HINGE_LDA], sweep_dims=[3, 5])
    base.update(kw)
    return RunConfig.from_dict(base)


class TestRunConfig:
    def test_defaults_round_trip(self):
        c = RunConfig()
        assert RunConfig.from_json(json.dumps(c.to_dict())) == c
        assert c.models == list(MODELS) and len(c.seeds) == 5

    def test_unknown_top_level_key(self):
        with pytest.raises(ValueError, match="epochz"):
            RunConfig.from_dict({"epochz": 3})

    def test_unknown_synth_key(self):
        with pytest.raises(ValueError, match="noise"):
            RunConfig.from_dict({"synth": {"noise": 0.1}})

    @pytest.mark.parametrize("bad", [{"seeds": []}, {"widths": "huge"}, {"models": ["rnn"]},
                                     {"sweep_families": ["lstm"]}, {"embed_dim": 0},
                                     {"shrinkage_grid": []}])
    def test_invalid_values(self, bad):
        with pytest.raises(ValueError):
            RunConfig.from_dict(bad)

    def test_train_config(self):
        t = RunConfig(rho=0.95, n_pad=50).train_config(7)
        assert t.seed == 7 and t.adadelta.rho == 0.95 and t.pad.n_pad == 50


class TestLdaSelection:
    def test_picks_best_dev_shrinkage(self, rng):
        from awe.lda import lda_fit, lda_transform
        from awe.samediff import same_different_report

        def blobs(n):
            centers = np.array([[4.0, 0, 0], [0, 4.0, 0], [0, 0, 4.0], [3.0, 3.0, 3.0]])
            x = np.repeat(centers, n, axis=0) + rng.normal(size=(4 * n, 3)) * [1.0, 0.2, 3.0]
            return EmbeddingSet(x, [str(k) for k in range(4) for _ in range(n)])

        train, dev = blobs(10), blobs(5)
        config = RunConfig(lda_dim=2, shrinkage_grid=[0.0, 0.5, 5.0])
        chosen = fit_lda_on_dev(config, train, dev)
        dev_aps = [same_different_report(lda_transform(lda_fit(train, 2, lam), dev))[0].ap
                   for lam in config.shrinkage_grid]
        best = lda_fit(train, 2, config.shrinkage_grid[int(np.argmax(dev_aps))])
        np.testing.assert_array_equal(chosen.projection, best.projection)


class TestCsv:
    def test_results_format(self):
        text = results_csv([ResultRow("dtw", 13, [0.5, 0.5]), ResultRow("x", 4, [0.1, 0.3])])
        lines = text.splitlines()
        assert lines[0] == "model,dim,ap_mean,ap_std"
        model, dim, mean, std = lines[2].split(",")
        assert (model, dim) == ("x", "4")
        assert float(mean) == pytest.approx(0.2) and float(std) == pytest.approx(0.1)
        assert lines[1].endswith(",0.5,0.0")

    def test_population_std(self):
        assert ResultRow("m", 1, [1.0, 3.0]).ap_std == 1.0

    def test_sweep_format(self):
        text = sweep_csv([("siamese", ResultRow("siamese", 10, [0.25]))])
        assert text == "family,dim,ap_mean,ap_std\nsiamese,10,0.25,0.0\n"


class TestRuns:
    def test_reference_experiment(self):
        config = small_config()
        rows = run_reference_experiment(config)
        assert [r.model for r in rows] == config.models
        dims = {r.model: r.dim for r in rows}
        assert dims[DTW] == 4 and dims[HINGE] == 6
        # five train types: LDA is capped at four output dimensions
        assert dims[HINGE_LDA] == 4
        for r in rows:
            assert len(r.aps) == 1 and 0.0 <= r.ap_mean <= 1.0

    def test_cmvn_applied(self):
        corpus = prepare_corpus(small_config())
        frames = np.vstack([s.frames for s in corpus.train if s.group_id == corpus.train[0].group_id])
        np.testing.assert_allclose(frames.mean(axis=0), 0.0, atol=1e-10)

    def test_sweep(self):
        out = sweep_dim(small_config(sweep_families=["siamese"]))
        assert [(f, r.dim) for f, r in out] == [("siamese", 3), ("siamese", 5)]

    def test_deterministic(self):
        a = results_csv(run_reference_experiment(small_config(models=[HINGE])))
        b = results_csv(run_reference_experiment(small_config(models=[HINGE])))
        assert a == b
