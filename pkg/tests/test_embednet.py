"""LDE pooling, encoders and embedding-selection tests."""

import os

import numpy as np
import pytest

from spkaug import corpus, dsp, embednet, nncore as nn


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    manifest = corpus.make_toy_corpus(root, seed=3, n_speakers=4, n_dialects=2,
                                      n_channels=2, utts_per_speaker=25)
    mels = {r.utt_id: dsp.mel_spectrogram(
        dsp.read_wav(os.path.join(root, r.audio_path))).frames
        for r in manifest.records}
    return manifest, mels


class TestEmbeddingConfig:
    def test_grid_has_20_configs(self):
        grid = embednet.sweep_grid()
        assert len(grid) == 20
        assert len(set(grid)) == 20

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            embednet.EmbeddingConfig(100, "mean", 32)
        with pytest.raises(ValueError):
            embednet.EmbeddingConfig(64, "max", 32)
        with pytest.raises(ValueError):
            embednet.EmbeddingConfig(64, "mean", 48)

    def test_pooled_lengths(self):
        for cfg in embednet.sweep_grid():
            scale = 2 if cfg.pooling == "mean_std" else 1
            assert cfg.pooled_length == scale * cfg.components * 64


class TestLdePool:
    def test_zero_residuals(self):
        rng = np.random.default_rng(0)
        mu = rng.normal(size=(1, 4))
        frames = np.repeat(mu, 6, axis=0)
        out = embednet.lde_pool(nn.constant(frames), nn.constant(mu),
                                nn.constant(np.zeros(1)), "mean")
        np.testing.assert_array_equal(out.data, np.zeros(4))

    def test_order_free(self):
        rng = np.random.default_rng(1)
        frames = rng.normal(size=(9, 5))
        means = rng.normal(size=(3, 5))
        scales = rng.normal(size=3)
        a = embednet.lde_pool(nn.constant(frames), nn.constant(means),
                              nn.constant(scales), "mean_std").data
        perm = rng.permutation(9)
        b = embednet.lde_pool(nn.constant(frames[perm]), nn.constant(means),
                              nn.constant(scales), "mean_std").data
        assert np.abs(a - b).max() < 1e-6

    def test_matches_oracle_random_cases(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            t, c, d = rng.integers(2, 9), rng.integers(1, 5), rng.integers(2, 7)
            frames = rng.normal(size=(t, d))
            means = rng.normal(size=(c, d))
            scales = rng.normal(size=c)
            for pooling in ("mean", "mean_std"):
                got = embednet.lde_pool(nn.constant(frames), nn.constant(means),
                                        nn.constant(scales), pooling).data
                want = embednet.lde_pool_oracle(frames, means, scales, pooling)
                assert np.abs(got - want).max() < 1e-6

    def test_empty_frames_rejected(self):
        with pytest.raises(ValueError):
            embednet.lde_pool(nn.constant(np.zeros((0, 4))),
                              nn.constant(np.zeros((2, 4))),
                              nn.constant(np.zeros(2)))

    def test_gradcheck(self):
        from spkaug.verify import check_lde
        assert check_lde(np.random.default_rng(3)) < 1e-5

    def test_output_lengths_all_grid_configs(self):
        rng = np.random.default_rng(4)
        frames = rng.normal(size=(4, 64))
        for cfg in embednet.sweep_grid():
            means = rng.normal(size=(cfg.components, 64))
            scales = rng.normal(size=cfg.components)
            out = embednet.lde_pool(nn.constant(frames), nn.constant(means),
                                    nn.constant(scales), cfg.pooling)
            assert out.data.shape == (cfg.pooled_length,)


class TestCosine:
    def test_self_similarity(self):
        v = embednet.Embedding(np.array([1.0, 2.0, -3.0]))
        assert embednet.cosine(v, v) == pytest.approx(1.0)

    def test_antipodal(self):
        v = np.array([1.0, -2.0, 0.5])
        assert embednet.cosine(v, -v) == pytest.approx(-1.0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(5)
        x, y = rng.normal(size=8), rng.normal(size=8)
        assert embednet.cosine(2 * x, y) == pytest.approx(embednet.cosine(x, y))

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            embednet.cosine(np.zeros(4), np.ones(4))


class TestTraining:
    def test_dialect_encoder_separates_toy_dialects(self, toy):
        manifest, mels = toy
        cfg = embednet.EmbeddingConfig(32, "mean", 32)
        enc, acc, _ = embednet.train_dialect_encoder(manifest, mels, cfg,
                                                     epochs=30, seed=11)
        assert acc > 0.95

    def test_determinism(self, toy):
        manifest, mels = toy
        cfg = embednet.EmbeddingConfig(32, "mean", 32)
        _, _, h1 = embednet.train_dialect_encoder(manifest, mels, cfg, 2, seed=4)
        _, _, h2 = embednet.train_dialect_encoder(manifest, mels, cfg, 2, seed=4)
        assert h1 == h2

    def test_zero_epochs_chance_level(self, toy):
        manifest, mels = toy
        cfg = embednet.EmbeddingConfig(32, "mean", 32)
        _, acc, _ = embednet.train_dialect_encoder(manifest, mels, cfg, 0, seed=5)
        assert abs(acc - 0.5) <= 0.15

    def test_single_class_rejected(self, toy):
        manifest, mels = toy
        single = manifest.filter(corpora=None)
        single.records = [r for r in single.records if r.dialect == "dia0"]
        cfg = embednet.EmbeddingConfig(32, "mean", 32)
        with pytest.raises(ValueError, match="2 dialect classes"):
            embednet.train_dialect_encoder(single, mels, cfg, 1, seed=0)

    def test_speaker_encoder_plain_softmax(self, toy):
        manifest, mels = toy
        cfg = embednet.EmbeddingConfig(32, "mean", 32)
        enc, acc, _ = embednet.train_speaker_encoder(
            manifest, mels, cfg, epochs=30, seed=12, angular_margin=False)
        assert acc > 0.95

    def test_angular_margin_flag_runs(self, toy):
        manifest, mels = toy
        cfg = embednet.EmbeddingConfig(32, "mean", 32)
        enc, acc, hist = embednet.train_speaker_encoder(
            manifest, mels, cfg, epochs=2, seed=13, angular_margin=True)
        assert np.isfinite(hist).all()


class TestEmbed:
    def test_deterministic(self, toy):
        manifest, mels = toy
        enc = embednet.Encoder.create(embednet.EmbeddingConfig(32, "mean", 32),
                                      ["a", "b"], seed=0)
        mel = mels[manifest.records[0].utt_id]
        a = embednet.embed(enc, mel).vector
        b = embednet.embed(enc, mel).vector
        np.testing.assert_array_equal(a, b)

    def test_time_shift_within_silence_margin(self):
        # LDE pooling is order-free, so shifting content inside a silence
        # margin wider than the conv receptive field preserves the feature
        # multiset: the embedding must not change (up to summation order).
        rng = np.random.default_rng(6)
        enc = embednet.Encoder.create(embednet.EmbeddingConfig(32, "mean", 32),
                                      ["a", "b"], seed=1)
        floor = np.log(1e-5)
        content = rng.normal(size=(10, 80))

        def with_margins(lead, trail):
            return np.vstack([np.full((lead, 80), floor), content,
                              np.full((trail, 80), floor)])

        a = embednet.embed(enc, with_margins(8, 8)).vector
        b = embednet.embed(enc, with_margins(6, 10)).vector
        assert np.abs(a - b).max() < 1e-6

    def test_empty_rejected(self):
        enc = embednet.Encoder.create(embednet.EmbeddingConfig(32, "mean", 32),
                                      ["a", "b"], seed=2)
        with pytest.raises(ValueError):
            embednet.embed(enc, np.zeros((0, 80)))

    def test_within_class_beats_cross_class(self, toy):
        manifest, mels = toy
        cfg = embednet.EmbeddingConfig(32, "mean", 32)
        enc, acc, _ = embednet.train_dialect_encoder(manifest, mels, cfg,
                                                     epochs=20, seed=14)
        by_dialect = {"dia0": [], "dia1": []}
        for r in manifest.records[:40]:
            by_dialect[r.dialect].append(embednet.embed(enc, mels[r.utt_id]))

        def mean_cos(xs, ys, same):
            scores = []
            for i, x in enumerate(xs):
                for j, y in enumerate(ys):
                    if same and i >= j:
                        continue
                    scores.append(embednet.cosine(x, y))
            return np.mean(scores)

        within = np.mean([mean_cos(v, v, True) for v in by_dialect.values()])
        cross = mean_cos(by_dialect["dia0"], by_dialect["dia1"], False)
        assert within > cross


class TestRankConfigs:
    def _fake_encoder(self, bias):
        class Fake:
            def __init__(self, b):
                self.b = b

            def embed_tensor(self, frames):
                return nn.constant(np.array([frames.mean() + self.b, 1.0]))

        return Fake(bias)

    def test_sort_order(self):
        configs = [embednet.EmbeddingConfig(32, "mean", 32),
                   embednet.EmbeddingConfig(64, "mean", 32),
                   embednet.EmbeddingConfig(128, "mean", 32)]
        rng = np.random.default_rng(7)
        pairs = [(rng.normal(size=(4, 80)), rng.normal(size=(4, 80)))
                 for _ in range(3)]
        encoders = [self._fake_encoder(b) for b in (0.0, 5.0, 100.0)]
        ranked = embednet.rank_configs(configs, encoders, pairs)
        scores = [r.mean_score for r in ranked]
        assert scores == sorted(scores, reverse=True)

    def test_tie_break_lexicographic(self):
        c_big = embednet.EmbeddingConfig(64, "mean_std", 64)
        c_small = embednet.EmbeddingConfig(32, "mean", 32)
        rng = np.random.default_rng(8)
        pairs = [(rng.normal(size=(4, 80)), rng.normal(size=(4, 80)))]
        enc = self._fake_encoder(0.0)
        ranked = embednet.rank_configs([c_big, c_small], [enc, enc], pairs)
        assert ranked[0].config == c_small

    def test_permutation_invariant(self):
        rng = np.random.default_rng(9)
        configs = [embednet.EmbeddingConfig(d, "mean", 32) for d in (32, 64, 128)]
        encoders = [self._fake_encoder(b) for b in (0.0, 2.0, 4.0)]
        pairs = [(rng.normal(size=(4, 80)), rng.normal(size=(4, 80)))
                 for _ in range(2)]
        a = embednet.rank_configs(configs, encoders, pairs)
        order = [2, 0, 1]
        b = embednet.rank_configs([configs[i] for i in order],
                                  [encoders[i] for i in order], pairs)
        assert [r.config for r in a] == [r.config for r in b]
        assert [r.mean_score for r in a] == pytest.approx(
            [r.mean_score for r in b])

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError):
            embednet.rank_configs([], [], [])

    def test_paper_phone_sweep_grid_members(self):
        # the published phone-model top-5 all lie on the sweep grid
        published = [(256, "mean_std", 32), (256, "mean", 64),
                     (256, "mean_std", 64), (32, "mean_std", 64),
                     (64, "mean", 64)]
        grid = set(embednet.sweep_grid())
        for dim, pooling, components in published:
            assert embednet.EmbeddingConfig(dim, pooling, components) in grid

    def test_take_top(self):
        configs = [embednet.EmbeddingConfig(d, "mean", 32) for d in (32, 64)]
        encoders = [self._fake_encoder(0.0)] * 2
        rng = np.random.default_rng(10)
        pairs = [(rng.normal(size=(3, 80)), rng.normal(size=(3, 80)))]
        ranked = embednet.rank_configs(configs, encoders, pairs)
        assert len(embednet.take_top(ranked, 1)) == 1


class TestPersistence:
    def test_encoder_roundtrip(self, toy, tmp_path):
        manifest, mels = toy
        cfg = embednet.EmbeddingConfig(32, "mean_std", 32)
        enc, _, _ = embednet.train_dialect_encoder(manifest, mels, cfg, 1, seed=6)
        path = tmp_path / "enc.ckpt"
        enc.save(path)
        back = embednet.Encoder.load(path)
        assert back.config == cfg
        assert back.classes == enc.classes
        mel = mels[manifest.records[0].utt_id]
        np.testing.assert_allclose(embednet.embed(back, mel).vector,
                                   embednet.embed(enc, mel).vector)

    def test_embeddings_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        embs = [embednet.Embedding(rng.normal(size=8), f"u{i}") for i in range(3)]
        path = tmp_path / "emb.csv"
        embednet.save_embeddings_csv(path, embs)
        back = embednet.load_embeddings_csv(path)
        for e in embs:
            np.testing.assert_array_equal(back[e.source_utt].vector, e.vector)
