"""Phase scheduling, warm-start equivalence and checkpoint lineage tests."""

import json
import os

import numpy as np
import pytest

from spkaug import corpus, dsp, embednet, nncore as nn, synth, trainer
from spkaug.verify import randomized_tiny_model, tiny_synth_config


def toy_synth_config(conditioning=frozenset(), n_channels=2):
    return synth.SynthConfig(
        token_vocab=tuple(corpus.TOY_ALPHABET), emb_dim=16, enc_conv_layers=1,
        enc_conv_kernel=5, encoder_dim=16, decoder_dim=32, prenet_dims=(16,),
        attention_dim=8, location_filters=4, location_kernel=7,
        postnet_layers=2, postnet_kernel=5, postnet_channels=16,
        n_channels=n_channels, speaker_dim=8, dialect_dim=8,
        conditioning=conditioning)


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_train")
    manifest = corpus.make_toy_corpus(root, seed=7, n_speakers=2, n_dialects=2,
                                      n_channels=2, utts_per_speaker=6)
    mels = {r.utt_id: dsp.mel_spectrogram(
        dsp.read_wav(os.path.join(root, r.audio_path))).frames
        for r in manifest.records}
    rng = np.random.default_rng(0)
    speaker_embs = {s: rng.normal(size=8) * 0.3 for s in manifest.speakers()}
    dialect_embs = {r.utt_id: rng.normal(size=8) * 0.3 for r in manifest.records}
    return manifest, mels, speaker_embs, dialect_embs


def quick_convergence(max_steps=30, eval_every=15):
    return trainer.Convergence(patience=2, min_delta=1e-4,
                               eval_every=eval_every, max_steps=max_steps)


class TestEarlyStopper:
    def test_stops_after_exact_patience(self):
        stopper = trainer.EarlyStopper(patience=3, min_delta=1e-4)
        assert not stopper.update(1.0)
        decisions = [stopper.update(1.0) for _ in range(3)]
        assert decisions == [False, False, True]

    def test_improvement_resets(self):
        stopper = trainer.EarlyStopper(patience=2, min_delta=1e-4)
        stopper.update(1.0)
        assert not stopper.update(1.1)
        assert not stopper.update(0.5)
        assert not stopper.update(0.6)
        assert stopper.update(0.7)

    def test_min_delta_threshold(self):
        stopper = trainer.EarlyStopper(patience=1, min_delta=0.1)
        stopper.update(1.0)
        # 0.95 improves by less than min_delta -> counts as non-improving
        assert stopper.update(0.95)


class TestPlanValidation:
    def _selector(self):
        return trainer.DataSelector(splits=["train"])

    def test_phase_conditioning_map(self):
        assert trainer.PHASE_CONDITIONING[0] == frozenset()
        assert trainer.PHASE_CONDITIONING[3] == {"speaker", "channel", "dialect"}

    def test_phase0_needs_config(self):
        plan = trainer.PhasePlan(0, self._selector(), self._selector(), seed=1)
        with pytest.raises(trainer.PhaseError, match="synth_config"):
            plan.validate()

    def test_phase3_needs_dialect_config(self):
        plan = trainer.PhasePlan(3, self._selector(), self._selector(), seed=1)
        with pytest.raises(trainer.PhaseError, match="dialect_config"):
            plan.validate()

    def test_dialect_config_only_phase3(self):
        plan = trainer.PhasePlan(
            1, self._selector(), self._selector(), seed=1,
            dialect_config=embednet.EmbeddingConfig(32, "mean", 32))
        with pytest.raises(trainer.PhaseError, match="phase-3"):
            plan.validate()

    def test_plan_json_roundtrip(self, tmp_path):
        plan = trainer.PhasePlan(
            0, self._selector(), self._selector(), seed=3,
            synth_config=toy_synth_config(), convergence=quick_convergence())
        path = tmp_path / "p0.json"
        trainer.save_plan(plan, path)
        back = trainer.load_plan(path)
        assert back.phase == 0
        assert back.synth_config == plan.synth_config
        assert back.convergence == plan.convergence


class TestWarmStartEquivalence:
    def _loss_on_batch(self, model, toy_data, conditioning):
        manifest, mels, spk, dia = toy_data
        ctx = trainer._BatchContext(manifest, mels, spk, dia)
        total = 0.0
        for r in manifest.records[:4]:
            tokens, target, s, d, c = ctx.example(r, model.config, conditioning)
            total += model.teacher_forced_loss(tokens, target, s, d, c).item()
        return total

    def test_phase1_plus_channel_loss_exactly_equal(self, toy):
        cfg = toy_synth_config(frozenset({"speaker"}))
        parent = synth.SynthModel.create(cfg, seed=11)
        rng = np.random.default_rng(1)
        for p in parent.params.values():
            p.data = rng.normal(0, 0.1, size=p.data.shape)
        before = self._loss_on_batch(parent, toy, frozenset({"speaker"}))
        extended = synth.extend_model(parent, "channel")
        after = self._loss_on_batch(extended, toy,
                                    frozenset({"speaker", "channel"}))
        assert after == before  # exact, not approximate

    def test_phase2_plus_dialect_loss_exactly_equal(self, toy):
        cfg = toy_synth_config(frozenset({"speaker", "channel"}))
        parent = synth.SynthModel.create(cfg, seed=12)
        rng = np.random.default_rng(2)
        for p in parent.params.values():
            p.data = rng.normal(0, 0.1, size=p.data.shape)
        before = self._loss_on_batch(parent, toy,
                                     frozenset({"speaker", "channel"}))
        extended = synth.extend_model(parent, "dialect")
        after = self._loss_on_batch(
            extended, toy, frozenset({"speaker", "channel", "dialect"}))
        assert after == before

    def test_phase0_plus_speaker_loss_exactly_equal(self, toy):
        parent = synth.SynthModel.create(toy_synth_config(), seed=13)
        rng = np.random.default_rng(3)
        for p in parent.params.values():
            p.data = rng.normal(0, 0.1, size=p.data.shape)
        before = self._loss_on_batch(parent, toy, frozenset())
        extended = synth.extend_model(parent, "speaker")
        after = self._loss_on_batch(extended, toy, frozenset({"speaker"}))
        assert after == before

    def test_duplicate_extension_rejected(self, toy):
        cfg = toy_synth_config(frozenset({"speaker", "channel"}))
        ckpt = trainer.PhasedCheckpoint(synth.SynthModel.create(cfg, 0), 1, None)
        with pytest.raises(ValueError, match="already"):
            trainer.warm_start_extend(ckpt, "channel")


class TestRunPhase:
    def test_phase0_loss_halves(self, toy):
        manifest, mels, spk, dia = toy
        plan = trainer.PhasePlan(
            0,
            trainer.DataSelector(splits=["train"], speakers=["spk0"]),
            trainer.DataSelector(splits=["train"], speakers=["spk0"]),
            seed=5, lr=2e-3, batch_size=2,
            convergence=trainer.Convergence(patience=10, min_delta=1e-4,
                                            eval_every=60, max_steps=240),
            synth_config=toy_synth_config())
        ckpt = trainer.run_phase(plan, None, manifest, mels)
        assert ckpt.phase == 0
        assert ckpt.parent_hash is None
        assert min(ckpt.dev_history) <= 0.5 * ckpt.dev_history[0]

    def test_phase_parent_mismatch(self, toy):
        manifest, mels, spk, dia = toy
        phase0 = trainer.PhasedCheckpoint(
            synth.SynthModel.create(toy_synth_config(), 0), 0, None)
        plan2 = trainer.PhasePlan(
            2, trainer.DataSelector(), trainer.DataSelector(), seed=1,
            convergence=quick_convergence())
        with pytest.raises(trainer.PhaseError, match="phase 2 must init from phase 1"):
            trainer.run_phase(plan2, phase0, manifest, mels, spk, dia)

    def test_phase0_with_init_rejected(self, toy):
        manifest, mels, _, _ = toy
        phase0 = trainer.PhasedCheckpoint(
            synth.SynthModel.create(toy_synth_config(), 0), 0, None)
        plan = trainer.PhasePlan(
            0, trainer.DataSelector(speakers=["spk0"]),
            trainer.DataSelector(speakers=["spk0"]), seed=1,
            convergence=quick_convergence(), synth_config=toy_synth_config())
        with pytest.raises(trainer.PhaseError, match="from scratch"):
            trainer.run_phase(plan, phase0, manifest, mels)

    def test_phase0_multi_speaker_rejected(self, toy):
        manifest, mels, _, _ = toy
        plan = trainer.PhasePlan(
            0, trainer.DataSelector(splits=["train"]),
            trainer.DataSelector(splits=["train"]), seed=1,
            convergence=quick_convergence(), synth_config=toy_synth_config())
        with pytest.raises(trainer.PhaseError, match="single-speaker"):
            trainer.run_phase(plan, None, manifest, mels)

    def test_determinism(self, toy):
        manifest, mels, spk, dia = toy
        def run():
            plan = trainer.PhasePlan(
                0, trainer.DataSelector(speakers=["spk0"]),
                trainer.DataSelector(speakers=["spk0"]), seed=9, batch_size=2,
                convergence=quick_convergence(max_steps=20, eval_every=10),
                synth_config=toy_synth_config())
            return trainer.run_phase(plan, None, manifest, mels).dev_history
        assert run() == run()


class TestSchedule:
    def _plans(self, seed=21):
        sel_train = trainer.DataSelector(splits=["train"])
        spk0 = trainer.DataSelector(splits=["train"], speakers=["spk0"])
        quick = quick_convergence(max_steps=16, eval_every=8)
        return [
            trainer.PhasePlan(0, spk0, spk0, seed=seed, batch_size=2,
                              convergence=quick, synth_config=toy_synth_config()),
            trainer.PhasePlan(1, sel_train, sel_train, seed=seed + 1,
                              batch_size=2, convergence=quick),
            trainer.PhasePlan(2, sel_train, sel_train, seed=seed + 2,
                              batch_size=2, convergence=quick),
            trainer.PhasePlan(3, sel_train, sel_train, seed=seed + 3,
                              batch_size=2, convergence=quick,
                              dialect_config=embednet.EmbeddingConfig(32, "mean", 32)),
        ]

    def test_lineage_hash_chain(self, toy, tmp_path):
        manifest, mels, spk, dia = toy
        lineage = trainer.run_schedule(self._plans(), manifest, mels, spk, dia,
                                       out_dir=tmp_path)
        assert [c.phase for c in lineage] == [0, 1, 2, 3]
        for parent, child in zip(lineage, lineage[1:]):
            assert child.parent_hash == parent.content_hash
        assert lineage[3].dialect_config == embednet.EmbeddingConfig(32, "mean", 32)
        with open(tmp_path / "lineage.json") as f:
            entries = json.load(f)
        assert [e["phase"] for e in entries] == [0, 1, 2, 3]
        for e, c in zip(entries, lineage):
            assert e["hash"] == c.content_hash
        # checkpoints reload and carry the right conditioning
        for k in range(4):
            ckpt = trainer.PhasedCheckpoint.load(tmp_path / f"phase{k}.ckpt")
            assert ckpt.phase == k
            assert ckpt.model.config.conditioning == trainer.PHASE_CONDITIONING[k]

    def test_best_checkpoint_never_worse_than_start(self, toy, tmp_path):
        manifest, mels, spk, dia = toy
        lineage = trainer.run_schedule(self._plans(seed=31), manifest, mels,
                                       spk, dia)
        for ckpt in lineage:
            assert min(ckpt.dev_history) <= ckpt.dev_history[0]

    def test_out_of_order_plans_rejected(self, toy):
        manifest, mels, spk, dia = toy
        plans = self._plans()
        with pytest.raises(trainer.PhaseError, match="ordered"):
            trainer.run_schedule(plans[::-1], manifest, mels, spk, dia)

    def test_failure_preserves_partial_lineage(self, toy, tmp_path):
        manifest, mels, spk, dia = toy
        plans = self._plans(seed=41)
        plans[1].train_selector = trainer.DataSelector(splits=["test"])
        with pytest.raises(trainer.PhaseError):
            trainer.run_schedule(plans, manifest, mels, spk, dia,
                                 out_dir=tmp_path)
        with open(tmp_path / "lineage.json") as f:
            entries = json.load(f)
        assert [e["phase"] for e in entries] == [0]
        assert os.path.exists(tmp_path / "phase0.ckpt")


class TestCheckpointIO:
    def test_atomic_save_and_hash(self, tmp_path):
        model = randomized_tiny_model(seed=3)
        ckpt = trainer.PhasedCheckpoint(model, 2, "abc123", [1.0, 0.5])
        path = tmp_path / "m.ckpt"
        written_hash = ckpt.save(path)
        assert written_hash == ckpt.content_hash
        back = trainer.PhasedCheckpoint.load(path)
        assert back.phase == 2
        assert back.parent_hash == "abc123"
        assert back.dev_history == [1.0, 0.5]
        assert back.content_hash == ckpt.content_hash
        for name, p in model.params.items():
            np.testing.assert_array_equal(back.model.params[name].data, p.data)
