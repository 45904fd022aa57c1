"""Warm-start four-phase training scheduler with checkpoint lineage.

Phase 0 trains a single-speaker base model; phases 1-3 successively open the
speaker, channel and dialect conditioning paths, each initialized from the
previous phase's checkpoint. New paths start at zero, so the step-0
teacher-forced loss of an extended model equals its parent's exactly.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nncore as nn
from .corpus import channel_onehot
from .embednet import EmbeddingConfig
from .synth import SynthConfig, SynthModel, extend_model

PHASE_CONDITIONING = {
    0: frozenset(),
    1: frozenset({"speaker"}),
    2: frozenset({"speaker", "channel"}),
    3: frozenset({"speaker", "channel", "dialect"}),
}


class PhaseError(ValueError):
    pass


@dataclass
class DataSelector:
    corpora: list | None = None
    gender: str | None = None
    splits: list = field(default_factory=lambda: ["train"])
    speakers: list | None = None

    def apply(self, manifest):
        return manifest.filter(corpora=self.corpora, gender=self.gender,
                               splits=self.splits, speakers=self.speakers)


@dataclass
class Convergence:
    patience: int = 3
    min_delta: float = 1e-4
    eval_every: int = 100
    max_steps: int = 5000


@dataclass
class PhasePlan:
    phase: int
    train_selector: DataSelector
    dev_selector: DataSelector
    seed: int
    dialect_config: EmbeddingConfig | None = None
    lr: float = 1e-3
    batch_size: int = 2
    convergence: Convergence = field(default_factory=Convergence)
    synth_config: SynthConfig | None = None  # required for phase 0

    @property
    def conditioning(self):
        return PHASE_CONDITIONING[self.phase]

    def validate(self):
        if self.phase not in PHASE_CONDITIONING:
            raise PhaseError(f"phase must be 0..3, got {self.phase}")
        if self.phase == 0 and self.synth_config is None:
            raise PhaseError("phase 0 needs a synth_config to create the model")
        if self.phase == 3 and self.dialect_config is None:
            raise PhaseError("phase 3 needs a dialect_config")
        if self.phase != 3 and self.dialect_config is not None:
            raise PhaseError("dialect_config is a phase-3 setting")
        return self

    def to_dict(self):
        d = {
            "phase": self.phase,
            "train_selector": asdict(self.train_selector),
            "dev_selector": asdict(self.dev_selector),
            "seed": self.seed,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "convergence": asdict(self.convergence),
        }
        if self.dialect_config is not None:
            d["dialect_config"] = asdict(self.dialect_config)
        if self.synth_config is not None:
            d["synth_config"] = self.synth_config.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            phase=d["phase"],
            train_selector=DataSelector(**d["train_selector"]),
            dev_selector=DataSelector(**d["dev_selector"]),
            seed=d["seed"],
            dialect_config=(EmbeddingConfig(**d["dialect_config"])
                            if d.get("dialect_config") else None),
            lr=d.get("lr", 1e-3),
            batch_size=d.get("batch_size", 2),
            convergence=Convergence(**d.get("convergence", {})),
            synth_config=(SynthConfig.from_dict(d["synth_config"])
                          if d.get("synth_config") else None),
        ).validate()


def load_plan(path):
    with open(path) as f:
        return PhasePlan.from_dict(json.load(f))


def save_plan(plan, path):
    with open(path, "w") as f:
        json.dump(plan.to_dict(), f, indent=2)


@dataclass
class PhasedCheckpoint:
    model: SynthModel
    phase: int
    parent_hash: str | None
    dev_history: list = field(default_factory=list)
    dialect_config: EmbeddingConfig | None = None

    @property
    def content_hash(self):
        return nn.archive_hash({k: v.data for k, v in self.model.params.items()})

    def save(self, path):
        """Atomic write (temp file + rename); returns the content hash."""
        meta = {
            "phase": self.phase,
            "parent_hash": self.parent_hash,
            "dev_history": list(self.dev_history),
            "synth_config": self.model.config.to_dict(),
        }
        if self.dialect_config is not None:
            meta["dialect_config"] = asdict(self.dialect_config)
        tensors = {k: v.data for k, v in self.model.params.items()}
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
        os.close(fd)
        try:
            content_hash = nn.save_archive(tmp, tensors, meta)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
        return content_hash

    @classmethod
    def load(cls, path):
        tensors, meta, _ = nn.load_archive(path)
        config = SynthConfig.from_dict(meta["synth_config"])
        params = {k: nn.param(v, k) for k, v in tensors.items()}
        dialect_config = (EmbeddingConfig(**meta["dialect_config"])
                          if meta.get("dialect_config") else None)
        return cls(SynthModel(config, params), meta["phase"], meta["parent_hash"],
                   meta["dev_history"], dialect_config)


class EarlyStopper:
    """Patience-based stop: quit after `patience` consecutive evals that fail
    to improve the best loss by more than min_delta."""

    def __init__(self, patience, min_delta):
        self.patience = patience
        self.min_delta = min_delta
        self.best = float("inf")
        self.bad_evals = 0

    def update(self, loss):
        """Record one eval; returns True when training should stop."""
        if loss < self.best - self.min_delta:
            self.best = loss
            self.bad_evals = 0
        else:
            self.bad_evals += 1
        return self.bad_evals >= self.patience


def warm_start_extend(ckpt, new_conditioning):
    """Open a conditioning path on a checkpoint's model, zero-initialized.

    All existing parameters are copied verbatim, so the extended model's
    teacher-forced loss equals the parent's on any batch exactly.
    """
    extended = extend_model(ckpt.model, new_conditioning)
    return PhasedCheckpoint(extended, ckpt.phase, ckpt.parent_hash,
                            list(ckpt.dev_history), ckpt.dialect_config)


class _BatchContext:
    """Binds a manifest's records to their mels, embeddings and channels."""

    def __init__(self, manifest, mels, speaker_embs=None, dialect_embs=None):
        self.manifest = manifest
        self.mels = mels
        self.speaker_embs = speaker_embs or {}
        self.dialect_embs = dialect_embs or {}

    def example(self, record, config, conditioning):
        tokens = [config.token_vocab.index(t) for t in record.text] \
            if config.token_kind == "char" else \
            [config.token_vocab.index(t) for t in record.text.split()]
        target = self.mels[record.utt_id]
        spk = dia = chan = None
        if "speaker" in conditioning:
            spk = self._vec(self.speaker_embs, record.speaker_id, "speaker")
        if "dialect" in conditioning:
            dia = self._vec(self.dialect_embs, record.utt_id, "dialect")
        if "channel" in conditioning:
            chan = channel_onehot(record.corpus_id, self.manifest.corpus_list)
        return tokens, target, spk, dia, chan

    @staticmethod
    def _vec(store, key, kind):
        if key not in store:
            raise PhaseError(f"missing {kind} embedding for '{key}'")
        entry = store[key]
        return entry.vector if hasattr(entry, "vector") else np.asarray(entry)


def _mean_loss(model, records, ctx):
    total = 0.0
    for r in records:
        tokens, target, spk, dia, chan = ctx.example(
            r, model.config, model.config.conditioning)
        total += model.teacher_forced_loss(tokens, target, spk, dia, chan).item()
    return total / len(records)


def run_phase(plan, init, manifest, mels, speaker_embs=None, dialect_embs=None,
              log=None):
    """Train one phase until convergence; returns the best checkpoint.

    ``init`` must be the previous phase's checkpoint (absent for phase 0).
    Conditioning paths the plan adds relative to ``init`` are opened via
    warm_start_extend before training; parent_hash records the raw parent.
    """
    plan.validate()
    if plan.phase == 0:
        if init is not None:
            raise PhaseError("phase 0 must start from scratch (no init checkpoint)")
        model = SynthModel.create(plan.synth_config, plan.seed)
        parent_hash = None
    else:
        if init is None:
            raise PhaseError(f"phase {plan.phase} needs an init checkpoint")
        if init.phase != plan.phase - 1:
            raise PhaseError(
                f"phase {plan.phase} must init from phase {plan.phase - 1}, "
                f"got phase {init.phase}"
            )
        parent_hash = init.content_hash
        ckpt = PhasedCheckpoint(init.model.copy(), init.phase, init.parent_hash)
        for kind in ("speaker", "channel", "dialect"):
            if kind in plan.conditioning and kind not in ckpt.model.config.conditioning:
                ckpt = warm_start_extend(ckpt, kind)
        model = ckpt.model

    train_records = plan.train_selector.apply(manifest).records
    dev_records = plan.dev_selector.apply(manifest).records
    if not train_records:
        raise PhaseError("train selector matched no records")
    if not dev_records:
        raise PhaseError("dev selector matched no records")
    if plan.phase == 0 and len({r.speaker_id for r in train_records}) != 1:
        raise PhaseError("phase 0 expects single-speaker training data")

    ctx = _BatchContext(manifest, mels, speaker_embs, dialect_embs)
    opt = nn.Adam(model.params, lr=plan.lr)
    stopper = EarlyStopper(plan.convergence.patience, plan.convergence.min_delta)
    rng = np.random.default_rng(plan.seed)

    history = [_mean_loss(model, dev_records, ctx)]
    stopper.update(history[0])
    best_params = {k: v.data.copy() for k, v in model.params.items()}
    best_loss = history[0]

    step = 0
    order = []
    while step < plan.convergence.max_steps:
        if not order:
            order = list(rng.permutation(len(train_records)))
        batch = []
        while order and len(batch) < plan.batch_size:
            batch.append(train_records[order.pop()])
        opt.zero_grad()
        batch_loss = 0.0
        for r in batch:
            tokens, target, spk, dia, chan = ctx.example(
                r, model.config, model.config.conditioning)
            loss = model.teacher_forced_loss(tokens, target, spk, dia, chan)
            if not np.isfinite(loss.data):
                raise PhaseError(f"non-finite training loss at step {step}")
            loss.backward()
            batch_loss += loss.item()
        opt.step(grad_scale=1.0 / len(batch))
        step += 1
        if step % plan.convergence.eval_every == 0:
            dev_loss = _mean_loss(model, dev_records, ctx)
            history.append(dev_loss)
            if log:
                log(f"phase {plan.phase} step {step}: dev loss {dev_loss:.4f}")
            if dev_loss < best_loss:
                best_loss = dev_loss
                best_params = {k: v.data.copy() for k, v in model.params.items()}
            if stopper.update(dev_loss):
                break

    best_model = SynthModel(model.config,
                            {k: nn.param(v, k) for k, v in best_params.items()})
    return PhasedCheckpoint(best_model, plan.phase, parent_hash, history,
                            plan.dialect_config)


def run_schedule(plans, manifest, mels, speaker_embs=None, dialect_embs=None,
                 out_dir=None, log=None):
    """Chain the four phases; returns the checkpoint lineage.

    With ``out_dir``, each checkpoint is written atomically as
    ``phase<k>.ckpt`` plus a ``lineage.json`` manifest; on failure the
    partial lineage written so far is preserved.
    """
    if [p.phase for p in plans] != list(range(len(plans))):
        raise PhaseError("plans must be ordered phase 0..N without gaps")
    for p in plans:
        p.validate()
    lineage = []
    entries = []
    ckpt = None
    try:
        for plan in plans:
            ckpt = run_phase(plan, ckpt, manifest, mels, speaker_embs,
                             dialect_embs, log=log)
            lineage.append(ckpt)
            entry = {
                "phase": plan.phase,
                "hash": ckpt.content_hash,
                "parent_hash": ckpt.parent_hash,
                "best_dev_loss": min(ckpt.dev_history),
                "evals": len(ckpt.dev_history),
            }
            entries.append(entry)
            if out_dir:
                os.makedirs(out_dir, exist_ok=True)
                path = os.path.join(out_dir, f"phase{plan.phase}.ckpt")
                ckpt.save(path)
                entry["path"] = path
                _write_lineage(out_dir, entries)
    except Exception:
        if out_dir and entries:
            _write_lineage(out_dir, entries)
        raise
    return lineage


def _write_lineage(out_dir, entries):
    tmp = os.path.join(out_dir, ".lineage.tmp")
    with open(tmp, "w") as f:
        json.dump(entries, f, indent=2)
    os.replace(tmp, os.path.join(out_dir, "lineage.json"))


def overfit_utterance(ckpt, manifest, mels, record, speaker_embs=None,
                      dialect_embs=None, max_steps=5000, lr=1e-3,
                      target_l1=0.05, target_focus=None):
    """Fine-tune a checkpoint on a single utterance until the teacher-forced
    L1 drops under target_l1 (and, if given, attention focus reaches
    target_focus); returns (model, l1, attention_focus, steps)."""
    from .synth import attention_focus

    model = ckpt.model.copy()
    ctx = _BatchContext(manifest, mels, speaker_embs, dialect_embs)
    tokens, target, spk, dia, chan = ctx.example(
        record, model.config, model.config.conditioning)
    opt = nn.Adam(model.params, lr=lr)

    def measure():
        enc = model.encode(tokens, dia)
        coarse, _, attn = model.decode_teacher_forced(enc, spk, target)
        return (float(np.mean(np.abs(coarse.data - target))),
                attention_focus(attn.data))

    l1, focus = measure()
    steps = 0
    for steps in range(1, max_steps + 1):
        opt.zero_grad()
        loss = model.teacher_forced_loss(tokens, target, spk, dia, chan)
        loss.backward()
        opt.step()
        if steps % 25 == 0 or steps == max_steps:
            l1, focus = measure()
            if l1 < target_l1 and (target_focus is None or focus >= target_focus):
                break
    return model, l1, focus, steps
