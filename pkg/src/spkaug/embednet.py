"""LDE-pooled encoders for speaker and dialect embeddings.

A 3-layer conv front-end maps 80-band mel frames to 64-dim features, a
learnable dictionary soft-assigns frames to components and aggregates
residuals (optionally with weighted standard deviations), and a dense head
projects to the embedding. Classification heads train the whole stack.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from .corpus import balanced_batches

SWEEP_DIMS = (32, 64, 128, 256, 512)
SWEEP_POOLINGS = ("mean", "mean_std")
SWEEP_COMPONENTS = (32, 64)
FRONTEND_DIM = 64
_RESIDUAL_EPS = 1e-8
_STD_EPS = 1e-9


@dataclass(frozen=True, order=True)
class EmbeddingConfig:
    dim: int
    pooling: str
    components: int

    def __post_init__(self):
        if self.dim not in SWEEP_DIMS:
            raise ValueError(f"dim must be one of {SWEEP_DIMS}, got {self.dim}")
        if self.pooling not in SWEEP_POOLINGS:
            raise ValueError(f"pooling must be one of {SWEEP_POOLINGS}")
        if self.components not in SWEEP_COMPONENTS:
            raise ValueError(f"components must be one of {SWEEP_COMPONENTS}")

    @property
    def pooled_length(self):
        scale = 2 if self.pooling == "mean_std" else 1
        return scale * self.components * FRONTEND_DIM

    def label(self):
        pl = "m,s" if self.pooling == "mean_std" else "m"
        return f"dim={self.dim} pl={pl} dc={self.components}"


def sweep_grid():
    """All 20 configurations of the hyperparameter sweep."""
    return [EmbeddingConfig(d, p, c)
            for d in SWEEP_DIMS for p in SWEEP_POOLINGS for c in SWEEP_COMPONENTS]


@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray
    source_utt: str = ""

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if not np.isfinite(v).all():
            raise ValueError("embedding contains non-finite values")
        object.__setattr__(self, "vector", v)


def lde_pool(frames, means, scales_raw, pooling="mean"):
    """Learnable-dictionary pooling of a frame sequence.

    frames [T x D], means [C x D], scales_raw [C] (softplus keeps the
    per-component scale positive). Soft assignment
    w_tc = softmax_c(-s_c * ||x_t - mu_c||^2); the output concatenates the
    normalized weighted residual means e_c (and, for mean_std pooling, the
    weighted residual standard deviations). Length C*D or 2*C*D.
    """
    if frames.data.shape[0] < 1:
        raise ValueError("lde_pool needs at least one frame")
    scales = nn.softplus(scales_raw)
    x = nn.reshape(frames, (frames.data.shape[0], 1, frames.data.shape[1]))
    resid = x - nn.reshape(means, (1,) + means.data.shape)        # [T, C, D]
    sq = nn.summed(nn.mul(resid, resid), axis=2)                   # [T, C]
    weights = nn.softmax(nn.mul(sq, -1.0) * nn.reshape(scales, (1, -1)), axis=1)
    wsum = nn.summed(weights, axis=0)                              # [C]
    w3 = nn.reshape(weights, weights.data.shape + (1,))
    denom = nn.reshape(_reciprocal(wsum + _RESIDUAL_EPS), (-1, 1))
    e = nn.mul(nn.summed(nn.mul(w3, resid), axis=0), denom)        # [C, D]
    if pooling == "mean":
        return nn.reshape(e, (-1,))
    if pooling != "mean_std":
        raise ValueError(f"unknown pooling '{pooling}'")
    m2 = nn.mul(nn.summed(nn.mul(w3, nn.mul(resid, resid)), axis=0), denom)
    var = m2 - nn.mul(e, e)
    std = nn.sqrt(nn.relu(var) + _STD_EPS)
    return nn.concat([nn.reshape(e, (-1,)), nn.reshape(std, (-1,))], axis=0)


def _reciprocal(t):
    out = 1.0 / t.data

    def backward(g):
        t._accumulate(-g * out * out)

    return nn._op(out, (t,), backward, "reciprocal")


def lde_pool_oracle(frames, means, scales_raw, pooling="mean"):
    """Direct double-loop reference for lde_pool (plain numpy, no autodiff)."""
    frames = np.asarray(frames, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    scales = np.logaddexp(0.0, np.asarray(scales_raw, dtype=np.float64))
    t_len, d = frames.shape
    c_len = means.shape[0]
    weights = np.zeros((t_len, c_len))
    for t in range(t_len):
        logits = np.empty(c_len)
        for c in range(c_len):
            diff = frames[t] - means[c]
            logits[c] = -scales[c] * float(diff @ diff)
        shifted = np.exp(logits - logits.max())
        weights[t] = shifted / shifted.sum()
    e = np.zeros((c_len, d))
    for c in range(c_len):
        acc = np.zeros(d)
        for t in range(t_len):
            acc += weights[t, c] * (frames[t] - means[c])
        e[c] = acc / (weights[:, c].sum() + _RESIDUAL_EPS)
    if pooling == "mean":
        return e.reshape(-1)
    m2 = np.zeros((c_len, d))
    for c in range(c_len):
        acc = np.zeros(d)
        for t in range(t_len):
            acc += weights[t, c] * (frames[t] - means[c]) ** 2
        m2[c] = acc / (weights[:, c].sum() + _RESIDUAL_EPS)
    std = np.sqrt(np.maximum(m2 - e * e, 0.0) + _STD_EPS)
    return np.concatenate([e.reshape(-1), std.reshape(-1)])


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


class Encoder:
    """Conv front-end + LDE pooling + dense embedding + class head."""

    def __init__(self, config, classes, params):
        self.config = config
        self.classes = list(classes)
        self.params = params

    @classmethod
    def create(cls, config, classes, seed, angular_margin=False):
        rng = np.random.default_rng(seed)
        p = {}

        def init(name, shape, fan_in):
            p[name] = nn.param(rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape), name)

        channels = [80, FRONTEND_DIM, FRONTEND_DIM, FRONTEND_DIM]
        for i in range(3):
            init(f"conv{i}_w", (3, channels[i], channels[i + 1]), 3 * channels[i])
            p[f"conv{i}_b"] = nn.param(np.zeros(channels[i + 1]), f"conv{i}_b")
        init("dict_means", (config.components, FRONTEND_DIM), FRONTEND_DIM)
        p["dict_scales"] = nn.param(np.zeros(config.components), "dict_scales")
        init("proj_w", (config.pooled_length, config.dim), config.pooled_length)
        p["proj_b"] = nn.param(np.zeros(config.dim), "proj_b")
        init("cls_w", (config.dim, len(classes)), config.dim)
        p["cls_b"] = nn.param(np.zeros(len(classes)), "cls_b")
        enc = cls(config, classes, p)
        enc.angular_margin = angular_margin
        return enc

    angular_margin = False

    def frame_features(self, mel_frames):
        x = nn.constant(mel_frames)
        for i in range(3):
            x = nn.relu(nn.conv1d(x, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"]))
        return x

    def embed_tensor(self, mel_frames):
        feats = self.frame_features(mel_frames)
        pooled = lde_pool(feats, self.params["dict_means"], self.params["dict_scales"],
                          self.config.pooling)
        return nn.linear(pooled, self.params["proj_w"], self.params["proj_b"])

    def logits(self, mel_frames, label=None):
        emb = self.embed_tensor(mel_frames)
        if not self.angular_margin or label is None:
            return nn.linear(emb, self.params["cls_w"], self.params["cls_b"])
        return self._angular_logits(emb, label)

    def _angular_logits(self, emb, label):
        # A-softmax with margin 2: the true-class logit uses psi(theta) =
        # sign trick over cos(2 theta); other classes keep ||x|| cos(theta).
        w = self.params["cls_w"]
        w_norm = np.linalg.norm(w.data, axis=0) + 1e-12
        x_norm = nn.sqrt(nn.summed(nn.mul(emb, emb)) + 1e-12)
        cos = nn.mul(nn.matmul(emb, w), nn.constant(1.0 / w_norm))
        cos = nn.mul(cos, _reciprocal(x_norm))
        cos2 = nn.mul(cos, cos) * 2.0 - 1.0
        sign = np.where(cos.data >= 0.0, 1.0, -1.0)
        offset = np.where(cos.data >= 0.0, 0.0, -2.0)
        psi = nn.mul(cos2, nn.constant(sign)) + nn.constant(offset)
        mask = np.zeros(len(self.classes))
        mask[label] = 1.0
        mixed = nn.mul(psi, nn.constant(mask)) + nn.mul(cos, nn.constant(1.0 - mask))
        return nn.mul(mixed, x_norm)

    def save(self, path):
        meta = {
            "dim": self.config.dim,
            "pooling": self.config.pooling,
            "components": self.config.components,
            "classes": self.classes,
        }
        return nn.save_archive(path, {k: v.data for k, v in self.params.items()}, meta)

    @classmethod
    def load(cls, path):
        tensors, meta, _ = nn.load_archive(path)
        config = EmbeddingConfig(meta["dim"], meta["pooling"], meta["components"])
        params = {k: nn.param(v, k) for k, v in tensors.items()}
        return cls(config, meta["classes"], params)


def _train_encoder(manifest, mels, cfg, label_of, classes, epochs, seed,
                   balance_key, lr=1e-3, angular_margin=False):
    if len(classes) < 2:
        raise ValueError(f"need at least 2 classes to train, got {classes}")
    encoder = Encoder.create(cfg, classes, seed, angular_margin)
    opt = nn.Adam(encoder.params, lr=lr)
    batch_size = min(8, max(2, len(manifest.records) // 4))
    history = []
    for epoch in range(epochs):
        total = 0.0
        for batch in balanced_batches(manifest, balance_key, batch_size, seed + epoch):
            opt.zero_grad()
            loss_sum = 0.0
            for r in batch:
                label = classes.index(label_of(r))
                loss = nn.cross_entropy(encoder.logits(mels[r.utt_id], label), label)
                loss.backward()
                loss_sum += loss.item()
            opt.step(grad_scale=1.0 / len(batch))
            total += loss_sum / len(batch)
        history.append(total)
    accuracy = encoder_accuracy(encoder, manifest, mels, label_of)
    return encoder, accuracy, history


def encoder_accuracy(encoder, manifest, mels, label_of):
    correct = 0
    for r in manifest.records:
        logits = encoder.logits(mels[r.utt_id]).data
        if encoder.classes[int(np.argmax(logits))] == label_of(r):
            correct += 1
    return correct / max(1, len(manifest.records))


def train_dialect_encoder(manifest, mels, cfg, epochs, seed, lr=1e-3):
    """Train a dialect classifier with dialect-balanced batches."""
    classes = list(manifest.dialect_list)
    present = set(r.dialect for r in manifest.records)
    if len(present) < 2:
        raise ValueError(f"need >= 2 dialect classes, manifest has {sorted(present)}")
    return _train_encoder(manifest, mels, cfg, lambda r: r.dialect, classes,
                          epochs, seed, "dialect", lr)


def train_speaker_encoder(manifest, mels, cfg, epochs, seed, lr=1e-3,
                          angular_margin=False):
    """Same architecture on speaker-id targets (angular margin optional)."""
    classes = sorted(set(r.speaker_id for r in manifest.records))
    if len(classes) < 2:
        raise ValueError("need >= 2 speakers to train a speaker encoder")
    return _train_encoder(manifest, mels, cfg, lambda r: r.speaker_id, classes,
                          epochs, seed, "speaker", lr, angular_margin)


def embed(encoder, mel_frames, source_utt=""):
    """Deterministic fixed-length embedding of a mel matrix."""
    frames = mel_frames.frames if hasattr(mel_frames, "frames") else np.asarray(mel_frames)
    if frames.shape[0] < 1:
        raise ValueError("cannot embed an empty mel spectrogram")
    return Embedding(encoder.embed_tensor(frames).data.copy(), source_utt)


def cosine(a, b):
    """Cosine similarity of two embeddings, in [-1, 1]."""
    va = a.vector if isinstance(a, Embedding) else np.asarray(a, dtype=np.float64)
    vb = b.vector if isinstance(b, Embedding) else np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for zero vectors")
    return float(np.clip(va @ vb / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class RankedConfig:
    config: EmbeddingConfig
    mean_score: float
    pair_scores: tuple


def rank_configs(configs, encoders, pairs):
    """Rank configs by mean cosine between synthesized/ground-truth embeddings.

    ``encoders[i]`` is the trained encoder for ``configs[i]``; ``pairs`` is a
    list of (synthesized mel, ground-truth mel). Descending by mean score,
    ties broken by (dim, pooling, components).
    """
    if not pairs:
        raise ValueError("rank_configs needs at least one mel pair")
    if len(configs) != len(encoders):
        raise ValueError("configs and encoders must align")
    ranked = []
    for cfg, enc in zip(configs, encoders):
        scores = tuple(
            cosine(embed(enc, synth), embed(enc, gt)) for synth, gt in pairs
        )
        ranked.append(RankedConfig(cfg, float(np.mean(scores)), scores))
    ranked.sort(key=lambda r: (-r.mean_score, r.config.dim, r.config.pooling,
                               r.config.components))
    return ranked


def take_top(ranked, k):
    return list(ranked[:k])


def save_embeddings_csv(path, embeddings):
    """CSV export: utt_id followed by the vector components."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for emb in embeddings:
            writer.writerow([emb.source_utt] + [repr(float(v)) for v in emb.vector])


def load_embeddings_csv(path):
    out = {}
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row:
                continue
            out[row[0]] = Embedding(np.array([float(v) for v in row[1:]]), row[0])
    return out
