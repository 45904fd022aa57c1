"""Tacotron-style synthesizer with channel- and dialect-aware conditioning.

Three conditioning paths, each added to the base model without disturbing it:

* speaker: concatenated to every encoder state and every prenet input,
  realized as split matmuls whose speaker blocks are zero-initialized so a
  warm start from an unconditioned model is bitwise exact;
* dialect: a zero-initialized projection added to every encoder timestep;
* channel: a zero-initialized per-layer projection added to every postnet
  convolution pre-activation.

The decoder never sees the channel label, so pre-postnet output is
channel-invariant by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import nncore as nn
from .dsp import N_MELS

CONDITIONING_KINDS = ("speaker", "channel", "dialect")
ALIGNMENT_FAILURE_THRESHOLD = 0.5
STOP_THRESHOLD = 0.5


@dataclass(frozen=True)
class SynthConfig:
    token_vocab: tuple
    token_kind: str = "char"
    emb_dim: int = 64
    enc_conv_layers: int = 2
    enc_conv_kernel: int = 5
    encoder_dim: int = 64
    decoder_dim: int = 128
    prenet_dims: tuple = (64, 64)
    attention_dim: int = 32
    location_filters: int = 8
    location_kernel: int = 7
    postnet_layers: int = 3
    postnet_kernel: int = 5
    postnet_channels: int = 64
    n_channels: int = 5
    speaker_dim: int = 16
    dialect_dim: int = 16
    conditioning: frozenset = frozenset()

    def __post_init__(self):
        if self.postnet_kernel % 2 == 0 or self.enc_conv_kernel % 2 == 0:
            raise ValueError("conv kernels must be odd")
        if self.encoder_dim % 2:
            raise ValueError("encoder_dim must be even (bidirectional halves)")
        object.__setattr__(self, "token_vocab", tuple(self.token_vocab))
        object.__setattr__(self, "conditioning", frozenset(self.conditioning))
        unknown = self.conditioning - set(CONDITIONING_KINDS)
        if unknown:
            raise ValueError(f"unknown conditioning kinds: {sorted(unknown)}")

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["token_vocab"] = list(self.token_vocab)
        d["prenet_dims"] = list(self.prenet_dims)
        d["conditioning"] = sorted(self.conditioning)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["token_vocab"] = tuple(d["token_vocab"])
        d["prenet_dims"] = tuple(d["prenet_dims"])
        d["conditioning"] = frozenset(d["conditioning"])
        return cls(**d)


def tokens_to_ids(text, config):
    tokens = list(text) if config.token_kind == "char" else text.split()
    if not tokens:
        raise ValueError("empty token sequence")
    ids = []
    for t in tokens:
        if t not in config.token_vocab:
            raise ValueError(f"unknown token {t!r} (vocab: {config.token_vocab})")
        ids.append(config.token_vocab.index(t))
    return ids


@dataclass
class SynthesisResult:
    mel: np.ndarray
    coarse_mel: np.ndarray
    attention: np.ndarray
    stop_frame: int | None


def _postnet_channel_sizes(config):
    sizes = [config.postnet_channels] * (config.postnet_layers - 1) + [N_MELS]
    ins = [N_MELS] + sizes[:-1]
    return list(zip(ins, sizes))


class SynthModel:
    """Parameter container plus the forward passes."""

    def __init__(self, config, params):
        self.config = config
        self.params = params

    # -- construction -------------------------------------------------------

    @classmethod
    def create(cls, config, seed):
        rng = np.random.default_rng(seed)
        p = {}

        def init(name, shape, fan_in):
            p[name] = nn.param(rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape), name)

        def zeros(name, shape):
            p[name] = nn.param(np.zeros(shape), name)

        c = config
        init("embedding", (len(c.token_vocab), c.emb_dim), c.emb_dim)
        for i in range(c.enc_conv_layers):
            init(f"enc_conv{i}_w", (c.enc_conv_kernel, c.emb_dim, c.emb_dim),
                 c.enc_conv_kernel * c.emb_dim)
            zeros(f"enc_conv{i}_b", c.emb_dim)
        half = c.encoder_dim // 2
        for d in ("f", "b"):
            init(f"enc_gru_{d}_wx", (c.emb_dim, 3 * half), c.emb_dim)
            init(f"enc_gru_{d}_wh", (half, 3 * half), half)
            zeros(f"enc_gru_{d}_bx", 3 * half)
            zeros(f"enc_gru_{d}_bh", 3 * half)
        init("attn_wq", (c.decoder_dim, c.attention_dim), c.decoder_dim)
        init("attn_wk", (c.encoder_dim, c.attention_dim), c.encoder_dim)
        # two location channels: previous alignment and cumulative alignment
        init("attn_loc_conv", (c.location_kernel, 2, c.location_filters),
             2 * c.location_kernel)
        init("attn_loc_proj", (c.location_filters, c.attention_dim), c.location_filters)
        # over-scaled score projection: sharp attention from the start
        init("attn_v", (c.attention_dim,), c.attention_dim / 9.0)
        zeros("attn_b", c.attention_dim)
        prenet_in = N_MELS
        for i, out in enumerate(c.prenet_dims):
            init(f"prenet{i}_w", (prenet_in, out), prenet_in)
            zeros(f"prenet{i}_b", out)
            prenet_in = out
        dec_in = c.prenet_dims[-1] + c.encoder_dim
        init("dec_gru_wx", (dec_in, 3 * c.decoder_dim), dec_in)
        init("dec_gru_wh", (c.decoder_dim, 3 * c.decoder_dim), c.decoder_dim)
        zeros("dec_gru_bx", 3 * c.decoder_dim)
        zeros("dec_gru_bh", 3 * c.decoder_dim)
        out_in = c.decoder_dim + c.encoder_dim
        init("out_w", (out_in, N_MELS), out_in)
        zeros("out_b", N_MELS)
        init("stop_w", (out_in,), out_in)
        p["stop_b"] = nn.param(np.array(-2.0), "stop_b")  # bias against early stop
        for i, (cin, cout) in enumerate(_postnet_channel_sizes(c)):
            init(f"post{i}_w", (c.postnet_kernel, cin, cout), c.postnet_kernel * cin)
            zeros(f"post{i}_b", cout)
        model = cls(c, p)
        for kind in sorted(c.conditioning):
            model._add_conditioning_params(kind)
        return model

    def _add_conditioning_params(self, kind):
        c = self.config
        p = self.params

        def zeros(name, shape):
            p[name] = nn.param(np.zeros(shape), name)

        if kind == "speaker":
            zeros("attn_wk_spk", (c.speaker_dim, c.attention_dim))
            zeros("prenet0_w_spk", (c.speaker_dim, c.prenet_dims[0]))
            zeros("dec_gru_wx_spk", (c.speaker_dim, 3 * c.decoder_dim))
            zeros("out_w_spk", (c.speaker_dim, N_MELS))
            zeros("stop_w_spk", (c.speaker_dim,))
        elif kind == "channel":
            for i, (_, cout) in enumerate(_postnet_channel_sizes(c)):
                zeros(f"post{i}_chan", (c.n_channels, cout))
        elif kind == "dialect":
            zeros("dialect_proj", (c.dialect_dim, c.encoder_dim))
        else:
            raise ValueError(f"unknown conditioning kind '{kind}'")

    def copy(self):
        params = {k: nn.param(v.data.copy(), k) for k, v in self.params.items()}
        return SynthModel(self.config, params)

    # -- forward ------------------------------------------------------------

    def encode(self, token_ids, dialect_emb=None):
        """Encoder states [T_in x encoder_dim], optionally dialect-shifted."""
        c = self.config
        if len(token_ids) == 0:
            raise ValueError("empty token sequence")
        ids = np.asarray(token_ids, dtype=np.intp)
        if ids.min() < 0 or ids.max() >= len(c.token_vocab):
            raise ValueError(
                f"token id out of range [0, {len(c.token_vocab)}): {ids.tolist()}"
            )
        x = nn.take_rows(self.params["embedding"], ids)
        for i in range(c.enc_conv_layers):
            x = nn.relu(nn.conv1d(x, self.params[f"enc_conv{i}_w"],
                                  self.params[f"enc_conv{i}_b"]))
        half = c.encoder_dim // 2
        p = self.params
        fwd, bwd = [], []
        h = nn.constant(np.zeros(half))
        for t in range(len(ids)):
            h = nn.gru_step(x[t], h, p["enc_gru_f_wx"], p["enc_gru_f_wh"],
                            p["enc_gru_f_bx"], p["enc_gru_f_bh"])
            fwd.append(h)
        h = nn.constant(np.zeros(half))
        for t in reversed(range(len(ids))):
            h = nn.gru_step(x[t], h, p["enc_gru_b_wx"], p["enc_gru_b_wh"],
                            p["enc_gru_b_bx"], p["enc_gru_b_bh"])
            bwd.append(h)
        bwd.reverse()
        states = nn.concat([nn.stack(fwd), nn.stack(bwd)], axis=1)
        if dialect_emb is not None:
            if "dialect" not in c.conditioning:
                raise ValueError("model has no dialect conditioning path")
            shift = nn.matmul(nn.as_tensor(dialect_emb), self.params["dialect_proj"])
            states = states + nn.reshape(shift, (1, -1))
        return states

    def _speaker_contribs(self, speaker_emb):
        c = self.config
        if "speaker" in c.conditioning:
            if speaker_emb is None:
                raise ValueError("speaker-conditioned model needs a speaker embedding")
            spk = nn.as_tensor(np.asarray(speaker_emb, dtype=np.float64))
            if spk.data.shape != (c.speaker_dim,):
                raise ValueError(
                    f"speaker embedding shape {spk.data.shape} != ({c.speaker_dim},)"
                )
            p = self.params
            return {
                "keys": nn.matmul(spk, p["attn_wk_spk"]),
                "prenet": nn.matmul(spk, p["prenet0_w_spk"]),
                "gru": nn.matmul(spk, p["dec_gru_wx_spk"]),
                "out": nn.matmul(spk, p["out_w_spk"]),
                "stop": nn.matmul(spk, p["stop_w_spk"]),
            }
        if speaker_emb is not None:
            raise ValueError("model has no speaker conditioning path")
        return None

    def _prenet(self, frame, spk):
        p = self.params
        x = nn.linear(nn.as_tensor(frame), p["prenet0_w"], p["prenet0_b"])
        if spk is not None:
            x = x + spk["prenet"]
        x = nn.relu(x)
        for i in range(1, len(self.config.prenet_dims)):
            x = nn.relu(nn.linear(x, p[f"prenet{i}_w"], p[f"prenet{i}_b"]))
        return x

    def _decode_step(self, prev_frame, h, prev_attn, cum_attn, enc_states,
                     keys, spk):
        p = self.params
        prenet_out = self._prenet(prev_frame, spk)
        loc_in = nn.stack([prev_attn, cum_attn], axis=1)
        loc = nn.conv1d(loc_in, p["attn_loc_conv"])
        feats = keys + nn.matmul(loc, p["attn_loc_proj"]) \
            + nn.matmul(h, p["attn_wq"]) + p["attn_b"]
        weights = nn.softmax(nn.matmul(nn.tanh(feats), p["attn_v"]), axis=-1)
        context = nn.matmul(weights, enc_states)
        gru_in = nn.concat([prenet_out, context], axis=0)
        extra = spk["gru"] if spk is not None else None
        h_new = nn.gru_step(gru_in, h, p["dec_gru_wx"], p["dec_gru_wh"],
                            p["dec_gru_bx"], p["dec_gru_bh"], extra_x=extra)
        proj_in = nn.concat([h_new, context], axis=0)
        frame = nn.linear(proj_in, p["out_w"], p["out_b"])
        stop = nn.matmul(proj_in, p["stop_w"]) + p["stop_b"]
        if spk is not None:
            frame = frame + spk["out"]
            stop = stop + spk["stop"]
        return frame, stop, weights, h_new

    def decode_teacher_forced(self, enc_states, speaker_emb, target_mel):
        """Teacher-forced decode: (coarse [T x 80], stop logits [T], attention)."""
        target = np.asarray(target_mel, dtype=np.float64)
        if target.ndim != 2 or target.shape[1] != N_MELS or target.shape[0] == 0:
            raise ValueError(f"target mel must be non-empty [T x {N_MELS}]")
        c = self.config
        spk = self._speaker_contribs(speaker_emb)
        keys = nn.matmul(enc_states, self.params["attn_wk"])
        if spk is not None:
            keys = keys + nn.reshape(spk["keys"], (1, -1))
        t_in = enc_states.data.shape[0]
        h = nn.constant(np.zeros(c.decoder_dim))
        attn = nn.constant(np.zeros(t_in))
        cum = nn.constant(np.zeros(t_in))
        prev = nn.constant(np.zeros(N_MELS))
        frames, stops, rows = [], [], []
        for t in range(target.shape[0]):
            frame, stop, weights, h = self._decode_step(
                prev, h, attn, cum, enc_states, keys, spk)
            frames.append(frame)
            stops.append(stop)
            rows.append(weights)
            attn = weights
            cum = cum + weights
            prev = nn.constant(target[t])
        return nn.stack(frames), nn.stack(stops), nn.stack(rows)

    def postnet_refine(self, coarse, channel=None):
        """Residual postnet; the channel one-hot shifts every layer."""
        c = self.config
        chan = None
        if "channel" in c.conditioning:
            if channel is None:
                raise ValueError("channel-conditioned model needs a channel one-hot")
            chan = np.asarray(channel, dtype=np.float64)
            ones = np.isclose(chan, 1.0)
            if (chan.shape != (c.n_channels,) or ones.sum() != 1
                    or not np.all(ones | np.isclose(chan, 0.0))):
                raise ValueError(
                    f"malformed channel one-hot (need length {c.n_channels} "
                    "with exactly one 1)"
                )
            chan = nn.constant(chan)
        elif channel is not None:
            raise ValueError("model has no channel conditioning path")
        x = coarse
        n_layers = c.postnet_layers
        for i in range(n_layers):
            x = nn.conv1d(x, self.params[f"post{i}_w"], self.params[f"post{i}_b"])
            if chan is not None:
                x = x + nn.reshape(nn.matmul(chan, self.params[f"post{i}_chan"]),
                                   (1, -1))
            if i < n_layers - 1:
                x = nn.tanh(x)
        return coarse + x

    def synthesize(self, token_ids, speaker_emb=None, dialect_emb=None,
                   channel=None, max_frames=200):
        """Free-running synthesis; stops when stop probability > 0.5."""
        if max_frames < 1:
            raise ValueError("max_frames must be >= 1")
        c = self.config
        enc_states = self.encode(token_ids, dialect_emb)
        spk = self._speaker_contribs(speaker_emb)
        keys = nn.matmul(enc_states, self.params["attn_wk"])
        if spk is not None:
            keys = keys + nn.reshape(spk["keys"], (1, -1))
        t_in = enc_states.data.shape[0]
        h = nn.constant(np.zeros(c.decoder_dim))
        attn = nn.constant(np.zeros(t_in))
        cum = nn.constant(np.zeros(t_in))
        prev = nn.constant(np.zeros(N_MELS))
        frames, rows = [], []
        stop_frame = None
        for t in range(max_frames):
            frame, stop, weights, h = self._decode_step(
                prev, h, attn, cum, enc_states, keys, spk)
            frames.append(frame)
            rows.append(weights)
            attn = weights
            cum = cum + weights
            prev = frame  # free running feeds the coarse frame back
            # sigmoid(logit) > threshold, computed in logit space
            if float(stop.data) > math.log(STOP_THRESHOLD / (1.0 - STOP_THRESHOLD)):
                stop_frame = t + 1
                break
        coarse = nn.stack(frames)
        refined = self.postnet_refine(
            coarse, channel if "channel" in c.conditioning else None)
        return SynthesisResult(
            mel=refined.data.copy(),
            coarse_mel=coarse.data.copy(),
            attention=nn.stack(rows).data.copy(),
            stop_frame=stop_frame,
        )

    def teacher_forced_loss(self, token_ids, target_mel, speaker_emb=None,
                            dialect_emb=None, channel=None):
        """L1(coarse) + L1(refined) + stop BCE for one utterance."""
        enc = self.encode(token_ids, dialect_emb)
        coarse, stops, _ = self.decode_teacher_forced(enc, speaker_emb, target_mel)
        refined = self.postnet_refine(
            coarse, channel if "channel" in self.config.conditioning else None)
        target = np.asarray(target_mel, dtype=np.float64)
        stop_targets = np.zeros(target.shape[0])
        stop_targets[-1] = 1.0
        return (nn.l1_loss(coarse, target) + nn.l1_loss(refined, target)
                + nn.bce_with_logits(stops, stop_targets))


def extend_model(model, kind):
    """Copy a model and open a new conditioning path, zero-initialized.

    Existing parameters are copied verbatim; the extension cannot change any
    output until it is trained.
    """
    if kind not in CONDITIONING_KINDS:
        raise ValueError(f"unknown conditioning kind '{kind}'")
    if kind in model.config.conditioning:
        raise ValueError(f"model already has {kind} conditioning")
    new_config = replace(model.config,
                         conditioning=model.config.conditioning | {kind})
    params = {k: nn.param(v.data.copy(), k) for k, v in model.params.items()}
    extended = SynthModel(new_config, params)
    extended._add_conditioning_params(kind)
    return extended


def attention_focus(attention):
    """Mean of per-step max attention weight; < 0.5 flags alignment failure."""
    attention = np.asarray(attention, dtype=np.float64)
    return float(attention.max(axis=1).mean())


def is_alignment_failure(attention):
    return attention_focus(attention) < ALIGNMENT_FAILURE_THRESHOLD
