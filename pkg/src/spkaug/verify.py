"""Finite-difference verification suite for every differentiable op and the
full synthesizer. Shared by the `gradcheck` CLI subcommand and the
acceptance tests.
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import nncore as nn
from .embednet import lde_pool
from .synth import SynthConfig, SynthModel

FULL_MODEL_TOLERANCE = 1e-4
OP_TOLERANCE = 1e-5


def _bounded(rng, *shape, lo=0.5, hi=1.5):
    """Random values with |v| in [lo, hi]: keeps gradients at magnitudes the
    finite-difference noise floor cannot corrupt."""
    mag = rng.uniform(lo, hi, size=shape)
    return mag * np.where(rng.random(shape) < 0.5, -1.0, 1.0)


def tiny_synth_config(n_channels=2):
    return SynthConfig(
        token_vocab=tuple("abcd"), emb_dim=6, enc_conv_layers=1,
        enc_conv_kernel=3, encoder_dim=6, decoder_dim=8, prenet_dims=(6,),
        attention_dim=4, location_filters=2, location_kernel=3,
        postnet_layers=2, postnet_kernel=3, postnet_channels=4,
        n_channels=n_channels, speaker_dim=3, dialect_dim=3,
        conditioning=frozenset({"speaker", "channel", "dialect"}))


def randomized_tiny_model(seed, n_channels=2):
    """Tiny full model at a differentiable point: the zero-initialized
    conditioning paths and biases get small fan-in-scaled noise so no relu
    pre-activation sits on its kink, and the over-scaled attention score
    projection is re-drawn at unit scale so the softmax stays far from
    saturation (saturated weights leave gradients under the
    finite-difference noise floor)."""
    config = tiny_synth_config(n_channels)
    model = SynthModel.create(config, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    for name, p in model.params.items():
        if np.all(p.data == 0.0) or name in ("stop_b", "attn_v"):
            fan = p.data.shape[0] if p.data.ndim else 1
            p.data = rng.normal(0.0, 1.0 / math.sqrt(max(fan, 1)),
                                size=p.data.shape)
    return model


def check_linear(rng):
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))
    b = rng.normal(size=2)
    cot = nn.constant(rng.normal(size=(3, 2)))
    return nn.grad_check(
        lambda ts: nn.summed(nn.mul(nn.linear(ts[0], ts[1], ts[2]), cot)),
        [x, w, b])


def check_conv1d(rng):
    x = rng.normal(size=(6, 3))
    w = rng.normal(size=(3, 3, 2))
    b = rng.normal(size=2)
    cot = nn.constant(rng.normal(size=(6, 2)))
    return nn.grad_check(
        lambda ts: nn.summed(nn.mul(nn.conv1d(ts[0], ts[1], ts[2]), cot)),
        [x, w, b])


def check_gru(rng):
    # inputs and weights bounded away from zero and from gate saturation
    x = _bounded(rng, 4)
    h = _bounded(rng, 3, hi=0.9)
    wx = _bounded(rng, 4, 9, lo=0.2, hi=0.6)
    wh = _bounded(rng, 3, 9, lo=0.2, hi=0.6)
    bx = _bounded(rng, 9, lo=0.1, hi=0.4)
    bh = _bounded(rng, 9, lo=0.1, hi=0.4)
    cot = nn.constant(_bounded(rng, 3))
    return nn.grad_check(
        lambda ts: nn.summed(nn.mul(nn.gru_step(*ts), cot)),
        [x, h, wx, wh, bx, bh])


def check_attention(rng):
    q = _bounded(rng, 3)
    keys = _bounded(rng, 5, 4, lo=0.3, hi=1.0)
    prev = rng.random(5) + 0.2
    prev = prev / prev.sum()
    names = ("b", "loc_conv", "loc_proj", "v", "wk", "wq")
    arrays = {
        "wq": _bounded(rng, 3, 4, lo=0.2, hi=0.5),
        "wk": _bounded(rng, 4, 4, lo=0.2, hi=0.5),
        "loc_conv": _bounded(rng, 3, 1, 2, lo=0.2, hi=0.5),
        "loc_proj": _bounded(rng, 2, 4, lo=0.2, hi=0.5),
        "v": _bounded(rng, 4), "b": _bounded(rng, 4, lo=0.1, hi=0.3),
    }
    cot = nn.constant(_bounded(rng, 5))

    def fn(ts):
        p = {n: ts[3 + i] for i, n in enumerate(names)}
        return nn.summed(nn.mul(nn.attention_energies(ts[0], ts[1], ts[2], p), cot))

    return nn.grad_check(fn, [q, keys, prev] + [arrays[n] for n in names])


def check_softmax_xent(rng):
    logits = rng.normal(size=7)
    return nn.grad_check(lambda ts: nn.cross_entropy(ts[0], 3), [logits])


def check_relu(rng):
    x = rng.normal(size=12)
    cot = nn.constant(rng.normal(size=12))
    eps = 1e-5
    skip = np.abs(x) < 10 * eps  # kink-adjacent coordinates
    return nn.grad_check(
        lambda ts: nn.summed(nn.mul(nn.relu(ts[0]), cot)), [x],
        eps=eps, skips=[skip])


def check_lde(rng):
    # compact clusters keep the soft assignment away from hard saturation
    frames = _bounded(rng, 5, 3, lo=0.1, hi=0.7)
    means = _bounded(rng, 2, 3, lo=0.1, hi=0.7)
    scales = rng.uniform(-0.5, 0.5, size=2)
    cot = nn.constant(_bounded(rng, 12))
    return nn.grad_check(
        lambda ts: nn.summed(nn.mul(lde_pool(ts[0], ts[1], ts[2], "mean_std"), cot)),
        [frames, means, scales])


def check_losses(rng):
    pred = rng.normal(size=(4, 5))
    target = rng.normal(size=(4, 5))
    logits = rng.normal(size=6)
    stops = (rng.random(6) > 0.5).astype(float)
    err1 = nn.grad_check(lambda ts: nn.l1_loss(ts[0], target), [pred])
    err2 = nn.grad_check(lambda ts: nn.bce_with_logits(ts[0], stops), [logits])
    return max(err1, err2)


def check_full_synth(seed=0):
    """All parameter gradients of the full model on a 3-token/6-frame case.

    The teacher-forced outputs (coarse mel, refined mel, stop logits) are
    projected onto a fixed random cotangent: this exercises every parameter's
    gradient through the whole network while avoiding the exact sign
    cancellations of the raw L1 objective, whose zero gradients fall under
    the finite-difference noise floor (the L1/BCE backward rules themselves
    are covered by the loss op check).
    """
    model = randomized_tiny_model(seed)
    rng = np.random.default_rng(seed + 2000)
    tokens = [0, 2, 1]
    target = rng.normal(size=(6, 80))
    spk = rng.normal(size=3)
    dia = rng.normal(size=3)
    chan = np.zeros(model.config.n_channels)
    chan[0] = 1.0
    cot_coarse = nn.constant(_bounded(rng, 6, 80) / 480.0)
    cot_refined = nn.constant(_bounded(rng, 6, 80) / 480.0)
    cot_stop = nn.constant(_bounded(rng, 6) / 6.0)
    names = sorted(model.params)
    config = model.config

    def fn(ts):
        m = SynthModel(config, {n: t for n, t in zip(names, ts)})
        enc = m.encode(tokens, dia)
        coarse, stops, _ = m.decode_teacher_forced(enc, spk, target)
        refined = m.postnet_refine(coarse, chan)
        return (nn.summed(nn.mul(coarse, cot_coarse))
                + nn.summed(nn.mul(refined, cot_refined))
                + nn.summed(nn.mul(stops, cot_stop)))

    return nn.grad_check(fn, [model.params[n].data for n in names])


OP_CHECKS = (
    ("linear", check_linear),
    ("conv1d", check_conv1d),
    ("gru_step", check_gru),
    ("attention", check_attention),
    ("softmax_cross_entropy", check_softmax_xent),
    ("relu", check_relu),
    ("lde_pool", check_lde),
    ("losses", check_losses),
)


def run_gradient_suite(seed, verbose=False, n_points=3):
    """Run every op check at several random points plus the full-model check.

    Returns a list of (name, error, tolerance) failures (empty = all green).
    """
    failures = []
    start = time.monotonic()
    for name, check in OP_CHECKS:
        worst = 0.0
        for k in range(n_points):
            rng = np.random.default_rng(seed + 31 * k)
            worst = max(worst, check(rng))
        ok = worst < OP_TOLERANCE
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name}: max rel err {worst:.3g} "
                  f"(tolerance {OP_TOLERANCE})")
        if not ok:
            failures.append((name, worst, OP_TOLERANCE))
    err = check_full_synth(seed)
    ok = err < FULL_MODEL_TOLERANCE
    if verbose:
        print(f"{'PASS' if ok else 'FAIL'} full_synthesizer: max rel err "
              f"{err:.3g} (tolerance {FULL_MODEL_TOLERANCE})")
    if not ok:
        failures.append(("full_synthesizer", err, FULL_MODEL_TOLERANCE))
    if verbose:
        print(f"gradient suite completed in {time.monotonic() - start:.1f}s")
    return failures
