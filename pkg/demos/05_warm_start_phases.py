"""The warm-start guarantee at phase boundaries.

Opening a new conditioning path (speaker, channel, dialect) copies every
existing parameter verbatim and zero-initializes the new projections: the
teacher-forced loss of the extended model equals the parent's on any batch,
exactly. Training then moves the new path away from zero.
"""

import numpy as np

from spkaug import corpus, synth

config = synth.SynthConfig(
    token_vocab=tuple(corpus.TOY_ALPHABET), emb_dim=16, enc_conv_layers=1,
    enc_conv_kernel=5, encoder_dim=16, decoder_dim=32, prenet_dims=(16,),
    attention_dim=8, location_filters=4, location_kernel=7, postnet_layers=2,
    postnet_kernel=5, postnet_channels=16, n_channels=2, speaker_dim=8,
    dialect_dim=8, conditioning=frozenset({"speaker"}))

rng = np.random.default_rng(0)
parent = synth.SynthModel.create(config, seed=1)
for p in parent.params.values():
    p.data = rng.normal(0, 0.1, size=p.data.shape)  # a "trained" phase-1 model

tokens = [0, 3, 1, 2]
target = rng.normal(size=(12, 80))
speaker = rng.normal(size=8)

loss_parent = parent.teacher_forced_loss(tokens, target, speaker).item()
extended = synth.extend_model(parent, "channel")
loss_extended = extended.teacher_forced_loss(
    tokens, target, speaker, channel=np.array([1.0, 0.0])).item()

print(f"parent loss   {loss_parent!r}")
print(f"extended loss {loss_extended!r}")
print(f"difference = {loss_extended - loss_parent} (exactly zero)")

final = synth.extend_model(extended, "dialect")
loss_final = final.teacher_forced_loss(
    tokens, target, speaker, rng.normal(size=8), np.array([1.0, 0.0])).item()
print(f"after adding dialect too: difference = {loss_final - loss_parent}")
print("conditioning now:", sorted(final.config.conditioning))
