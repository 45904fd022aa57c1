"""Artificial speakers by waveform re-sampling.

A 440 Hz tone re-sampled with the `speed` semantics shifts pitch, formants
and duration together: x1.1 moves the peak to 484 Hz and shortens the audio,
x0.9 moves it to 396 Hz and stretches it. Applied to a manifest, each factor
triples nothing by itself — the pair of factors turns 100 training speakers
into 300.
"""

import numpy as np

from spkaug import corpus, dsp

t = np.arange(16000) / 16000
tone = dsp.Waveform(0.5 * np.sin(2 * np.pi * 440 * t), 16000)


def peak_hz(wave):
    spec = np.abs(np.fft.rfft(wave.samples * np.hanning(len(wave))))
    return np.fft.rfftfreq(len(wave), 1 / wave.sample_rate)[np.argmax(spec)]


print(f"original: {len(tone)} samples, peak {peak_hz(tone):.0f} Hz")
for factor in (0.9, 1.1):
    shifted = dsp.resample_speed(tone, factor)
    print(f"x{factor}: {len(shifted)} samples, peak {peak_hz(shifted):.0f} Hz")

records = [
    corpus.UtteranceRecord(
        utt_id=f"p{s:03d}_u0", speaker_id=f"p{s:03d}", corpus_id="VCTK",
        dialect="English", split="train", text="hello", token_kind="char",
        audio_path=f"wav/p{s:03d}.wav", sample_rate=16000)
    for s in range(100)
]
manifest = corpus.Manifest(records, ["VCTK"], ["English"])
augmented = corpus.vtlp_augment(manifest, [0.9, 1.1])
print(f"speakers: {len(manifest.speakers('train'))} -> "
      f"{len(augmented.speakers('train'))}")
print("new identities look like:",
      [s for s in augmented.speakers("train") if "_x" in s][:2])
