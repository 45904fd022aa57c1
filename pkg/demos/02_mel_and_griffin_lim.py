"""Mel analysis and Griffin-Lim reconstruction.

A waveform becomes an 80-band log-mel matrix (one frame per 12.5 ms), and
Griffin-Lim turns a mel matrix back into audio by iterative phase recovery.
The round trip is lossy but strongly correlated.
"""

import numpy as np

from spkaug import dsp

t = np.arange(8000) / 16000
wave = dsp.Waveform(0.4 * np.sin(2 * np.pi * 440 * t)
                    + 0.2 * np.sin(2 * np.pi * 1760 * t), 16000)

mel = dsp.mel_spectrogram(wave)
print(f"{len(wave)} samples -> mel {mel.frames.shape}"
      f" (floor at log(1e-5) = {np.log(1e-5):.2f})")
print(f"strongest band per frame: {np.argmax(mel.frames, axis=1)[:8]} ...")

recon = dsp.griffin_lim(mel, iterations=60, seed=0)
mel2 = dsp.mel_spectrogram(recon)
frames = min(mel.n_frames, mel2.n_frames)
corr = np.corrcoef(mel.frames[:frames].ravel(), mel2.frames[:frames].ravel())[0, 1]
print(f"reconstructed {len(recon)} samples; re-analysis correlation {corr:.3f}")
