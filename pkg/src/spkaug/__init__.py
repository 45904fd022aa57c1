"""Speaker augmentation for multi-speaker end-to-end TTS.

Artificial speaker creation by waveform re-sampling, low-quality-corpus
mixing with channel and dialect conditioning in a Tacotron-style
synthesizer, a warm-start phased training scheduler, and the full
evaluation stack (embedding selection, dialect-confusion distances,
Mann-Whitney significance, listening-test administration).
"""

__version__ = "0.1.0"
