"""Deterministic signal processing: speed re-sampling, mel analysis, Griffin-Lim.

All functions are pure; the canonical internal rate is 16 kHz and mel
spectrograms are 80-band log magnitudes floored at log(1e-5).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

SAMPLE_RATE = 16000
N_MELS = 80
LOG_FLOOR = 1e-5
MEL_MAGIC = b"MEL1"


class DspError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    """Mono audio: samples in [-1, 1] at a positive integer rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DspError(f"waveform must be 1-D, got shape {samples.shape}")
        if not np.isfinite(samples).all():
            raise DspError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise DspError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameConfig:
    """STFT analysis settings (Hann window, centered frames)."""

    win_length: int = 800
    hop_length: int = 200
    fft_size: int = 1024

    def __post_init__(self):
        if not (0 < self.hop_length <= self.win_length <= self.fft_size):
            raise DspError(
                f"need hop <= win <= fft, got hop={self.hop_length} "
                f"win={self.win_length} fft={self.fft_size}"
            )


@dataclass(frozen=True)
class MelSpectrogram:
    """Time-major [T x 80] log-mel magnitudes."""

    frames: np.ndarray
    frame_config: FrameConfig = field(default_factory=FrameConfig)
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != N_MELS:
            raise DspError(f"mel frames must be [T x {N_MELS}], got {frames.shape}")
        if not np.isfinite(frames).all():
            raise DspError("mel frames contain non-finite values")
        # Model outputs may dip under the analysis floor; the type holds it.
        object.__setattr__(self, "frames", np.maximum(frames, np.log(LOG_FLOOR)))

    @property
    def n_frames(self):
        return self.frames.shape[0]


def _speed_fraction(factor):
    # Playback positions advance by `factor`; resample at rate 1/factor.
    return Fraction(factor).limit_denominator(1000)


def resample_speed(wave, factor):
    """SoX-`speed` semantics: pitch, formants and duration all scale by factor.

    Band-limited polyphase interpolation at rate 1/factor with the original
    sample rate re-declared on the output.
    """
    if not (0.5 <= factor <= 2.0):
        raise DspError(f"speed factor must be in [0.5, 2.0], got {factor}")
    if len(wave) == 0:
        raise DspError("cannot resample an empty waveform")
    frac = _speed_fraction(factor)
    if frac == 1:
        return Waveform(wave.samples.copy(), wave.sample_rate)
    out = resample_poly(wave.samples, frac.denominator, frac.numerator)
    return Waveform(np.clip(out, -1.0, 1.0), wave.sample_rate)


def resample_rate(wave, target_rate):
    """Convert the sampling rate, preserving duration and spectral content."""
    if target_rate <= 0:
        raise DspError(f"target_rate must be positive, got {target_rate}")
    if target_rate == wave.sample_rate:
        return Waveform(wave.samples.copy(), wave.sample_rate)
    frac = Fraction(int(target_rate), int(wave.sample_rate))
    out = resample_poly(wave.samples, frac.numerator, frac.denominator)
    return Waveform(np.clip(out, -1.0, 1.0), int(target_rate))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels=N_MELS, fft_size=1024, sample_rate=SAMPLE_RATE,
                   fmin=0.0, fmax=8000.0):
    """Triangular HTK-mel filters, each peak-normalized to 1.0.

    Returns [n_mels x (fft_size/2 + 1)].
    """
    nyquist = sample_rate / 2.0
    if not (0 <= fmin < fmax <= nyquist):
        raise DspError(f"need 0 <= fmin < fmax <= {nyquist}, got ({fmin}, {fmax})")
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_hz = np.fft.rfftfreq(fft_size, d=1.0 / sample_rate)
    fb = np.zeros((n_mels, len(bin_hz)))
    for i in range(n_mels):
        left, center, right = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        up = (bin_hz - left) / (center - left)
        down = (right - bin_hz) / (right - center)
        tri = np.maximum(0.0, np.minimum(up, down))
        peak = tri.max()
        if peak <= 0.0:
            raise DspError(
                f"mel filter {i} is empty: fft_size {fft_size} too coarse "
                f"for {n_mels} bands"
            )
        fb[i] = tri / peak
    return fb


def filter_centers_hz(n_mels=N_MELS, fmin=0.0, fmax=8000.0):
    """Center frequencies of the filterbank rows, in Hz."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


def _hann(win_length, fft_size):
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win_length) / win_length)
    pad = fft_size - win_length
    return np.pad(window, (pad // 2, pad - pad // 2))


def stft_magnitude(wave, cfg=FrameConfig()):
    """Centered magnitude STFT, [T x (fft/2+1)] with T = 1 + floor(N / hop)."""
    n = len(wave)
    half = cfg.fft_size // 2
    if n <= half:
        raise DspError(
            f"waveform of {n} samples is shorter than one analysis window "
            f"(need > {half})"
        )
    padded = np.pad(wave.samples, half, mode="reflect")
    n_frames = 1 + n // cfg.hop_length
    window = _hann(cfg.win_length, cfg.fft_size)
    starts = np.arange(n_frames) * cfg.hop_length
    frames = padded[starts[:, None] + np.arange(cfg.fft_size)[None, :]]
    return np.abs(np.fft.rfft(frames * window, n=cfg.fft_size, axis=1))


def mel_spectrogram(wave, cfg=FrameConfig()):
    """80-band log-mel magnitudes of a 16 kHz waveform."""
    if wave.sample_rate != SAMPLE_RATE:
        raise DspError(
            f"mel analysis expects {SAMPLE_RATE} Hz input, got {wave.sample_rate}; "
            "resample_rate first"
        )
    fb = mel_filterbank(N_MELS, cfg.fft_size, wave.sample_rate)
    mel = stft_magnitude(wave, cfg) @ fb.T
    return MelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR)), cfg, wave.sample_rate)


def _istft(spec, cfg, n_samples):
    window = _hann(cfg.win_length, cfg.fft_size)
    half = cfg.fft_size // 2
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1) * window
    total = (spec.shape[0] - 1) * cfg.hop_length + cfg.fft_size
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = window * window
    for i in range(spec.shape[0]):
        start = i * cfg.hop_length
        out[start:start + cfg.fft_size] += frames[i]
        norm[start:start + cfg.fft_size] += wsq
    out = out / np.maximum(norm, 1e-10)
    return out[half:half + n_samples]


def griffin_lim(mel, iterations=60, seed=0):
    """Reconstruct a 16 kHz waveform from a log-mel spectrogram.

    Linear magnitudes come from the clipped pseudo-inverse of the mel
    filterbank; phase is recovered iteratively from a seeded random start.
    """
    if iterations < 1:
        raise DspError(f"iterations must be >= 1, got {iterations}")
    cfg = mel.frame_config
    fb = mel_filterbank(N_MELS, cfg.fft_size, mel.sample_rate)
    magnitude = np.clip(np.exp(mel.frames) @ np.linalg.pinv(fb).T, 0.0, None)
    n_samples = (mel.n_frames - 1) * cfg.hop_length
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(magnitude.shape))
    wave = None
    for _ in range(iterations):
        wave = _istft(magnitude * phase, cfg, n_samples)
        spec = np.fft.rfft(
            _frames_for_analysis(wave, cfg) * _hann(cfg.win_length, cfg.fft_size),
            n=cfg.fft_size, axis=1,
        )
        spec = spec[:magnitude.shape[0]]
        phase = np.exp(1j * np.angle(spec))
    peak = np.abs(wave).max()
    if peak > 1.0:
        wave = wave / peak
    return Waveform(wave, mel.sample_rate)


def _frames_for_analysis(samples, cfg):
    half = cfg.fft_size // 2
    padded = np.pad(samples, half, mode="reflect")
    n_frames = 1 + len(samples) // cfg.hop_length
    starts = np.arange(n_frames) * cfg.hop_length
    return padded[starts[:, None] + np.arange(cfg.fft_size)[None, :]]


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def write_wav(path, wave):
    """Write mono 16-bit PCM."""
    pcm = np.clip(wave.samples, -1.0, 1.0)
    wavfile.write(path, wave.sample_rate, (pcm * 32767.0).astype(np.int16))


def read_wav(path):
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise DspError(f"{path}: expected mono WAV, got shape {data.shape}")
    if data.dtype != np.int16:
        raise DspError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    return Waveform(data.astype(np.float64) / 32768.0, int(rate))


def save_mel(path, mel):
    """Binary mel file: magic, T, 80, hop, win, sr header + float32 LE frames."""
    cfg = mel.frame_config
    with open(path, "wb") as f:
        f.write(MEL_MAGIC)
        f.write(struct.pack("<5I", mel.n_frames, N_MELS, cfg.hop_length,
                            cfg.win_length, mel.sample_rate))
        f.write(mel.frames.astype("<f4").tobytes())


def load_mel(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MEL_MAGIC:
            raise DspError(f"{path}: not a mel file")
        t, n_mels, hop, win, sr = struct.unpack("<5I", f.read(20))
        if n_mels != N_MELS:
            raise DspError(f"{path}: expected {N_MELS} mel bands, got {n_mels}")
        frames = np.frombuffer(f.read(t * n_mels * 4), dtype="<f4")
    fft_size = 1 << (win - 1).bit_length()
    cfg = FrameConfig(win_length=win, hop_length=hop, fft_size=fft_size)
    return MelSpectrogram(frames.astype(np.float64).reshape(t, n_mels), cfg, sr)
