"""DSP tests with an independent windowed-sinc interpolation oracle."""

import numpy as np
import pytest

from spkaug import dsp


def sine(freq, seconds=1.0, rate=16000, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return dsp.Waveform(amp * np.sin(2 * np.pi * freq * t), rate)


def sinc_interpolate_oracle(samples, positions, half_width=48):
    """Naive windowed-sinc interpolation at fractional sample positions.

    Written independently of the production resampler: direct summation of
    Hann-windowed sinc taps around each output position.
    """
    out = np.zeros(len(positions))
    n = len(samples)
    for i, pos in enumerate(positions):
        lo = max(0, int(np.floor(pos)) - half_width)
        hi = min(n, int(np.floor(pos)) + half_width + 1)
        idx = np.arange(lo, hi)
        delta = pos - idx
        window = 0.5 + 0.5 * np.cos(np.pi * delta / (half_width + 1))
        out[i] = float(np.sum(samples[idx] * np.sinc(delta) * window))
    return out


def speed_oracle(wave, factor):
    n_out = int(round(len(wave) / factor))
    positions = np.arange(n_out) * factor
    positions = positions[positions <= len(wave) - 1]
    return dsp.Waveform(
        np.clip(sinc_interpolate_oracle(wave.samples, positions), -1, 1),
        wave.sample_rate)


def fft_peak_hz(wave):
    spec = np.abs(np.fft.rfft(wave.samples * np.hanning(len(wave))))
    freqs = np.fft.rfftfreq(len(wave), 1.0 / wave.sample_rate)
    return freqs[int(np.argmax(spec))]


def fft_bin_hz(wave):
    return wave.sample_rate / len(wave)


class TestResampleSpeed:
    def test_length_factor_1_1(self):
        out = dsp.resample_speed(sine(440), 1.1)
        assert abs(len(out) - round(16000 / 1.1)) <= 2
        assert out.sample_rate == 16000

    def test_identity_factor(self):
        w = sine(440)
        out = dsp.resample_speed(w, 1.0)
        assert np.abs(out.samples - w.samples).max() < 1e-6

    @pytest.mark.parametrize("factor,expected", [(1.1, 484.0), (0.9, 396.0)])
    def test_sine_peak_matches_oracle(self, factor, expected):
        w = sine(440)
        fast = dsp.resample_speed(w, factor)
        slow = speed_oracle(w, factor)
        tol = max(fft_bin_hz(fast), fft_bin_hz(slow))
        assert abs(fft_peak_hz(fast) - expected) <= tol
        assert abs(fft_peak_hz(slow) - expected) <= tol
        assert abs(fft_peak_hz(fast) - fft_peak_hz(slow)) <= tol

    def test_factor_out_of_range(self):
        for bad in (0.4, 2.5, 0.0):
            with pytest.raises(dsp.DspError):
                dsp.resample_speed(sine(440), bad)

    def test_empty_wave_rejected(self):
        with pytest.raises(dsp.DspError):
            dsp.resample_speed(dsp.Waveform(np.zeros(0), 16000), 1.1)

    def test_round_trip_duration(self):
        w = sine(300, seconds=0.5)
        for f in (0.9, 1.1, 1.25):
            back = dsp.resample_speed(dsp.resample_speed(w, f), 1.0 / f)
            assert abs(len(back) - len(w)) <= 4


class TestResampleRate:
    def test_50k_to_16k(self):
        w = dsp.Waveform(np.sin(2 * np.pi * 440 * np.arange(50000) / 50000), 50000)
        out = dsp.resample_rate(w, 16000)
        assert len(out) == 16000
        assert out.sample_rate == 16000

    def test_identity(self):
        w = sine(440)
        out = dsp.resample_rate(w, 16000)
        np.testing.assert_array_equal(out.samples, w.samples)

    def test_pitch_preserved_vs_oracle(self):
        rate = 48000
        t = np.arange(rate) / rate
        w = dsp.Waveform(0.5 * np.sin(2 * np.pi * 440 * t), rate)
        out = dsp.resample_rate(w, 16000)
        positions = np.arange(16000) * (rate / 16000)
        oracle = dsp.Waveform(
            np.clip(sinc_interpolate_oracle(w.samples, positions[positions <= rate - 1]),
                    -1, 1), 16000)
        tol = max(fft_bin_hz(out), fft_bin_hz(oracle))
        assert abs(fft_peak_hz(out) - 440.0) <= tol
        assert abs(fft_peak_hz(oracle) - 440.0) <= tol

    def test_invalid_rate(self):
        with pytest.raises(dsp.DspError):
            dsp.resample_rate(sine(440), 0)


class TestMelFilterbank:
    def test_shape_and_normalization(self):
        fb = dsp.mel_filterbank(80, 1024, 16000, 0.0, 8000.0)
        assert fb.shape == (80, 513)
        assert (fb >= 0).all()
        np.testing.assert_allclose(fb.max(axis=1), 1.0)

    def test_centers_monotone(self):
        centers = dsp.filter_centers_hz(80, 0.0, 8000.0)
        assert (np.diff(centers) > 0).all()

    def test_centers_match_mel_grid_oracle(self):
        # independently recompute the uniform mel grid
        def mel(f):
            return 2595.0 * np.log10(1.0 + f / 700.0)

        def imel(m):
            return 700.0 * (10 ** (m / 2595.0) - 1.0)

        grid = np.linspace(mel(0.0), mel(8000.0), 82)[1:-1]
        np.testing.assert_allclose(dsp.filter_centers_hz(80, 0.0, 8000.0),
                                   imel(grid), rtol=1e-10)

    def test_fmax_above_nyquist_rejected(self):
        with pytest.raises(dsp.DspError):
            dsp.mel_filterbank(80, 1024, 16000, 0.0, 9000.0)


class TestMelSpectrogram:
    def test_frame_count(self):
        mel = dsp.mel_spectrogram(sine(440))
        assert mel.frames.shape == (81, 80)

    def test_zero_wave_hits_floor(self):
        mel = dsp.mel_spectrogram(dsp.Waveform(np.zeros(16000), 16000))
        np.testing.assert_array_equal(mel.frames, np.full((81, 80), np.log(1e-5)))

    def test_floor_invariant_for_any_wave(self):
        rng = np.random.default_rng(0)
        w = dsp.Waveform(np.clip(rng.normal(0, 0.1, 8000), -1, 1), 16000)
        assert (dsp.mel_spectrogram(w).frames >= np.log(1e-5)).all()

    def test_sine_band_constant_and_matches_filterbank_oracle(self):
        mel = dsp.mel_spectrogram(sine(1000, amp=1.0))
        bands = np.argmax(mel.frames, axis=1)
        interior = bands[2:-2]
        assert (interior == interior[0]).all()
        # independently locate the band whose filter is strongest at 1 kHz
        fb = dsp.mel_filterbank(80, 1024, 16000, 0.0, 8000.0)
        bin_at_1k = int(round(1000 / (16000 / 1024)))
        assert abs(int(interior[0]) - int(np.argmax(fb[:, bin_at_1k]))) <= 1

    def test_wrong_rate_rejected(self):
        with pytest.raises(dsp.DspError, match="resample"):
            dsp.mel_spectrogram(dsp.Waveform(np.zeros(8000), 8000))

    def test_too_short_rejected(self):
        with pytest.raises(dsp.DspError, match="short"):
            dsp.mel_spectrogram(dsp.Waveform(np.zeros(100), 16000))

    def test_deterministic(self):
        w = sine(523)
        a = dsp.mel_spectrogram(w).frames
        b = dsp.mel_spectrogram(w).frames
        np.testing.assert_array_equal(a, b)


class TestGriffinLim:
    def test_reconstruction_correlates(self):
        mel = dsp.mel_spectrogram(sine(440, seconds=0.5))
        wave = dsp.griffin_lim(mel, iterations=60)
        assert wave.sample_rate == 16000
        mel2 = dsp.mel_spectrogram(wave)
        t = min(mel.n_frames, mel2.n_frames)
        corr = np.corrcoef(mel.frames[:t].ravel(), mel2.frames[:t].ravel())[0, 1]
        assert corr > 0.9

    def test_silence_in_silence_out(self):
        silence = dsp.MelSpectrogram(np.full((40, 80), np.log(1e-5)))
        wave = dsp.griffin_lim(silence, iterations=5)
        assert np.sqrt(np.mean(wave.samples ** 2)) < 1e-3

    def test_more_iterations_do_not_hurt(self):
        mel = dsp.mel_spectrogram(sine(660, seconds=0.4))

        def err(iters):
            wave = dsp.griffin_lim(mel, iterations=iters, seed=0)
            mel2 = dsp.mel_spectrogram(wave)
            t = min(mel.n_frames, mel2.n_frames)
            return np.abs(mel.frames[:t] - mel2.frames[:t]).mean()

        assert err(60) <= err(1)

    def test_zero_iterations_rejected(self):
        with pytest.raises(dsp.DspError):
            dsp.griffin_lim(dsp.MelSpectrogram(np.zeros((10, 80))), 0)


class TestIO:
    def test_wav_roundtrip(self, tmp_path):
        w = sine(440, seconds=0.25)
        path = tmp_path / "a.wav"
        dsp.write_wav(path, w)
        back = dsp.read_wav(path)
        assert back.sample_rate == 16000
        assert np.abs(back.samples - w.samples).max() < 1e-4

    def test_mel_roundtrip(self, tmp_path):
        mel = dsp.mel_spectrogram(sine(440, seconds=0.3))
        path = tmp_path / "a.mel"
        dsp.save_mel(path, mel)
        back = dsp.load_mel(path)
        assert back.frames.shape == mel.frames.shape
        assert back.sample_rate == mel.sample_rate
        assert back.frame_config == mel.frame_config
        np.testing.assert_allclose(back.frames, mel.frames, atol=1e-5)

    def test_mel_magic_checked(self, tmp_path):
        path = tmp_path / "bad.mel"
        path.write_bytes(b"nope" + b"\0" * 40)
        with pytest.raises(dsp.DspError, match="not a mel file"):
            dsp.load_mel(path)


class TestInvariants:
    def test_waveform_validation(self):
        with pytest.raises(dsp.DspError):
            dsp.Waveform(np.array([np.nan]), 16000)
        with pytest.raises(dsp.DspError):
            dsp.Waveform(np.zeros(10), 0)

    def test_mel_requires_80_bands(self):
        with pytest.raises(dsp.DspError):
            dsp.MelSpectrogram(np.zeros((5, 79)))

    def test_frame_config_ordering(self):
        with pytest.raises(dsp.DspError):
            dsp.FrameConfig(win_length=800, hop_length=900, fft_size=1024)
        with pytest.raises(dsp.DspError):
            dsp.FrameConfig(win_length=1100, hop_length=200, fft_size=1024)
