"""Manifest management: speakers, dialects, channel labels, splits, VTLP
augmentation, balanced sampling, and a synthetic toy corpus for desk-scale
verification.

Manifest files are JSON-lines: the first line is a header object with
``corpus_list`` and ``dialect_list``; every following line is one utterance
record (see :class:`UtteranceRecord` for the keys).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import dsp

SPLITS = ("train", "dev", "test")
TOKEN_KINDS = ("char", "phone")


class ManifestError(ValueError):
    """Validation failure; ``problems`` lists the offending lines."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("manifest validation failed:\n" + "\n".join(self.problems))


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    speaker_id: str
    corpus_id: str
    dialect: str
    split: str
    text: str
    token_kind: str
    audio_path: str
    sample_rate: int
    gender: str = ""


@dataclass
class Manifest:
    records: list = field(default_factory=list)
    corpus_list: list = field(default_factory=list)
    dialect_list: list = field(default_factory=list)

    def speakers(self, split=None):
        out = []
        seen = set()
        for r in self.records:
            if split is not None and r.split != split:
                continue
            if r.speaker_id not in seen:
                seen.add(r.speaker_id)
                out.append(r.speaker_id)
        return out

    def filter(self, corpora=None, gender=None, splits=None, speakers=None):
        """New manifest with the same corpus/dialect lists, filtered records."""
        kept = []
        for r in self.records:
            if corpora is not None and r.corpus_id not in corpora:
                continue
            if gender not in (None, "") and r.gender != gender:
                continue
            if splits is not None and r.split not in splits:
                continue
            if speakers is not None and r.speaker_id not in speakers:
                continue
            kept.append(r)
        return Manifest(kept, list(self.corpus_list), list(self.dialect_list))

    def validate(self):
        problems = []
        seen_ids = {}
        speaker_split = {}
        for i, r in enumerate(self.records):
            line = i + 2  # header is line 1
            if r.utt_id in seen_ids:
                problems.append(
                    f"line {line}: duplicate utt_id '{r.utt_id}' "
                    f"(first at line {seen_ids[r.utt_id]})"
                )
            else:
                seen_ids[r.utt_id] = line
            if r.corpus_id not in self.corpus_list:
                problems.append(f"line {line}: unknown corpus '{r.corpus_id}'")
            if r.dialect not in self.dialect_list:
                problems.append(f"line {line}: unknown dialect '{r.dialect}'")
            if r.split not in SPLITS:
                problems.append(f"line {line}: unknown split '{r.split}'")
            if r.token_kind not in TOKEN_KINDS:
                problems.append(f"line {line}: unknown token_kind '{r.token_kind}'")
            prev = speaker_split.get(r.speaker_id)
            if prev is not None and prev != r.split:
                problems.append(
                    f"line {line}: speaker '{r.speaker_id}' appears in both "
                    f"'{prev}' and '{r.split}' splits"
                )
            speaker_split.setdefault(r.speaker_id, r.split)
        if problems:
            raise ManifestError(problems)
        return self


def save_manifest(manifest, path):
    with open(path, "w") as f:
        f.write(json.dumps({
            "corpus_list": list(manifest.corpus_list),
            "dialect_list": list(manifest.dialect_list),
        }) + "\n")
        for r in manifest.records:
            f.write(json.dumps(asdict(r)) + "\n")


def load_manifest(path):
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise ManifestError(["line 1: missing header"])
    header = json.loads(lines[0])
    records = []
    problems = []
    for i, line in enumerate(lines[1:]):
        if not line.strip():
            continue
        try:
            records.append(UtteranceRecord(**json.loads(line)))
        except (TypeError, json.JSONDecodeError) as exc:
            problems.append(f"line {i + 2}: unreadable record ({exc})")
    if problems:
        raise ManifestError(problems)
    manifest = Manifest(records, header["corpus_list"], header["dialect_list"])
    return manifest.validate()


def channel_onehot(corpus_id, corpus_list):
    """One-hot channel vector over the manifest's ordered corpus list."""
    if corpus_id not in corpus_list:
        raise ValueError(f"unknown corpus '{corpus_id}' (known: {list(corpus_list)})")
    vec = np.zeros(len(corpus_list))
    vec[list(corpus_list).index(corpus_id)] = 1.0
    return vec


def _factor_tag(factor):
    return format(factor, "g")


def vtlp_augment(manifest, factors, write_audio=False, audio_root=None):
    """Create artificial speakers by speed re-sampling.

    Each original speaker gains one copy per factor, named
    ``<speaker>_x<factor>``; augmented records inherit split, dialect and
    corpus. With ``write_audio`` the re-sampled WAVs are written into a
    parallel directory tree next to the originals (``<dir>_x<factor>/...``).
    """
    if not factors:
        raise ValueError("factors must be non-empty")
    for f in factors:
        if not (0.5 <= f <= 2.0):
            raise ValueError(f"VTLP factor {f} outside [0.5, 2.0]")
    existing = set(r.speaker_id for r in manifest.records)
    out = list(manifest.records)
    cache = {}
    for factor in factors:
        tag = _factor_tag(factor)
        created = set()
        for r in manifest.records:
            new_speaker = f"{r.speaker_id}_x{tag}"
            if new_speaker in existing:
                raise ValueError(f"speaker id collision: '{new_speaker}'")
            created.add(new_speaker)
            src_dir, fname = os.path.split(r.audio_path)
            new_dir = f"{src_dir}_x{tag}" if src_dir else f"x{tag}"
            new_path = os.path.join(new_dir, fname)
            out.append(replace(
                r,
                utt_id=f"{r.utt_id}_x{tag}",
                speaker_id=new_speaker,
                audio_path=new_path,
            ))
            if write_audio:
                root = audio_root or ""
                src = os.path.join(root, r.audio_path)
                if src not in cache:
                    cache[src] = dsp.read_wav(src)
                resampled = dsp.resample_speed(cache[src], factor)
                dst = os.path.join(root, new_path)
                os.makedirs(os.path.dirname(dst), exist_ok=True)
                dsp.write_wav(dst, resampled)
        existing |= created
        cache.clear()
    result = Manifest(out, list(manifest.corpus_list), list(manifest.dialect_list))
    result.validate()
    return result


def balanced_batches(manifest, key, batch_size, seed):
    """Deterministic stream of record batches balanced over a key.

    ``key`` is "dialect" or "speaker". Classes are interleaved record by
    record (minority classes are re-shuffled and reused), so any window of
    n_classes batches is balanced to within batch_size per class. One epoch
    covers the largest class once.
    """
    if key == "dialect":
        class_names = list(manifest.dialect_list)
        get = lambda r: r.dialect
    elif key == "speaker":
        class_names = sorted(set(r.speaker_id for r in manifest.records))
        get = lambda r: r.speaker_id
    else:
        raise ValueError(f"unknown balance key '{key}'")
    classes = {c: [] for c in class_names}
    for r in manifest.records:
        classes.setdefault(get(r), []).append(r)
    for c in class_names:
        if not classes[c]:
            raise ValueError(f"class '{c}' has no records")
    rng = np.random.default_rng(seed)

    def cycler(items):
        while True:
            order = rng.permutation(len(items))
            for i in order:
                yield items[i]

    cyclers = [cycler(classes[c]) for c in class_names]
    largest = max(len(v) for v in classes.values())
    n_batches = math.ceil(len(class_names) * largest / batch_size)
    pos = 0
    for _ in range(n_batches):
        batch = []
        for _ in range(batch_size):
            batch.append(next(cyclers[pos % len(cyclers)]))
            pos += 1
        yield batch


# ---------------------------------------------------------------------------
# Toy corpus
# ---------------------------------------------------------------------------

TOY_ALPHABET = "abcdefgh"
TOY_FRAMES_PER_TOKEN = 5
TOY_HOP = 200
# Channel k attenuates the high-band tone by exp(-TOY_TILT_STEP * k) and adds
# noise at TOY_NOISE_BASE * (1 + 3k).
TOY_TILT_STEP = 0.9
TOY_NOISE_BASE = 1e-4
_FRAME_PATTERN = np.array([1.0, 1.06, 1.12, 1.19, 1.26])
_DIALECT_PERMS = [
    [0, 1, 2, 3, 4],
    [4, 3, 2, 1, 0],
    [1, 0, 3, 4, 2],
    [2, 4, 0, 1, 3],
    [3, 2, 4, 0, 1],
    [4, 0, 1, 3, 2],
]


def toy_channel_tilt(channel_idx):
    """Configured log-magnitude attenuation of the high band for a channel."""
    return -TOY_TILT_STEP * channel_idx


def _token_freqs(token_idx, speaker_idx):
    shift = 1.0 + 0.04 * (speaker_idx % 5)
    low = (400.0 + 150.0 * token_idx) * shift
    high = (3000.0 + 350.0 * token_idx) * shift
    return low, high


def toy_utterance_wave(text, speaker_idx, dialect_idx, channel_idx, noise_rng=None):
    """Deterministic toy waveform: 5 frames of tones per token.

    Speaker shifts all frequencies, dialect permutes the within-token frame
    order for the first half of the alphabet, channel tilts the high band
    and sets the additive noise level.
    """
    perm = _DIALECT_PERMS[dialect_idx % len(_DIALECT_PERMS)]
    affected = set(range(len(TOY_ALPHABET) // 2))
    tilt_gain = math.exp(toy_channel_tilt(channel_idx))
    segments = []
    ramp = np.minimum(np.arange(TOY_HOP) / 40.0, 1.0)
    envelope = np.minimum(ramp, ramp[::-1])
    for ch in text:
        token_idx = TOY_ALPHABET.index(ch)
        low, high = _token_freqs(token_idx, speaker_idx)
        order = perm if token_idx in affected else _DIALECT_PERMS[0]
        for j in order:
            t = np.arange(TOY_HOP) / dsp.SAMPLE_RATE
            seg = (0.10 * np.sin(2 * np.pi * low * _FRAME_PATTERN[j] * t)
                   + 0.08 * tilt_gain * np.sin(2 * np.pi * high * t))
            segments.append(seg * envelope)
    samples = np.concatenate(segments)
    if noise_rng is not None:
        noise = TOY_NOISE_BASE * (1 + 3 * channel_idx)
        samples = samples + noise_rng.normal(0.0, noise, size=len(samples))
    return dsp.Waveform(np.clip(samples, -1.0, 1.0), dsp.SAMPLE_RATE)


def mean_spectral_tilt(mel):
    """Mean (upper-half max - lower-half max) log-mel over non-silent frames."""
    frames = mel.frames
    floor = np.log(dsp.LOG_FLOOR)
    voiced = frames.max(axis=1) > floor + 1.0
    half = frames.shape[1] // 2
    upper = frames[voiced, half:].max(axis=1)
    lower = frames[voiced, :half].max(axis=1)
    return float(np.mean(upper - lower))


def make_toy_corpus(out_dir, seed, n_speakers, n_dialects, n_channels,
                    utts_per_speaker, dev_speakers=0):
    """Generate a seed-deterministic synthetic corpus with audio on disk.

    Speakers are assigned dialects round-robin and channels in blocks so the
    two factors stay decorrelated; the last ``dev_speakers`` speakers land in
    the dev split. Returns the validated manifest (also written to
    ``<out_dir>/manifest.jsonl``).
    """
    if min(n_speakers, n_dialects, n_channels, utts_per_speaker) < 1:
        raise ValueError("all toy corpus counts must be >= 1")
    rng = np.random.default_rng(seed)
    corpus_list = [f"ch{c}" for c in range(n_channels)]
    dialect_list = [f"dia{d}" for d in range(n_dialects)]
    os.makedirs(os.path.join(out_dir, "audio"), exist_ok=True)
    records = []
    for s in range(n_speakers):
        speaker = f"spk{s}"
        dialect_idx = s % n_dialects
        channel_idx = (s // n_dialects) % n_channels
        split = "dev" if s >= n_speakers - dev_speakers else "train"
        spk_dir = os.path.join(out_dir, "audio", speaker)
        os.makedirs(spk_dir, exist_ok=True)
        for u in range(utts_per_speaker):
            n_tokens = int(rng.integers(3, 7))
            text = "".join(TOY_ALPHABET[int(rng.integers(len(TOY_ALPHABET)))]
                           for _ in range(n_tokens))
            wave = toy_utterance_wave(text, s, dialect_idx, channel_idx, rng)
            rel_path = os.path.join("audio", speaker, f"u{u:03d}.wav")
            dsp.write_wav(os.path.join(out_dir, rel_path), wave)
            records.append(UtteranceRecord(
                utt_id=f"{speaker}_u{u:03d}",
                speaker_id=speaker,
                corpus_id=corpus_list[channel_idx],
                dialect=dialect_list[dialect_idx],
                split=split,
                text=text,
                token_kind="char",
                audio_path=rel_path,
                sample_rate=dsp.SAMPLE_RATE,
                gender="f" if s % 2 == 0 else "m",
            ))
    manifest = Manifest(records, corpus_list, dialect_list).validate()
    save_manifest(manifest, os.path.join(out_dir, "manifest.jsonl"))
    return manifest
