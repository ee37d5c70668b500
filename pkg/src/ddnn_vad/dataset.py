"""Synthetic paired noisy/clean corpora for VAD training.

Clean "speech" is a harmonic stack with a wandering pitch contour, formant
shaping and syllable-rate amplitude modulation, separated by digital silence.
Noise is white, pink, or babble-like (a sum of independent speech-like
streams).  Every noisy utterance keeps its clean reference and exact
sample-level speech boundaries, so frame labels are known exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .exceptions import ConfigError, DataError
from .features import (SAMPLE_RATE, AudioSignal, FeatureConfig, FrameSpec, extract_features,
                       frame_signal, read_wav, write_wav)

NOISE_TYPES = ("white", "pink", "babble")
PEAK_LIMIT = 0.99
SPLITS = ("train", "dev", "test")


@dataclass
class Utterance:
    """A waveform plus its speech segments as half-open sample ranges."""

    signal: AudioSignal
    segments: list = field(default_factory=list)
    uid: str = ""

    @property
    def sample_rate(self) -> int:
        return self.signal.sample_rate

    def speech_mask(self) -> np.ndarray:
        return speech_mask(self.segments, len(self.signal))

    def labels(self, spec: FrameSpec = FrameSpec()) -> np.ndarray:
        return frame_labels(self.segments, len(self.signal), spec)


def speech_mask(segments, n_samples: int) -> np.ndarray:
    mask = np.zeros(n_samples, dtype=bool)
    for start, end in segments:
        mask[max(0, start):min(n_samples, end)] = True
    return mask


def frame_labels(segments, n_samples: int, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """1 for frames with more than half their samples inside speech, else 0."""
    mask = speech_mask(segments, n_samples).astype(np.float64)
    frames = frame_signal(mask, spec)
    return (frames.sum(axis=1) * 2 > spec.frame_length).astype(np.int64)


# --- generators -----------------------------------------------------------------

def speech_like(n_samples: int, rng: np.random.Generator,
                sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Voiced-speech-like waveform with unit-ish RMS and smooth on/offsets."""
    t = np.arange(n_samples) / sample_rate
    f0_base = rng.uniform(90.0, 220.0)
    contour = (1.0 + 0.12 * np.sin(2 * np.pi * rng.uniform(0.3, 1.2) * t + rng.uniform(0, 2 * np.pi))
               + 0.05 * np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * t))
    f0 = f0_base * contour
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    formants = np.array([rng.uniform(300, 800), rng.uniform(900, 2200), rng.uniform(2300, 3300)])
    bw = np.array([90.0, 140.0, 220.0])
    out = np.zeros(n_samples)
    n_harm = int(0.48 * sample_rate / f0_base)
    for k in range(1, n_harm + 1):
        fk = k * f0_base
        gain = np.sum(np.exp(-0.5 * ((fk - formants) / bw) ** 2)) + 0.05
        out += gain / np.sqrt(k) * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    syllable = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    out *= syllable
    breath = lfilter([1.0, -0.9], [1.0], rng.standard_normal(n_samples)) * 0.05
    out += breath * syllable
    ramp = min(n_samples // 2, int(0.01 * sample_rate))
    if ramp > 0:
        edge = np.hanning(2 * ramp)
        out[:ramp] *= edge[:ramp]
        out[-ramp:] *= edge[ramp:]
    rms = np.sqrt(np.mean(out ** 2))
    return out / rms if rms > 0 else out


def white_noise(n_samples: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(n_samples)


def pink_noise(n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """-3 dB/octave noise from white noise through a 3-pole/3-zero approximation."""
    b = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
    a = [1.0, -2.494956002, 2.017265875, -0.522189400]
    warm = 2000
    x = lfilter(b, a, rng.standard_normal(n_samples + warm))[warm:]
    return x / np.std(x)


def babble_noise(n_samples: int, rng: np.random.Generator, n_talkers: int = 8,
                 sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    out = np.zeros(n_samples)
    for _ in range(n_talkers):
        out += speech_like(n_samples, rng, sample_rate)
    return out / np.std(out)


def make_noise(kind: str, n_samples: int, rng: np.random.Generator,
               sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    if kind == "white":
        return white_noise(n_samples, rng)
    if kind == "pink":
        return pink_noise(n_samples, rng)
    if kind == "babble":
        return babble_noise(n_samples, rng, sample_rate=sample_rate)
    raise ConfigError(f"unknown noise type {kind!r}; choose from {NOISE_TYPES}")


def synthesize_clean(duration_s: float, seed, speech_fraction: float = 0.6,
                     sample_rate: int = SAMPLE_RATE, level: float = 0.1,
                     uid: str = "") -> Utterance:
    """Alternate silences and speech-like bursts, aiming at ``speech_fraction``.

    ``level`` is the RMS of the voiced parts; silences are exact zeros.
    """
    if duration_s <= 0:
        raise ConfigError("duration must be positive")
    if not 0.0 <= speech_fraction <= 1.0:
        raise ConfigError("speech_fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    x = np.zeros(n)
    if speech_fraction == 1.0:
        segments = [(0, n)]
    elif speech_fraction == 0.0:
        segments = []
    else:
        mean_silence = (1.0 - speech_fraction) / speech_fraction
        segments = []
        pos = int(rng.uniform(0.5, 1.5) * mean_silence * 0.5 * sample_rate)
        while pos < n:
            length = int(rng.uniform(0.4, 1.6) * sample_rate)
            end = min(n, pos + length)
            if end - pos >= int(0.1 * sample_rate):
                segments.append((pos, end))
            pos = end + int(rng.uniform(0.5, 1.5) * mean_silence * sample_rate)
    for start, end in segments:
        x[start:end] = level * speech_like(end - start, rng, sample_rate)
    return Utterance(AudioSignal(x, sample_rate), segments, uid)


@dataclass
class MixResult:
    noisy: AudioSignal
    clean: AudioSignal
    noise: np.ndarray
    gain: float


def fit_noise_length(noise: np.ndarray, n_samples: int) -> np.ndarray:
    """Tile or crop ``noise`` to exactly ``n_samples``."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.size == 0:
        raise DataError("empty noise signal")
    if noise.shape[0] < n_samples:
        noise = np.tile(noise, int(np.ceil(n_samples / noise.shape[0])))
    return noise[:n_samples]


def measure_snr(clean, noise, mask=None) -> float:
    """Speech-referenced SNR in dB: clean power over ``mask`` vs noise power overall."""
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    ref = clean[mask] if mask is not None else clean
    return 10.0 * np.log10(np.mean(ref ** 2) / np.mean(noise ** 2))


def mix_at_snr(clean, noise, snr_db: float, mask=None) -> MixResult:
    """Add ``noise`` to ``clean`` so the speech-referenced SNR equals ``snr_db``.

    If the mixture would exceed the peak limit, the mixture, the clean
    reference and the scaled noise are all attenuated by the same gain, which
    leaves the SNR untouched.
    """
    if isinstance(clean, Utterance):
        mask = clean.speech_mask() if mask is None else mask
        clean = clean.signal
    if not isinstance(clean, AudioSignal):
        clean = AudioSignal(clean)
    x = clean.samples
    noise = fit_noise_length(noise, x.shape[0])
    if mask is None:
        mask = np.ones(x.shape[0], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    p_speech = np.mean(x[mask] ** 2) if mask.any() else 0.0
    p_noise = np.mean(noise ** 2)
    if p_speech <= 0:
        raise DataError("clean signal has zero power over its speech region")
    if p_noise <= 0:
        raise DataError("noise signal has zero power")
    scaled = noise * np.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixed = x + scaled
    peak = np.max(np.abs(mixed))
    gain = PEAK_LIMIT / peak if peak > PEAK_LIMIT else 1.0
    return MixResult(AudioSignal(mixed * gain, clean.sample_rate),
                     AudioSignal(x * gain, clean.sample_rate), scaled * gain, gain)


def concatenate_utterances(utterances: Sequence[Utterance], uid: str = "") -> Utterance:
    """Join utterances end to end, shifting their speech segments accordingly."""
    if not utterances:
        raise DataError("nothing to concatenate")
    rates = {u.sample_rate for u in utterances}
    if len(rates) != 1:
        raise DataError(f"mixed sample rates {sorted(rates)}")
    segments, offset = [], 0
    for u in utterances:
        segments.extend((s + offset, e + offset) for s, e in u.segments)
        offset += len(u.signal)
    samples = np.concatenate([u.signal.samples for u in utterances])
    return Utterance(AudioSignal(samples, rates.pop()), segments, uid)


def split_corpus(ids: Sequence[str], seed, ratios=(0.3, 0.3, 0.4)) -> dict:
    """Randomly assign utterance ids to train/dev/test; deterministic under ``seed``."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(ids)
    n_train = int(round(n * ratios[0]))
    n_dev = int(round(n * ratios[1]))
    n_test = n - n_train - n_dev
    if min(n_train, n_dev, n_test) < 1:
        raise DataError(f"{n} utterances are not enough for a train/dev/test split")
    order = np.random.default_rng(seed).permutation(n)
    assignment = {}
    for rank, idx in enumerate(order):
        split = "train" if rank < n_train else "dev" if rank < n_train + n_dev else "test"
        assignment[ids[idx]] = split
    return {uid: assignment[uid] for uid in ids}


# --- corpus assembly ------------------------------------------------------------

@dataclass
class CorpusConfig:
    n_utterances: int = 20
    utterance_s: float = 8.0
    speech_fraction: float = 0.6
    noises: tuple = NOISE_TYPES
    snrs: tuple = (-5.0, 0.0, 5.0, 10.0)
    seed: int = 0
    sample_rate: int = SAMPLE_RATE
    ratios: tuple = (0.3, 0.3, 0.4)

    def __post_init__(self):
        self.noises = tuple(self.noises)
        self.snrs = tuple(float(s) for s in self.snrs)
        self.ratios = tuple(self.ratios)
        if self.n_utterances < 3:
            raise ConfigError("need at least 3 utterances")
        if self.utterance_s <= 0:
            raise ConfigError("utterance_s must be positive")
        for kind in self.noises:
            if kind not in NOISE_TYPES:
                raise ConfigError(f"unknown noise type {kind!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown corpus config keys: {sorted(extra)}")
        return cls(**d)


def utterance_ids(config: CorpusConfig) -> list[str]:
    return [f"utt{i:04d}" for i in range(config.n_utterances)]


def clean_utterance(config: CorpusConfig, index: int) -> Utterance:
    return synthesize_clean(config.utterance_s, (config.seed, 1, index), config.speech_fraction,
                            config.sample_rate, uid=f"utt{index:04d}")


def noise_for(config: CorpusConfig, kind: str, index: int, n_samples: int) -> np.ndarray:
    # one noise waveform per (type, utterance), shared by every SNR
    kind_id = NOISE_TYPES.index(kind)
    rng = np.random.default_rng((config.seed, 2, kind_id, index))
    return make_noise(kind, n_samples, rng, config.sample_rate)


@dataclass
class PairedRecording:
    """Long noisy recording with its aligned clean reference and speech segments."""

    noisy: AudioSignal
    clean: AudioSignal
    segments: list
    uids: list = field(default_factory=list)

    def labels(self, spec: FrameSpec = FrameSpec()) -> np.ndarray:
        return frame_labels(self.segments, len(self.noisy), spec)


def _pair(noisy_utts, clean_utts) -> PairedRecording:
    noisy = concatenate_utterances(noisy_utts)
    clean = concatenate_utterances(clean_utts)
    uids = [u.uid for u in noisy_utts]
    if uids != [u.uid for u in clean_utts]:
        raise DataError("noisy and clean utterances are not in the same order")
    return PairedRecording(noisy.signal, clean.signal, clean.segments, uids)


def synthesize_corpus(config: CorpusConfig, noise: str, snr_db: float) -> dict:
    """In-memory corpus for one (noise, SNR) cell: split -> PairedRecording."""
    ids = utterance_ids(config)
    splits = split_corpus(ids, config.seed, config.ratios)
    parts = {s: ([], []) for s in SPLITS}
    for i, uid in enumerate(ids):
        utt = clean_utterance(config, i)
        mix = mix_at_snr(utt, noise_for(config, noise, i, len(utt.signal)), snr_db)
        parts[splits[uid]][0].append(Utterance(mix.noisy, utt.segments, uid))
        parts[splits[uid]][1].append(Utterance(mix.clean, utt.segments, uid))
    return {s: _pair(*parts[s]) for s in SPLITS}


@dataclass
class AlignedFrames:
    """Row-aligned noisy features, clean features and labels of the same frames."""

    noisy: np.ndarray
    clean: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if not (self.noisy.shape == self.clean.shape and self.noisy.shape[0] == len(self.labels)):
            raise DataError(
                f"misaligned frames: noisy {self.noisy.shape}, clean {self.clean.shape}, "
                f"{len(self.labels)} labels")

    def __len__(self):
        return self.noisy.shape[0]


def recording_features(rec: PairedRecording,
                       feature_config: FeatureConfig = FeatureConfig()) -> AlignedFrames:
    return AlignedFrames(extract_features(rec.noisy, feature_config),
                         extract_features(rec.clean, feature_config),
                         rec.labels(feature_config.frames))


def corpus_features(corpus: dict, feature_config: FeatureConfig = FeatureConfig()) -> dict:
    """split -> AlignedFrames (raw, unnormalized)."""
    return {split: recording_features(rec, feature_config) for split, rec in corpus.items()}


# --- manifest -------------------------------------------------------------------

@dataclass
class ManifestEntry:
    uid: str
    split: str
    noise: str
    snr_db: float
    noisy_path: str
    clean_path: str
    segments: list


@dataclass
class CorpusManifest:
    seed: int
    sample_rate: int
    config: dict
    entries: list = field(default_factory=list)

    def __post_init__(self):
        # JSON has no tuples; normalize so a saved and reloaded manifest compares equal
        self.config = json.loads(json.dumps(self.config))

    def cells(self) -> list[tuple[str, float]]:
        seen = []
        for e in self.entries:
            if (e.noise, e.snr_db) not in seen:
                seen.append((e.noise, e.snr_db))
        return seen

    def split_of(self, noise: str, snr_db: float) -> dict:
        return {e.uid: e.split for e in self.entries if e.noise == noise and e.snr_db == snr_db}

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CorpusManifest":
        try:
            d = json.loads(text)
            entries = [ManifestEntry(**e) for e in d.pop("entries")]
            return cls(entries=entries, **d)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"malformed manifest: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        try:
            return cls.from_json(Path(path).read_text())
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc


def cell_name(noise: str, snr_db: float) -> str:
    return f"{noise}_{snr_db:+g}dB"


def write_corpus(config: CorpusConfig, out_dir) -> CorpusManifest:
    """Synthesize every (noise, SNR) cell to WAV files and write ``manifest.json``.

    Layout: ``<out>/<noise>_<snr>dB/<uid>.noisy.wav`` and ``<uid>.clean.wav``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = utterance_ids(config)
    splits = split_corpus(ids, config.seed, config.ratios)
    manifest = CorpusManifest(config.seed, config.sample_rate, asdict(config))
    cleans = [clean_utterance(config, i) for i in range(len(ids))]
    for kind in config.noises:
        noises = [noise_for(config, kind, i, len(u.signal)) for i, u in enumerate(cleans)]
        for snr in config.snrs:
            cell = out / cell_name(kind, snr)
            cell.mkdir(exist_ok=True)
            for uid, utt, noise in zip(ids, cleans, noises):
                mix = mix_at_snr(utt, noise, snr)
                noisy_path = cell / f"{uid}.noisy.wav"
                clean_path = cell / f"{uid}.clean.wav"
                write_wav(noisy_path, mix.noisy)
                write_wav(clean_path, mix.clean)
                manifest.entries.append(ManifestEntry(
                    uid, splits[uid], kind, snr, str(noisy_path.relative_to(out)),
                    str(clean_path.relative_to(out)), [list(s) for s in utt.segments]))
    manifest.save(out / "manifest.json")
    return manifest


def load_corpus_cell(manifest: CorpusManifest, root, noise: str, snr_db: float) -> dict:
    """Read one cell of a written corpus back as split -> PairedRecording."""
    root = Path(root)
    parts = {s: ([], []) for s in SPLITS}
    for e in manifest.entries:
        if e.noise != noise or e.snr_db != snr_db:
            continue
        if e.split not in parts:
            raise DataError(f"{e.uid}: unknown split {e.split!r}")
        segs = [tuple(s) for s in e.segments]
        parts[e.split][0].append(Utterance(read_wav(root / e.noisy_path, manifest.sample_rate),
                                           segs, e.uid))
        parts[e.split][1].append(Utterance(read_wav(root / e.clean_path, manifest.sample_rate),
                                           segs, e.uid))
    missing = [s for s in SPLITS if not parts[s][0]]
    if missing:
        raise DataError(f"cell {cell_name(noise, snr_db)} has no utterances in {missing}")
    return {s: _pair(*parts[s]) for s in SPLITS}
