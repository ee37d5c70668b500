"""Frame-level acoustic features for VAD.

Ten feature blocks are stacked per 25 ms frame (10 ms shift at 8 kHz):

====  ===========  ====
ID    name         dims
====  ===========  ====
1     pitch          1
2     DFT           16
3     DFT_8         16
4     DFT_16        16
5     MFCC          20
6     MFCC_8        20
7     MFCC_16       20
8     LPC           12
9     RASTA-PLP     17
10    AMS          135
====  ===========  ====

The ``_8``/``_16`` variants are trailing means of the base feature over the
last 8/16 frames (zeros before the start of the utterance).  Each dimension is
later min/max scaled into [0, 1] with statistics from the training split.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct
from scipy.io import wavfile
from scipy.signal import butter, hilbert, lfilter, lfilter_zi, sosfilt
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigError, DataError, ShapeError

SAMPLE_RATE = 8000
LOG_FLOOR = 1e-10

# (id, name, dims) in stacking order
TABLE1 = (
    (1, "pitch", 1),
    (2, "dft", 16),
    (3, "dft_8", 16),
    (4, "dft_16", 16),
    (5, "mfcc", 20),
    (6, "mfcc_8", 20),
    (7, "mfcc_16", 20),
    (8, "lpc", 12),
    (9, "rasta_plp", 17),
    (10, "ams", 135),
)
N_FEATURES = sum(d for _, _, d in TABLE1)


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError("audio must be a nonempty 1-D array")
        if self.sample_rate <= 0:
            raise DataError(f"invalid sample rate {self.sample_rate}")

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class FrameSpec:
    frame_length: int = 200
    frame_shift: int = 80

    def __post_init__(self):
        if not 0 < self.frame_shift <= self.frame_length:
            raise ConfigError(
                f"need 0 < frame_shift <= frame_length, got {self.frame_shift}/{self.frame_length}")

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_length:
            return 0
        return (n_samples - self.frame_length) // self.frame_shift + 1


@dataclass(frozen=True)
class FeatureConfig:
    """Knobs of the individual extractors.  Defaults reproduce the 273-dim set."""

    sample_rate: int = SAMPLE_RATE
    frames: FrameSpec = field(default_factory=FrameSpec)
    nfft: int = 256
    n_dft_bands: int = 16
    n_mel: int = 26
    n_mfcc: int = 20
    lpc_order: int = 12
    pitch_fmin: float = 60.0
    pitch_fmax: float = 400.0
    voicing_threshold: float = 0.3
    plp_order: int = 16
    n_plp_cepstra: int = 17
    ams_subbands: int = 9
    ams_mod_bins: int = 15
    ams_mod_range: tuple = (15.6, 400.0)
    long_windows: tuple = (8, 16)


def frame_signal(signal, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Cut a signal into overlapping frames, one per row (no window applied)."""
    x = signal.samples if isinstance(signal, AudioSignal) else np.asarray(signal, dtype=np.float64)
    if x.shape[0] < spec.frame_length:
        raise DataError(
            f"signal has {x.shape[0]} samples, shorter than one frame ({spec.frame_length})")
    windows = np.lib.stride_tricks.sliding_window_view(x, spec.frame_length)
    return np.ascontiguousarray(windows[::spec.frame_shift])


# --- spectral helpers --------------------------------------------------------

def power_spectrum(frames: np.ndarray, nfft: int) -> np.ndarray:
    win = np.hamming(frames.shape[1])
    return np.abs(np.fft.rfft(frames * win, nfft, axis=1)) ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def hz_to_bark(f):
    return 6.0 * np.arcsinh(np.asarray(f) / 600.0)


def bark_to_hz(b):
    return 600.0 * np.sinh(np.asarray(b) / 6.0)


def triangular_filterbank(centers: np.ndarray, bin_freqs: np.ndarray) -> np.ndarray:
    """Triangles peaking at ``centers[1:-1]`` with feet on the neighbouring centers."""
    n = len(centers) - 2
    wts = np.zeros((n, len(bin_freqs)))
    for i in range(n):
        lo, mid, hi = centers[i:i + 3]
        up = (bin_freqs - lo) / (mid - lo)
        down = (hi - bin_freqs) / (hi - mid)
        wts[i] = np.maximum(0.0, np.minimum(up, down))
    return wts


def mel_filterbank(n_mel: int, nfft: int, sample_rate: int) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mel + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    return triangular_filterbank(edges, freqs)


def bark_filterbank(n_bands: int, nfft: int, sample_rate: int) -> np.ndarray:
    """Critical-band weights with the usual trapezoidal skirts (-25 dB/bark low, 10 dB/bark high)."""
    nyq_bark = hz_to_bark(sample_rate / 2)
    step = nyq_bark / (n_bands - 1)
    bin_barks = hz_to_bark(np.arange(nfft // 2 + 1) * sample_rate / nfft)
    wts = np.zeros((n_bands, nfft // 2 + 1))
    for i in range(n_bands):
        rel = bin_barks - i * step
        lof = rel - 0.5
        hif = rel + 0.5
        wts[i] = 10.0 ** np.minimum(0.0, np.minimum(hif, -2.5 * lof))
    return wts


def levinson(r: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Levinson-Durbin recursion on rows of autocorrelation lags.

    Returns ``(a, err)`` where ``a[:, 0] == 1`` and ``1 + a1 z^-1 + ...`` is the
    prediction-error filter; rows with zero energy give ``a = [1, 0, ...]``.
    """
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    n = r.shape[0]
    a = np.zeros((n, order + 1))
    a[:, 0] = 1.0
    energetic = r[:, 0] > 1e-20
    live = energetic.copy()
    err = np.where(live, r[:, 0], 1.0)
    for i in range(1, order + 1):
        acc = r[:, i] + np.sum(a[:, 1:i] * r[:, i - 1:0:-1], axis=1)
        k = np.where(live, -acc / np.where(live, err, 1.0), 0.0)
        prev = a[:, 1:i].copy()
        a[:, 1:i] = prev + k[:, None] * prev[:, ::-1]
        a[:, i] = k
        # a perfectly predictable row stops updating once its error vanishes
        err = np.where(live, err * (1.0 - k * k), err)
        live &= err > 1e-20 * np.maximum(r[:, 0], 1e-300)
    return a, np.where(energetic, err, 0.0)


def lpc_to_cepstrum(a: np.ndarray, gain_power: np.ndarray, n_out: int) -> np.ndarray:
    """Cepstrum of the all-pole model ``sqrt(gain_power) / A(z)``."""
    p = a.shape[1] - 1
    c = np.zeros((a.shape[0], n_out))
    c[:, 0] = 0.5 * np.log(np.maximum(gain_power, LOG_FLOOR))
    for m in range(1, n_out):
        acc = np.zeros(a.shape[0])
        for k in range(max(1, m - p), m):
            acc += (k / m) * c[:, k] * a[:, m - k]
        c[:, m] = -acc - (a[:, m] if m <= p else 0.0)
    return c


def trailing_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Mean of the last ``window`` rows, treating rows before the start as zero."""
    csum = np.cumsum(np.vstack([np.zeros((1, x.shape[1])), x]), axis=0)
    idx = np.arange(1, x.shape[0] + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / window


# --- individual features ---------------------------------------------------

def pitch_feature(frames: np.ndarray, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Autocorrelation pitch in Hz per frame; 0 where no clear periodicity."""
    fs = cfg.sample_rate
    x = frames - frames.mean(axis=1, keepdims=True)
    n = x.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(x, nfft, axis=1)
    r = np.fft.irfft(np.abs(spec) ** 2, nfft, axis=1)[:, :n]
    lag_lo = int(np.ceil(fs / cfg.pitch_fmax))
    lag_hi = min(int(np.floor(fs / cfg.pitch_fmin)), n - 2)
    r0 = r[:, 0]
    out = np.zeros(x.shape[0])
    voiced_rows = np.nonzero(r0 > 1e-10)[0]
    for i in voiced_rows:
        rn = r[i] / r0[i]
        seg = rn[lag_lo:lag_hi + 1]
        # only interior local maxima count as candidate periods
        peaks = np.nonzero((seg[1:-1] > seg[:-2]) & (seg[1:-1] >= seg[2:]))[0] + 1
        if peaks.size == 0:
            continue
        best = peaks[np.argmax(seg[peaks])]
        if seg[best] < cfg.voicing_threshold:
            continue
        y0, y1, y2 = seg[best - 1], seg[best], seg[best + 1]
        denom = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
        out[i] = fs / (lag_lo + best + shift)
    return out[:, None]


def dft_feature(power: np.ndarray, n_bands: int) -> np.ndarray:
    """Log-magnitude spectrum averaged over uniform bands covering 0 Hz to Nyquist."""
    logmag = 0.5 * np.log(power[:, 1:] + LOG_FLOOR)
    bands = np.array_split(np.arange(logmag.shape[1]), n_bands)
    return np.stack([logmag[:, b].mean(axis=1) for b in bands], axis=1)


def mfcc_feature(power: np.ndarray, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    fb = mel_filterbank(cfg.n_mel, cfg.nfft, cfg.sample_rate)
    logmel = np.log(power @ fb.T + LOG_FLOOR)
    return dct(logmel, type=2, norm="ortho", axis=1)[:, :cfg.n_mfcc]


def lpc_feature(frames: np.ndarray, order: int) -> np.ndarray:
    x = frames * np.hamming(frames.shape[1])
    n = x.shape[1]
    r = np.stack([np.sum(x[:, :n - k] * x[:, k:], axis=1) for k in range(order + 1)], axis=1)
    a, _ = levinson(r, order)
    return a[:, 1:]


def rasta_plp_feature(power: np.ndarray, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """RASTA-filtered PLP cepstra (c0..c_{n-1})."""
    fs = cfg.sample_rate
    n_bands = int(np.ceil(hz_to_bark(fs / 2))) + 1
    wts = bark_filterbank(n_bands, cfg.nfft, fs)
    log_bark = np.log(power @ wts.T + LOG_FLOOR)

    numer = np.array([0.2, 0.1, 0.0, -0.1, -0.2])
    denom = np.array([1.0, -0.94])
    zi = lfilter_zi(numer, denom)[:, None] * log_bark[0][None, :]
    filtered, _ = lfilter(numer, denom, log_bark, axis=0, zi=zi)
    bark = np.exp(filtered)

    # equal-loudness preemphasis and intensity-loudness power law
    centers = bark_to_hz(np.linspace(0.0, hz_to_bark(fs / 2), n_bands))
    fsq = centers ** 2
    eql = (fsq / (fsq + 1.6e5)) ** 2 * ((fsq + 1.44e6) / (fsq + 9.61e6))
    aud = (bark * eql) ** 0.33
    aud[:, 0] = aud[:, 1]
    aud[:, -1] = aud[:, -2]

    mirrored = np.concatenate([aud, aud[:, -2:0:-1]], axis=1)
    r = np.fft.ifft(mirrored, axis=1).real[:, :n_bands]
    if cfg.plp_order > n_bands - 1:
        raise ConfigError(f"PLP order {cfg.plp_order} needs more than {n_bands} bands")
    a, err = levinson(r, cfg.plp_order)
    return lpc_to_cepstrum(a, err, cfg.n_plp_cepstra)


def ams_feature(samples: np.ndarray, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Amplitude modulation spectrogram: subband envelopes -> modulation filterbank."""
    fs = cfg.sample_rate
    spec = cfg.frames
    edges = mel_to_hz(np.linspace(hz_to_mel(100.0), hz_to_mel(0.475 * fs), cfg.ams_subbands + 1))
    mod_centers = np.linspace(cfg.ams_mod_range[0], cfg.ams_mod_range[1], cfg.ams_mod_bins + 2)
    mod_freqs = np.arange(cfg.nfft // 2 + 1) * fs / cfg.nfft
    mod_fb = triangular_filterbank(mod_centers, mod_freqs)
    win = np.hanning(spec.frame_length)
    blocks = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sos = butter(4, [lo, hi], btype="bandpass", fs=fs, output="sos")
        env = np.abs(hilbert(sosfilt(sos, samples)))
        frames = frame_signal(env, spec)
        mag = np.abs(np.fft.rfft(frames * win, cfg.nfft, axis=1))
        blocks.append(np.log(mag @ mod_fb.T + LOG_FLOOR))
    return np.concatenate(blocks, axis=1)


def extract_features(signal, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Raw (unnormalized) feature matrix, one 273-dim row per frame."""
    if isinstance(signal, AudioSignal):
        if signal.sample_rate != cfg.sample_rate:
            raise DataError(
                f"sample rate {signal.sample_rate} Hz, expected {cfg.sample_rate} Hz")
        x = signal.samples
    else:
        x = np.asarray(signal, dtype=np.float64)
    frames = frame_signal(x, cfg.frames)
    power = power_spectrum(frames, cfg.nfft)
    dft = dft_feature(power, cfg.n_dft_bands)
    mfcc = mfcc_feature(power, cfg)
    w_short, w_long = cfg.long_windows
    blocks = {
        "pitch": pitch_feature(frames, cfg),
        "dft": dft,
        "dft_8": trailing_mean(dft, w_short),
        "dft_16": trailing_mean(dft, w_long),
        "mfcc": mfcc,
        "mfcc_8": trailing_mean(mfcc, w_short),
        "mfcc_16": trailing_mean(mfcc, w_long),
        "lpc": lpc_feature(frames, cfg.lpc_order),
        "rasta_plp": rasta_plp_feature(power, cfg),
        "ams": ams_feature(x, cfg),
    }
    for fid, name, dims in TABLE1:
        got = blocks[name].shape[1]
        if got != dims:
            raise ConfigError(f"feature {fid} ({name}) produced {got} dims, expected {dims}")
    return np.concatenate([blocks[name] for _, name, _ in TABLE1], axis=1)


def extract_frame_features(frame, history=None, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Features of one frame given the frames that precede it.

    ``history`` holds earlier frames (oldest first) at the configured shift;
    they are stitched back into a waveform so long-window features see them.
    All blocks except AMS are causal and match the corresponding row of
    :func:`extract_features`; the AMS envelope also looks at later samples, so
    it only sees what the stitched waveform contains.
    """
    spec = cfg.frames
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (spec.frame_length,):
        raise ShapeError(f"frame has shape {frame.shape}, expected ({spec.frame_length},)")
    if history is None or len(history) == 0:
        return extract_features(frame, cfg)[-1]
    hist = np.asarray(history, dtype=np.float64)
    pieces = [hist[0]] + [h[-spec.frame_shift:] for h in hist[1:]] + [frame[-spec.frame_shift:]]
    return extract_features(np.concatenate(pieces), cfg)[-1]


def feature_slices() -> dict:
    """Column range of every feature block in the stacked vector."""
    out, start = {}, 0
    for _, name, dims in TABLE1:
        out[name] = slice(start, start + dims)
        start += dims
    return out


# --- normalization ------------------------------------------------------------

@dataclass
class NormStats:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if self.minimum.shape != self.maximum.shape or self.minimum.ndim != 1:
            raise ShapeError("min and max must be 1-D vectors of equal length")
        if np.any(self.maximum < self.minimum):
            raise DataError("max < min in normalization statistics")

    def __eq__(self, other):
        if not isinstance(other, NormStats):
            return NotImplemented
        return (np.array_equal(self.minimum, other.minimum)
                and np.array_equal(self.maximum, other.maximum))


def fit_norm_stats(X) -> NormStats:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise DataError("cannot fit normalization on an empty set")
    return NormStats(X.min(axis=0), X.max(axis=0))


def normalize(X, stats: NormStats) -> np.ndarray:
    """Scale into [0, 1] per dimension; constant dimensions map to 0.5."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != stats.minimum.shape[0]:
        raise ShapeError(
            f"vector length {X.shape[-1]} != statistics length {stats.minimum.shape[0]}")
    span = stats.maximum - stats.minimum
    flat = span == 0
    out = (X - stats.minimum) / np.where(flat, 1.0, span)
    out = np.where(flat, 0.5, out)
    return np.clip(out, 0.0, 1.0)


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Per-dimension [0, 1] scaling with clipping, as a scikit-learn transformer."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.stats_ = fit_norm_stats(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        X = check_array(X, dtype=np.float64)
        return normalize(X, self.stats_)


# --- file formats ---------------------------------------------------------------

FEAT_MAGIC = b"FEAT"


def write_feature_matrix(path, X) -> None:
    """Header ``FEAT``, uint32 rows, uint32 cols, then row-major little-endian float64."""
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise ShapeError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", FEAT_MAGIC, *X.shape))
        fh.write(X.tobytes())


def read_feature_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise DataError(f"{path}: truncated feature file")
    magic, rows, cols = struct.unpack_from("<4sII", data, 0)
    if magic != FEAT_MAGIC:
        raise DataError(f"{path}: not a feature matrix")
    if len(data) != 12 + 8 * rows * cols:
        raise DataError(f"{path}: size does not match {rows}x{cols} header")
    return np.frombuffer(data, dtype="<f8", offset=12).reshape(rows, cols).astype(np.float64)


def write_labels(path, labels) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def read_labels(path) -> np.ndarray:
    text = Path(path).read_text().split()
    if any(t not in ("0", "1") for t in text):
        raise DataError(f"{path}: labels must be 0 or 1")
    return np.array([int(t) for t in text], dtype=np.int64)


def read_wav(path, sample_rate: int = SAMPLE_RATE) -> AudioSignal:
    """Read a 16-bit PCM mono WAV as floats in [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if rate != sample_rate:
        raise DataError(f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz")
    if data.dtype != np.int16:
        raise DataError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio")
    return AudioSignal(data.astype(np.float64) / 32768.0, rate)


def write_wav(path, signal: AudioSignal) -> None:
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, signal.sample_rate, pcm)
