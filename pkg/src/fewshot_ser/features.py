"""Per-utterance 64-dim acoustic descriptor and per-dataset standardisation.

Sixteen frame-level descriptors (log energy, zero-crossing rate, voicing
probability, F0, MFCC 1-12) are summarised by mean and population std, and
the same statistics are taken over their first-order backward differences.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal.windows import hamming

from .errors import InputError, ShapeError

log = logging.getLogger(__name__)

LLD_NAMES = ("intensity", "zcr", "voicing", "f0") + tuple(f"mfcc{i}" for i in range(1, 13))
N_LLD = len(LLD_NAMES)
FEATURE_DIM = 4 * N_LLD

N_MEL = 26
MEL_FMAX = 8000.0
F0_MIN, F0_MAX = 50.0, 500.0
VOICING_THRESHOLD = 0.45
ENERGY_FLOOR = 1e-10


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise InputError(f"sample rate must be positive, got {self.sample_rate}")
        if np.asarray(self.samples).ndim != 1 or len(self.samples) == 0:
            raise InputError("audio must be a non-empty mono signal")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


def read_wav(path) -> AudioClip:
    """Mono 16-bit PCM WAV scaled to [-1, 1]."""
    from scipy.io import wavfile

    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise InputError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype != np.int16:
        raise InputError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    return AudioClip(data.astype(float) / 32768.0, int(rate))


def frame_signal(clip: AudioClip, frame_ms=25.0, step_ms=10.0):
    """Hamming-windowed frames, shape ``(n_frames, frame_len)``."""
    frame_len = int(round(frame_ms * clip.sample_rate / 1000.0))
    step = int(round(step_ms * clip.sample_rate / 1000.0))
    n = len(clip.samples)
    if n < frame_len:
        raise InputError(f"clip has {n} samples, shorter than one {frame_ms} ms frame ({frame_len})")
    n_frames = (n - frame_len) // step + 1
    idx = np.arange(frame_len)[None, :] + step * np.arange(n_frames)[:, None]
    return np.asarray(clip.samples, dtype=float)[idx] * hamming(frame_len, sym=False)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_fft, sample_rate, n_mel=N_MEL, fmax=MEL_FMAX):
    """Triangular filters on the ``rfft`` bins, shape ``(n_mel, n_fft // 2 + 1)``."""
    fmax = min(fmax, sample_rate / 2.0)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(fmax), n_mel + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def _fft_size(n):
    return 1 << int(np.ceil(np.log2(n)))


def _pitch(frame, sample_rate):
    """``(f0, voicing)`` from the window-normalised autocorrelation.

    The frame's autocorrelation is divided by the window's own
    autocorrelation so a periodic signal peaks near 1 at its period.
    """
    n = len(frame)
    frame = frame - frame.mean()
    energy = float(frame @ frame)
    if energy <= ENERGY_FLOOR * n:
        return 0.0, 0.0
    n_fft = _fft_size(2 * n)
    acf = np.fft.irfft(np.abs(rfft(frame, n_fft)) ** 2, n_fft)[:n]
    win = hamming(n, sym=False)
    wacf = np.fft.irfft(np.abs(rfft(win, n_fft)) ** 2, n_fft)[:n]
    lag_min = int(np.floor(sample_rate / F0_MAX))
    # long lags have too little window overlap to be trusted
    lag_max = min(int(np.ceil(sample_rate / F0_MIN)), int(0.6 * n))
    if lag_max <= lag_min + 1:
        return 0.0, 0.0
    r = acf / acf[0] / (wacf / wacf[0])
    lags = np.arange(lag_min, lag_max + 1)
    seg = r[lag_min : lag_max + 1]
    peaks = np.flatnonzero((seg[1:-1] >= seg[:-2]) & (seg[1:-1] >= seg[2:])) + 1
    if len(peaks) == 0:
        return 0.0, 0.0
    best = seg[peaks].max()
    # earliest peak close to the best one avoids picking a period multiple
    i = peaks[np.flatnonzero(seg[peaks] >= 0.95 * best)[0]]
    voicing = float(np.clip(seg[i], 0.0, 1.0))
    if voicing < VOICING_THRESHOLD:
        return 0.0, voicing
    a, b, c = seg[i - 1], seg[i], seg[i + 1]
    denom = a - 2.0 * b + c
    shift = 0.5 * (a - c) / denom if denom < 0 else 0.0
    return float(sample_rate / (lags[i] + shift)), voicing


def extract_llds(frame, sample_rate):
    """The 16 frame-level descriptors in ``LLD_NAMES`` order."""
    frame = np.asarray(frame, dtype=float)
    n = len(frame)
    intensity = np.log(np.mean(frame**2) + ENERGY_FLOOR)
    zcr = float(np.count_nonzero(frame[1:] * frame[:-1] < 0)) / (n - 1) if n > 1 else 0.0
    f0, voicing = _pitch(frame, sample_rate)
    n_fft = max(512, _fft_size(n))
    power = np.abs(rfft(frame, n_fft)) ** 2 / n_fft
    mel = mel_filterbank(n_fft, sample_rate) @ power
    ceps = dct(np.log(mel + ENERGY_FLOOR), type=2, norm="ortho")[1:13]
    return np.concatenate([[intensity, zcr, voicing, f0], ceps])


def functionals(llds):
    """Mean/std of the LLDs and of their backward differences, 64 values."""
    llds = np.asarray(llds, dtype=float)
    if llds.ndim != 2 or llds.shape[1] != N_LLD:
        raise ShapeError(f"expected (frames, {N_LLD}) descriptors, got {llds.shape}")
    if len(llds) < 2:
        raise InputError("need at least 2 frames for deltas and std")
    delta = np.diff(llds, axis=0)
    return np.concatenate([llds.mean(0), llds.std(0), delta.mean(0), delta.std(0)])


def extract_clip(clip: AudioClip):
    frames = frame_signal(clip)
    llds = np.array([extract_llds(f, clip.sample_rate) for f in frames])
    return functionals(llds)


@dataclass
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray
    dataset_id: str = ""
    degenerate: list[int] = field(default_factory=list)


def fit_standardizer(vectors, dataset_id="") -> StandardizationStats:
    x = np.asarray(vectors, dtype=float)
    if x.ndim != 2 or len(x) < 2:
        raise InputError("need at least 2 vectors to fit a standardizer")
    mean = x.mean(0)
    std = x.std(0)
    degenerate = [int(i) for i in np.flatnonzero(std <= 1e-12)]
    if degenerate:
        log.warning("dataset %r: zero-variance dims %s, std set to 1", dataset_id, degenerate)
        std = std.copy()
        std[degenerate] = 1.0
    return StandardizationStats(mean, std, dataset_id, degenerate)


def apply_standardizer(stats: StandardizationStats, vectors):
    x = np.asarray(vectors, dtype=float)
    if x.shape[-1] != len(stats.mean):
        raise ShapeError(f"expected width {len(stats.mean)}, got {x.shape}")
    return (x - stats.mean) / stats.std
