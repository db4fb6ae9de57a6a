"""Log-mel spectrogram and frame-context extraction.

Frames are 2048 samples long, Hann windowed, hopped by 441 samples (10 ms at
44.1 kHz) and centred on sample ``t * 441`` of the zero-padded signal.
"""

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import SAMPLE_RATE
from .errors import CorruptionError, DomainError, FormatError

FRAME_SIZE = 2048
HOP_SIZE = 441
FPS = 100
N_BINS = FRAME_SIZE // 2 + 1
N_BANDS = 80
FMIN = 27.5
FMAX = 16000.0
CONTEXT_FRAMES = 15
CONTEXT_RADIUS = CONTEXT_FRAMES // 2

_CACHE_MAGIC = b"OLFEAT1"


@dataclass(frozen=True, eq=False)
class LogMelSpectrogram:
    """``values`` has shape ``[n_frames, 80]``."""

    values: np.ndarray
    frame_rate: int = FPS

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[1] != N_BANDS:
            raise DomainError(f"expected [n_frames, {N_BANDS}] values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("spectrogram contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self):
        return self.values.shape[0]

    @property
    def hop(self):
        return 1.0 / self.frame_rate


def n_frames_for(n_samples):
    return -(-n_samples // HOP_SIZE)


def stft_magnitude(w):
    """Magnitude spectrogram ``[ceil(n / 441), 1025]`` of a 44.1 kHz waveform."""
    if w.sample_rate != SAMPLE_RATE:
        raise DomainError(f"expected {SAMPLE_RATE} Hz audio, got {w.sample_rate} Hz")
    x = np.asarray(w.samples, dtype=np.float64)
    if x.size == 0:
        raise DomainError("empty waveform")
    n_frames = n_frames_for(x.size)
    half = FRAME_SIZE // 2
    padded = np.concatenate([np.zeros(half), x, np.zeros(half)])
    frames = sliding_window_view(padded, FRAME_SIZE)[::HOP_SIZE][:n_frames]
    return np.abs(np.fft.rfft(frames * np.hanning(FRAME_SIZE), axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_frequencies(n_bands=N_BANDS, fmin=FMIN, fmax=FMAX):
    """Edge and centre frequencies: ``n_bands + 2`` points equally spaced in mel."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 2))


def mel_filterbank(n_bands=N_BANDS, sr=SAMPLE_RATE, n_fft=FRAME_SIZE):
    """Triangular mel filters ``[80, 1025]``, each normalised to unit sum.

    A filter too narrow to cover any FFT bin collapses onto the bin nearest
    its centre so that no band is identically zero.
    """
    points = mel_frequencies(n_bands)
    bin_freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    bank = np.zeros((n_bands, bin_freqs.size))
    for b in range(n_bands):
        lo, centre, hi = points[b], points[b + 1], points[b + 2]
        rising = (bin_freqs - lo) / (centre - lo)
        falling = (hi - bin_freqs) / (hi - centre)
        tri = np.clip(np.minimum(rising, falling), 0.0, None)
        if tri.sum() <= 0:
            tri[np.argmin(np.abs(bin_freqs - centre))] = 1.0
        bank[b] = tri / tri.sum()
    return bank


_FILTERBANK = None


def _filterbank():
    global _FILTERBANK
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    return _FILTERBANK


def log_mel(w):
    mag = stft_magnitude(w)
    values = np.log1p(mag @ _filterbank().T) / np.log(10.0)
    return LogMelSpectrogram(values.astype(np.float32))


def extract_contexts(s):
    """All per-frame contexts as an array ``[n_frames, 1, 80, 15]``.

    Frames beyond either end of the clip replicate the first/last frame.
    """
    values = s.values if isinstance(s, LogMelSpectrogram) else np.asarray(s)
    if values.shape[0] < 1:
        raise DomainError("spectrogram has no frames")
    padded = pad_for_contexts(values)
    windows = sliding_window_view(padded, CONTEXT_FRAMES, axis=0)  # [n, 80, 15]
    return windows[:, None, :, :]


def pad_for_contexts(values):
    return np.pad(values, ((CONTEXT_RADIUS, CONTEXT_RADIUS), (0, 0)), mode="edge")


def write_feature_cache(path, s):
    values = np.ascontiguousarray(s.values, dtype="<f4")
    n_frames, n_bands = values.shape
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<II", n_frames, n_bands))
        fh.write(values.tobytes())


def read_feature_cache(path):
    with open(path, "rb") as fh:
        data = fh.read()
    head = len(_CACHE_MAGIC) + 8
    if len(data) < head or data[:len(_CACHE_MAGIC)] != _CACHE_MAGIC:
        raise FormatError(f"{path}: not a feature cache file")
    n_frames, n_bands = struct.unpack("<II", data[len(_CACHE_MAGIC):head])
    if n_bands != N_BANDS:
        raise FormatError(f"{path}: expected {N_BANDS} bands, found {n_bands}")
    need = n_frames * n_bands * 4
    if len(data) - head != need:
        raise CorruptionError(f"{path}: expected {need} payload bytes, found {len(data) - head}")
    values = np.frombuffer(data, dtype="<f4", offset=head).reshape(n_frames, n_bands)
    return LogMelSpectrogram(values.astype(np.float32))
