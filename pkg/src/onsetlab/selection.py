"""Onset selection: ODF smoothing, peak-picking and score-informed decoding."""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InfeasiblePhraseError
from .features import FPS

EMISSION_FLOOR = 1e-10
DURATION_SPREAD = 0.35


@dataclass(frozen=True)
class PeakPickConfig:
    threshold: float = 0.5
    pre_max: float = 0.03
    post_max: float = 0.03
    combine: float = 0.03
    fps: int = FPS

    def __post_init__(self):
        if min(self.pre_max, self.post_max, self.combine) < 0:
            raise DomainError("peak-picking windows must be non-negative")


def hamming_kernel(n=5):
    k = np.hamming(n)
    return k / k.sum()


def smooth(odf, width=5):
    """Convolve with a unit-sum Hamming window, replicating the edges."""
    odf = np.asarray(odf, dtype=np.float64)
    if odf.size < 1:
        raise DomainError("empty ODF")
    kernel = hamming_kernel(width)
    half = width // 2
    padded = np.pad(odf, half, mode="edge")
    out = np.convolve(padded, kernel, mode="valid")
    return np.clip(out, 0.0, 1.0)


def peak_pick_frames(odf, cfg):
    odf = np.asarray(odf, dtype=np.float64)
    pre = int(round(cfg.pre_max * cfg.fps))
    post = int(round(cfg.post_max * cfg.fps))
    combine = int(round(cfg.combine * cfg.fps))
    n = odf.size
    padded = np.pad(odf, (pre, post), constant_values=-np.inf)
    windows = np.lib.stride_tricks.sliding_window_view(padded, pre + post + 1)
    is_max = (odf >= cfg.threshold) & (odf == windows.max(axis=1))
    # an equal value earlier in the window claims the peak
    earlier = windows[:, :pre]
    if pre:
        is_max &= ~(earlier == odf[:, None]).any(axis=1)
    frames = []
    for t in np.flatnonzero(is_max[:n]):
        if not frames or t - frames[-1] >= combine:
            frames.append(int(t))
    return np.asarray(frames, dtype=np.int64)


def peak_pick(odf, cfg=PeakPickConfig()):
    """Onset times (s) of thresholded local maxima of a (smoothed) ODF.

    A frame qualifies if it reaches the threshold, equals the maximum of the
    surrounding ``pre_max``/``post_max`` window and no earlier frame in that
    window ties it. Qualifying frames within ``combine`` of the previously
    accepted onset are discarded.
    """
    return peak_pick_frames(odf, cfg) / cfg.fps


def _duration_logpdf(lengths, mean):
    sigma = DURATION_SPREAD * mean
    z = (lengths - mean) / sigma
    return -0.5 * z * z - np.log(sigma * np.sqrt(2.0 * np.pi))


def scaled_durations(score, n_frames):
    d = np.asarray(score.syllable_durations, dtype=np.float64)
    return d * (n_frames / d.sum())


def hmm_objective(odf, frames, means):
    """Log-score of onset placement ``frames`` (first fixed at 0)."""
    n_frames = len(odf)
    emission = np.log(np.asarray(odf, dtype=np.float64) + EMISSION_FLOOR)
    acc = 0.0
    for i in range(1, len(frames)):
        acc = acc + _duration_logpdf(frames[i] - frames[i - 1], means[i - 1])
        acc = acc + emission[frames[i]]
    return acc + _duration_logpdf(n_frames - frames[-1], means[-1])


def hmm_decode_frames(odf, score):
    odf = np.asarray(odf, dtype=np.float64)
    n_frames = odf.size
    n_syl = len(score.syllable_durations)
    if n_frames < n_syl:
        raise InfeasiblePhraseError(f"{n_syl} syllables cannot fit in {n_frames} frames")
    means = scaled_durations(score, n_frames)
    emission = np.log(odf + EMISSION_FLOOR)
    lags = np.arange(n_frames + 1, dtype=np.float64)
    # delta[t] = best score with the current syllable starting at frame t
    delta = np.full(n_frames, -np.inf)
    delta[0] = 0.0
    back = np.zeros((n_syl, n_frames), dtype=np.int64)
    s_idx = np.arange(n_frames)[:, None]
    t_idx = np.arange(n_frames)[None, :]
    valid = s_idx < t_idx
    for i in range(1, n_syl):
        dur = _duration_logpdf(lags, means[i - 1])
        gap = np.clip(t_idx - s_idx, 0, n_frames)
        cand = np.where(valid, delta[:, None] + dur[gap], -np.inf)
        back[i] = np.argmax(cand, axis=0)
        delta = cand[back[i], np.arange(n_frames)] + emission
        delta[:i] = -np.inf
    final = delta + _duration_logpdf(n_frames - np.arange(n_frames, dtype=np.float64), means[-1])
    frames = [int(np.argmax(final))]
    for i in range(n_syl - 1, 0, -1):
        frames.append(int(back[i, frames[-1]]))
    return np.asarray(frames[::-1], dtype=np.int64)


def hmm_decode(odf, score, fps=FPS):
    """Score-informed onset decoding for one phrase.

    ``odf`` covers the phrase only. The first syllable starts at the phrase
    start; the remaining onsets maximise the log-ODF at each onset plus a
    Gaussian log-likelihood of every syllable length around its nominal
    duration (rescaled to fill the phrase, standard deviation 35% of the
    mean). Exact Viterbi-style dynamic programme, O(N T^2).
    """
    return score.phrase_start + hmm_decode_frames(odf, score) / fps


def phrase_frames(score, n_total, fps=FPS):
    start = int(np.floor(score.phrase_start * fps + 0.5))
    end = min(n_total, int(np.floor(score.phrase_end * fps + 0.5)))
    return start, end


def decode_phrases(odf, phrases, fps=FPS):
    """Run :func:`hmm_decode` on every phrase of a whole-clip ODF."""
    odf = np.asarray(odf, dtype=np.float64)
    out = []
    for p in phrases:
        start, end = phrase_frames(p, len(odf), fps)
        segment = odf[start:end]
        frames = hmm_decode_frames(segment, p)
        out.append((start + frames) / fps)
    return np.concatenate(out) if out else np.zeros(0)


def onsets_in_phrases(times, phrases, fps=FPS):
    """Onsets whose nearest frame lies in a phrase's frame span.

    Membership is decided on the same frame grid that :func:`decode_phrases`
    uses to cut the ODF, so an onset exactly at a phrase start always counts.
    """
    times = np.asarray(times, dtype=np.float64)
    frames = np.floor(times * fps + 0.5)
    keep = np.zeros(times.shape, dtype=bool)
    for p in phrases:
        start = np.floor(p.phrase_start * fps + 0.5)
        end = np.floor(p.phrase_end * fps + 0.5)
        keep |= (frames >= start) & (frames < end)
    return times[keep]
