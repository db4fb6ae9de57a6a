"""Glue between manifests, features, models and evaluation."""

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from . import audio_io, features
from .evaluation import DEFAULT_GRID, TOLERANCE, evaluate, grid_search_threshold
from .selection import PeakPickConfig, decode_phrases, onsets_in_phrases, peak_pick, smooth
from .training import predict_odf


@dataclass(frozen=True, eq=False)
class Clip:
    name: str
    spectrogram: features.LogMelSpectrogram
    annotations: np.ndarray
    phrases: list = None


def _cache_path(cache_dir, audio_path):
    digest = hashlib.sha1(os.path.abspath(audio_path).encode("utf-8")).hexdigest()[:10]
    stem = os.path.splitext(os.path.basename(audio_path))[0]
    return os.path.join(cache_dir, f"{stem}-{digest}.olf")


def spectrogram_for(audio_path, cache_dir=None):
    if cache_dir:
        path = _cache_path(cache_dir, audio_path)
        if os.path.exists(path) and os.path.getmtime(path) >= os.path.getmtime(audio_path):
            return features.read_feature_cache(path)
    s = features.log_mel(audio_io.read_wav(audio_path))
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        features.write_feature_cache(path, s)
    return s


def load_clips(entries, cache_dir=None):
    clips = []
    for e in entries:
        spec = spectrogram_for(e.audio_path, cache_dir)
        ann = audio_io.read_annotations(e.annotation_path)
        phrases = audio_io.read_phrases(e.phrase_path) if e.phrase_path else None
        clips.append(Clip(os.path.basename(e.audio_path), spec, ann, phrases))
    return clips


def clips_from_synth(synth_clips, prefix="clip"):
    return [Clip(f"{prefix}{i:04d}", features.log_mel(c.waveform), c.annotations, c.phrases)
            for i, c in enumerate(synth_clips)]


def training_pairs(clips):
    return [(c.spectrogram, c.annotations) for c in clips]


def odfs_for(spec, weights, clips):
    """Smoothed ODF of every clip."""
    return [smooth(predict_odf(spec, weights, c.spectrogram)) for c in clips]


def peak_pick_report(odfs, clips, threshold=None, grid=DEFAULT_GRID, in_phrases=False):
    """Evaluate peak-picking, grid-searching the threshold when none is given."""
    anns = [c.annotations for c in clips]
    names = [c.name for c in clips]
    restrict = None
    if in_phrases:
        anns = [onsets_in_phrases(a, c.phrases) for a, c in zip(anns, clips)]
        restrict = lambda k, d: onsets_in_phrases(d, clips[k].phrases)  # noqa: E731
    if threshold is None:
        return grid_search_threshold(odfs, anns, grid, names=names, restrict=restrict)
    dets = [peak_pick(o, PeakPickConfig(threshold)) for o in odfs]
    if restrict is not None:
        dets = [restrict(k, d) for k, d in enumerate(dets)]
    return threshold, evaluate(dets, anns, names, TOLERANCE)


def hmm_report(odfs, clips):
    """Score-informed decoding evaluated on the annotated phrases."""
    dets = [decode_phrases(o, c.phrases) for o, c in zip(odfs, clips)]
    anns = [onsets_in_phrases(c.annotations, c.phrases) for c in clips]
    return evaluate(dets, anns, [c.name for c in clips], TOLERANCE)
