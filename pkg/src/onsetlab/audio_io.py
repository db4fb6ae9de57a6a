"""Audio decoding, dataset file formats and the synthetic onset generator.

File formats
------------
Annotation file
    UTF-8 text, one onset time in seconds per line, ``#`` starts a comment.
Manifest
    JSON array of ``{"audio", "annotation", "phrases"?, "fold", "split"}``.
Phrase file
    JSON array of ``{"start", "end", "durations": [...]}``.
"""

import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, DomainError, FormatError, ParameterError, ParseError

SAMPLE_RATE = 44100
DUPLICATE_TOLERANCE = 1e-6
MIN_ONSET_GAP = 0.150

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio samples in [-1, 1] with their sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise DomainError("waveform samples must be one-dimensional")
        if int(self.sample_rate) <= 0:
            raise DomainError("sample rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class PhraseScore:
    """A pre-segmented phrase with its nominal syllable durations from the score."""

    phrase_start: float
    phrase_end: float
    syllable_durations: tuple

    def __post_init__(self):
        durations = tuple(float(d) for d in self.syllable_durations)
        object.__setattr__(self, "syllable_durations", durations)
        if not self.phrase_end > self.phrase_start:
            raise DomainError("phrase end must be after phrase start")
        if not durations or any(not d > 0 for d in durations):
            raise DomainError("syllable durations must be a non-empty list of positive values")


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: str
    annotation_path: str
    fold_index: int = 0
    split: str = "train"
    phrase_path: str = None


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    n_folds: int = 1

    def folds(self):
        return sorted({e.fold_index for e in self.entries})

    def select(self, split=None, fold=None, exclude_fold=None):
        out = []
        for e in self.entries:
            if split is not None and e.split != split:
                continue
            if fold is not None and e.fold_index != fold:
                continue
            if exclude_fold is not None and e.fold_index == exclude_fold:
                continue
            out.append(e)
        return out


# ---------------------------------------------------------------------------
# WAV

def _iter_chunks(data):
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        size = struct.unpack("<I", data[pos + 4:pos + 8])[0]
        yield chunk_id, pos + 8, size
        pos += 8 + size + (size & 1)


def read_wav(path):
    """Decode a PCM WAV file into a mono :class:`Waveform`.

    16-bit integer and 32-bit float payloads are supported. Multi-channel
    audio is mixed down by averaging the channels.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    for chunk_id, start, size in _iter_chunks(data):
        if chunk_id == b"fmt ":
            if size < 16 or start + 16 > len(data):
                raise CorruptionError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack("<HHIIHH", data[start:start + 16])
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE and size >= 26:
                sub = struct.unpack("<H", data[start + 24:start + 26])[0]
                fmt = (sub,) + fmt[1:]
        elif chunk_id == b"data":
            if start + size > len(data):
                raise CorruptionError(
                    f"{path}: data chunk declares {size} bytes, only {len(data) - start} present")
            payload = data[start:start + size]
            break
    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise CorruptionError(f"{path}: missing data chunk")

    codec, channels, sample_rate, _, block_align, bits = fmt
    if channels < 1:
        raise FormatError(f"{path}: invalid channel count {channels}")
    if codec == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif codec == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise FormatError(f"{path}: unsupported codec {codec} with {bits} bits per sample")
    if len(payload) % (dtype.itemsize * channels):
        raise CorruptionError(f"{path}: payload is not a whole number of frames")

    frames = np.frombuffer(payload, dtype=dtype).reshape(-1, channels)
    samples = frames.astype(np.float64) * scale
    mono = samples.mean(axis=1) if channels > 1 else samples[:, 0]
    return Waveform(mono, sample_rate)


def write_wav(path, waveform, sample_format="int16"):
    """Write a mono waveform as 16-bit PCM (default) or 32-bit float WAV."""
    samples = np.asarray(waveform.samples, dtype=np.float64)
    if sample_format == "int16":
        q = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
        codec, bits = _WAVE_FORMAT_PCM, 16
    elif sample_format == "float32":
        q = samples.astype("<f4")
        codec, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise FormatError(f"unsupported sample format {sample_format!r}")
    payload = q.tobytes()
    block_align = bits // 8
    fmt = struct.pack("<HHIIHH", codec, 1, waveform.sample_rate,
                      waveform.sample_rate * block_align, block_align, bits)
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)))
        fh.write(b"WAVE")
        fh.write(b"fmt " + struct.pack("<I", len(fmt)) + fmt)
        fh.write(b"data" + struct.pack("<I", len(payload)) + payload)


# ---------------------------------------------------------------------------
# Annotations

def canonicalize_onsets(times):
    """Sort onset times and collapse entries closer than 1 microsecond."""
    arr = np.sort(np.asarray(times, dtype=np.float64).ravel())
    if arr.size and arr[0] < 0:
        raise DomainError(f"negative onset time {arr[0]}")
    if arr.size < 2:
        return arr
    keep = [0]
    for i in range(1, arr.size):
        if arr[i] - arr[keep[-1]] >= DUPLICATE_TOLERANCE:
            keep.append(i)
    return arr[keep]


def parse_annotations(text):
    values = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        token = line.split()[0]
        try:
            value = float(token)
        except ValueError:
            raise ParseError(f"not a number: {token!r}", line=lineno) from None
        if not math.isfinite(value):
            raise ParseError(f"not a finite number: {token!r}", line=lineno)
        if value < 0:
            raise DomainError(f"line {lineno}: negative onset time {value}")
        values.append(value)
    return canonicalize_onsets(values)


def read_annotations(path):
    """Read an onset annotation file into a sorted, duplicate-free array."""
    with open(path, encoding="utf-8") as fh:
        return parse_annotations(fh.read())


def format_annotations(times):
    return "".join(f"{float(t)!r}\n" for t in canonicalize_onsets(times))


def write_annotations(path, times):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_annotations(times))


# ---------------------------------------------------------------------------
# Phrases and manifests

def read_phrases(path):
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise FormatError(f"{path}: phrase file must hold a JSON array")
    try:
        return [PhraseScore(float(p["start"]), float(p["end"]), tuple(p["durations"]))
                for p in raw]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed phrase entry ({exc})") from None


def write_phrases(path, phrases):
    raw = [{"start": p.phrase_start, "end": p.phrase_end,
            "durations": list(p.syllable_durations)} for p in phrases]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(raw, fh, indent=1)


def read_manifest(path, n_folds=None):
    """Load a manifest; relative paths are resolved against its directory.

    ``n_folds`` defaults to one more than the largest fold index found.
    """
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise FormatError(f"{path}: manifest must hold a JSON array")
    root = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        if not isinstance(p, str) or not p:
            raise FormatError(f"{path}: empty path in manifest")
        return p if os.path.isabs(p) else os.path.join(root, p)

    entries = []
    for item in raw:
        try:
            split = item.get("split", "train")
            if split not in ("train", "test"):
                raise FormatError(f"{path}: split must be train or test, got {split!r}")
            fold = int(item.get("fold", 0))
            if fold < 0:
                raise FormatError(f"{path}: negative fold index")
            entries.append(ManifestEntry(
                audio_path=resolve(item["audio"]),
                annotation_path=resolve(item["annotation"]),
                fold_index=fold,
                split=split,
                phrase_path=resolve(item["phrases"]) if item.get("phrases") else None,
            ))
        except KeyError as exc:
            raise FormatError(f"{path}: manifest entry lacks {exc}") from None
    declared = n_folds if n_folds is not None else max((e.fold_index for e in entries), default=0) + 1
    for e in entries:
        if e.fold_index >= declared:
            raise FormatError(f"{path}: fold {e.fold_index} >= declared fold count {declared}")
        if e.split == "test" and not os.path.exists(e.annotation_path):
            raise FormatError(f"{path}: missing annotation for test entry {e.annotation_path}")
    return DatasetManifest(entries, declared)


def write_manifest(path, manifest):
    """Write a manifest; paths are stored relative to its directory."""
    root = os.path.dirname(os.path.abspath(path))

    def rel(p):
        return os.path.relpath(os.path.abspath(p), root)

    raw = []
    for e in manifest.entries:
        item = {"audio": rel(e.audio_path), "annotation": rel(e.annotation_path)}
        if e.phrase_path:
            item["phrases"] = rel(e.phrase_path)
        item["fold"] = e.fold_index
        item["split"] = e.split
        raw.append(item)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(raw, fh, indent=1)


# ---------------------------------------------------------------------------
# Synthetic data

@dataclass(frozen=True, eq=False)
class SynthClip:
    waveform: Waveform
    annotations: np.ndarray
    phrases: list


_LEAD_IN = 0.05
_TAIL = 0.25
_CLICK_PULSE = 0.005
_CLICK_NOISE = 0.050
_VOWEL_ATTACK = 0.020
_VOWEL_RELEASE = 0.030
_NOISE_FLOOR = 1e-3


def _onset_samples(rng, n_events, clip_samples, sr):
    lo = int(round(_LEAD_IN * sr))
    hi = clip_samples - int(round(_TAIL * sr))
    gap = int(math.ceil(MIN_ONSET_GAP * sr))
    slack = hi - lo - (n_events - 1) * gap
    if n_events < 1 or slack < 0:
        raise ParameterError(
            f"{n_events} events with {MIN_ONSET_GAP}s spacing do not fit in the clip")
    offsets = np.sort(rng.integers(0, slack + 1, size=n_events))
    return lo + offsets + gap * np.arange(n_events)


def _click(rng, length, sr):
    pulse = int(round(_CLICK_PULSE * sr))
    n = min(length, int(round(_CLICK_NOISE * sr)))
    gain = rng.uniform(0.3, 0.8)
    out = np.zeros(n)
    out[:pulse] = gain
    t = np.arange(n) / sr
    out += gain * rng.standard_normal(n) * np.exp(-t / (_CLICK_NOISE / 5.0)) * 0.5
    return out


def _vowel(rng, length, sr):
    f0 = rng.uniform(150.0, 400.0)
    gain = rng.uniform(0.15, 0.35)
    t = np.arange(length) / sr
    tone = np.zeros(length)
    for h in range(1, 6):
        tone += np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h
    env = np.ones(length)
    attack = min(length, int(round(_VOWEL_ATTACK * sr)))
    env[:attack] = np.linspace(0.0, 1.0, attack, endpoint=False)
    release = min(length - attack, int(round(_VOWEL_RELEASE * sr)))
    if release > 0:
        env[length - release:] = np.linspace(1.0, 0.0, release)
    return gain * env * tone / 2.3


def _phrases_for(rng, onsets, clip_seconds):
    phrases = []
    i = 0
    while i < len(onsets):
        size = int(rng.integers(3, 7))
        group = onsets[i:i + size]
        end = onsets[i + size] if i + size < len(onsets) else clip_seconds
        bounds = np.append(group, end)
        true_durations = np.diff(bounds)
        nominal = true_durations * rng.uniform(0.85, 1.15, size=len(true_durations))
        phrases.append(PhraseScore(float(group[0]), float(end), tuple(nominal)))
        i += size
    return phrases


def synth_clip(rng, kind, clip_seconds, events_per_second=2.5, sr=SAMPLE_RATE):
    n = int(round(clip_seconds * sr))
    n_events = max(1, int(round(clip_seconds * events_per_second)))
    starts = _onset_samples(rng, n_events, n, sr)
    audio = _NOISE_FLOOR * rng.standard_normal(n)
    bounds = np.append(starts, n)
    for k, start in enumerate(starts):
        if kind == "clicks":
            event = _click(rng, n - start, sr)
        elif kind == "vowels":
            room = int(bounds[k + 1] - start - 0.02 * sr)
            length = min(room, int(rng.uniform(0.12, 0.6) * sr))
            event = _vowel(rng, max(length, int(_VOWEL_ATTACK * sr) + 1), sr)
        else:
            raise ParameterError(f"unknown synthetic kind {kind!r}")
        audio[start:start + len(event)] += event
    audio = np.clip(audio, -1.0, 1.0)
    onsets = starts / sr
    return SynthClip(Waveform(audio, sr), onsets, _phrases_for(rng, onsets, clip_seconds))


def synth_dataset(kind, n_clips, clip_seconds, seed, events_per_second=2.5):
    """Generate ``n_clips`` synthetic clips with exactly known onsets.

    ``kind="clicks"`` produces broadband decaying noise bursts; ``"vowels"``
    produces five-harmonic tones with 20 ms linear attacks. Onsets are placed
    uniformly at random with at least 150 ms between consecutive events.
    Output is a pure function of the arguments.
    """
    if kind not in ("clicks", "vowels"):
        raise ParameterError(f"unknown synthetic kind {kind!r}")
    if n_clips < 1:
        raise ParameterError("n_clips must be at least 1")
    if clip_seconds < 1:
        raise ParameterError("clip_seconds must be at least 1")
    rng = np.random.default_rng(seed)
    return [synth_clip(rng, kind, clip_seconds, events_per_second) for _ in range(n_clips)]


def materialize_dataset(clips, out_dir, prefix="clip", n_folds=1, test_fraction=0.0):
    """Write clips as WAV/annotation/phrase files plus ``manifest.json``."""
    out_dir = os.path.abspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    n = len(clips)
    n_test = int(round(n * test_fraction))
    entries = []
    for i, clip in enumerate(clips):
        stem = f"{prefix}{i:04d}"
        wav = os.path.join(out_dir, stem + ".wav")
        ann = os.path.join(out_dir, stem + ".txt")
        phr = os.path.join(out_dir, stem + ".phrases.json")
        write_wav(wav, clip.waveform)
        write_annotations(ann, clip.annotations)
        write_phrases(phr, clip.phrases)
        entries.append(ManifestEntry(wav, ann, i % n_folds, "test" if i >= n - n_test else "train", phr))
    manifest = DatasetManifest(entries, n_folds)
    write_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest
