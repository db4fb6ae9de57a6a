"""Target labels, the mini-batch training loop and transfer-learning modes."""

import csv
import math
import time
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import architectures
from .errors import ContractViolation, DataError, DivergenceError, DomainError
from .features import CONTEXT_FRAMES, FPS, LogMelSpectrogram, pad_for_contexts
from .nn_core import AdamState, Network, adam_step, copy_weights, weighted_bce

NEIGHBOR_WEIGHT = 0.25
TRANSFER_MODES = ("pretrained", "retrained", "feature_extractor_a", "feature_extractor_b")


@dataclass(frozen=True, eq=False)
class LabelSequence:
    targets: np.ndarray
    weights: np.ndarray
    frame_rate: int = FPS

    def __len__(self):
        return len(self.targets)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    lr: float = 1e-3
    patience: int = 15
    validation_fraction: float = 0.10
    max_epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.patience, self.max_epochs) < 1 or not self.lr > 0:
            raise DomainError("batch_size, patience, max_epochs and lr must be positive")
        if not 0.0 < self.validation_fraction < 0.5:
            raise DomainError("validation_fraction must lie in (0, 0.5)")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float = 0.0


@dataclass
class TrainResult:
    spec: object
    weights: dict
    log: list
    best_epoch: int
    initial_val_loss: float
    stopped_early: bool = False


def onset_frame(t):
    return int(math.floor(t * FPS + 0.5))


def prepare_labels(ann, n_frames):
    """Per-frame targets and sample weights for one clip.

    The frame nearest each onset gets target 1 with weight 1; its two
    neighbours get target 1 with weight 0.25 unless they are themselves an
    onset frame.
    """
    targets = np.zeros(n_frames, dtype=np.int8)
    weights = np.ones(n_frames, dtype=np.float32)
    centres = set()
    for t in np.asarray(ann, dtype=np.float64):
        if t < 0 or t >= n_frames / FPS:
            raise DomainError(f"onset {t:.3f}s lies outside a {n_frames}-frame clip")
        centres.add(min(onset_frame(t), n_frames - 1))
    for c in centres:
        for nb in (c - 1, c + 1):
            if 0 <= nb < n_frames and nb not in centres:
                targets[nb] = 1
                weights[nb] = NEIGHBOR_WEIGHT
    for c in centres:
        targets[c] = 1
        weights[c] = 1.0
    return LabelSequence(targets, weights)


class ContextPool:
    """Every frame context of a set of clips, gathered lazily into batches."""

    def __init__(self, spectrograms, labels=None):
        padded = []
        starts = []
        offset = 0
        for s in spectrograms:
            values = s.values if isinstance(s, LogMelSpectrogram) else np.asarray(s)
            p = pad_for_contexts(values.astype(np.float32))
            padded.append(p)
            starts.append(offset + np.arange(values.shape[0]))
            offset += p.shape[0]
        if not padded:
            raise DataError("empty training pool")
        self._rows = np.concatenate(padded, axis=0)
        self._windows = sliding_window_view(self._rows, CONTEXT_FRAMES, axis=0)
        self.starts = np.concatenate(starts)
        if labels is not None:
            self.targets = np.concatenate([l.targets for l in labels]).astype(np.float32)
            self.weights = np.concatenate([l.weights for l in labels]).astype(np.float32)
            if len(self.targets) != len(self.starts):
                raise ContractViolation("labels do not cover every frame")
        else:
            self.targets = self.weights = None

    def __len__(self):
        return len(self.starts)

    def contexts(self, idx):
        return self._windows[self.starts[idx]][:, None, :, :]


def stratified_split(targets, fraction, rng):
    """Split indices into (train, validation) preserving the positive ratio."""
    train, val = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(targets == cls)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(fraction * len(idx)))
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def pool_loss(net, pool, idx, batch_size=2048):
    if len(idx) == 0:
        return float("nan")
    total = 0.0
    for i in range(0, len(idx), batch_size):
        b = idx[i:i + batch_size]
        pred = net.forward(pool.contexts(b), training=False)[:, 0]
        loss, _ = weighted_bce(pred, pool.targets[b], pool.weights[b])
        total += loss * len(b)
    return total / len(idx)


def _as_pool(clips):
    if isinstance(clips, ContextPool):
        return clips
    specs, labels = [], []
    for s, ann in clips:
        specs.append(s)
        n = s.n_frames if isinstance(s, LogMelSpectrogram) else len(s)
        labels.append(ann if isinstance(ann, LabelSequence) else prepare_labels(ann, n))
    return ContextPool(specs, labels)


def train(arch, train_clips, cfg=TrainConfig(), init=None, progress=None):
    """Train ``arch`` on ``(spectrogram, annotations)`` pairs.

    A stratified ``cfg.validation_fraction`` of the contexts is held out for
    early stopping; training stops once the validation loss has not improved
    for ``cfg.patience`` epochs and the best-validation weights are returned.
    ``init`` optionally supplies starting weights (used by re-training).
    """
    if isinstance(arch, str):
        arch = architectures.build(arch)
    pool = _as_pool(train_clips)
    if len(pool) == 0:
        raise DataError("empty training pool")
    n_pos = int(pool.targets.sum())
    if n_pos < 2 or len(pool) - n_pos < 2:
        raise DataError("need at least two positive and two negative contexts")

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    split_rng = np.random.default_rng(seeds[0])
    shuffle_rng = np.random.default_rng(seeds[1])
    weights = init if init is not None else architectures.init_model(arch, seed=cfg.seed)
    net = Network(arch.layers, arch.input_shape, weights,
                  seed=int(seeds[2].generate_state(1)[0]))

    train_idx, val_idx = stratified_split(pool.targets, cfg.validation_fraction, split_rng)
    initial = pool_loss(net, pool, val_idx)
    state = AdamState()
    best_loss, best_epoch, best_weights = math.inf, 0, copy_weights(net.weights)
    log = []
    wait = 0
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        tic = time.perf_counter()
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            b = order[i:i + cfg.batch_size]
            pred = net.forward(pool.contexts(b), training=True)
            loss, grad = weighted_bce(pred[:, 0], pool.targets[b], pool.weights[b])
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            grads = net.backward(grad[:, None])
            adam_step(net.weights, grads, state, cfg.lr)
            total += loss * len(b)
        train_loss = total / len(order)
        val_loss = pool_loss(net, pool, val_idx)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise DivergenceError(epoch)
        log.append(EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - tic))
        if progress is not None:
            progress(log[-1])
        if val_loss < best_loss:
            best_loss, best_epoch, wait = val_loss, epoch, 0
            best_weights = copy_weights(net.weights)
        else:
            wait += 1
            if wait >= cfg.patience:
                stopped = True
                break
    best_weights = {k: v.astype(np.float32) for k, v in best_weights.items()}
    return TrainResult(arch, best_weights, log, best_epoch, initial, stopped)


def write_log(path, result):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "is_best"])
        for rec in result.log:
            w.writerow([rec.epoch, f"{rec.train_loss:.8f}", f"{rec.val_loss:.8f}",
                        int(rec.epoch == result.best_epoch)])


def read_log(path):
    with open(path, newline="") as fh:
        return [{"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
                 "val_loss": float(r["val_loss"]), "is_best": r["is_best"] == "1"}
                for r in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# Inference

def predict_odf(spec, weights, spectrogram, batch_size=2048):
    """Onset detection function (one activation per frame) for a clip."""
    net = spec if isinstance(spec, Network) else Network(spec.layers, spec.input_shape, weights)
    pool = ContextPool([spectrogram])
    out = [net.forward(pool.contexts(np.arange(i, min(i + batch_size, len(pool)))))[:, 0]
           for i in range(0, len(pool), batch_size)]
    return np.concatenate(out).astype(np.float64)


# ---------------------------------------------------------------------------
# Transfer learning

@dataclass(frozen=True)
class TransferMode:
    mode: str
    source: object  # path to a model file or a (spec, weights) pair

    def __post_init__(self):
        if self.mode not in TRANSFER_MODES:
            raise DomainError(f"unknown transfer mode {self.mode!r}")


def _load_source(source):
    if isinstance(source, (tuple, list)):
        spec, weights = source
    else:
        spec, weights = architectures.load_model(source)
    if spec.name != "cnn5":
        raise ContractViolation(f"transfer needs a cnn5 source model, got {spec.name}")
    return spec, weights


def frozen_weights(target_spec, source_weights):
    """Source tensors renamed into the frozen branch of a feature-extractor spec."""
    names = architectures.tensor_shapes(target_spec)
    prefix = architectures.FROZEN_PREFIX
    return {n: np.array(source_weights[n[len(prefix):]], dtype=np.float32)
            for n in names if n.startswith(prefix)}


def apply_transfer(mode, target_train, cfg=TrainConfig(), progress=None):
    """Adapt a cnn5 model trained on one data set to another.

    ``pretrained`` returns the source unchanged; ``retrained`` continues
    training every weight at the same learning rate; the feature-extractor
    modes freeze source front-end A (``_a``) or front-end A + back-end D
    (``_b``) and train a fresh cnn5 branch alongside it.
    """
    spec, weights = _load_source(mode.source)
    if mode.mode == "pretrained":
        return TrainResult(spec, copy_weights(weights), [], 0, float("nan"))
    if mode.mode == "retrained":
        return train(spec, target_train, cfg, init=copy_weights(weights), progress=progress)
    name = "feat_extractor_a" if mode.mode == "feature_extractor_a" else "feat_extractor_b"
    target = architectures.build(name)
    init = architectures.init_model(target, seed=cfg.seed)
    init.update(frozen_weights(target, weights))
    return train(target, target_train, cfg, init=init, progress=progress)
