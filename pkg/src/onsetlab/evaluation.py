"""Onset evaluation at a fixed tolerance, threshold search and run aggregation."""

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError
from .selection import PeakPickConfig, peak_pick
from .stats import TTestResult, welch_t_test

TOLERANCE = 0.025
# absorbs float representation error when differences sit exactly on the tolerance
MATCH_EPS = 1e-9
DEFAULT_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))


def match_onsets(det, ann, tol=TOLERANCE):
    """One-to-one matching of detections to annotations within ``tol`` seconds.

    Returns ``(tp, fp, fn)``. A single sweep over both time-sorted lists is a
    maximum matching for interval tolerance on a line.
    """
    det = np.sort(np.asarray(det, dtype=np.float64).ravel())
    ann = np.sort(np.asarray(ann, dtype=np.float64).ravel())
    limit = tol + MATCH_EPS
    i = j = tp = 0
    while i < det.size and j < ann.size:
        diff = det[i] - ann[j]
        if abs(diff) <= limit:
            tp += 1
            i += 1
            j += 1
        elif diff > 0:
            j += 1
        else:
            i += 1
    return tp, det.size - tp, ann.size - tp


def prf(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class EvalReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    per_file: list = field(default_factory=list)

    @property
    def precision(self):
        return prf(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self):
        return prf(self.tp, self.fp, self.fn)[1]

    @property
    def f1(self):
        return prf(self.tp, self.fp, self.fn)[2]

    def add(self, name, counts):
        tp, fp, fn = counts
        self.tp += tp
        self.fp += fp
        self.fn += fn
        self.per_file.append((name, tp, fp, fn))


def evaluate(detections, annotations, names=None, tol=TOLERANCE):
    """Pooled (micro-averaged) report over parallel lists of onset arrays."""
    if len(detections) != len(annotations):
        raise DomainError("one detection list per annotation list required")
    names = names or [str(i) for i in range(len(detections))]
    report = EvalReport()
    for name, det, ann in zip(names, detections, annotations):
        report.add(name, match_onsets(det, ann, tol))
    return report


def grid_search_threshold(odfs, annotations, grid=DEFAULT_GRID, cfg=PeakPickConfig(),
                          names=None, tol=TOLERANCE, restrict=None):
    """Peak-picking threshold maximising pooled F1 (ties go to the smaller value).

    ``restrict`` optionally maps each file's detections before scoring (used
    to keep only onsets inside annotated phrases).
    """
    if not odfs:
        raise DataError("empty file set")
    if not grid:
        raise DomainError("empty threshold grid")
    best = None
    for delta in sorted(grid):
        c = PeakPickConfig(delta, cfg.pre_max, cfg.post_max, cfg.combine, cfg.fps)
        dets = [peak_pick(o, c) for o in odfs]
        if restrict is not None:
            dets = [restrict(k, d) for k, d in enumerate(dets)]
        report = evaluate(dets, annotations, names, tol)
        if best is None or report.f1 > best[1].f1:
            best = (delta, report)
    return best


# ---------------------------------------------------------------------------
# Aggregation over seeds / folds

@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float
    n: int
    test: TTestResult = None

    def __str__(self):
        return f"{100 * self.mean:.2f}±{100 * self.std:.2f}"


def aggregate(runs, reference=None):
    """Mean, unbiased std (0 for a single run) and an optional Welch test vs ``reference``."""
    runs = [float(r) for r in runs]
    if not runs:
        raise DataError("no runs to aggregate")
    mean = math.fsum(runs) / len(runs)
    std = float(np.std(runs, ddof=1)) if len(runs) > 1 else 0.0
    test = None
    if reference is not None:
        test = welch_t_test(runs, reference)
    return Aggregate(mean, std, len(runs), test)


REPORT_FIELDS = ["dataset", "arch", "mode", "seed_or_fold", "threshold", "precision", "recall", "f1"]
SIGNIFICANCE_FIELDS = ["comparison", "t", "dof", "p"]


def append_report_row(path, dataset, arch, mode, seed_or_fold, threshold, report):
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(REPORT_FIELDS)
        thr = "" if threshold is None else f"{threshold:.2f}"
        w.writerow([dataset, arch, mode, seed_or_fold, thr, f"{report.precision:.6f}",
                    f"{report.recall:.6f}", f"{report.f1:.6f}"])


def read_report_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_significance(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SIGNIFICANCE_FIELDS)
        for name, res in rows:
            w.writerow([name, f"{res.t:.6f}", f"{res.dof:.6f}", f"{res.p:.6g}"])
