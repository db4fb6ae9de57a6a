"""Command-line interface: ``onsetlab <command> ...``.

Exit codes: 0 success, 1 contract or data failure, 2 usage error.
"""

import argparse
import csv
import glob
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import architectures, audio_io, pipeline
from .errors import OnsetLabError, UsageError
from .evaluation import (aggregate, append_report_row, read_report_rows,
                         write_significance)
from .selection import PeakPickConfig, decode_phrases, peak_pick, smooth
from .training import TrainConfig, TransferMode, apply_transfer, predict_odf, train, write_log

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
TRANSFER_FLAGS = {"pretrained": "pretrained", "retrained": "retrained",
                  "feat-a": "feature_extractor_a", "feat-b": "feature_extractor_b"}
STEM_RE = re.compile(r"^(?P<arch>.+?)_(?P<fold>fold\d+|holdout)_seed(?P<seed>\d+)$")
RESERVED_REPORTS = ("summary.csv", "significance.csv")


def _die(msg):
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_FAIL


def run_dirs(out):
    dirs = {k: os.path.join(out, k) for k in ("models", "logs", "reports", "features")}
    for d in dirs.values():
        os.makedirs(d, exist_ok=True)
    return dirs


def max_workers():
    raw = os.environ.get("ONSETLAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"ONSETLAB_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"ONSETLAB_THREADS must be a positive integer, got {raw!r}")
    return n


def _run_jobs(fn, jobs):
    workers = min(max_workers(), len(jobs))
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def model_stem(arch, fold, seed):
    tag = "holdout" if fold is None else f"fold{fold}"
    return f"{arch}_{tag}_seed{seed}"


def parse_stem(path):
    stem = os.path.splitext(os.path.basename(path))[0]
    m = STEM_RE.match(stem)
    if not m:
        return stem, None, None
    fold = None if m["fold"] == "holdout" else int(m["fold"][4:])
    return m["arch"], fold, int(m["seed"])


def split_entries(manifest, fold):
    """(train, test) entries: cross-validation fold if given, else the split labels."""
    if fold is None:
        return manifest.select(split="train"), manifest.select(split="test")
    if fold not in manifest.folds():
        raise UsageError(f"fold {fold} not present in manifest (folds {manifest.folds()})")
    return manifest.select(exclude_fold=fold), manifest.select(fold=fold)


def _folds_arg(manifest, folds):
    if folds is None:
        return [None]
    if folds == ["all"]:
        return manifest.folds()
    try:
        return [int(f) for f in folds]
    except ValueError:
        raise UsageError("--folds takes integers or 'all'") from None


def _progress(stem):
    def report(rec):
        print(f"{stem} epoch {rec.epoch} train {rec.train_loss:.5f} val {rec.val_loss:.5f}",
              file=sys.stderr, flush=True)
    return report


def _train_config(args, seed):
    return TrainConfig(batch_size=args.batch_size, lr=args.lr, patience=args.patience,
                       max_epochs=args.max_epochs, seed=seed)


def _check_overwrite(paths, force):
    existing = [p for p in paths if os.path.exists(p)]
    if existing and not force:
        raise UsageError(f"refusing to overwrite {existing[0]} (use --force)")


# ---------------------------------------------------------------------------
# Subcommands

def cmd_params(args):
    names = architectures.ARCHITECTURES if args.arch == "all" else [args.arch]
    status = EXIT_OK
    for name in names:
        computed = architectures.count_params(architectures.build(name))
        ref = architectures.REFERENCE_PARAMS.get(name)
        if ref is None:
            print(f"{name} {computed} - -")
            continue
        delta = computed - ref
        print(f"{name} {computed} {ref} {delta}")
        if delta != 0 and name != "temporal":
            status = EXIT_FAIL
    return status


def cmd_synth(args):
    clips = audio_io.synth_dataset(args.kind, args.clips, args.seconds, args.seed,
                                   events_per_second=args.events_per_second)
    manifest = audio_io.materialize_dataset(clips, args.out, prefix=f"{args.kind}_",
                                            n_folds=args.folds, test_fraction=args.test_fraction)
    print(f"wrote {len(manifest.entries)} clips to {os.path.join(args.out, 'manifest.json')}")
    return EXIT_OK


def _train_job(job):
    args, arch, fold, seed, dirs = job
    manifest = audio_io.read_manifest(args.manifest)
    train_entries, _ = split_entries(manifest, fold)
    clips = pipeline.load_clips(train_entries, dirs["features"])
    stem = model_stem(arch, fold, seed)
    result = train(arch, pipeline.training_pairs(clips), _train_config(args, seed),
                   progress=_progress(stem))
    architectures.save_model(result.spec, result.weights, os.path.join(dirs["models"], stem + ".onn"))
    write_log(os.path.join(dirs["logs"], stem + ".csv"), result)
    return stem, result.best_epoch


def cmd_train(args):
    dirs = run_dirs(args.out)
    manifest = audio_io.read_manifest(args.manifest)
    folds = _folds_arg(manifest, args.folds)
    for arch in args.arch:
        if arch not in architectures.ARCHITECTURES:
            raise UsageError(f"unknown architecture {arch!r}")
    jobs = [(args, arch, fold, seed, dirs) for arch in args.arch for fold in folds for seed in args.seeds]
    _check_overwrite([os.path.join(dirs["models"], model_stem(a, f, s) + ".onn")
                      for _, a, f, s, _ in jobs], args.force)
    # warm the feature cache once so parallel workers only read it
    pipeline.load_clips(manifest.entries, dirs["features"])
    for stem, best in _run_jobs(_train_job, jobs):
        print(f"{stem} best_epoch {best}")
    return EXIT_OK


def _transfer_job(job):
    args, fold, seed, dirs = job
    manifest = audio_io.read_manifest(args.manifest)
    train_entries, _ = split_entries(manifest, fold)
    clips = pipeline.load_clips(train_entries, dirs["features"])
    stem = model_stem(f"cnn5-{args.mode}", fold, seed)
    result = apply_transfer(TransferMode(TRANSFER_FLAGS[args.mode], args.source),
                            pipeline.training_pairs(clips), _train_config(args, seed),
                            progress=_progress(stem))
    architectures.save_model(result.spec, result.weights, os.path.join(dirs["models"], stem + ".onn"))
    write_log(os.path.join(dirs["logs"], stem + ".csv"), result)
    return stem, result.best_epoch


def cmd_transfer(args):
    dirs = run_dirs(args.out)
    manifest = audio_io.read_manifest(args.manifest)
    folds = _folds_arg(manifest, args.folds)
    seeds = [0] if args.mode == "pretrained" else args.seeds
    jobs = [(args, fold, seed, dirs) for fold in folds for seed in seeds]
    _check_overwrite([os.path.join(dirs["models"], model_stem(f"cnn5-{args.mode}", f, s) + ".onn")
                      for _, f, s, _ in jobs], args.force)
    pipeline.load_clips(manifest.entries, dirs["features"])
    for stem, best in _run_jobs(_transfer_job, jobs):
        print(f"{stem} best_epoch {best}")
    return EXIT_OK


def cmd_detect(args):
    if args.method == "hmm":
        if not args.phrases:
            raise UsageError("--method hmm requires --phrases")
        if len(args.phrases) != len(args.audio):
            raise UsageError("give one --phrases file per audio file")
    spec, weights = architectures.load_model(args.model)
    os.makedirs(args.out, exist_ok=True)
    cfg = PeakPickConfig(args.threshold)
    for k, path in enumerate(args.audio):
        odf = smooth(predict_odf(spec, weights, pipeline.spectrogram_for(path)))
        if args.method == "hmm":
            onsets = decode_phrases(odf, audio_io.read_phrases(args.phrases[k]))
        else:
            onsets = peak_pick(odf, cfg)
        stem = os.path.splitext(os.path.basename(path))[0]
        audio_io.write_annotations(os.path.join(args.out, stem + ".onsets.txt"), onsets)
    print(f"wrote {len(args.audio)} onset files to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    if args.grid and args.threshold is not None:
        raise UsageError("--grid and --threshold are mutually exclusive")
    if args.method == "peak" and not args.grid and args.threshold is None:
        raise UsageError("--method peak needs --grid or --threshold")
    dirs = run_dirs(args.out)
    manifest = audio_io.read_manifest(args.manifest)
    dataset = args.dataset or os.path.basename(os.path.dirname(os.path.abspath(args.manifest)))
    for model_path in args.model:
        arch_label, fold, seed = parse_stem(model_path)
        if args.fold is not None:
            fold = args.fold
        spec, weights = architectures.load_model(model_path)
        tune_entries, test_entries = split_entries(manifest, fold)
        if not test_entries:
            raise UsageError("no evaluation entries selected from the manifest")
        test = pipeline.load_clips(test_entries, dirs["features"])
        odfs = pipeline.odfs_for(spec, weights, test)
        base, _, mode = arch_label.partition("-")
        mode = mode or "direct"
        threshold = None
        if args.method == "hmm":
            if any(c.phrases is None for c in test):
                raise UsageError("--method hmm needs phrase files for every manifest entry")
            report = pipeline.hmm_report(odfs, test)
            mode += "+hmm"
        elif args.grid and args.tune_on == "validation":
            tune = pipeline.load_clips(tune_entries, dirs["features"])
            threshold, _ = pipeline.peak_pick_report(pipeline.odfs_for(spec, weights, tune), tune)
            _, report = pipeline.peak_pick_report(odfs, test, threshold)
        else:
            threshold, report = pipeline.peak_pick_report(odfs, test, args.threshold)
        stem = os.path.splitext(os.path.basename(model_path))[0]
        out = os.path.join(dirs["reports"], f"{stem}_{args.method}.csv")
        if os.path.exists(out):
            os.remove(out)
        tag = "" if seed is None else (f"seed{seed}" if fold is None else f"fold{fold}_seed{seed}")
        append_report_row(out, dataset, base, mode, tag, threshold, report)
        if args.grid:
            with open(os.path.join(dirs["reports"], f"{stem}_{args.method}.threshold"), "w") as fh:
                fh.write(f"{threshold:.2f}\n")
        thr = "" if threshold is None else f" threshold {threshold:.2f}"
        print(f"{stem} P {report.precision:.4f} R {report.recall:.4f} F1 {report.f1:.4f}{thr}")
    return EXIT_OK


def _report_inputs(args, dirs):
    if args.inputs:
        return args.inputs
    paths = sorted(glob.glob(os.path.join(dirs["reports"], "*.csv")))
    return [p for p in paths if os.path.basename(p) not in RESERVED_REPORTS]


def cmd_report(args):
    dirs = run_dirs(args.out)
    rows = []
    for path in _report_inputs(args, dirs):
        rows.extend(read_report_rows(path))
    if not rows:
        raise UsageError("no report rows found")
    groups = {}
    for r in rows:
        groups.setdefault((r["dataset"], r["arch"], r["mode"]), []).append(r)
    summary = os.path.join(dirs["reports"], "summary.csv")
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "arch", "mode", "n", "f1_mean", "f1_std",
                    "precision_mean", "recall_mean"])
        for key in sorted(groups):
            g = groups[key]
            f1 = aggregate([float(r["f1"]) for r in g])
            p = aggregate([float(r["precision"]) for r in g])
            rc = aggregate([float(r["recall"]) for r in g])
            w.writerow([*key, f1.n, f"{f1.mean:.6f}", f"{f1.std:.6f}", f"{p.mean:.6f}", f"{rc.mean:.6f}"])
            print(f"{key[0]} {key[1]} {key[2]} F1 {f1} (n={f1.n})")
    tests = []
    for key in sorted(groups):
        ref_key = (key[0], args.reference, key[2])
        if key == ref_key or ref_key not in groups:
            continue
        a = [float(r["f1"]) for r in groups[key]]
        b = [float(r["f1"]) for r in groups[ref_key]]
        if len(a) < 2 or len(b) < 2:
            print(f"skipping {key[1]} vs {args.reference}: Welch needs two runs per group",
                  file=sys.stderr)
            continue
        res = aggregate(a, reference=b).test
        tests.append((f"{key[0]}:{key[2]}:{key[1]} vs {args.reference}", res))
    write_significance(os.path.join(dirs["reports"], "significance.csv"), tests)
    plot_f1_by_arch(os.path.join(dirs["reports"], "f1_by_arch.svg"), groups)
    return EXIT_OK


def plot_f1_by_arch(path, groups):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    keys = sorted(groups)
    means = [100 * np.mean([float(r["f1"]) for r in groups[k]]) for k in keys]
    stds = [100 * aggregate([float(r["f1"]) for r in groups[k]]).std for k in keys]
    labels = [k[1] if k[2] == "direct" else f"{k[1]}\n{k[2]}" for k in keys]
    if len({k[0] for k in keys}) > 1:
        labels = [f"{k[0]}\n{lab}" for k, lab in zip(keys, labels)]
    with matplotlib.rc_context({"svg.hashsalt": "onsetlab", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(keys)), 3.5))
        ax.bar(range(len(keys)), means, yerr=stds, capsize=3, color="0.55")
        ax.set_xticks(range(len(keys)), labels, fontsize=8)
        ax.set_ylabel("F1 (%)")
        ax.set_ylim(0, 100)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


# ---------------------------------------------------------------------------
# Argument parsing

def build_parser():
    p = argparse.ArgumentParser(prog="onsetlab", description="CNN onset detection toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("params", help="trainable parameter counts")
    s.add_argument("--arch", required=True, choices=list(architectures.ARCHITECTURES) + ["all"])
    s.set_defaults(func=cmd_params)

    s = sub.add_parser("synth", help="write a synthetic data set")
    s.add_argument("--kind", required=True, choices=["clicks", "vowels"])
    s.add_argument("--clips", required=True, type=int)
    s.add_argument("--seconds", required=True, type=float)
    s.add_argument("--seed", required=True, type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--folds", type=int, default=1)
    s.add_argument("--test-fraction", type=float, default=0.0)
    s.add_argument("--events-per-second", type=float, default=2.5)
    s.set_defaults(func=cmd_synth)

    def training_flags(s):
        s.add_argument("--manifest", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--folds", nargs="+", help="fold indices or 'all'; default: train/test split")
        s.add_argument("--seeds", nargs="+", type=int, default=[0])
        s.add_argument("--max-epochs", type=int, default=200)
        s.add_argument("--batch-size", type=int, default=256)
        s.add_argument("--lr", type=float, default=1e-3)
        s.add_argument("--patience", type=int, default=15)
        s.add_argument("--force", action="store_true", help="overwrite existing models")

    s = sub.add_parser("train", help="train models per fold and seed")
    s.add_argument("--arch", required=True, nargs="+")
    training_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("transfer", help="adapt a cnn5 model to another data set")
    s.add_argument("--source", required=True, help="cnn5 model file")
    s.add_argument("--mode", required=True, choices=list(TRANSFER_FLAGS))
    training_flags(s)
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("detect", help="write onset files for audio")
    s.add_argument("--model", required=True)
    s.add_argument("--method", required=True, choices=["peak", "hmm"])
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--phrases", nargs="+", help="phrase JSON per audio file (hmm)")
    s.add_argument("--out", required=True)
    s.add_argument("audio", nargs="+")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", help="evaluate models on a manifest")
    s.add_argument("--model", required=True, nargs="+")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--method", choices=["peak", "hmm"], default="peak")
    s.add_argument("--grid", action="store_true", help="grid-search the peak-picking threshold")
    s.add_argument("--threshold", type=float)
    s.add_argument("--tune-on", choices=["test", "validation"], default="test",
                   help="set used for the threshold search")
    s.add_argument("--fold", type=int, help="override the fold parsed from the model name")
    s.add_argument("--dataset", help="dataset label for the report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="aggregate report CSVs")
    s.add_argument("--out", required=True)
    s.add_argument("--inputs", nargs="+", help="report CSVs (default: <out>/reports/*.csv)")
    s.add_argument("--reference", default="baseline", help="architecture the others are tested against")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"onsetlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OnsetLabError, OSError) as exc:
        return _die(exc)


if __name__ == "__main__":
    sys.exit(main())
