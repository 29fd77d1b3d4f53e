"""Batch command-line front end for the full uncertainty pipeline.

Subcommands: ``synth``, ``compute-auv``, ``filter``, ``curves``,
``histogram``, ``check-grad``, ``demo``.  All commands are deterministic
given (inputs, flags, seed), including under varying ``--workers``: samples
are processed independently and merged in sample-id order.

Exit codes: 0 success, 2 input/format error, 3 numerical failure,
4 acceptance failure (check-grad / demo).
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .duo import PredictionBatch, duo_total_loss, gradient_check, standardize_noise
from .errors import AuvKitError, InputError, NumericalError, ParameterError
from .filtering import (
    FilterStrategy,
    filter_global,
    filter_per_class,
    export_histogram,
    read_records,
    write_manifest,
    write_records,
)
from .spectrum import (
    DEFAULT_EPSILON,
    DEFAULT_FLOOR,
    auv_batch,
    export_spectrum_curves,
    log_scale_stats,
    sample_scale,
    singular_values,
    volume_scales,
)
from .synth import SynthSpec, make_dataset
from .volumes import class_matrix, dataset_paths, load_feature_volume, read_class_sidecar

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_ACCEPT = 4

STATS_SCHEMA = "auvkit.stats/1"

_STRATEGY_ALIASES = {
    "a": FilterStrategy.GLOBAL_RAW,
    "b": FilterStrategy.PER_CLASS_RAW,
    "c": FilterStrategy.GLOBAL_NORMALIZED,
    "d": FilterStrategy.PER_CLASS_NORMALIZED,
    **{s.value: s for s in FilterStrategy},
}


def _parse_classes(text):
    if text is None:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ParameterError(f"bad --classes value {text!r}: {exc}") from exc


def _parse_shape(text):
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 4:
        raise ParameterError(f"--shape needs C,D,H,W, got {text!r}")
    return tuple(parts)


def _scan_scales(input_dir, classes, epsilon, center, workers):
    """Per-sample class scales over a tensor directory, sample-id order.

    Per-file failures go to stderr and the file is skipped; an entirely
    failing directory is an input error.
    """
    paths = dataset_paths(input_dir)
    if not paths:
        raise InputError(f"no tensor files in {input_dir}")
    sidecar = read_class_sidecar(input_dir)

    def job(path):
        volume = load_feature_volume(path, class_ids=sidecar.get(path.stem))
        return volume.sample_id, volume_scales(volume, classes, epsilon=epsilon, center=center)

    results = {}
    failures = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for path, outcome in zip(paths, pool.map(lambda p: _try(job, p), paths)):
            if isinstance(outcome, Exception):
                failures.append((path, outcome))
                print(f"warning: skipping {path}: {outcome}", file=sys.stderr)
            else:
                sid, scales = outcome
                results[sid] = scales
    if not results:
        detail = f"; first failure: {failures[0][1]}" if failures else ""
        raise InputError(f"no usable tensor files in {input_dir}{detail}")
    return dict(sorted(results.items()))


def _try(fn, *args):
    try:
        return fn(*args)
    except AuvKitError as exc:
        return exc


def _load_stats(path):
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("schema") != STATS_SCHEMA:
        raise InputError(f"{path}: unexpected stats schema {obj.get('schema')!r}")
    return float(obj["log_min"]), float(obj["log_max"])


def _write_stats(path, log_min, log_max, floor, epsilon):
    payload = {
        "schema": STATS_SCHEMA,
        "tool_version": __version__,
        "log_min": log_min,
        "log_max": log_max,
        "floor": floor,
        "epsilon": epsilon,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def cmd_compute_auv(args) -> int:
    classes = _parse_classes(args.classes)
    per_sample = _scan_scales(args.input, classes, args.epsilon, not args.no_center, args.workers)
    scales = [(sid, sample_scale(cls_scales)) for sid, cls_scales in per_sample.items()]

    stats = _load_stats(args.stats) if args.stats else None
    records = auv_batch(
        scales,
        floor=args.floor,
        per_class_scales=per_sample,
        stats=stats,
    )
    metadata = {
        "tool_version": __version__,
        "epsilon": args.epsilon,
        "floor": args.floor,
        "class_subset": sorted(classes) if classes else None,
        "frozen_stats": bool(stats),
    }
    write_records(records, args.output, metadata=metadata)

    applied = stats if stats is not None else log_scale_stats((s for _, s in scales), args.floor)
    stats_path = args.save_stats or f"{args.output}.stats.json"
    _write_stats(stats_path, applied[0], applied[1], args.floor, args.epsilon)
    print(f"computed {len(records)} AUV records -> {args.output} (stats -> {stats_path})")
    return EXIT_OK


def cmd_filter(args) -> int:
    header, records = read_records(args.records)
    strategy = _STRATEGY_ALIASES[args.strategy]
    classes = _parse_classes(args.classes)
    floor = args.floor if args.floor is not None else float(header.get("floor", DEFAULT_FLOOR))
    if strategy.per_class:
        manifest = filter_per_class(
            records, args.quantile, classes=classes, strategy=strategy,
            union=args.union, floor=floor,
        )
    else:
        manifest = filter_global(records, args.quantile, strategy=strategy)
    metadata = {
        "tool_version": __version__,
        "epsilon": header.get("epsilon"),
        "floor": floor,
        "class_subset": sorted(classes) if classes else None,
    }
    write_manifest(manifest, args.output, metadata=metadata)
    retained = len(manifest.retained_ids)
    print(f"retained {retained} / {len(manifest.entries)} (p̃={args.quantile})")
    return EXIT_OK


def cmd_curves(args) -> int:
    paths = dataset_paths(args.input)
    if not paths:
        raise InputError(f"no tensor files in {args.input}")
    sidecar = read_class_sidecar(args.input)
    classes = _parse_classes(args.classes)
    spectra, labels = [], []
    for path in paths:
        volume = load_feature_volume(path, class_ids=sidecar.get(path.stem))
        for cls in classes if classes is not None else volume.class_ids:
            matrix = class_matrix(volume, cls, center=not args.no_center)
            spectra.append(singular_values(matrix))
            labels.append(f"{volume.sample_id}:{cls}")
    export_spectrum_curves(spectra, args.output, labels=labels)
    print(f"wrote {len(spectra)} spectrum curves -> {args.output}")
    return EXIT_OK


def cmd_histogram(args) -> int:
    _, records = read_records(args.records)
    export_histogram([r.auv for r in records], args.bins, args.output)
    print(f"wrote {args.bins}-bin histogram of {len(records)} AUVs -> {args.output}")
    return EXIT_OK


def random_check_batch(seed, sizes):
    """Seeded random batch for gradient checks, clear of clip boundaries."""
    n, c, d, h, w = sizes
    rng = np.random.default_rng(seed)
    probs = rng.uniform(0.05, 0.95, size=(n, c, d, h, w))
    labels = (rng.uniform(size=(n, c, d, h, w)) < 0.5).astype(np.float64)
    head = rng.normal(0.0, 0.7, size=(n, c, d, h, w))
    raw = rng.normal(0.0, 1.0, size=n)
    scales = {k: float(rng.uniform(0.0, 1.0)) for k in range(c)}
    return PredictionBatch(probs=probs, labels=labels, noise_head=head), raw, scales


def _load_batch_dir(directory):
    """Read an exchange batch: probs/labels/noise_head/epsilon_raw NPYs + scales.json."""
    directory = Path(directory)
    arrays = {}
    for name in ("probs", "labels", "noise_head", "epsilon_raw"):
        path = directory / f"{name}.npy"
        if not path.exists():
            raise InputError(f"batch dir is missing {path.name}")
        arr = np.load(path)
        if arr.dtype not in (np.float32, np.float64):
            raise InputError(f"{path.name}: expected float32/float64, got {arr.dtype}")
        arrays[name] = arr.astype(np.float64)
    scales_path = directory / "scales.json"
    if not scales_path.exists():
        raise InputError(f"batch dir is missing {scales_path.name}")
    scales = {int(k): float(v) for k, v in json.loads(scales_path.read_text()).items()}
    batch = PredictionBatch(
        probs=arrays["probs"], labels=arrays["labels"], noise_head=arrays["noise_head"]
    )
    return batch, arrays["epsilon_raw"], scales


def cmd_check_grad(args) -> int:
    if args.batch_dir:
        batch, raw, scales = _load_batch_dir(args.batch_dir)
        result = gradient_check(
            batch, raw, scales,
            alpha=args.alpha, beta=args.beta, step=args.step, tolerance=args.tolerance,
        )
        report = duo_total_loss(
            batch, standardize_noise(raw), scales, alpha=args.alpha, beta=args.beta
        )
        payload = report.to_json_dict()
        payload["gradient_check"] = {
            "max_rel_err": dict(sorted(result.max_rel_err.items())),
            "tolerance": result.tolerance,
            "passed": result.passed,
        }
        out = Path(args.report) if args.report else Path(args.batch_dir) / "loss_report.json"
        out.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
        print(f"loss {report.total!r}; gradient check {'PASS' if result.passed else 'FAIL'} -> {out}")
        return EXIT_OK if result.passed else EXIT_ACCEPT

    sizes = tuple(int(p) for p in args.sizes.split(","))
    if len(sizes) != 5:
        raise ParameterError(f"--sizes needs N,C,D,H,W, got {args.sizes!r}")
    all_ok = True
    for trial in range(args.trials):
        if trial == args.trials - 1:
            # degenerate standardization branch: only N=1 keeps the loss
            # differentiable at the all-equal point (it is constant there)
            batch, raw, scales = random_check_batch([args.seed, trial], (1,) + sizes[1:])
            raw = np.zeros_like(raw)
        else:
            batch, raw, scales = random_check_batch([args.seed, trial], sizes)
        result = gradient_check(
            batch, raw, scales,
            alpha=args.alpha, beta=args.beta, step=args.step, tolerance=args.tolerance,
        )
        status = "PASS" if result.passed else "FAIL"
        all_ok = all_ok and result.passed
        errs = ", ".join(f"{k}={v:.3e}" for k, v in sorted(result.max_rel_err.items()))
        print(f"trial {trial}: {status} ({errs})")
    print(f"gradient check: {'PASS' if all_ok else 'FAIL'} (tolerance {args.tolerance})")
    return EXIT_OK if all_ok else EXIT_ACCEPT


def recovery_report(truth, dropped_ids):
    """Precision/recall of dropped samples against ground-truth noise flags."""
    noisy = {sid for sid, flag in truth.items() if flag}
    dropped = set(dropped_ids)
    tp = len(noisy & dropped)
    precision = tp / len(dropped) if dropped else 0.0
    recall = tp / len(noisy) if noisy else float("nan")
    return {
        "n_noisy": len(noisy),
        "n_dropped": len(dropped),
        "true_positives": tp,
        "precision": precision,
        "recall": recall,
    }


def cmd_demo(args) -> int:
    spec = SynthSpec(
        n_samples=args.n_samples,
        shape=_parse_shape(args.shape),
        clean_rank=args.clean_rank,
        noisy_rank=args.noisy_rank,
        frac_noisy=args.frac_noisy,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    workdir = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="auvkit_demo_"))
    data_dir = workdir / "features"
    truth = make_dataset(spec, data_dir)
    print(f"generated {spec.n_samples} volumes ({sum(truth.values())} noisy) in {data_dir}")

    per_sample = _scan_scales(data_dir, None, args.epsilon, True, args.workers)
    scales = [(sid, sample_scale(cls_scales)) for sid, cls_scales in per_sample.items()]
    records = auv_batch(scales, floor=args.floor, per_class_scales=per_sample)
    write_records(records, workdir / "records.jsonl", metadata={"tool_version": __version__})

    quantile = args.quantile if args.quantile is not None else 1.0 - spec.frac_noisy
    if not 0.0 < quantile <= 1.0:
        raise ParameterError(f"derived quantile {quantile} outside (0, 1]")
    manifest = filter_global(records, quantile)
    write_manifest(manifest, workdir / "manifest.jsonl", metadata={"tool_version": __version__})

    report = recovery_report(truth, manifest.dropped_ids)
    print(
        f"filtered at p̃={quantile}: dropped {report['n_dropped']}, "
        f"noisy recovered {report['true_positives']}/{report['n_noisy']}"
    )
    if report["n_noisy"] == 0:
        print("no ground-truth noisy samples; recall is vacuous -> PASS")
        return EXIT_OK
    print(f"precision={report['precision']:.3f} recall={report['recall']:.3f}")
    ok = report["recall"] >= args.min_recall and report["precision"] >= args.min_precision
    print(f"recovery: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_ACCEPT


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_samples=args.n_samples,
        shape=_parse_shape(args.shape),
        clean_rank=args.clean_rank,
        noisy_rank=args.noisy_rank,
        frac_noisy=args.frac_noisy,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    truth = make_dataset(spec, args.out)
    print(f"wrote {spec.n_samples} volumes ({sum(truth.values())} noisy) to {args.out}")
    return EXIT_OK


def _add_synth_flags(parser, with_out=True):
    defaults = SynthSpec()
    if with_out:
        parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--n-samples", type=int, default=defaults.n_samples)
    parser.add_argument("--shape", default=",".join(map(str, defaults.shape)), help="C,D,H,W")
    parser.add_argument("--clean-rank", type=int, default=defaults.clean_rank)
    parser.add_argument("--noisy-rank", type=int, default=defaults.noisy_rank)
    parser.add_argument("--frac-noisy", type=float, default=defaults.frac_noisy)
    parser.add_argument("--noise-sigma", type=float, default=defaults.noise_sigma)
    parser.add_argument("--seed", type=int, default=defaults.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="auvkit",
        description="Aleatoric uncertainty values from feature-volume singular spectra.",
    )
    parser.add_argument("--version", action="version", version=f"auvkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute-auv", help="compute AUV records over a tensor directory")
    p.add_argument("input", help="directory of NPY feature volumes")
    p.add_argument("--output", required=True, help="records JSONL path")
    p.add_argument("--classes", default=None, help="comma-separated class subset")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--floor", type=float, default=DEFAULT_FLOOR)
    p.add_argument("--stats", default=None, help="reuse frozen log-min/max stats from this file")
    p.add_argument("--save-stats", default=None, help="where to write applied stats (default: <output>.stats.json)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-center", action="store_true", help="skip row-mean centering (raw-spectrum ablation)")
    p.set_defaults(handler=cmd_compute_auv)

    p = sub.add_parser("filter", help="turn AUV records into a retain/drop manifest")
    p.add_argument("records", help="records JSONL from compute-auv")
    p.add_argument("--output", required=True, help="manifest JSONL path")
    p.add_argument("--quantile", type=float, default=0.95)
    p.add_argument(
        "--strategy", default="global_normalized",
        choices=sorted(_STRATEGY_ALIASES), help="a/b/c/d or full strategy name",
    )
    p.add_argument("--classes", default=None, help="class subset for per-class strategies")
    p.add_argument("--union", action="store_true", help="retain if acceptable for ANY class (default: every class)")
    p.add_argument("--floor", type=float, default=None, help="override floor for per-class AUVs")
    p.set_defaults(handler=cmd_filter)

    p = sub.add_parser("curves", help="export singular decay / cumulative energy curves")
    p.add_argument("input", help="directory of NPY feature volumes")
    p.add_argument("--output", required=True, help="CSV path")
    p.add_argument("--classes", default=None)
    p.add_argument("--no-center", action="store_true")
    p.set_defaults(handler=cmd_curves)

    p = sub.add_parser("histogram", help="export an AUV histogram as CSV")
    p.add_argument("records", help="records JSONL from compute-auv")
    p.add_argument("--output", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(handler=cmd_histogram)

    p = sub.add_parser("check-grad", help="verify loss gradients against finite differences")
    p.add_argument("--batch-dir", default=None,
                   help="evaluate a file-based batch (probs/labels/noise_head/epsilon_raw NPYs + scales.json) instead of random trials")
    p.add_argument("--report", default=None, help="report JSON path (default: <batch-dir>/loss_report.json)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default="2,2,4,4,4", help="N,C,D,H,W")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(handler=cmd_check_grad)

    p = sub.add_parser("demo", help="end-to-end synthetic noisy-sample recovery")
    _add_synth_flags(p, with_out=False)
    p.add_argument("--out", default=None, help="work directory (default: fresh temp dir)")
    p.add_argument("--quantile", type=float, default=None, help="default: 1 - frac_noisy")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--floor", type=float, default=DEFAULT_FLOOR)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--min-recall", type=float, default=0.9)
    p.add_argument("--min-precision", type=float, default=0.8)
    p.set_defaults(handler=cmd_demo)

    p = sub.add_parser("synth", help="generate a synthetic tensor dataset")
    _add_synth_flags(p)
    p.set_defaults(handler=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AuvKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
