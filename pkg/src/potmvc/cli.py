"""Command-line interface: dataset generation, training, evaluation of
label files, and the ratio-vs-baseline sweep."""

import argparse
import json
import os
import statistics
import sys

import numpy as np

from .datagen import GenSpec, generate, save_dataset
from .metrics import evaluate
from .pipeline import ExperimentConfig, load_config, run_experiment


def _add_generate(sub):
    p = sub.add_parser("generate", help="write a synthetic dataset directory")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--ratio", type=float, default=0.1,
                   help="smallest/largest class size")
    p.add_argument("--dims", default="12,10,8",
                   help="comma-separated feature width per view")
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def _run_generate(args):
    spec = GenSpec(classes=args.classes, views=args.views,
                   samples=args.samples, ratio=args.ratio,
                   view_dims=tuple(int(d) for d in args.dims.split(",")),
                   separation=args.separation, noise_std=args.noise_std,
                   seed=args.seed)
    ds = generate(spec)
    save_dataset(ds, args.out)
    print(f"wrote {ds.n_views} views x {ds.n_samples} samples to {args.out}")
    return 0


def _add_train(sub):
    p = sub.add_parser("train", help="run the three-stage pipeline")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--dataset", help="dataset directory (overrides config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--ratio", type=float)
    p.add_argument("--balanced-labels", action="store_true",
                   help="replace the partial solver with the balanced "
                        "baseline labeler")
    p.add_argument("--ce-weight", type=float)
    p.add_argument("--keep-align", action="store_true")
    p.add_argument("--stage1-epochs", type=int)
    p.add_argument("--stage2-epochs", type=int)
    p.add_argument("--stage3-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--out", help="report output directory")


def _train_config(args):
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {
        "dataset_path": args.dataset,
        "seed": args.seed,
        "ratio": args.ratio,
        "ce_weight": args.ce_weight,
        "stage1_epochs": args.stage1_epochs,
        "stage2_epochs": args.stage2_epochs,
        "stage3_epochs": args.stage3_epochs,
        "batch_size": args.batch_size,
        "out_dir": args.out,
    }
    values = {k: v for k, v in overrides.items() if v is not None}
    if args.balanced_labels:
        values["balanced_labels"] = True
    if args.keep_align:
        values["keep_align"] = True
    import dataclasses
    return dataclasses.replace(config, **values)


def _run_train(args):
    config = _train_config(args)
    report = run_experiment(config)
    if report.failure is not None:
        print(f"FAILED: {report.failure}", file=sys.stderr)
        return 1
    print(json.dumps(report.metrics, indent=2, sort_keys=True))
    if config.out_dir:
        print(f"report written to {config.out_dir}")
    return 0


def _read_label_file(path):
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(float(line)))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a label: {line!r}")
    if not labels:
        raise ValueError(f"{path}: no labels")
    return np.asarray(labels, dtype=np.int64)


def _add_eval(sub):
    p = sub.add_parser("eval", help="score a prediction file against truth")
    p.add_argument("--pred", required=True, help="one predicted id per line")
    p.add_argument("--truth", required=True, help="one true id per line")


def _run_eval(args):
    pred = _read_label_file(args.pred)
    truth = _read_label_file(args.truth)
    m = evaluate(pred, truth)
    print(json.dumps({"acc": m.acc, "nmi": m.nmi, "purity": m.purity,
                      "group_acc": m.group_acc}, indent=2, sort_keys=True))
    return 0


def _add_sweep(sub):
    p = sub.add_parser(
        "sweep",
        help="imbalance-ratio grid: partial-transport method vs balanced "
             "baseline")
    p.add_argument("--config", help="base key=value config file")
    p.add_argument("--ratios", default="0.1,0.5,0.9")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", help="directory for sweep.csv and reports")


def _run_sweep(args):
    base = load_config(args.config) if args.config else ExperimentConfig()
    ratios = [float(r) for r in args.ratios.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    import dataclasses
    rows = []
    for ratio in ratios:
        for seed in seeds:
            for balanced in (False, True):
                config = dataclasses.replace(
                    base, ratio=ratio, seed=seed, balanced_labels=balanced,
                    out_dir=None)
                report = run_experiment(config)
                label = "baseline" if balanced else "method"
                acc = report.metrics["acc"] if report.metrics else float("nan")
                nmi = report.metrics["nmi"] if report.metrics else float("nan")
                tail = (report.metrics["group_acc"].get("tail", float("nan"))
                        if report.metrics else float("nan"))
                rows.append({"ratio": ratio, "seed": seed, "variant": label,
                             "acc": acc, "nmi": nmi, "tail_acc": tail})
                print(f"ratio={ratio} seed={seed} {label:8s} "
                      f"acc={acc:.3f} nmi={nmi:.3f} tail={tail:.3f}")
    print()
    print(f"{'ratio':>6} {'method acc':>11} {'baseline acc':>13} {'gap':>7}")
    for ratio in ratios:
        med = {}
        for variant in ("method", "baseline"):
            med[variant] = statistics.median(
                r["acc"] for r in rows
                if r["ratio"] == ratio and r["variant"] == variant)
        print(f"{ratio:>6.2f} {med['method']:>11.3f} "
              f"{med['baseline']:>13.3f} "
              f"{med['method'] - med['baseline']:>7.3f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "sweep.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("ratio,seed,variant,acc,nmi,tail_acc\n")
            for r in rows:
                fh.write(f"{r['ratio']:.9g},{r['seed']},{r['variant']},"
                         f"{r['acc']:.9g},{r['nmi']:.9g},"
                         f"{r['tail_acc']:.9g}\n")
        print(f"wrote {path}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="potmvc",
        description="Imbalanced multi-view clustering with partial "
                    "optimal-transport pseudo-labels")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_generate(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_sweep(sub)
    args = parser.parse_args(argv)
    if args.command == "generate":
        return _run_generate(args)
    if args.command == "train":
        return _run_train(args)
    if args.command == "eval":
        return _run_eval(args)
    if args.command == "sweep":
        return _run_sweep(args)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
