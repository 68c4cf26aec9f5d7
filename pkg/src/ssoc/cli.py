"""Command-line interface.

Subcommands: gen-synth, split, train, eval, grad-check, sweep. Exit
status 0 on success, 1 on numerical failure (NaN or a failed gradient
check), 2 on usage errors. SSOC_THREADS caps internal (BLAS) parallelism
and defaults to 1 so runs are bit-reproducible by default.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataio
from .attention import load_model_checkpoint, save_model_checkpoint
from .classifier import infer, inference_confidences, write_predictions
from .errors import NumericalError, SsocError
from .eval import evaluate, write_eval_csv
from .gradcheck import run_check
from .trainer import (
    METRICS_HEADER,
    TrainConfig,
    align_novel_pseudo_labels,
    apply_overrides,
    train,
)

TAU1_GRID = (0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_WEIGHT_GRID = "1,0.5,1,1;2,1,1,2"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssoc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic Gaussian-mixture pool")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--separation", type=float, default=8.0)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("split", help="carve a labeled pool into an open-world dataset")
    p.add_argument("--data", required=True, help="embedding file of the full pool")
    p.add_argument("--labels", help="label sidecar (default: data path with .lab)")
    p.add_argument("--label-ratio", type=float, required=True)
    p.add_argument("--novel-ratio", type=float, required=True)
    p.add_argument("--shuffle-classes", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train on a labeled/unlabeled embedding dataset")
    _add_data_flags(p)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", required=True, help="output directory for checkpoints and metrics")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--novel", type=int, help="novel class count (overrides config novel_classes)")
    p.add_argument("--resume", help="model checkpoint to resume from")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field")

    p = sub.add_parser("eval", help="evaluate a checkpoint against ground-truth labels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="embedding file to classify")
    p.add_argument("--sidecar", required=True, help="ground-truth label sidecar")
    p.add_argument("--out", help="write the report as a CSV row here")
    p.add_argument("--dump", help="write per-sample predictions here")

    p = sub.add_parser("grad-check", help="finite-difference check of the backward chain")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)

    p = sub.add_parser("sweep", help="threshold or loss-weight sweep, one metrics CSV per cell")
    _add_data_flags(p)
    p.add_argument("--sidecar", required=True, help="ground-truth sidecar for offline audits")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--novel", type=int)
    p.add_argument("--kind", choices=("tau1", "weights"), default="tau1")
    p.add_argument("--grid", help="weights grid 'a,b,g,d;a,b,g,d;...'",
                   default=DEFAULT_WEIGHT_GRID)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    return parser


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--labeled", required=True, help="labeled embedding file")
    p.add_argument("--unlabeled", required=True, help="unlabeled embedding file")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = int(os.environ.get("SSOC_THREADS", "1"))
        if threads < 1:
            raise ValueError
    except ValueError:
        print("ssoc: SSOC_THREADS must be a positive integer", file=sys.stderr)
        return 2

    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=threads):
            return _dispatch(args)
    except NumericalError as exc:
        print(f"ssoc: numerical failure: {exc}", file=sys.stderr)
        return 1
    except (SsocError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"ssoc: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    return {
        "gen-synth": cmd_gen_synth,
        "split": cmd_split,
        "train": cmd_train,
        "eval": cmd_eval,
        "grad-check": cmd_grad_check,
        "sweep": cmd_sweep,
    }[args.command](args)


def cmd_gen_synth(args) -> int:
    spec = dataio.MixtureSpec(
        class_count=args.classes,
        dim=args.dim,
        samples_per_class=args.per_class,
        center_separation=args.separation,
        within_class_std=args.std,
        seed=args.seed,
    )
    points, labels = dataio.generate_mixture(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_embedding_file(out / "mixture.emb", points)
    dataio.write_label_file(out / "mixture.lab", labels)
    print(f"wrote {points.shape[0]} rows (d={points.shape[1]}) to {out/'mixture.emb'}")
    return 0


def cmd_split(args) -> int:
    data_path = Path(args.data)
    labels_path = Path(args.labels) if args.labels else dataio.labels_path_for(data_path)
    points, _ = dataio.read_embedding_file(data_path)
    labels = dataio.read_label_file(labels_path)
    if labels.shape[0] != points.shape[0]:
        raise dataio.FormatError(
            f"label count {labels.shape[0]} does not match row count {points.shape[0]}"
        )
    split = dataio.SplitSpec(
        label_ratio=args.label_ratio,
        novel_ratio=args.novel_ratio,
        seed=args.seed,
        shuffle_classes=args.shuffle_classes,
    )
    ds = dataio.split_open_world(points, labels, split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_dataset(ds, out / "labeled.emb", out / "unlabeled.emb", out / "truth.lab")
    print(
        f"known={ds.known_class_count} novel={ds.novel_class_count} "
        f"labeled={ds.labeled_count} unlabeled={ds.unlabeled_count} -> {out}"
    )
    return 0


def _load_config(args) -> TrainConfig:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise SsocError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.epochs is not None:
        overrides["epochs"] = str(args.epochs)
    if getattr(args, "novel", None) is not None:
        overrides["novel_classes"] = str(args.novel)
    return apply_overrides(config, overrides)


def _load_train_dataset(args, config: TrainConfig, truth_path=None):
    if truth_path is None and config.novel_classes is None:
        raise SsocError(
            "novel class count unknown: pass --novel or set novel_classes in the config"
        )
    return dataio.read_dataset(
        Path(args.labeled),
        Path(args.unlabeled),
        truth_path=truth_path,
        novel_class_count=config.novel_classes,
    )


def cmd_train(args) -> int:
    config = _load_config(args).validate()
    dataset = _load_train_dataset(args, config)  # the truth sidecar is never opened here
    out = Path(args.out)
    result = train(dataset, config, out_dir=out, resume=args.resume)
    last = result.reports[-1] if result.reports else None
    if last is not None:
        print(
            f"epoch {last.epoch}: total={last.breakdown.total:.5f} "
            f"ce_l={last.breakdown.ce_labeled:.5f} ce_u={last.breakdown.ce_pseudo:.5f} "
            f"bce={last.breakdown.bce_pair:.5f} re={last.breakdown.entropy_reg:.5f}"
        )
    print(f"checkpoints and metrics under {out}")
    return 0


def cmd_eval(args) -> int:
    sidecar = Path(args.sidecar)
    if not sidecar.exists():
        raise SsocError(f"ground-truth sidecar not found: {sidecar}")
    params, centers, known, novel = load_model_checkpoint(Path(args.checkpoint))
    z1, _ = dataio.read_embedding_file(Path(args.data))
    truth = dataio.read_label_file(sidecar)
    if truth.shape[0] != z1.shape[0]:
        raise SsocError(
            f"sidecar holds {truth.shape[0]} labels for {z1.shape[0]} rows"
        )
    if truth.size and truth.min() < 0:
        raise SsocError("ground-truth sidecar contains -1 entries; evaluation needs labels")
    predictions = infer(z1, centers)
    report = evaluate(predictions, truth, known)
    print(report.summary())
    if args.out:
        write_eval_csv(Path(args.out), report)
    if args.dump:
        write_predictions(Path(args.dump), predictions, inference_confidences(z1, centers))
    _ = (params, novel)
    return 0


def cmd_grad_check(args) -> int:
    report = run_check(n_instances=args.instances, seed=args.seed, step=args.step)
    print(
        f"grad-check: {args.instances} instances, max relative error "
        f"{report.max_rel_error:.3e} ({report.elapsed_seconds:.1f}s)"
    )
    if not report.passed(args.tol):
        print(f"grad-check: FAILED tolerance {args.tol:.1e}", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    dataset = _load_train_dataset(args, config, truth_path=Path(args.sidecar))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.kind == "tau1":
        cells = [(f"tau1_{tau:.1f}", replace(config, tau1=tau)) for tau in TAU1_GRID]
    else:
        cells = []
        for quad in args.grid.split(";"):
            a, b, g, d = (float(x) for x in quad.split(","))
            cells.append(
                (f"w_a{a:g}_b{b:g}_g{g:g}_d{d:g}",
                 replace(config, alpha=a, beta=b, gamma=g, delta=d))
            )

    summary_rows = []
    for name, cfg in cells:
        cfg.validate()
        cell_dir = out / name
        cell_dir.mkdir(parents=True, exist_ok=True)
        audits = {}

        def hook(epoch, rows, pseudo, selected, _audits=audits):
            truth = dataset.ground_truth[rows]
            mapped = align_novel_pseudo_labels(pseudo, truth, dataset.known_class_count)
            novel_sel = selected & (truth >= dataset.known_class_count)
            acc = float((mapped[novel_sel] == truth[novel_sel]).mean()) if novel_sel.any() else float("nan")
            _audits[epoch] = (int(selected.sum()), acc)

        result = train(dataset, cfg, out_dir=None, epoch_hook=hook)
        _write_cell_csv(cell_dir / "metrics.csv", result, audits)
        save_model_checkpoint(
            cell_dir / "final.ckpt", result.params, result.centers,
            dataset.known_class_count, dataset.novel_class_count,
        )
        predictions = infer(dataset.unlabeled_z1, result.centers)
        report = evaluate(predictions, dataset.ground_truth, dataset.known_class_count)
        summary_rows.append(f"{name},{report.csv_row()}")
        print(f"{name}: {report.summary()}")

    with open(out / "summary.csv", "w", encoding="utf-8") as fh:
        fh.write("cell,seen_acc,novel_acc,all_acc,novel_nmi\n")
        for row in summary_rows:
            fh.write(row + "\n")
    return 0


def _write_cell_csv(path: Path, result, audits: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        for rep in result.reports:
            selected, acc = audits.get(rep.epoch, (rep.selected_pseudo, float("nan")))
            b = rep.breakdown
            fields = [
                str(rep.epoch),
                format(b.total, ".17g"), format(b.ce_labeled, ".17g"),
                format(b.ce_pseudo, ".17g"), format(b.bce_pair, ".17g"),
                format(b.entropy_reg, ".17g"), format(rep.lr_attention, ".17g"),
                str(selected),
                "nan" if np.isnan(acc) else format(acc, ".17g"),
            ]
            fh.write(",".join(fields) + "\n")


if __name__ == "__main__":
    sys.exit(main())
