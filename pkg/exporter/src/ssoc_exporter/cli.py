"""ssoc-export: encode an image dataset into the engine's embedding files."""

from __future__ import annotations

import argparse
import sys

from .datasets import DatasetError
from .encoder import EncoderError
from .export import ExportSpec, run_export


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssoc-export", description=__doc__)
    p.add_argument("--dataset", default="synthetic-shapes",
                   help="synthetic-shapes | folder:PATH | cifar10:PATH")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--label-ratio", type=float, default=0.5)
    p.add_argument("--novel-ratio", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images-per-class", type=int, default=50)
    p.add_argument("--encoder", default="resnet18")
    p.add_argument("--weights", choices=("random", "pretrained"), default="random")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--no-augment", action="store_true",
                   help="emit identical views (encoder-determinism checks)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        dataset=args.dataset,
        encoder=args.encoder,
        weights=args.weights,
        images_per_class=args.images_per_class,
        label_ratio=args.label_ratio,
        novel_ratio=args.novel_ratio,
        seed=args.seed,
        augment=not args.no_augment,
        batch_size=args.batch_size,
    )
    try:
        summary = run_export(spec, args.out)
    except (DatasetError, EncoderError, ValueError) as exc:
        print(f"ssoc-export: {exc}", file=sys.stderr)
        return 1
    print(
        f"wrote d={summary.dim} known={summary.known_classes} "
        f"novel={summary.novel_classes} labeled={summary.labeled_rows} "
        f"unlabeled={summary.unlabeled_rows} -> {args.out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
