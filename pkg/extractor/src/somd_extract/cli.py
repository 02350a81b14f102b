"""Command line entry point: dump features and masks for one dataset split."""

from __future__ import annotations

import argparse
import sys

from . import backbones
from .dataset import SPLITS
from .errors import DataError, ValidationError
from .extract import ExtractionJob, extract

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="somd-extract",
        description="Dump multi-scale CNN feature maps and ground-truth masks "
        "for one category split as NPY tensors plus a JSON manifest.",
    )
    p.add_argument("--root", required=True, help="dataset root directory")
    p.add_argument("--category", required=True)
    p.add_argument("--split", required=True, choices=SPLITS)
    p.add_argument("--backbone", default="resnet18", choices=backbones.BACKBONES)
    p.add_argument(
        "--layers",
        default=None,
        help="comma-separated submodule names; default taps the 1/4, 1/8 and "
        "1/16 scale stage outputs",
    )
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resize", type=int, default=256, help="square resize target")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument(
        "--weights",
        default=backbones.WEIGHTS_PRETRAINED,
        choices=backbones.WEIGHT_MODES,
        help="'none' uses a seeded random init (pipeline testing only)",
    )
    p.add_argument("--seed", type=int, default=0, help="init seed for --weights none")
    p.add_argument(
        "--val-fraction",
        type=float,
        default=0.0,
        help="hold out this tail fraction of the train split",
    )
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    layers = None
    if args.layers is not None:
        layers = tuple(s.strip() for s in args.layers.split(",") if s.strip())
        if not layers:
            print("error: --layers given but empty", file=sys.stderr)
            return EXIT_VALIDATION
    try:
        job = ExtractionJob(
            root=args.root,
            category=args.category,
            split=args.split,
            backbone=args.backbone,
            layers=layers,
            resize=args.resize,
            out=args.out,
            batch=args.batch,
            weights=args.weights,
            seed=args.seed,
            val_fraction=args.val_fraction,
        )
        result = extract(job)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    shapes = ", ".join(
        f"{name} {tuple(shape)}" for name, shape in result.layer_shapes.items()
    )
    print(
        f"wrote {result.n_images} images ({shapes}) to {result.out}; "
        f"{len(result.skipped)} skipped"
    )
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
