"""Command-line surface: fit, score, evaluate, verify, spectra, bench.

Exit codes: 0 success, 2 flag/validation error, 3 data error (bad files,
mismatched shapes, pairing problems), 4 numerical failure (degenerate
factorizations or failed verification checks).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from time import perf_counter

import numpy as np

from . import bench as bench_mod
from . import embedding as emb
from . import features
from . import gaussian
from . import metrics
from . import verify as verify_mod
from .errors import (
    DataError,
    ModelMismatch,
    NumericalError,
    PairingError,
    ValidationError,
)

SUMMARY_SCHEMA_VERSION = 1


def _parse_hw(text: str, flag: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValidationError(f"{flag} must look like HxW, got {text!r}")
    try:
        h, w = (int(p) for p in parts)
    except ValueError:
        raise ValidationError(f"{flag} must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise ValidationError(f"{flag} dims must be >= 1, got {text!r}")
    return h, w


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ValidationError(f"{flag} must be comma-separated integers") from None
    if not values:
        raise ValidationError(f"{flag} is empty")
    return values


def resolve_threads(flag_value: int | None) -> int:
    """--threads flag, else SOMD_THREADS env, else available parallelism."""
    if flag_value is not None:
        if flag_value < 1:
            raise ValidationError(f"--threads must be >= 1, got {flag_value}")
        return flag_value
    env = os.environ.get("SOMD_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValidationError(f"SOMD_THREADS must be an integer, got {env!r}") from None
        if value < 1:
            raise ValidationError(f"SOMD_THREADS must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def write_pgm(path: str, score_map: np.ndarray) -> None:
    """8-bit grayscale heatmap; scores are clamped to [0, 10] then scaled."""
    level = np.clip(np.asarray(score_map, dtype=np.float64), 0.0, 10.0) / 10.0
    gray = np.rint(level * 255.0).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(gray.tobytes(order="C"))


def _file_digest(path: str) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def _manifest_grid(manifest: features.LayerManifest) -> tuple[int, int]:
    # The first layer carries the finest grid; everything is resampled to it.
    shape = manifest.layers[0].shape
    return shape[2], shape[3]


def cmd_fit(args) -> int:
    threads = resolve_threads(args.threads)
    cfg = gaussian.RunConfig(
        k=args.k,
        seed=args.seed,
        strategy=args.strategy,
        epsilon=args.epsilon,
        smoothing_sigma=args.sigma,
        output_size=_parse_hw(args.output_size, "--output-size"),
    )
    manifest = features.load_manifest(args.manifest)
    gaussian.check_dims(cfg, manifest.total_features)  # fail before tensor I/O
    t0 = perf_counter()
    train = features.concat_multiscale(manifest, _manifest_grid(manifest),
                                       manifest_path=args.manifest)
    model = gaussian.fit(train, cfg, manifest_digest=_file_digest(args.manifest),
                         threads=threads)
    gaussian.save_model(model, args.out)
    wall = perf_counter() - t0
    print(f"fit: F={model.f} k={model.k} strategy={cfg.strategy} "
          f"grid={model.grid_h}x{model.grid_w} n={model.n_train} "
          f"wall={wall:.1f}s -> {args.out}")
    return 0


def cmd_score(args) -> int:
    threads = resolve_threads(args.threads)
    model = gaussian.load_model(args.model)
    manifest = features.load_manifest(args.manifest)
    grid = _manifest_grid(manifest)
    if manifest.total_features != model.f or grid != (model.grid_h, model.grid_w):
        raise ModelMismatch(
            f"manifest provides F={manifest.total_features} grid={grid[0]}x{grid[1]}, "
            f"model expects F={model.f} grid={model.grid_h}x{model.grid_w}"
        )
    tests = features.concat_multiscale(manifest, grid, manifest_path=args.manifest)
    t0 = perf_counter()
    raw = gaussian.score_images(model, tests, threads=threads)
    final = features.finalize_scores(raw, model.config)
    os.makedirs(args.out, exist_ok=True)
    for i in range(final.shape[0]):
        stem = f"{i:04d}"
        features.write_map(os.path.join(args.out, stem + ".npy"), final[i])
        write_pgm(os.path.join(args.out, stem + ".pgm"), final[i])
    wall = perf_counter() - t0
    print(f"score: {final.shape[0]} maps ({final.shape[1]}x{final.shape[2]}) "
          f"wall={wall:.1f}s -> {args.out}")
    return 0


def _load_score_maps(scores_dir: str) -> tuple[list[str], list[np.ndarray]]:
    if not os.path.isdir(scores_dir):
        raise PairingError(f"--scores must be a directory, got {scores_dir}")
    names = sorted(n for n in os.listdir(scores_dir) if n.endswith(".npy"))
    if not names:
        raise PairingError(f"no .npy score maps in {scores_dir}")
    stems = [os.path.splitext(n)[0] for n in names]
    maps = [features.read_map(os.path.join(scores_dir, n)) for n in names]
    return stems, maps


def _load_masks(masks_path: str, stems: list[str]) -> list[np.ndarray]:
    """Masks from a directory (paired by filename stem) or a stacked NPY."""
    if os.path.isdir(masks_path):
        names = sorted(n for n in os.listdir(masks_path) if n.endswith(".npy"))
        mask_stems = [os.path.splitext(n)[0] for n in names]
        if mask_stems != stems:
            missing = sorted(set(stems) - set(mask_stems))
            extra = sorted(set(mask_stems) - set(stems))
            raise PairingError(
                f"score/mask filename sets differ (missing masks: {missing[:5]}, "
                f"unmatched masks: {extra[:5]})"
            )
        return [features.read_map(os.path.join(masks_path, n)) for n in names]
    stack = features.read_stack(masks_path)
    if stack.shape[0] != len(stems):
        raise PairingError(
            f"{stack.shape[0]} stacked masks for {len(stems)} score maps"
        )
    return [stack[i] for i in range(stack.shape[0])]


def cmd_evaluate(args) -> int:
    stems, score_maps = _load_score_maps(args.scores)
    masks = _load_masks(args.masks, stems)
    result = metrics.evaluate(score_maps, masks, fpr_limit=args.fpr_limit,
                              thresholds=args.thresholds)
    out_dir = args.out or args.scores
    os.makedirs(out_dir, exist_ok=True)
    curve_path = os.path.join(out_dir, "curves.csv")
    metrics.write_curve_csv(result, curve_path)
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "pro": result.pro,
        "roc_auc": result.roc_auc,
        "fpr_limit": args.fpr_limit,
        "thresholds": args.thresholds,
        "n_images": len(stems),
        "curve_csv": os.path.basename(curve_path),
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"PRO      {result.pro:.6f}")
    print(f"ROC-AUC  {result.roc_auc:.6f}")
    return 0


def cmd_verify(args) -> int:
    reports = verify_mod.run_suite(args.suite, args.seed)
    for report in reports:
        print(verify_mod.format_report(report))
    if args.json:
        verify_mod.reports_to_json(reports, args.json)
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print(f"verify: {len(failed)}/{len(reports)} checks FAILED "
              f"({', '.join(failed)})", file=sys.stderr)
        return 4
    print(f"verify: all {len(reports)} checks passed")
    return 0


def cmd_spectra(args) -> int:
    summary = verify_mod.spectra_experiment(args.f, args.l, args.k, args.n,
                                            args.seeds, args.out)
    for strategy, info in summary.items():
        print(f"{strategy}: full-rank fraction {info['full_rank_fraction']:.2f} "
              f"over {args.seeds} seeds")
    print(f"spectra -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    f_list = _parse_int_list(args.f_list, "--f-list")
    k_list = _parse_int_list(args.k_list, "--k-list")
    h, w = _parse_hw(args.grid, "--grid")
    records = bench_mod.run_bench(f_list, k_list, h, w, reps=args.reps,
                                  seed=args.seed)
    for r in records:
        print(f"f={r.f} k={r.k} grid={r.h}x{r.w} "
              f"fit={r.fit_ms:.1f}ms score={r.score_ms:.1f}ms")
        print(f"  spread over {args.reps} reps: fit {r.fit_ms_spread:.1f}ms "
              f"score {r.score_ms_spread:.1f}ms", file=sys.stderr)
    if args.out:
        bench_mod.write_bench_csv(records, args.out)
        print(f"bench -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="somd",
        description="Per-location Gaussian anomaly segmentation with "
                    "semi-orthogonal low-rank Mahalanobis scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit per-location Gaussians from a feature manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--strategy", default=emb.STRATEGY_SEMI_ORTHOGONAL,
                   choices=emb.STRATEGIES)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=4.0,
                   help="post-upsampling Gaussian smoothing sigma")
    p.add_argument("--output-size", default="256x256")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="score a test manifest against a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="directory for score maps and heatmaps")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="PRO / ROC-AUC of score maps against masks")
    p.add_argument("--scores", required=True, help="directory of score .npy maps")
    p.add_argument("--masks", required=True,
                   help="directory of mask .npy maps or one stacked .npy file")
    p.add_argument("--fpr-limit", type=float, default=metrics.FPR_LIMIT)
    p.add_argument("--thresholds", type=int, default=metrics.THRESHOLD_COUNT)
    p.add_argument("--out", default=None,
                   help="directory for curves.csv and summary.json (default: --scores)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="run the numerical certification suite")
    p.add_argument("--suite", default="all",
                   choices=("all",) + verify_mod.SUITE_NAMES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", default=None, help="write machine-readable reports here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("spectra", help="embedded-spectrum rank-collapse experiment")
    p.add_argument("--f", type=int, required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seeds", type=int, required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_spectra)

    p = sub.add_parser("bench", help="time the batched factorization stages")
    p.add_argument("--f-list", required=True, help="comma-separated feature sizes")
    p.add_argument("--k-list", required=True, help="comma-separated embedding sizes")
    p.add_argument("--grid", default="64x64")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV path")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"somd: validation error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"somd: data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"somd: numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
