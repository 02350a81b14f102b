"""Run a backbone over one dataset split and dump the consumer's file formats.

Per split this writes, into the output directory:

    <layer>.npy      float32 (n, f_layer, h_layer, w_layer), one per layer
    manifest.json    exact five-field schema the consumer's loader enforces
    masks.npy        float32 (n, s, s) binary stack, all zeros for train
    masks/<i>.npy    the same masks as per-image files, 0000.npy, 0001.npy, ...
    images.json      sidecar: image order, labels, mask sources, skips,
                     normalization constants (the manifest schema is exact,
                     so provenance lives here)

Mask filenames use the same zero-padded stems the consumer's scorer emits, so
score maps and masks pair by construction.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import backbones
from .dataset import ImageRecord, walk_split
from .errors import DatasetError, IoError, UndecodableImage, ValidationError

SIDECAR_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExtractionJob:
    root: str
    category: str
    split: str
    backbone: str = "resnet18"
    layers: tuple[str, ...] | None = None
    resize: int = 256
    out: str = ""
    batch: int = 8
    weights: str = backbones.WEIGHTS_PRETRAINED
    seed: int = 0
    val_fraction: float = 0.0

    def __post_init__(self):
        if self.resize < 8:
            raise ValidationError(f"resize target must be >= 8, got {self.resize}")
        if self.batch < 1:
            raise ValidationError(f"batch size must be >= 1, got {self.batch}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError(
                f"val fraction must be in [0, 1), got {self.val_fraction}"
            )
        if not self.out:
            raise ValidationError("output directory is required")


@dataclass
class ExtractionResult:
    out: str
    manifest_path: str
    n_images: int
    layer_shapes: dict[str, tuple[int, ...]] = field(default_factory=dict)
    skipped: list[dict] = field(default_factory=list)


def load_image(path: str, size: int) -> np.ndarray:
    """Decode, resize (bilinear, no crop), normalize; returns (3, s, s)."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB").resize((size, size), Image.Resampling.BILINEAR)
            arr = np.asarray(im, dtype=np.float32)
    except (OSError, SyntaxError, ValueError) as exc:
        raise UndecodableImage(f"{path}: {exc}") from exc
    arr /= 255.0
    arr -= np.asarray(backbones.NORMALIZE_MEAN, dtype=np.float32)
    arr /= np.asarray(backbones.NORMALIZE_STD, dtype=np.float32)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_mask(path: str, size: int) -> np.ndarray:
    """Decode a ground-truth mask, nearest-neighbor resize, binarize."""
    try:
        with Image.open(path) as im:
            im = im.convert("L").resize((size, size), Image.Resampling.NEAREST)
            arr = np.asarray(im)
    except (OSError, SyntaxError, ValueError) as exc:
        raise UndecodableImage(f"{path}: {exc}") from exc
    return (arr > 0).astype(np.float32)


def _hold_out_tail(records: list[ImageRecord], fraction: float) -> tuple[list, list]:
    """Reserve the lexicographic tail of the train split for validation."""
    n_val = int(round(fraction * len(records)))
    if n_val == 0:
        return records, []
    return records[:-n_val], records[-n_val:]


def _save_npy(path: str, arr: np.ndarray) -> None:
    try:
        np.save(path, np.ascontiguousarray(arr, dtype=np.float32))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def extract(job: ExtractionJob) -> ExtractionResult:
    records = walk_split(job.root, job.category, job.split)
    held_out: list[ImageRecord] = []
    if job.split == "train" and job.val_fraction > 0:
        records, held_out = _hold_out_tail(records, job.val_fraction)
        if not records:
            raise DatasetError("val fraction leaves no training images")

    model = backbones.build_backbone(job.backbone, job.weights, job.seed)
    layer_names = backbones.resolve_layers(model, job.backbone, job.layers)

    images = []
    kept: list[ImageRecord] = []
    skipped: list[dict] = []
    for rec in records:
        try:
            images.append(load_image(rec.path, job.resize))
        except UndecodableImage as exc:
            warnings.warn(f"skipping undecodable image {rec.rel}: {exc}")
            skipped.append({"path": rec.rel, "reason": str(exc)})
            continue
        kept.append(rec)
    if not kept:
        raise DatasetError("every image in the split failed to decode")

    maps = backbones.extract_layer_maps(
        model, layer_names, np.stack(images), job.batch
    )

    masks = np.zeros((len(kept), job.resize, job.resize), dtype=np.float32)
    if job.split == "test":
        for i, rec in enumerate(kept):
            if rec.mask_path is not None:
                masks[i] = load_mask(rec.mask_path, job.resize)
            elif rec.label != "good":
                warnings.warn(f"no ground-truth mask for {rec.rel}; emitting zeros")
                skipped.append({"path": rec.rel, "reason": "mask missing, zeros emitted"})

    os.makedirs(job.out, exist_ok=True)
    result = ExtractionResult(
        out=job.out,
        manifest_path=os.path.join(job.out, "manifest.json"),
        n_images=len(kept),
        skipped=skipped,
    )
    manifest_layers = []
    for name in layer_names:
        arr = maps[name]
        fname = name + ".npy"
        _save_npy(os.path.join(job.out, fname), arr)
        manifest_layers.append(
            {"name": name, "path": fname, "shape": [int(s) for s in arr.shape]}
        )
        result.layer_shapes[name] = arr.shape

    # exact field set; the consumer rejects manifests with extra keys
    manifest = {
        "backbone": job.backbone,
        "category": job.category,
        "split": job.split,
        "image_size": [job.resize, job.resize],
        "layers": manifest_layers,
    }
    _write_json(result.manifest_path, manifest)

    _save_npy(os.path.join(job.out, "masks.npy"), masks)
    mask_dir = os.path.join(job.out, "masks")
    os.makedirs(mask_dir, exist_ok=True)
    for i in range(len(kept)):
        _save_npy(os.path.join(mask_dir, f"{i:04d}.npy"), masks[i])

    sidecar = {
        "schema_version": SIDECAR_SCHEMA_VERSION,
        "backbone": job.backbone,
        "weights": job.weights,
        "seed": job.seed,
        "normalization": {
            "mean": list(backbones.NORMALIZE_MEAN),
            "std": list(backbones.NORMALIZE_STD),
        },
        "resize": job.resize,
        "layers": list(layer_names),
        "images": [
            {
                "index": i,
                "path": rec.rel,
                "label": rec.label,
                "mask": os.path.relpath(rec.mask_path, os.path.join(job.root, job.category))
                if rec.mask_path
                else None,
            }
            for i, rec in enumerate(kept)
        ],
        "skipped": skipped,
        "held_out": [rec.rel for rec in held_out],
    }
    _write_json(os.path.join(job.out, "images.json"), sidecar)
    return result


def _write_json(path: str, doc: dict) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
