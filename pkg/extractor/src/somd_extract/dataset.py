"""Walk an anomaly-detection dataset tree and pair images with masks.

Expected layout (one directory per category):

    root/<category>/train/good/*.png
    root/<category>/test/<defect_type>/*.png        ("good" has no defects)
    root/<category>/ground_truth/<defect_type>/<stem>_mask.png

Ordering is lexicographic over "<class>/<filename>" so that two walks of the
same tree always enumerate images identically; downstream score maps are
paired with masks purely by position.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import DatasetError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
GOOD_CLASS = "good"
SPLITS = ("train", "test")


@dataclass(frozen=True)
class ImageRecord:
    """One image of a split: absolute path, split-relative path, class, mask."""

    path: str
    rel: str
    label: str
    mask_path: str | None


def _is_image(name: str) -> bool:
    return name.lower().endswith(IMAGE_EXTENSIONS)


def _find_mask(gt_dir: str, label: str, stem: str) -> str | None:
    for candidate in (stem + "_mask.png", stem + ".png"):
        p = os.path.join(gt_dir, label, candidate)
        if os.path.isfile(p):
            return p
    return None


def walk_split(root: str, category: str, split: str) -> list[ImageRecord]:
    """Enumerate one split of one category in deterministic order."""
    if split not in SPLITS:
        raise DatasetError(f"split must be one of {SPLITS}, got {split!r}")
    split_dir = os.path.join(root, category, split)
    if not os.path.isdir(split_dir):
        raise DatasetError(f"no such split directory: {split_dir}")
    gt_dir = os.path.join(root, category, "ground_truth")

    records = []
    for label in sorted(os.listdir(split_dir)):
        class_dir = os.path.join(split_dir, label)
        if not os.path.isdir(class_dir):
            continue
        for name in sorted(os.listdir(class_dir)):
            if not _is_image(name):
                continue
            mask = None
            if split == "test" and label != GOOD_CLASS:
                mask = _find_mask(gt_dir, label, os.path.splitext(name)[0])
            records.append(
                ImageRecord(
                    path=os.path.join(class_dir, name),
                    rel=f"{label}/{name}",
                    label=label,
                    mask_path=mask,
                )
            )
    if not records:
        raise DatasetError(f"no images under {split_dir}")
    return records
