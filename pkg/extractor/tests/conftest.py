"""Shared fixtures: a tiny synthetic dataset tree and one cached extraction.

Images are seeded uint8 noise; mask rectangles are placed on integer-scaled
edges (40 -> 64 is a factor of 1.6) so their nearest-neighbor resizes are
exact boxes and tests can assert pixel counts without replicating any
resampling convention.
"""

import os

import numpy as np
import pytest
from PIL import Image

from somd_extract import ExtractionJob, extract

CATEGORY = "widget"
SRC_SIDE = 40
RESIZE = 64

# (label, n_images, mask boxes in source coordinates or None)
TEST_CLASSES = [
    ("dent", 1, [((0, 10), (20, 30))]),
    ("good", 2, None),
    ("scratch", 2, [((10, 20), (10, 20)), ((5, 25), (0, 40))]),
]
N_TRAIN = 6
N_TEST = 5


def _write_image(path, rng, size=(SRC_SIDE, SRC_SIDE)):
    arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
    Image.fromarray(arr).save(path)


def _write_mask(path, box):
    (r0, r1), (c0, c1) = box
    m = np.zeros((SRC_SIDE, SRC_SIDE), dtype=np.uint8)
    m[r0:r1, c0:c1] = 255
    Image.fromarray(m).save(path)


@pytest.fixture(scope="session")
def tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset")
    rng = np.random.default_rng(42)
    cat = root / CATEGORY

    train_good = cat / "train" / "good"
    train_good.mkdir(parents=True)
    for i in range(N_TRAIN):
        _write_image(train_good / f"{i:03d}.png", rng)
    (train_good / "readme.txt").write_text("not an image\n")

    for label, count, boxes in TEST_CLASSES:
        d = cat / "test" / label
        d.mkdir(parents=True)
        size = (56, 48) if label == "good" else (SRC_SIDE, SRC_SIDE)
        for i in range(count):
            _write_image(d / f"{i:03d}.png", rng, size=size)
        if boxes is not None:
            gt = cat / "ground_truth" / label
            gt.mkdir(parents=True)
            for i, box in enumerate(boxes):
                suffix = "_mask.png" if label == "scratch" else ".png"
                _write_mask(gt / f"{i:03d}{suffix}", box)
    (cat / "test" / "notes.txt").write_text("stray file\n")
    return str(root)


def _job(tree_root, split, out, **kw):
    defaults = dict(
        root=tree_root,
        category=CATEGORY,
        split=split,
        backbone="resnet18",
        weights="none",
        seed=0,
        resize=RESIZE,
        out=out,
        batch=3,
    )
    defaults.update(kw)
    return ExtractionJob(**defaults)


@pytest.fixture(scope="session")
def extracted(tree, tmp_path_factory):
    base = tmp_path_factory.mktemp("extracted")
    dirs = {}
    for split in ("train", "test"):
        out = str(base / split)
        extract(_job(tree, split, out))
        dirs[split] = out
    return dirs


@pytest.fixture(scope="session")
def make_job(tree):
    def factory(split, out, **kw):
        return _job(tree, split, out, **kw)

    return factory
