import hashlib
import json
import os

import numpy as np
import pytest
from PIL import Image

from somd_extract import DatasetError, ExtractionJob, ValidationError, extract

from conftest import CATEGORY, N_TEST, N_TRAIN, RESIZE, _write_image

MANIFEST_FIELDS = {"backbone", "category", "split", "image_size", "layers"}
LAYER_FIELDS = {"name", "path", "shape"}


def _read_npy_header(path):
    with open(path, "rb") as f:
        version = np.lib.format.read_magic(f)
        assert version == (1, 0)
        shape, fortran, dtype = np.lib.format.read_array_header_1_0(f)
    return shape, fortran, dtype


def _sha256(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def test_output_files_exist(extracted):
    for split in ("train", "test"):
        names = set(os.listdir(extracted[split]))
        assert {"manifest.json", "masks.npy", "masks", "images.json"} <= names
        assert {"layer1.npy", "layer2.npy", "layer3.npy"} <= names


def test_manifest_schema_is_exact(extracted):
    with open(os.path.join(extracted["train"], "manifest.json")) as f:
        doc = json.load(f)
    assert set(doc) == MANIFEST_FIELDS
    assert doc["backbone"] == "resnet18"
    assert doc["category"] == CATEGORY
    assert doc["split"] == "train"
    assert doc["image_size"] == [RESIZE, RESIZE]
    assert [e["name"] for e in doc["layers"]] == ["layer1", "layer2", "layer3"]
    for entry in doc["layers"]:
        assert set(entry) == LAYER_FIELDS


def test_layer_tensors_match_manifest_and_format(extracted):
    with open(os.path.join(extracted["test"], "manifest.json")) as f:
        doc = json.load(f)
    for entry in doc["layers"]:
        path = os.path.join(extracted["test"], entry["path"])
        shape, fortran, dtype = _read_npy_header(path)
        assert list(shape) == entry["shape"]
        assert not fortran
        assert dtype.str == "<f4"
        arr = np.load(path)
        assert arr.shape[0] == N_TEST
        assert np.isfinite(arr).all()
    channels = [e["shape"][1] for e in doc["layers"]]
    assert channels == [64, 128, 256]


def test_reruns_are_bit_identical(make_job, tmp_path):
    a = str(tmp_path / "a")
    b = str(tmp_path / "b")
    extract(make_job("test", a))
    extract(make_job("test", b))
    for name in ("layer1.npy", "layer2.npy", "layer3.npy", "masks.npy"):
        assert _sha256(os.path.join(a, name)) == _sha256(os.path.join(b, name)), name


def test_train_masks_are_all_zeros(extracted):
    masks = np.load(os.path.join(extracted["train"], "masks.npy"))
    assert masks.shape == (N_TRAIN, RESIZE, RESIZE)
    assert masks.dtype == np.float32
    assert not masks.any()


def test_test_masks_are_exact_boxes(extracted):
    masks = np.load(os.path.join(extracted["test"], "masks.npy"))
    assert masks.shape == (N_TEST, RESIZE, RESIZE)
    assert set(np.unique(masks)) <= {0.0, 1.0}
    # order: dent/000, good/000, good/001, scratch/000, scratch/001
    # source boxes scale by 64/40 = 1.6, landing on integer edges
    dent = np.zeros((RESIZE, RESIZE), dtype=np.float32)
    dent[0:16, 32:48] = 1.0
    np.testing.assert_array_equal(masks[0], dent)
    assert not masks[1].any() and not masks[2].any()
    scratch0 = np.zeros((RESIZE, RESIZE), dtype=np.float32)
    scratch0[16:32, 16:32] = 1.0
    np.testing.assert_array_equal(masks[3], scratch0)
    scratch1 = np.zeros((RESIZE, RESIZE), dtype=np.float32)
    scratch1[8:40, 0:64] = 1.0
    np.testing.assert_array_equal(masks[4], scratch1)


def test_per_image_masks_match_stack(extracted):
    stack = np.load(os.path.join(extracted["test"], "masks.npy"))
    mask_dir = os.path.join(extracted["test"], "masks")
    names = sorted(os.listdir(mask_dir))
    assert names == [f"{i:04d}.npy" for i in range(N_TEST)]
    for i, name in enumerate(names):
        np.testing.assert_array_equal(np.load(os.path.join(mask_dir, name)), stack[i])


def test_sidecar_records_order_and_provenance(extracted):
    with open(os.path.join(extracted["test"], "images.json")) as f:
        side = json.load(f)
    assert side["schema_version"] == 1
    assert side["weights"] == "none"
    assert side["normalization"]["mean"] == [0.485, 0.456, 0.406]
    assert side["normalization"]["std"] == [0.229, 0.224, 0.225]
    assert [img["index"] for img in side["images"]] == list(range(N_TEST))
    rels = [img["path"] for img in side["images"]]
    assert rels == sorted(rels)
    labels = {img["path"]: img["label"] for img in side["images"]}
    assert labels["dent/000.png"] == "dent"
    masks = {img["path"]: img["mask"] for img in side["images"]}
    assert masks["good/000.png"] is None
    assert masks["scratch/000.png"] == "ground_truth/scratch/000_mask.png"
    assert side["skipped"] == []


def test_undecodable_image_skipped_and_recorded(tmp_path):
    rng = np.random.default_rng(7)
    good = tmp_path / "cat" / "train" / "good"
    good.mkdir(parents=True)
    for i in range(3):
        _write_image(good / f"{i:03d}.png", rng)
    (good / "001.png").write_bytes(b"definitely not a png")
    job = ExtractionJob(
        root=str(tmp_path), category="cat", split="train", backbone="resnet18",
        weights="none", resize=32, out=str(tmp_path / "out"), batch=2,
    )
    with pytest.warns(UserWarning, match="001.png"):
        result = extract(job)
    assert result.n_images == 2
    assert [s["path"] for s in result.skipped] == ["good/001.png"]
    with open(tmp_path / "out" / "images.json") as f:
        side = json.load(f)
    assert [s["path"] for s in side["skipped"]] == ["good/001.png"]
    assert [img["path"] for img in side["images"]] == ["good/000.png", "good/002.png"]
    with open(tmp_path / "out" / "manifest.json") as f:
        doc = json.load(f)
    assert all(e["shape"][0] == 2 for e in doc["layers"])


def test_all_images_undecodable_is_data_error(tmp_path):
    bad = tmp_path / "cat" / "train" / "good"
    bad.mkdir(parents=True)
    (bad / "000.png").write_bytes(b"nope")
    job = ExtractionJob(
        root=str(tmp_path), category="cat", split="train", backbone="resnet18",
        weights="none", resize=32, out=str(tmp_path / "out"),
    )
    with pytest.warns(UserWarning), pytest.raises(DatasetError):
        extract(job)


def test_missing_defect_mask_warns_and_emits_zeros(tmp_path):
    rng = np.random.default_rng(9)
    hole = tmp_path / "cat" / "test" / "hole"
    hole.mkdir(parents=True)
    _write_image(hole / "000.png", rng)
    job = ExtractionJob(
        root=str(tmp_path), category="cat", split="test", backbone="resnet18",
        weights="none", resize=32, out=str(tmp_path / "out"),
    )
    with pytest.warns(UserWarning, match="mask"):
        result = extract(job)
    assert result.n_images == 1
    masks = np.load(tmp_path / "out" / "masks.npy")
    assert not masks.any()
    with open(tmp_path / "out" / "images.json") as f:
        side = json.load(f)
    assert side["skipped"][0]["path"] == "hole/000.png"


def test_val_fraction_holds_out_tail(make_job, tmp_path):
    out = str(tmp_path / "out")
    result = extract(make_job("train", out, val_fraction=1 / 3))
    assert result.n_images == N_TRAIN - 2
    with open(os.path.join(out, "images.json")) as f:
        side = json.load(f)
    assert side["held_out"] == ["good/004.png", "good/005.png"]
    assert len(side["images"]) == N_TRAIN - 2
    with open(os.path.join(out, "manifest.json")) as f:
        doc = json.load(f)
    assert all(e["shape"][0] == N_TRAIN - 2 for e in doc["layers"])


def test_bad_job_parameters_rejected():
    kw = dict(root="r", category="c", split="train", out="o")
    with pytest.raises(ValidationError):
        ExtractionJob(resize=4, **kw)
    with pytest.raises(ValidationError):
        ExtractionJob(batch=0, **kw)
    with pytest.raises(ValidationError):
        ExtractionJob(val_fraction=1.0, **kw)
    with pytest.raises(ValidationError):
        ExtractionJob(val_fraction=-0.1, **kw)
    with pytest.raises(ValidationError):
        ExtractionJob(root="r", category="c", split="train", out="")


def test_consumer_reads_the_outputs(extracted):
    somd_features = pytest.importorskip("somd.features")
    manifest_path = os.path.join(extracted["train"], "manifest.json")
    manifest = somd_features.load_manifest(manifest_path)
    assert manifest.n == N_TRAIN
    assert manifest.total_features == 64 + 128 + 256
    grid = manifest.layers[0].shape[2:]
    stack = somd_features.concat_multiscale(manifest, grid, manifest_path)
    assert stack.shape == (N_TRAIN, 448, grid[0], grid[1])
    tensor = somd_features.read_tensor(
        os.path.join(extracted["train"], manifest.layers[0].path)
    )
    np.testing.assert_array_equal(
        tensor, np.load(os.path.join(extracted["train"], "layer1.npy"))
    )
    masks = somd_features.read_stack(os.path.join(extracted["train"], "masks.npy"))
    assert masks.shape == (N_TRAIN, RESIZE, RESIZE)
