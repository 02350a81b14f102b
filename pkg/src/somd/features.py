"""Feature-tensor I/O, multi-scale concatenation and score-map post-processing.

Tensor files are NPY v1.0 containers restricted to little-endian float32 in
C order: features are (n, f, h, w), masks and score maps are (h, w).  The
restriction keeps the on-disk contract bit-exact and trivially writable by
the extractor without importing this package.
"""

from __future__ import annotations

import ast
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    IoError,
    MalformedHeader,
    ShapeMismatch,
    UnsupportedDtype,
    UnsupportedOrder,
    ValidationError,
)

_NPY_MAGIC = b"\x93NUMPY"
_NPY_DTYPE = "<f4"


def _build_npy_header(shape: tuple[int, ...]) -> bytes:
    dict_str = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        _NPY_DTYPE,
        "(" + ", ".join(str(int(s)) for s in shape) + ("," if len(shape) == 1 else "") + ")",
    )
    base = len(_NPY_MAGIC) + 2 + 2  # magic + version + u16 length
    pad = (64 - (base + len(dict_str) + 1) % 64) % 64
    header = dict_str + " " * pad + "\n"
    return _NPY_MAGIC + bytes([1, 0]) + len(header).to_bytes(2, "little") + header.encode("latin1")


def _write_npy(path: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    try:
        with open(path, "wb") as f:
            f.write(_build_npy_header(arr.shape))
            f.write(arr.tobytes(order="C"))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_npy(path: str, ndims: tuple[int, ...]) -> np.ndarray:
    try:
        f = open(path, "rb")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with f:
        magic = f.read(len(_NPY_MAGIC))
        if magic != _NPY_MAGIC:
            raise MalformedHeader(f"{path}: not an NPY file")
        version = f.read(2)
        if version != bytes([1, 0]):
            raise MalformedHeader(f"{path}: unsupported NPY version {tuple(version)}")
        len_bytes = f.read(2)
        if len(len_bytes) != 2:
            raise MalformedHeader(f"{path}: truncated header length")
        header_len = int.from_bytes(len_bytes, "little")
        header = f.read(header_len)
        if len(header) != header_len:
            raise MalformedHeader(f"{path}: truncated header")
        try:
            meta = ast.literal_eval(header.decode("latin1"))
            descr, fortran, shape = meta["descr"], meta["fortran_order"], meta["shape"]
        except Exception as exc:
            raise MalformedHeader(f"{path}: cannot parse NPY header") from exc
        if descr != _NPY_DTYPE:
            raise UnsupportedDtype(f"{path}: dtype {descr!r}, only {_NPY_DTYPE!r} supported")
        if fortran:
            raise UnsupportedOrder(f"{path}: column-major (Fortran) order rejected")
        if not isinstance(shape, tuple) or len(shape) not in ndims:
            raise MalformedHeader(f"{path}: shape {shape} not {ndims}-dimensional")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.fromfile(f, dtype=np.dtype(_NPY_DTYPE), count=count)
        if data.size != count:
            raise MalformedHeader(f"{path}: truncated data ({data.size} of {count} values)")
        arr = data.reshape(shape)
    if not np.isfinite(arr).all():
        raise MalformedHeader(f"{path}: contains non-finite values")
    return arr


def read_tensor(path: str) -> np.ndarray:
    """Read an (n, f, h, w) float32 feature tensor."""
    return _read_npy(path, ndims=(4,))


def write_tensor(path: str, t: np.ndarray) -> None:
    """Write an (n, f, h, w) float32 feature tensor."""
    t = np.asarray(t)
    if t.ndim != 4:
        raise ShapeMismatch(f"feature tensor must be 4-D, got {t.shape}")
    _write_npy(path, t)


def read_map(path: str) -> np.ndarray:
    """Read an (h, w) float32 mask or score map."""
    return _read_npy(path, ndims=(2,))


def write_map(path: str, m: np.ndarray) -> None:
    """Write an (h, w) float32 mask or score map."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeMismatch(f"map must be 2-D, got {m.shape}")
    _write_npy(path, m)


def read_stack(path: str) -> np.ndarray:
    """Read an (n, h, w) float32 stack (stacked masks from the extractor)."""
    return _read_npy(path, ndims=(3,))


@dataclass(frozen=True)
class LayerEntry:
    name: str
    path: str
    shape: tuple[int, int, int, int]


@dataclass(frozen=True)
class LayerManifest:
    """Which per-layer tensors feed the multi-scale concatenation."""

    backbone: str
    category: str
    split: str
    image_size: tuple[int, int]
    layers: tuple[LayerEntry, ...]

    @property
    def n(self) -> int:
        return self.layers[0].shape[0]

    @property
    def total_features(self) -> int:
        return sum(e.shape[1] for e in self.layers)


_MANIFEST_FIELDS = {"backbone", "category", "split", "image_size", "layers"}
_LAYER_FIELDS = {"name", "path", "shape"}


def load_manifest(path: str) -> LayerManifest:
    """Parse and validate a manifest JSON; field set is exact, extras rejected."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as exc:
                raise MalformedHeader(f"{path}: invalid JSON") from exc
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) != _MANIFEST_FIELDS:
        raise MalformedHeader(
            f"{path}: manifest fields must be exactly {sorted(_MANIFEST_FIELDS)}"
        )
    layers = []
    for entry in doc["layers"]:
        if set(entry) != _LAYER_FIELDS:
            raise MalformedHeader(f"{path}: layer fields must be exactly {sorted(_LAYER_FIELDS)}")
        shape = tuple(int(s) for s in entry["shape"])
        if len(shape) != 4:
            raise MalformedHeader(f"{path}: layer shape {shape} is not (n, f, h, w)")
        layers.append(LayerEntry(str(entry["name"]), str(entry["path"]), shape))
    if not layers:
        raise MalformedHeader(f"{path}: manifest lists no layers")
    ns = {e.shape[0] for e in layers}
    if len(ns) != 1:
        raise ShapeMismatch(f"{path}: layers disagree on sample count: {sorted(ns)}")
    h, w = (int(v) for v in doc["image_size"])
    return LayerManifest(
        backbone=str(doc["backbone"]),
        category=str(doc["category"]),
        split=str(doc["split"]),
        image_size=(h, w),
        layers=tuple(layers),
    )


def save_manifest(manifest: LayerManifest, path: str) -> None:
    doc = {
        "backbone": manifest.backbone,
        "category": manifest.category,
        "split": manifest.split,
        "image_size": list(manifest.image_size),
        "layers": [
            {"name": e.name, "path": e.path, "shape": list(e.shape)} for e in manifest.layers
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def resolve_layer_path(manifest_path: str, entry: LayerEntry) -> str:
    """Layer tensor paths are relative to the manifest's directory."""
    if os.path.isabs(entry.path):
        return entry.path
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), entry.path)


def _axis_weights(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Pixel-center convention: src coordinate of output index i is
    # (i + 0.5) * src/dst - 0.5, clamped to the valid range.
    coords = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    coords = np.clip(coords, 0.0, src - 1.0)
    lo = np.floor(coords).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, coords - lo


def interpolate_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of the trailing two axes; preserves constants."""
    if out_h < 1 or out_w < 1:
        raise ValidationError(f"output dims must be >= 1, got {out_h}x{out_w}")
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[-2:]
    y0, y1, wy = _axis_weights(h, out_h)
    x0, x1, wx = _axis_weights(w, out_w)
    rows = arr[..., y0, :] * (1.0 - wy)[:, None] + arr[..., y1, :] * wy[:, None]
    return rows[..., x0] * (1.0 - wx) + rows[..., x1] * wx


def concat_multiscale(
    manifest: LayerManifest,
    target_hw: tuple[int, int],
    manifest_path: str | None = None,
) -> np.ndarray:
    """Stack every layer along the feature axis after resampling to target_hw.

    Tensors are validated against their manifest declarations; total feature
    size is the sum of the per-layer channel counts, in manifest order.
    """
    th, tw = target_hw
    n = manifest.n
    out = np.empty((n, manifest.total_features, th, tw), dtype=np.float32)
    f_at = 0
    for entry in manifest.layers:
        path = resolve_layer_path(manifest_path, entry) if manifest_path else entry.path
        tensor = read_tensor(path)
        if tensor.shape != entry.shape:
            raise ShapeMismatch(
                f"{path}: tensor shape {tensor.shape} != manifest {entry.shape}"
            )
        f_layer = entry.shape[1]
        if tensor.shape[-2:] == (th, tw):
            out[:, f_at:f_at + f_layer] = tensor
        else:
            for i in range(n):  # per sample keeps the float64 working set small
                out[i, f_at:f_at + f_layer] = interpolate_bilinear(tensor[i], th, tw)
        f_at += f_layer
    return out


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps, truncated at radius ceil(4*sigma)."""
    radius = math.ceil(4.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_smooth(map2d: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; sigma 0 is the identity."""
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    out = np.asarray(map2d, dtype=np.float64).copy()
    if sigma == 0:
        return out
    kernel = gaussian_kernel(sigma)
    radius = (kernel.size - 1) // 2
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(out)
        for tap in range(kernel.size):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(tap, tap + out.shape[axis])
            acc += kernel[tap] * padded[tuple(sl)]
        out = acc
    return out


def finalize_scores(raw: np.ndarray, cfg) -> np.ndarray:
    """Upsample raw score map(s) to cfg.output_size, then smooth; that order.

    Accepts one (h, w) map or an (n, h, w) stack.
    """
    out_h, out_w = cfg.output_size
    up = interpolate_bilinear(np.asarray(raw, dtype=np.float64), out_h, out_w)
    if up.ndim == 2:
        return gaussian_smooth(up, cfg.smoothing_sigma)
    return np.stack([gaussian_smooth(m, cfg.smoothing_sigma) for m in up])
