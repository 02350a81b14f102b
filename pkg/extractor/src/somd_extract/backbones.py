"""Pretrained backbones and the layer hooks that tap their stage outputs.

Layer names are submodule paths as reported by named_modules(), for example
"layer2" on the ResNet family or "features.8" on MobileNetV3. Defaults follow
the convention of tapping the 1/4, 1/8 and 1/16 resolution stages: literal
layer1/2/3 for ResNets, and for MobileNets the last block at each of those
scales, found by probing a dummy forward pass (block indices differ between
the small and large variants).
"""

from __future__ import annotations

import numpy as np
import torch
from torchvision.models import get_model

from .errors import MissingWeights, ValidationError

BACKBONES = ("resnet18", "wide_resnet50_2", "mobilenet_v3_small", "mobilenet_v3_large")
RESNET_LAYERS = ("layer1", "layer2", "layer3")

# per-channel constants of the backbones' original training recipe
NORMALIZE_MEAN = (0.485, 0.456, 0.406)
NORMALIZE_STD = (0.229, 0.224, 0.225)

WEIGHTS_PRETRAINED = "pretrained"
WEIGHTS_NONE = "none"
WEIGHT_MODES = (WEIGHTS_PRETRAINED, WEIGHTS_NONE)


def build_backbone(name: str, weights: str = WEIGHTS_PRETRAINED, seed: int = 0):
    """Construct an eval-mode backbone on CPU.

    weights="none" draws a seeded random initialization instead, which keeps
    extraction runs bit-reproducible without any weight files; useful for
    pipeline tests, useless for detection quality.
    """
    if name not in BACKBONES:
        raise ValidationError(f"unknown backbone {name!r}, choose from {BACKBONES}")
    if weights not in WEIGHT_MODES:
        raise ValidationError(f"weights must be one of {WEIGHT_MODES}, got {weights!r}")
    if weights == WEIGHTS_NONE:
        torch.manual_seed(seed)
        model = get_model(name, weights=None)
    else:
        try:
            model = get_model(name, weights="DEFAULT")
        except (OSError, RuntimeError, ValueError) as exc:
            raise MissingWeights(
                f"pretrained weights for {name} are not cached and cannot be "
                f"downloaded: {exc}"
            ) from exc
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def resolve_layers(model, name: str, layers: tuple[str, ...] | None) -> tuple[str, ...]:
    """Validate requested layer names, or pick the stage-output defaults."""
    if layers is None:
        layers = RESNET_LAYERS if "resnet" in name else _probe_scale_stages(model)
    for layer in layers:
        try:
            model.get_submodule(layer)
        except AttributeError as exc:
            raise ValidationError(f"backbone {name} has no submodule {layer!r}") from exc
    return tuple(layers)


def _probe_scale_stages(model) -> tuple[str, ...]:
    """Last feature block at each of the 1/4, 1/8, 1/16 input scales."""
    if not hasattr(model, "features"):
        raise ValidationError("cannot infer default layers: model has no 'features'")
    side = 64
    heights = {}
    hooks = []

    def tap(idx):
        def hook(_mod, _inp, out):
            heights[idx] = int(out.shape[-2])

        return hook

    for idx, mod in enumerate(model.features):
        hooks.append(mod.register_forward_hook(tap(idx)))
    try:
        with torch.no_grad():
            model(torch.zeros(1, 3, side, side))
    finally:
        for h in hooks:
            h.remove()
    picks = []
    for scale in (4, 8, 16):
        want = side // scale
        at_scale = [idx for idx, h in heights.items() if h == want]
        if not at_scale:
            raise ValidationError(f"no feature block at 1/{scale} scale; pass --layers")
        picks.append(f"features.{max(at_scale)}")
    return tuple(picks)


def extract_layer_maps(
    model, layer_names: tuple[str, ...], images: np.ndarray, batch: int
) -> dict[str, np.ndarray]:
    """Forward (n, 3, s, s) normalized images, capturing each tapped layer.

    Returns float32 C-order (n, f_layer, h_layer, w_layer) per layer. Batch
    size changes memory use only; outputs are concatenated in input order.
    """
    captured: dict[str, torch.Tensor] = {}
    chunks: dict[str, list[np.ndarray]] = {name: [] for name in layer_names}
    hooks = []

    def tap(layer_name):
        def hook(_mod, _inp, out):
            captured[layer_name] = out

        return hook

    for layer_name in layer_names:
        hooks.append(model.get_submodule(layer_name).register_forward_hook(tap(layer_name)))
    try:
        with torch.no_grad():
            for start in range(0, images.shape[0], batch):
                model(torch.from_numpy(images[start : start + batch]))
                for layer_name in layer_names:
                    t = captured.pop(layer_name)
                    chunks[layer_name].append(
                        np.ascontiguousarray(t.to(torch.float32).numpy())
                    )
    finally:
        for h in hooks:
            h.remove()
    return {name: np.concatenate(parts, axis=0) for name, parts in chunks.items()}
