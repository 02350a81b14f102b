import numpy as np
import pytest
import torch
import torchvision

from somd_extract import (
    MissingWeights,
    ValidationError,
    build_backbone,
    extract_layer_maps,
    resolve_layers,
)


def test_unknown_backbone_rejected():
    with pytest.raises(ValidationError):
        build_backbone("resnet34", weights="none")


def test_unknown_weight_mode_rejected():
    with pytest.raises(ValidationError):
        build_backbone("resnet18", weights="imagenet")


def test_seeded_init_is_reproducible():
    a = build_backbone("resnet18", weights="none", seed=5)
    b = build_backbone("resnet18", weights="none", seed=5)
    for (name, pa), (_, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(pa, pb), name
    c = build_backbone("resnet18", weights="none", seed=6)
    assert any(
        not torch.equal(pa, pc)
        for pa, pc in zip(a.state_dict().values(), c.state_dict().values())
    )


def test_unreachable_weights_raise_missing_weights(monkeypatch):
    def refuse(self, *args, **kwargs):
        raise OSError("weight host unreachable")

    monkeypatch.setattr(torchvision.models.WeightsEnum, "get_state_dict", refuse)
    with pytest.raises(MissingWeights):
        build_backbone("resnet18", weights="pretrained")


def test_resnet_default_layers():
    model = build_backbone("resnet18", weights="none")
    assert resolve_layers(model, "resnet18", None) == ("layer1", "layer2", "layer3")


def test_unknown_layer_rejected():
    model = build_backbone("resnet18", weights="none")
    with pytest.raises(ValidationError):
        resolve_layers(model, "resnet18", ("layer1", "layer9"))


def test_explicit_layers_pass_through():
    model = build_backbone("resnet18", weights="none")
    assert resolve_layers(model, "resnet18", ("layer2",)) == ("layer2",)


@pytest.mark.parametrize("name", ["mobilenet_v3_small", "mobilenet_v3_large"])
def test_mobilenet_default_layers_hit_stage_scales(name):
    model = build_backbone(name, weights="none")
    layers = resolve_layers(model, name, None)
    assert len(layers) == 3
    assert all(layer.startswith("features.") for layer in layers)
    images = np.zeros((1, 3, 64, 64), dtype=np.float32)
    maps = extract_layer_maps(model, layers, images, batch=1)
    sides = [maps[layer].shape[-1] for layer in layers]
    assert sides == [16, 8, 4]  # 1/4, 1/8, 1/16 of the input


def test_resnet18_channel_progression():
    model = build_backbone("resnet18", weights="none")
    images = np.zeros((2, 3, 64, 64), dtype=np.float32)
    maps = extract_layer_maps(model, ("layer1", "layer2", "layer3"), images, batch=2)
    assert [maps[f"layer{i}"].shape[1] for i in (1, 2, 3)] == [64, 128, 256]
    assert maps["layer1"].shape == (2, 64, 16, 16)


def test_wide_resnet_channel_progression():
    model = build_backbone("wide_resnet50_2", weights="none")
    images = np.zeros((1, 3, 64, 64), dtype=np.float32)
    maps = extract_layer_maps(model, ("layer1", "layer2", "layer3"), images, batch=1)
    assert [maps[f"layer{i}"].shape[1] for i in (1, 2, 3)] == [256, 512, 1024]


def test_batch_size_does_not_change_outputs():
    model = build_backbone("resnet18", weights="none", seed=3)
    rng = np.random.default_rng(0)
    images = rng.standard_normal((5, 3, 32, 32)).astype(np.float32)
    one = extract_layer_maps(model, ("layer1", "layer2"), images, batch=1)
    big = extract_layer_maps(model, ("layer1", "layer2"), images, batch=5)
    for layer in ("layer1", "layer2"):
        np.testing.assert_allclose(one[layer], big[layer], rtol=0, atol=1e-5)
        assert one[layer].dtype == np.float32
        assert one[layer].flags["C_CONTIGUOUS"]


def test_layer_maps_preserve_input_order():
    model = build_backbone("resnet18", weights="none", seed=3)
    rng = np.random.default_rng(1)
    images = rng.standard_normal((4, 3, 32, 32)).astype(np.float32)
    whole = extract_layer_maps(model, ("layer1",), images, batch=4)["layer1"]
    single = extract_layer_maps(model, ("layer1",), images[2:3], batch=1)["layer1"]
    np.testing.assert_allclose(whole[2], single[0], rtol=0, atol=1e-5)
