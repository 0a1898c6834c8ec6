"""Pretrained vision backbones, tap-point resolution, and preprocessing specs."""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources

import torch
from torch import nn

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ModelLoadError(RuntimeError):
    """A backbone or its pretrained weights could not be loaded."""


@dataclass(frozen=True)
class BackboneSpec:
    """How padded grayscale pixels become the feature vector f(x).

    Channel replication, intensity scaling, optional resize, and optional
    per-channel normalization all happen inside f, so the Jacobian columns
    always live on the coding-resolution pixel grid.
    """

    model: str
    tap: str
    channels: int = 3
    resize: tuple[int, int] | None = None  # (height, width); None keeps native size
    normalize: tuple[tuple[float, ...], tuple[float, ...]] | None = None  # (mean, std)


class TinyConv(nn.Module):
    """Bundled offline backbone: two strided GELU conv stages and a conv head.

    Trained once on a synthetic local-structure regression (mean, oriented
    gradients, edge energy) and shipped as frozen package data, so sketching
    works without network access to a model zoo.  The smooth activation keeps
    finite differences of the sketched features faithful to the gradient at
    intensity-scale steps, which piecewise-linear activations do not.
    """

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, stride=2, padding=1)
        self.act1 = nn.GELU()
        self.conv2 = nn.Conv2d(8, 8, 3, stride=2, padding=1)
        self.act2 = nn.GELU()
        self.head = nn.Conv2d(8, 4, 3, padding=1)

    def forward(self, x):
        return self.head(self.act2(self.conv2(self.act1(self.conv1(x)))))


def _load_tinyconv() -> nn.Module:
    model = TinyConv()
    ref = resources.files("pysketch").joinpath("data/tinyconv_v1.pt")
    with ref.open("rb") as fh:
        state = torch.load(fh, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    return model


def _load_torchvision(name: str) -> nn.Module:
    from torchvision import models

    try:
        return models.get_model(name, weights="DEFAULT")
    except Exception as exc:  # weight download touches the network and OS
        raise ModelLoadError(
            f"could not load pretrained weights for {name!r} (fetching them needs "
            f"network access or a populated torch hub cache): {exc}. "
            f"The bundled 'tinyconv' backbone works fully offline."
        ) from exc


_REGISTRY: dict[str, tuple] = {
    "tinyconv": (
        _load_tinyconv,
        BackboneSpec(model="tinyconv", tap="head"),
    ),
    "squeezenet1_1": (
        lambda: _load_torchvision("squeezenet1_1"),
        BackboneSpec(
            model="squeezenet1_1",
            tap="features",
            resize=(224, 224),
            normalize=(IMAGENET_MEAN, IMAGENET_STD),
        ),
    ),
    "mobilenet_v3_small": (
        lambda: _load_torchvision("mobilenet_v3_small"),
        BackboneSpec(
            model="mobilenet_v3_small",
            tap="features",
            resize=(224, 224),
            normalize=(IMAGENET_MEAN, IMAGENET_STD),
        ),
    ),
}

BACKBONE_NAMES = tuple(sorted(_REGISTRY))


def make_spec(model: str, tap: str | None = None) -> BackboneSpec:
    """Per-model default spec, optionally overriding the tap point."""
    if model not in _REGISTRY:
        raise ValueError(f"unknown model {model!r}; choices: {', '.join(BACKBONE_NAMES)}")
    spec = _REGISTRY[model][1]
    return spec if tap is None else replace(spec, tap=tap)


def load_model(spec: BackboneSpec) -> nn.Module:
    """Frozen eval-mode module for a backbone spec, with the tap point checked."""
    if spec.model not in _REGISTRY:
        raise ValueError(
            f"unknown model {spec.model!r}; choices: {', '.join(BACKBONE_NAMES)}"
        )
    model = _REGISTRY[spec.model][0]()
    model.eval()
    for param in model.parameters():
        param.requires_grad_(False)
    resolve_tap(model, spec.tap)
    return model


def resolve_tap(model: nn.Module, tap: str) -> nn.Module:
    """Submodule named by the tap point, or a ValueError listing what exists."""
    modules = dict(model.named_modules())
    if tap in modules and tap:
        return modules[tap]
    names = ", ".join(name for name in modules if name)
    raise ValueError(f"tap {tap!r} not found; available modules: {names}")
