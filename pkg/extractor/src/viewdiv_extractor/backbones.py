"""Backbone registry.

Every backbone maps a preprocessed (B, 3, side, side) batch to (B, D)
features taken after global average pooling — the tap point is fixed here
and recorded in the manifest consumer's expectations only through D. Inputs
are scaled to [0, 1] and normalized with the standard ImageNet statistics
for all backbones, so swapping backbones never changes preprocessing.

Names:
  resnet50            pretrained classification weights (needs downloadable
                      weights; the fidelity path)
  resnet50-untrained  same architecture, seeded random init, fully offline
  tiny                small seeded convnet for tests and plumbing runs
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

BACKBONES = ("resnet50", "resnet50-untrained", "tiny")

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

_INIT_SEED = 0  # fixed init so untrained backbones are reproducible


class UnloadableBackbone(ValueError):
    """Unknown backbone name or weights that cannot be obtained."""


class _Tiny(nn.Module):
    def __init__(self) -> None:
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


def _headless_resnet50(weights) -> nn.Module:
    from torchvision.models import resnet50

    m = resnet50(weights=weights)
    # keep everything up to and including the global average pool
    return nn.Sequential(*list(m.children())[:-1], nn.Flatten(1))


def build_backbone(name: str) -> tuple[nn.Module, int]:
    """Return (module in eval mode, feature width)."""
    torch.manual_seed(_INIT_SEED)
    if name == "resnet50":
        try:
            from torchvision.models import ResNet50_Weights

            model = _headless_resnet50(ResNet50_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise UnloadableBackbone(f"cannot load pretrained resnet50 weights: {exc}") from exc
        dim = 2048
    elif name == "resnet50-untrained":
        model = _headless_resnet50(None)
        dim = 2048
    elif name == "tiny":
        model = _Tiny()
        dim = 64
    else:
        raise UnloadableBackbone(f"unknown backbone {name!r}; expected one of {BACKBONES}")
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model, dim


def preprocess(crops: np.ndarray) -> torch.Tensor:
    """uint8 (B, side, side, 3) -> normalized float32 (B, 3, side, side)."""
    x = crops.astype(np.float32) / 255.0
    x = (x - IMAGENET_MEAN) / IMAGENET_STD
    return torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2)))
