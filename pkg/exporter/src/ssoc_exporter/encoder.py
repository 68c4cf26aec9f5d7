"""Image encoders: torchvision residual networks run in deterministic eval mode.

The default is an untrained network with seeded weights, which acts as a
fixed random feature extractor and needs no downloads; ``--weights
pretrained`` opts into torchvision's published weights when the
environment can fetch them.
"""

from __future__ import annotations

import numpy as np
import torch
from torchvision import models
from torchvision.transforms import functional as TF

ENCODERS = {
    "resnet18": (models.resnet18, 512),
    "resnet34": (models.resnet34, 512),
    "resnet50": (models.resnet50, 2048),
}

_NORM_MEAN = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
_NORM_STD = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)


class EncoderError(RuntimeError):
    """The requested encoder cannot be constructed."""


class ImageEncoder:
    """Penultimate-layer features of a residual network, deterministic on CPU."""

    def __init__(self, name: str = "resnet18", weights: str = "random", seed: int = 0):
        if name not in ENCODERS:
            raise EncoderError(f"unknown encoder {name!r}; choose from {sorted(ENCODERS)}")
        ctor, self.dim = ENCODERS[name]
        torch.manual_seed(seed)
        torch.set_num_threads(1)
        if weights == "random":
            net = ctor(weights=None)
        elif weights == "pretrained":
            try:
                net = ctor(weights="DEFAULT")
            except Exception as exc:
                raise EncoderError(f"could not fetch pretrained weights: {exc}") from exc
        else:
            raise EncoderError(f"weights must be 'random' or 'pretrained', got {weights!r}")
        net.fc = torch.nn.Identity()
        net.eval()
        self.net = net

    @torch.no_grad()
    def encode(self, images: torch.Tensor, batch_size: int = 64) -> np.ndarray:
        """Float image batch (n, 3, h, w) in [0, 1] -> (n, dim) float64 features."""
        out = []
        for start in range(0, images.shape[0], batch_size):
            chunk = images[start : start + batch_size]
            chunk = (chunk - _NORM_MEAN) / _NORM_STD
            out.append(self.net(chunk).double().numpy())
        return np.concatenate(out, axis=0)


def to_float_tensor(images: np.ndarray) -> torch.Tensor:
    """uint8 (n, h, w, 3) -> float tensor (n, 3, h, w) in [0, 1]."""
    return torch.from_numpy(images).permute(0, 3, 1, 2).float() / 255.0


def augment_crop_rotate(images: torch.Tensor, generator: torch.Generator,
                        max_degrees: float = 15.0, crop_ratio: float = 0.8) -> torch.Tensor:
    """Random rotation followed by a random crop, resized back to input size.

    Sampling comes from the supplied generator only, so augmented views
    are reproducible for a fixed seed.
    """
    n, _, h, w = images.shape
    ch, cw = int(h * crop_ratio), int(w * crop_ratio)
    angles = (torch.rand(n, generator=generator) * 2.0 - 1.0) * max_degrees
    tops = torch.randint(0, h - ch + 1, (n,), generator=generator)
    lefts = torch.randint(0, w - cw + 1, (n,), generator=generator)
    out = torch.empty_like(images)
    for i in range(n):
        rotated = TF.rotate(images[i], float(angles[i]))
        crop = rotated[:, tops[i] : tops[i] + ch, lefts[i] : lefts[i] + cw]
        out[i] = TF.resize(crop, [h, w], antialias=True)
    return out
