"""Phantom slice dataset with edge-replicated slice context and augmentation."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .mha import read_mha


@dataclass(frozen=True)
class TrainConfig:
    context: int = 3
    epochs: int = 10
    lr: float = 1e-6
    momentum: float = 0.9
    batch_size: int = 1
    translate_px: float = 2.0
    rotate_deg: float = 10.0
    scale_range: tuple = (0.9, 1.1)
    base_channels: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.context not in (1, 3):
            raise ValueError("context must be 1 or 3")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["scale_range"] = list(self.scale_range)
        d["loss"] = "bce"  # per-pixel binary cross entropy (assumed, recorded)
        return d


def load_volume_pairs(data_dir):
    """Scan subdirectories for intensity.mha + label.mha pairs."""
    pairs = []
    for name in sorted(os.listdir(data_dir)):
        sub = os.path.join(data_dir, name)
        ipath = os.path.join(sub, "intensity.mha")
        lpath = os.path.join(sub, "label.mha")
        if os.path.isdir(sub) and os.path.exists(ipath) and os.path.exists(lpath):
            intensity, _, _ = read_mha(ipath)
            label, _, _ = read_mha(lpath)
            if intensity.shape != label.shape:
                raise ValueError(f"{name}: intensity and label shapes differ")
            pairs.append((intensity, label))
    if not pairs:
        raise ValueError(f"no phantom volumes found under {data_dir}")
    return pairs


def standardize(volume: np.ndarray) -> np.ndarray:
    std = float(volume.std())
    return (volume - float(volume.mean())) / (std if std > 0 else 1.0)


def context_slice(volume: np.ndarray, z: int, context: int) -> np.ndarray:
    """Stack (z-1, z, z+1) as channels, replicating edge slices."""
    nz = volume.shape[2]
    if context == 1:
        planes = [z]
    else:
        planes = [max(z - 1, 0), z, min(z + 1, nz - 1)]
    return np.stack([volume[:, :, p] for p in planes], axis=0)


def extract_samples(pairs, context: int):
    """All (input channels, target slice) pairs across volumes, z-major."""
    inputs, targets = [], []
    for intensity, label in pairs:
        norm = standardize(intensity)
        for z in range(intensity.shape[2]):
            inputs.append(context_slice(norm, z, context))
            targets.append(label[:, :, z][None])
    return (
        torch.from_numpy(np.stack(inputs).astype(np.float32)),
        torch.from_numpy(np.stack(targets).astype(np.float32)),
    )


def augment(image: torch.Tensor, target: torch.Tensor, config: TrainConfig,
            generator: torch.Generator):
    """Joint random translation/rotation/scaling of one (C,H,W) sample."""
    draw = torch.rand(4, generator=generator)
    angle = (draw[0] * 2 - 1) * config.rotate_deg * torch.pi / 180.0
    lo, hi = config.scale_range
    scale = lo + draw[1] * (hi - lo)
    h = image.shape[-1]
    tx = (draw[2] * 2 - 1) * config.translate_px / (h / 2.0)
    ty = (draw[3] * 2 - 1) * config.translate_px / (h / 2.0)
    cos, sin = torch.cos(angle), torch.sin(angle)
    # output-to-input map; 1/scale enlarges the object for scale > 1
    theta = torch.tensor(
        [[cos / scale, -sin / scale, tx], [sin / scale, cos / scale, ty]],
        dtype=torch.float32,
    )[None]
    grid = F.affine_grid(theta, (1, 1, h, h), align_corners=False)
    img = F.grid_sample(
        image[None], grid, mode="bilinear", padding_mode="border", align_corners=False
    )[0]
    tgt = F.grid_sample(
        target[None], grid, mode="nearest", padding_mode="zeros", align_corners=False
    )[0]
    return img, tgt
