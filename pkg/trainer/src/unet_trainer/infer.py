"""Slice-wise inference producing a MetaImage probability volume."""

from __future__ import annotations

import numpy as np
import torch

from .data import context_slice, standardize
from .mha import read_mha, write_mha
from .model import build_model


def load_checkpoint(path):
    checkpoint = torch.load(path, map_location="cpu", weights_only=True)
    model = build_model(checkpoint["context"], checkpoint["base_channels"])
    model.load_state_dict(checkpoint["state_dict"])
    model.eval()
    return model, checkpoint


def infer(checkpoint_path, volume_path, out_path, expected_dims=(32, 32, 32)):
    """Run the network over every slice and write the probability volume."""
    model, checkpoint = load_checkpoint(checkpoint_path)
    intensity, spacing, origin = read_mha(volume_path)
    if intensity.shape != tuple(expected_dims):
        raise ValueError(
            f"volume has dims {intensity.shape}, expected {tuple(expected_dims)}"
        )
    norm = standardize(intensity)
    context = checkpoint["context"]
    stacks = np.stack(
        [context_slice(norm, z, context) for z in range(intensity.shape[2])]
    ).astype(np.float32)
    with torch.no_grad():
        probs = model(torch.from_numpy(stacks)).numpy()[:, 0]
    volume = np.transpose(probs, (1, 2, 0))  # (z, x, y) -> (x, y, z)
    volume = np.clip(volume, 0.0, 1.0).astype(np.float32)
    write_mha(out_path, volume, spacing, origin, "MET_FLOAT")
    return volume
