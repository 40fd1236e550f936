"""Deterministic training loop: SGD with momentum, batch size 1."""

from __future__ import annotations

import json
import os

import numpy as np
import torch

from .data import TrainConfig, augment, extract_samples, load_volume_pairs
from .model import build_model


def train(data_dir, out_dir, config: TrainConfig = TrainConfig()):
    """Train on phantom volume pairs; writes checkpoint.pt and loss.json.

    Deterministic for a fixed config: single-threaded torch, seeded shuffling
    and augmentation. Returns the per-epoch loss list.
    """
    pairs = load_volume_pairs(data_dir)
    inputs, targets = extract_samples(pairs, config.context)

    torch.set_num_threads(1)
    torch.manual_seed(config.seed)
    model = build_model(config.context, config.base_channels)
    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr, momentum=config.momentum)
    criterion = torch.nn.BCEWithLogitsLoss()

    n = len(inputs)
    losses = []
    for epoch in range(config.epochs):
        order = np.random.default_rng(config.seed * 100003 + epoch).permutation(n)
        gen = torch.Generator().manual_seed(config.seed * 1000003 + epoch)
        model.train()
        total = 0.0
        for step in range(0, n, config.batch_size):
            batch = order[step : step + config.batch_size]
            imgs, tgts = [], []
            for idx in batch:
                img, tgt = augment(inputs[idx], targets[idx], config, gen)
                imgs.append(img)
                tgts.append(tgt)
            x = torch.stack(imgs)
            y = torch.stack(tgts)
            optimizer.zero_grad()
            loss = criterion(model.logits(x), y)
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(batch)
        losses.append(total / n)

    os.makedirs(out_dir, exist_ok=True)
    checkpoint = {
        "state_dict": model.state_dict(),
        "context": config.context,
        "base_channels": config.base_channels,
        "normalization": "per-volume standardization",
    }
    torch.save(checkpoint, os.path.join(out_dir, "checkpoint.pt"))
    report = {"config": config.as_dict(), "loss": losses, "samples_per_epoch": n}
    with open(os.path.join(out_dir, "loss.json"), "w", encoding="ascii") as fh:
        json.dump(report, fh, indent=2)
    return losses
