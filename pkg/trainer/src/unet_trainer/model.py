"""Contextual UNet for 32x32 patches.

Encoder/decoder with three resolution drops (32 -> 16 -> 8 -> 4); the lowest
scale of the reference architecture is omitted because the patches are small.
The input stacks the slice with its two neighbors as channels (context=3) or
uses the slice alone (context=1); the output is a per-pixel probability.
"""

from __future__ import annotations

import torch
from torch import nn


def _block(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.ReLU(inplace=True),
    )


class ContextUNet(nn.Module):
    def __init__(self, context: int = 3, base_channels: int = 8):
        super().__init__()
        if context not in (1, 3):
            raise ValueError(f"context must be 1 or 3, got {context}")
        self.context = context
        c = base_channels
        self.enc1 = _block(context, c)
        self.enc2 = _block(c, 2 * c)
        self.enc3 = _block(2 * c, 4 * c)
        self.bottom = _block(4 * c, 8 * c)
        self.pool = nn.MaxPool2d(2)
        self.up3 = nn.ConvTranspose2d(8 * c, 4 * c, 2, stride=2)
        self.dec3 = _block(8 * c, 4 * c)
        self.up2 = nn.ConvTranspose2d(4 * c, 2 * c, 2, stride=2)
        self.dec2 = _block(4 * c, 2 * c)
        self.up1 = nn.ConvTranspose2d(2 * c, c, 2, stride=2)
        self.dec1 = _block(2 * c, c)
        self.head = nn.Conv2d(c, 1, 1)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        b = self.bottom(self.pool(e3))
        d3 = self.dec3(torch.cat([self.up3(b), e3], dim=1))
        d2 = self.dec2(torch.cat([self.up2(d3), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return self.head(d1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x))


def build_model(context: int = 3, base_channels: int = 8) -> ContextUNet:
    return ContextUNet(context=context, base_channels=base_channels)
