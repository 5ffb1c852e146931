"""Feature and context encoders.

Desk-scale stand-ins for the usual 256-channel backbones: three stride-2
convolution blocks with instance normalization, yielding 1/8-resolution
maps. Widths are configurable; one encoder instance is shared by both
temporal directions.
"""

from __future__ import annotations

import torch
import torch.nn as nn

DOWNSAMPLE = 8


def _check_divisible(image: torch.Tensor) -> None:
    h, w = image.shape[-2:]
    if h % DOWNSAMPLE or w % DOWNSAMPLE:
        raise ValueError(
            f"image size {h}x{w} not divisible by {DOWNSAMPLE}; resize or crop the input"
        )


class _Trunk(nn.Module):
    def __init__(self, widths: tuple[int, int, int]):
        super().__init__()
        chans = [3, *widths]
        layers: list[nn.Module] = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            layers += [
                nn.Conv2d(cin, cout, 3, stride=2, padding=1),
                nn.InstanceNorm2d(cout),
                nn.ReLU(),
            ]
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class FeatureEncoder(nn.Module):
    """Image (3, H, W) in [0, 1] -> feature map (C, H/8, W/8)."""

    scale = DOWNSAMPLE

    def __init__(self, channels: int = 64, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.channels = channels
        self.trunk = _Trunk((32, 48, channels))
        self.to(dtype)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        _check_divisible(image)
        squeeze = image.dim() == 3
        if squeeze:
            image = image.unsqueeze(0)
        out = self.trunk(image)
        return out[0] if squeeze else out


class ContextEncoder(nn.Module):
    """Image -> (context feature g, initial hidden state h0).

    g conditions the recurrent update and the positional attention query;
    h0 is tanh-bounded so hidden states start strictly inside (-1, 1).
    """

    scale = DOWNSAMPLE

    def __init__(
        self,
        context_channels: int = 48,
        hidden_channels: int = 48,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.context_channels = context_channels
        self.hidden_channels = hidden_channels
        self.trunk = _Trunk((32, 48, 64))
        self.head_g = nn.Conv2d(64, context_channels, 3, padding=1)
        self.head_h = nn.Conv2d(64, hidden_channels, 3, padding=1)
        self.to(dtype)

    def forward(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        _check_divisible(image)
        squeeze = image.dim() == 3
        if squeeze:
            image = image.unsqueeze(0)
        x = self.trunk(image)
        g = torch.relu(self.head_g(x))
        h0 = torch.tanh(self.head_h(x))
        if squeeze:
            return g[0], h0[0]
        return g, h0
