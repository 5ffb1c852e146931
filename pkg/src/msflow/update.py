"""Recurrent update primitives: convolutional GRU, residual decoding heads,
disparity initialization, and the learned convex upsampler.

The upsampler's weight head reads a gradient-detached copy of the hidden
state (checkerboard-artifact mitigation); gradients flow through the
upsampled field only.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

UPSAMPLE = 8


class ConvGRU(nn.Module):
    """3x3 convolutional GRU, h' = (1 - z) * h + z * h_tilde."""

    def __init__(self, hidden_channels: int, input_channels: int, dtype: torch.dtype = torch.float64):
        super().__init__()
        cin = hidden_channels + input_channels
        self.convz = nn.Conv2d(cin, hidden_channels, 3, padding=1)
        self.convr = nn.Conv2d(cin, hidden_channels, 3, padding=1)
        self.convq = nn.Conv2d(cin, hidden_channels, 3, padding=1)
        self.to(dtype)

    def forward(self, h: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        hx = torch.cat([h, x], dim=-3)
        z = torch.sigmoid(self.convz(hx))
        r = torch.sigmoid(self.convr(hx))
        q = torch.tanh(self.convq(torch.cat([r * h, x], dim=-3)))
        return (1 - z) * h + z * q


class ResidualHeads(nn.Module):
    """Hidden state -> (scene-flow residual (3,h,w), disparity residual (1,h,w)).

    Three conv layers per head, no activation on the outputs.
    """

    def __init__(self, hidden_channels: int = 48, dtype: torch.dtype = torch.float64):
        super().__init__()
        def head(cout: int) -> nn.Sequential:
            return nn.Sequential(
                nn.Conv2d(hidden_channels, 64, 3, padding=1),
                nn.ReLU(),
                nn.Conv2d(64, 64, 3, padding=1),
                nn.ReLU(),
                nn.Conv2d(64, cout, 3, padding=1),
            )

        self.head_sf = head(3)
        self.head_d = head(1)
        self.to(dtype)

    def forward(self, hidden: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.head_sf(hidden), self.head_d(hidden)


class DisparityInit(nn.Module):
    """Initial disparity from the reference feature map, strictly positive.

    Shared across temporal directions, so both start from the same field.
    """

    def __init__(self, feat_channels: int = 64, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.conv1 = nn.Conv2d(feat_channels, 48, 3, padding=1)
        self.conv2 = nn.Conv2d(48, 1, 3, padding=1)
        self.to(dtype)

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        return F.softplus(self.conv2(torch.relu(self.conv1(feat))))


class ConvexUpsampler(nn.Module):
    """8x upsampling by learned convex combinations of 3x3 coarse neighborhoods.

    Per fine pixel a softmax over 9 weights mixes the (replicate-padded)
    coarse neighborhood, so every output lies within the local min/max of
    its neighbors. The weight head consumes hidden.detach().
    """

    factor = UPSAMPLE

    def __init__(self, hidden_channels: int = 48, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.mask_head = nn.Sequential(
            nn.Conv2d(hidden_channels, 64, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(64, UPSAMPLE * UPSAMPLE * 9, 1),
        )
        self.to(dtype)

    def weights(self, hidden: torch.Tensor) -> torch.Tensor:
        """(B, 9, 8, 8, h, w) softmax weights from a detached hidden state."""
        B, _, h, w = hidden.shape
        m = self.mask_head(hidden.detach())
        m = m.view(B, 9, UPSAMPLE, UPSAMPLE, h, w)
        return torch.softmax(m, dim=1)

    def forward(
        self, field: torch.Tensor, hidden: torch.Tensor, scale: float = 1.0
    ) -> torch.Tensor:
        squeeze = field.dim() == 3
        if squeeze:
            field = field.unsqueeze(0)
            hidden = hidden.unsqueeze(0)
        B, C, h, w = field.shape
        weights = self.weights(hidden)  # (B, 9, 8, 8, h, w)
        padded = F.pad(field, (1, 1, 1, 1), mode="replicate")
        neigh = F.unfold(padded, 3)  # (B, C*9, h*w)
        neigh = neigh.view(B, C, 9, 1, 1, h, w)
        up = torch.sum(weights.unsqueeze(1) * neigh, dim=2)  # (B, C, 8, 8, h, w)
        up = up.permute(0, 1, 4, 2, 5, 3)  # (B, C, h, 8, w, 8)
        out = up.reshape(B, C, h * UPSAMPLE, w * UPSAMPLE) * scale
        return out[0] if squeeze else out


def convex_upsample(
    upsampler: ConvexUpsampler, field: torch.Tensor, hidden: torch.Tensor, scale: float = 1.0
) -> torch.Tensor:
    return upsampler(field, hidden, scale)
