"""Geometry-Motion Feature machinery: projection from hidden states,
bidirectional temporal fusion, and the motion feature encoder.

The fusion negates the opposite direction's GMF before concatenation so
both temporal directions are expressed in the same sign convention; the
wiring is asymmetric on purpose and is covered by an instrumentation hook
so tests can record exactly what enters the fusion network.
"""

from __future__ import annotations

from typing import Callable

import torch
import torch.nn as nn


class GmfProjection(nn.Module):
    """Hidden state -> GMF, three conv layers with ReLU between them."""

    def __init__(
        self,
        hidden_channels: int = 48,
        gmf_channels: int = 64,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.gmf_channels = gmf_channels
        self.conv1 = nn.Conv2d(hidden_channels, 64, 3, padding=1)
        self.conv2 = nn.Conv2d(64, 64, 3, padding=1)
        self.conv3 = nn.Conv2d(64, gmf_channels, 1)
        self.to(dtype)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        x = torch.relu(self.conv1(hidden))
        x = torch.relu(self.conv2(x))
        return self.conv3(x)


class TemporalFusion(nn.Module):
    """Fuse own-direction and (negated) opposite-direction GMFs.

    For the forward branch the input is concat(gmf_fwd, -gmf_bwd); the
    backward branch uses concat(gmf_bwd, -gmf_fwd). Two conv layers with a
    ReLU in between. `input_hook`, when set, receives (direction, input
    tensor) on every call; it exists for tests only.
    """

    def __init__(self, gmf_channels: int = 64, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.conv1 = nn.Conv2d(2 * gmf_channels, 64, 3, padding=1)
        self.conv2 = nn.Conv2d(64, gmf_channels, 3, padding=1)
        self.input_hook: Callable[[str, torch.Tensor], None] | None = None
        self.to(dtype)

    def forward(
        self, gmf_fwd: torch.Tensor, gmf_bwd: torch.Tensor, direction: str = "forward"
    ) -> torch.Tensor:
        if gmf_fwd.shape != gmf_bwd.shape:
            raise ValueError(
                f"GMF shape mismatch: {tuple(gmf_fwd.shape)} vs {tuple(gmf_bwd.shape)}"
            )
        if direction == "forward":
            x = torch.cat([gmf_fwd, -gmf_bwd], dim=-3)
        elif direction == "backward":
            x = torch.cat([gmf_bwd, -gmf_fwd], dim=-3)
        else:
            raise ValueError(f"unknown direction {direction!r}")
        if self.input_hook is not None:
            self.input_hook(direction, x.detach().clone())
        return self.conv2(torch.relu(self.conv1(x)))

    def fuse_bidirectional(
        self, gmf_fwd: torch.Tensor, gmf_bwd: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Both directions in one batched pass; the opposite direction's GMF
        enters gradient-detached. Returns (fused_fwd, fused_bwd)."""
        x_f = torch.cat([gmf_fwd, -gmf_bwd.detach()], dim=-3)
        x_b = torch.cat([gmf_bwd, -gmf_fwd.detach()], dim=-3)
        if self.input_hook is not None:
            self.input_hook("forward", x_f.detach().clone())
            self.input_hook("backward", x_b.detach().clone())
        x = torch.cat([x_f, x_b], dim=0)
        out = self.conv2(torch.relu(self.conv1(x)))
        B = gmf_fwd.shape[0]
        return out[:B], out[B:]


def fuse_gmf(
    fusion: TemporalFusion,
    gmf_fwd: torch.Tensor,
    gmf_bwd: torch.Tensor,
    direction: str,
) -> torch.Tensor:
    return fusion(gmf_fwd, gmf_bwd, direction)


class _SubEncoder(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.conv2(torch.relu(self.conv1(x))))


class MotionEncoder(nn.Module):
    """Combine scene-flow, optical-flow, disparity, correlation and fused
    GMF cues into a single motion feature.

    Each input passes through its own small encoder before concatenation;
    a final conv merges them to `motion_channels`.
    """

    def __init__(
        self,
        corr_channels: int,
        gmf_channels: int = 64,
        motion_channels: int = 96,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.motion_channels = motion_channels
        self.enc_sf = _SubEncoder(3, 24)
        self.enc_of = _SubEncoder(2, 24)
        self.enc_d = _SubEncoder(1, 16)
        self.enc_corr = _SubEncoder(corr_channels, 64)
        self.enc_gmf = _SubEncoder(gmf_channels, 48)
        self.merge = nn.Conv2d(24 + 24 + 16 + 64 + 48, motion_channels, 3, padding=1)
        self.to(dtype)

    def forward(
        self,
        f_sf: torch.Tensor,
        f_of: torch.Tensor,
        f_d: torch.Tensor,
        f_c: torch.Tensor,
        f_gmf: torch.Tensor,
    ) -> torch.Tensor:
        spatial = f_sf.shape[-2:]
        for name, t in (("f_of", f_of), ("f_d", f_d), ("f_c", f_c), ("f_gmf", f_gmf)):
            if t.shape[-2:] != spatial:
                raise ValueError(f"{name} spatial shape {tuple(t.shape[-2:])} != {tuple(spatial)}")
        parts = [
            self.enc_sf(f_sf),
            self.enc_of(f_of),
            self.enc_d(f_d),
            self.enc_corr(f_c),
            self.enc_gmf(f_gmf),
        ]
        return self.merge(torch.cat(parts, dim=-3))


def encode_motion(
    encoder: MotionEncoder,
    f_sf: torch.Tensor,
    f_of: torch.Tensor,
    f_d: torch.Tensor,
    f_c: torch.Tensor,
    f_gmf: torch.Tensor,
) -> torch.Tensor:
    return encoder(f_sf, f_of, f_d, f_c, f_gmf)
