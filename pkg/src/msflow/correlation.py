"""All-pairs correlation pyramid and projected-position lookup.

Level 1 holds the inner product of every feature pair, scaled by
1/sqrt(C); levels 2-4 average-pool the target axes 2x2. During
refinement the pyramid is sampled bilinearly on a square window around
each projected position, with zero padding outside (this choice changes
gradients at the borders and is deliberate).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .geometry import bilinear_sample

NUM_LEVELS = 4


class CorrelationPyramid:
    """4-level feature-similarity volumes between a reference and a target map.

    levels[k] has shape (h, w, h / 2^k, w / 2^k) for k = 0..3 (batched:
    leading B). `direction` is a free-form tag ("forward" / "backward").
    """

    def __init__(self, levels: list[torch.Tensor], direction: str = "forward"):
        if len(levels) != NUM_LEVELS:
            raise ValueError(f"expected {NUM_LEVELS} levels, got {len(levels)}")
        self.levels = levels
        self.direction = direction

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.levels[0].shape)

    def lookup(self, positions: torch.Tensor, radius: int = 3) -> torch.Tensor:
        return lookup_corr(self, positions, radius)


def build_corr_pyramid(
    f1: torch.Tensor, f2: torch.Tensor, direction: str = "forward"
) -> CorrelationPyramid:
    """All-pairs correlation between two (C, h, w) / (B, C, h, w) feature maps.

    entry[i, j, i', j'] = <f1[:, i, j], f2[:, i', j']> / sqrt(C). h and w
    must be divisible by 8 so every level pools an exact 2x2.
    """
    if f1.shape != f2.shape:
        raise ValueError(
            f"feature shape mismatch: {tuple(f1.shape)} vs {tuple(f2.shape)}"
        )
    squeeze = f1.dim() == 3
    if squeeze:
        f1 = f1.unsqueeze(0)
        f2 = f2.unsqueeze(0)
    B, C, h, w = f1.shape
    if h % 8 or w % 8:
        raise ValueError(f"feature map {h}x{w} must be divisible by 8 for 4 exact levels")

    corr = torch.einsum("bcij,bckl->bijkl", f1, f2) / (C**0.5)
    levels = [corr]
    pooled = corr.reshape(B * h * w, 1, h, w)
    th, tw = h, w
    for _ in range(NUM_LEVELS - 1):
        pooled = F.avg_pool2d(pooled, 2, stride=2)
        th, tw = th // 2, tw // 2
        levels.append(pooled.reshape(B, h, w, th, tw))
    if squeeze:
        levels = [lvl[0] for lvl in levels]
    return CorrelationPyramid(levels, direction)


def lookup_corr(
    pyr: CorrelationPyramid, positions: torch.Tensor, radius: int = 3
) -> torch.Tensor:
    """Sample every pyramid level around projected positions.

    positions: (h, w, 2) or (B, h, w, 2) in reference-resolution pixels of
    the target map. Per level k the window grid (2r+1)^2 is sampled
    bilinearly at positions * 2^-k + offsets; out-of-range samples read 0.

    Output channels are level-major, window offsets row-major:
    ((2r+1)^2 * 4, h, w), batched with leading B.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    squeeze = positions.dim() == 3
    levels = pyr.levels
    if squeeze:
        positions = positions.unsqueeze(0)
        levels = [lvl.unsqueeze(0) for lvl in levels]
    B, h, w, _ = positions.shape

    r = radius
    dtype = positions.dtype
    device = positions.device
    offs = torch.arange(-r, r + 1, dtype=dtype, device=device)
    dy, dx = torch.meshgrid(offs, offs, indexing="ij")
    window = torch.stack([dx, dy], dim=-1).reshape(1, -1, 2)  # (1, (2r+1)^2, 2)
    n_win = window.shape[1]

    out = []
    for k, level in enumerate(levels):
        th, tw = level.shape[-2:]
        vol = level.reshape(B * h * w, 1, th, tw)
        centers = positions.reshape(B * h * w, 1, 2) / (2.0**k)
        coords = centers + window  # (B h w, n_win, 2)
        samples, _ = bilinear_sample(vol, coords)
        out.append(samples.reshape(B, h, w, n_win))
    stacked = torch.cat(out, dim=-1)  # (B, h, w, 4 * n_win)
    result = stacked.permute(0, 3, 1, 2).contiguous()
    return result[0] if squeeze else result
