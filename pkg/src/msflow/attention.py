"""Relative positional attention for motion-feature aggregation.

Attention weights depend on the context-derived query and on learnable
embeddings of the (row, column) offset between positions only, never on
appearance at the attended location. The aggregation residual is gated by
a scalar initialized to zero, so the module starts as the identity.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def aggregate_position(
    motion: torch.Tensor,
    attn: torch.Tensor,
    alpha: torch.Tensor | float,
    values: torch.Tensor | None = None,
) -> torch.Tensor:
    """M_p = M + alpha * reshape(A @ flatten(values)).

    motion: (B, C, h, w) or (C, h, w); attn: (B, S, S) or (S, S) with
    S = h*w; values defaults to motion (identity value projection).
    """
    if values is None:
        values = motion
    squeeze = motion.dim() == 3
    if squeeze:
        motion = motion.unsqueeze(0)
        values = values.unsqueeze(0)
        attn = attn.unsqueeze(0)
    B, C, h, w = motion.shape
    v = values.reshape(B, C, h * w).transpose(1, 2)  # (B, S, C)
    gathered = torch.bmm(attn, v).transpose(1, 2).reshape(B, C, h, w)
    out = motion + alpha * gathered
    return out[0] if squeeze else out


class PositionalAttention(nn.Module):
    """Position-only attention map plus residual aggregation.

    Embedding tables are sized for a base (training) resolution; other
    resolutions linearly resample the offset tables. One head; parameters
    are shared between the temporal directions.
    """

    def __init__(
        self,
        context_channels: int = 48,
        motion_channels: int = 96,
        embed_dim: int = 32,
        base_shape: tuple[int, int] = (8, 16),
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.embed_dim = embed_dim
        self.base_shape = base_shape
        h0, w0 = base_shape
        self.q_proj = nn.Conv2d(context_channels, embed_dim, 1)
        self.p_h = nn.Parameter(torch.randn(2 * h0 - 1, embed_dim) * 0.1)
        self.p_w = nn.Parameter(torch.randn(2 * w0 - 1, embed_dim) * 0.1)
        self.value_proj = nn.Conv2d(motion_channels, motion_channels, 1, bias=False)
        self.alpha = nn.Parameter(torch.zeros(()))
        self.to(dtype)

    def _table(self, param: torch.Tensor, size: int, base: int) -> torch.Tensor:
        """Offset table for `size` positions: (2*size-1, D)."""
        if size == base:
            return param
        resampled = F.interpolate(
            param.T.unsqueeze(0), size=2 * size - 1, mode="linear", align_corners=True
        )
        return resampled[0].T

    def offset_tables(self, h: int, w: int) -> tuple[torch.Tensor, torch.Tensor]:
        h0, w0 = self.base_shape
        return self._table(self.p_h, h, h0), self._table(self.p_w, w, w0)

    def assemble_table(self, h: int, w: int) -> torch.Tensor:
        """Dense pairwise embedding (S, S, D): row (i,j), column (i',j')."""
        ph, pw = self.offset_tables(h, w)
        ii = torch.arange(h)
        jj = torch.arange(w)
        dh = ph[(ii.view(1, -1) - ii.view(-1, 1)) + h - 1]  # (h, h', D)
        dw = pw[(jj.view(1, -1) - jj.view(-1, 1)) + w - 1]  # (w, w', D)
        table = dh[:, None, :, None, :] + dw[None, :, None, :, :]
        return table.reshape(h * w, h * w, self.embed_dim)

    def attention_map(self, g: torch.Tensor) -> torch.Tensor:
        """Row-stochastic attention (B, S, S) from context g (B, Cg, h, w)."""
        squeeze = g.dim() == 3
        if squeeze:
            g = g.unsqueeze(0)
        B, _, h, w = g.shape
        q = self.q_proj(g).permute(0, 2, 3, 1)  # (B, h, w, D)
        ph, pw = self.offset_tables(h, w)
        ii = torch.arange(h, device=g.device)
        jj = torch.arange(w, device=g.device)
        ph_mat = ph[(ii.view(1, -1) - ii.view(-1, 1)) + h - 1]  # (h, h', D)
        pw_mat = pw[(jj.view(1, -1) - jj.view(-1, 1)) + w - 1]  # (w, w', D)
        hs = torch.einsum("bijd,iud->biju", q, ph_mat)  # (B, h, w, h')
        ws = torch.einsum("bijd,jvd->bijv", q, pw_mat)  # (B, h, w, w')
        scores = hs.unsqueeze(-1) + ws.unsqueeze(-2)  # (B, h, w, h', w')
        scores = scores.reshape(B, h * w, h * w) / (self.embed_dim**0.5)
        attn = torch.softmax(scores, dim=-1)
        return attn[0] if squeeze else attn

    def aggregate(self, motion: torch.Tensor, attn: torch.Tensor) -> torch.Tensor:
        squeeze = motion.dim() == 3
        values = self.value_proj(motion.unsqueeze(0) if squeeze else motion)
        if squeeze:
            values = values[0]
        return aggregate_position(motion, attn, self.alpha, values)


def attention_map(module: PositionalAttention, g: torch.Tensor) -> torch.Tensor:
    return module.attention_map(g)
