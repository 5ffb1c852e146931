"""Bidirectional recurrent scene-flow model.

A shared feature/context encoder feeds two correlation pyramids
(reference vs. next frame, reference vs. previous frame). Both temporal
branches run the same update weights: look up correlation at positions
projected from the current disparity/scene-flow iterate, project GMFs
from both hidden states, fuse them (the opposite direction's GMF enters
gradient-detached), encode motion features, aggregate them with
position-only attention, step the GRU, decode and apply residuals, and
record convexly upsampled snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .attention import PositionalAttention
from .correlation import CorrelationPyramid, build_corr_pyramid
from .encoders import ContextEncoder, FeatureEncoder
from .geometry import (
    CameraModel,
    apply_scene_flow,
    backproject,
    clamp_disparity,
    pixel_grid,
    project,
)
from .gmf import GmfProjection, MotionEncoder, TemporalFusion
from .update import ConvexUpsampler, ConvGRU, DisparityInit, ResidualHeads, UPSAMPLE


@dataclass
class ModelConfig:
    feat_channels: int = 64
    context_channels: int = 48
    hidden_channels: int = 48
    gmf_channels: int = 64
    motion_channels: int = 96
    corr_radius: int = 3
    embed_dim: int = 32
    attn_base_shape: tuple[int, int] = (8, 16)
    dtype: torch.dtype = torch.float64

    @property
    def corr_channels(self) -> int:
        return 4 * (2 * self.corr_radius + 1) ** 2


@dataclass
class SceneFlowState:
    """Per-direction iterate at 1/8 resolution."""

    s: torch.Tensor  # (B, 3, h, w) scene flow, meters
    d: torch.Tensor  # (B, 1, h, w) disparity, 1/8-res pixels, > 0
    h: torch.Tensor  # (B, Ch, h, w) GRU hidden state, in (-1, 1)
    gmf: torch.Tensor  # (B, Cm, h, w)
    direction: str
    iteration: int = 0


@dataclass
class Snapshot:
    """One iteration's outputs for one direction."""

    s_low: torch.Tensor  # (B, 3, h, w)
    d_low: torch.Tensor  # (B, 1, h, w)
    s_full: torch.Tensor  # (B, 3, H, W), meters (resolution-independent)
    d_full: torch.Tensor  # (B, 1, H, W), full-res pixels (scaled by 8)


@dataclass
class IterationTrace:
    forward: list[Snapshot] = field(default_factory=list)
    backward: list[Snapshot] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.forward)

    def disparity_full(self, i: int = -1) -> torch.Tensor:
        """Averaged full-resolution disparity of iteration i."""
        return average_disparity(self.forward[i].d_full, self.backward[i].d_full)

    def select(self, start: int, stop: int) -> "IterationTrace":
        """Narrow every snapshot to a batch slice (keeps autograd views)."""

        def cut(snaps: list[Snapshot]) -> list[Snapshot]:
            return [
                Snapshot(
                    s_low=s.s_low[start:stop],
                    d_low=s.d_low[start:stop],
                    s_full=s.s_full[start:stop],
                    d_full=s.d_full[start:stop],
                )
                for s in snaps
            ]

        return IterationTrace(forward=cut(self.forward), backward=cut(self.backward))


def average_disparity(d_f: torch.Tensor, d_b: torch.Tensor) -> torch.Tensor:
    """Final disparity is the mean of the two directions' estimates."""
    if d_f.shape != d_b.shape:
        raise ValueError(f"shape mismatch: {tuple(d_f.shape)} vs {tuple(d_b.shape)}")
    return (d_f + d_b) / 2


def apply_residuals(
    state: SceneFlowState, delta_s: torch.Tensor, delta_d: torch.Tensor
) -> SceneFlowState:
    """s' = s + ds; d' = clamp(d + dd, floor). Returns a new state."""
    return SceneFlowState(
        s=state.s + delta_s,
        d=clamp_disparity(state.d + delta_d),
        h=state.h,
        gmf=state.gmf,
        direction=state.direction,
        iteration=state.iteration,
    )


class SceneFlowModel(nn.Module):
    """Three frames + camera -> N refinement iterations of (scene flow, disparity)."""

    def __init__(self, config: ModelConfig | None = None, seed: int | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        if seed is not None:
            torch.manual_seed(seed)
        self.fnet = FeatureEncoder(cfg.feat_channels, dtype=cfg.dtype)
        self.cnet = ContextEncoder(cfg.context_channels, cfg.hidden_channels, dtype=cfg.dtype)
        self.gmf_proj = GmfProjection(cfg.hidden_channels, cfg.gmf_channels, dtype=cfg.dtype)
        self.fusion = TemporalFusion(cfg.gmf_channels, dtype=cfg.dtype)
        self.motion_enc = MotionEncoder(
            cfg.corr_channels, cfg.gmf_channels, cfg.motion_channels, dtype=cfg.dtype
        )
        self.attention = PositionalAttention(
            cfg.context_channels,
            cfg.motion_channels,
            cfg.embed_dim,
            cfg.attn_base_shape,
            dtype=cfg.dtype,
        )
        self.gru = ConvGRU(
            cfg.hidden_channels,
            2 * cfg.motion_channels + cfg.context_channels,
            dtype=cfg.dtype,
        )
        self.heads = ResidualHeads(cfg.hidden_channels, dtype=cfg.dtype)
        self.disp_init = DisparityInit(cfg.feat_channels, dtype=cfg.dtype)
        self.upsampler = ConvexUpsampler(cfg.hidden_channels, dtype=cfg.dtype)
        self.gmf_init = nn.Parameter(
            torch.randn(cfg.gmf_channels, 1, 1, dtype=cfg.dtype) * 0.1
        )

    def init_state(
        self, context: tuple[torch.Tensor, torch.Tensor], feat_ref: torch.Tensor, direction: str
    ) -> SceneFlowState:
        """Zero scene flow, positive disparity from the reference features,
        hidden state from the context encoder, learnable GMF init."""
        g, h0 = context
        B, _, h, w = feat_ref.shape
        d0 = clamp_disparity(self.disp_init(feat_ref))
        return SceneFlowState(
            s=torch.zeros(B, 3, h, w, dtype=feat_ref.dtype, device=feat_ref.device),
            d=d0,
            h=h0,
            gmf=self.gmf_init.expand(B, -1, h, w).clone(),
            direction=direction,
            iteration=0,
        )

    def gru_step(
        self,
        state: SceneFlowState,
        m_pos: torch.Tensor,
        m: torch.Tensor,
        g: torch.Tensor,
    ) -> torch.Tensor:
        return self.gru(state.h, torch.cat([m_pos, m, g], dim=-3))

    def decode_residuals(self, hidden: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.heads(hidden)

    def run_iterations(
        self,
        frames: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
        cam: CameraModel,
        n_iterations: int,
    ) -> IterationTrace:
        """Refine both directions for n_iterations and record every snapshot.

        frames: (previous, reference, next), each (3, H, W) or (B, 3, H, W)
        in [0, 1]; cam holds full-resolution intrinsics. The two directions
        run stacked through the shared-weight modules (forward first,
        backward second along the batch axis).
        """
        if n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        dtype = self.config.dtype
        prev, ref, nxt = (f.to(dtype) for f in frames)
        squeeze = ref.dim() == 3
        if squeeze:
            prev, ref, nxt = prev.unsqueeze(0), ref.unsqueeze(0), nxt.unsqueeze(0)

        feats = self.fnet(torch.cat([ref, nxt, prev], dim=0))
        B = ref.shape[0]
        feat_ref, feat_next, feat_prev = feats[:B], feats[B : 2 * B], feats[2 * B :]
        g, h0 = self.cnet(ref)

        pyr_fwd = build_corr_pyramid(feat_ref, feat_next, "forward")
        pyr_bwd = build_corr_pyramid(feat_ref, feat_prev, "backward")
        # one stacked pyramid: forward rows first, backward rows second
        pyr = CorrelationPyramid(
            [torch.cat([a, b], dim=0) for a, b in zip(pyr_fwd.levels, pyr_bwd.levels)],
            "stacked",
        )
        cam8 = cam.scaled(1.0 / UPSAMPLE)
        _, _, h, w = feat_ref.shape
        grid = pixel_grid(h, w, dtype=feat_ref.dtype, device=feat_ref.device).expand(
            2 * B, -1, -1, -1
        )

        init = self.init_state((g, h0), feat_ref, "forward")
        s = torch.cat([init.s, init.s], dim=0)
        d = torch.cat([init.d, init.d], dim=0)
        hid = torch.cat([init.h, init.h], dim=0)
        gmf = torch.cat([init.gmf, init.gmf], dim=0)
        attn = self.attention.attention_map(g)
        attn2 = torch.cat([attn, attn], dim=0)
        g2 = torch.cat([g, g], dim=0)

        trace = IterationTrace()
        for _ in range(n_iterations):
            # d is clamped positive; plain formula so a diverging iterate
            # flows to the trainer's finiteness check instead of raising here
            depth = cam8.f * cam8.b / d[:, 0]
            points = apply_scene_flow(backproject(depth, cam8), s)
            pix, _ = project(points, cam8)
            corr = pyr.lookup(pix, self.config.corr_radius)
            f_of = (pix - grid).permute(0, 3, 1, 2)

            fused_f, fused_b = self.fusion.fuse_bidirectional(gmf[:B], gmf[B:])
            fused = torch.cat([fused_f, fused_b], dim=0)
            m = self.motion_enc(s, f_of, d, corr, fused)
            m_pos = self.attention.aggregate(m, attn2)
            hid = self.gru(hid, torch.cat([m_pos, m, g2], dim=-3))
            delta_s, delta_d = self.decode_residuals(hid)
            s = s + delta_s
            d = clamp_disparity(d + delta_d)
            gmf = self.gmf_proj(hid)

            s_full = self.upsampler(s, hid)
            d_full = self.upsampler(d, hid, scale=float(UPSAMPLE))
            trace.forward.append(
                Snapshot(s_low=s[:B], d_low=d[:B], s_full=s_full[:B], d_full=d_full[:B])
            )
            trace.backward.append(
                Snapshot(s_low=s[B:], d_low=d[B:], s_full=s_full[B:], d_full=d_full[B:])
            )
        return trace

    forward = run_iterations
