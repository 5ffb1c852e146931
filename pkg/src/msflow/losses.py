"""Self-supervised loss stack.

Standard terms (SSIM+L1 photometric, first-order edge-aware smoothness,
point-to-point 3D consistency) are intentionally simple re-implementations;
the substantive piece is the occlusion regularization: per segmentation
region, a rigid transform is fitted by SVD on reliable (visible,
geometrically consistent, near) points and its prediction anchors every
pixel of the region, occluded ones included. The rigid anchor is
gradient-stopped, so the loss pulls the flow/depth prediction toward the
fitted motion, never the other way around.

Iteration-weighted totals follow
    L = occ_weight * L_occ + sum_i decay^(N-i) (L_d^i + sf_weight * L_sf^i),
with a timing flag choosing whether L_occ enters only at the final
iteration or decayed at every iteration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .geometry import (
    CameraModel,
    backproject,
    clamp_disparity,
    disparity_to_depth,
    flow_from_sceneflow,
    pixel_grid,
    warp_bilinear,
)
from .rigid import RigidFitError, RigidTransform, rigid_fit_svd

SSIM_WEIGHT = 0.85
# Forward-backward consistency thresholds for flow-like quantities.
FB_ALPHA1 = 0.01
FB_ALPHA2 = 0.5


class EmptyMaskWarning(UserWarning):
    """A masked reduction saw an empty mask and returned zero."""


@dataclass(frozen=True)
class OcclusionMasks:
    """Binary occlusion masks of the reference frame (True = occluded)."""

    occ_disp: torch.Tensor
    occ_sf: torch.Tensor


@dataclass(frozen=True)
class RegionMask:
    """One precomputed segmentation region (True inside)."""

    id: int
    mask: torch.Tensor
    source: str = ""


@dataclass
class OcclusionRegInfo:
    kept_ids: list[int] = field(default_factory=list)
    dropped_ids: list[int] = field(default_factory=list)
    transforms: dict[int, RigidTransform] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.kept_ids


@dataclass
class LossReport:
    """Per-iteration loss terms and the weights that combined them."""

    disp_terms: list[float]
    sf_terms: list[float]
    occ_terms: list[float]
    n_iterations: int
    decay: float
    occ_weight: float
    sf_weight: float
    occ_timing: str
    total: float

    def iteration_weights(self) -> list[float]:
        n = self.n_iterations
        return [self.decay ** (n - i) for i in range(1, n + 1)]

    def expected_total(self) -> float:
        w = self.iteration_weights()
        base = sum(
            wi * (ld + self.sf_weight * ls)
            for wi, ld, ls in zip(w, self.disp_terms, self.sf_terms)
        )
        if self.occ_timing == "final":
            occ = self.occ_terms[-1]
        else:
            occ = sum(wi * lo for wi, lo in zip(w, self.occ_terms))
        return base + self.occ_weight * occ


def masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of values over a boolean mask; empty mask -> 0 with a warning."""
    if mask.any():
        return values[mask].mean()
    warnings.warn("masked reduction over an empty mask", EmptyMaskWarning, stacklevel=3)
    return values.sum() * 0.0


def stable_norm(x: torch.Tensor, dim: int = 0) -> torch.Tensor:
    """L2 norm with a tiny floor inside the sqrt so the gradient stays
    finite at exactly-zero residuals (the floor adds at most 1e-12)."""
    return torch.sqrt(x.pow(2).sum(dim=dim) + 1e-24)


def _as_nchw(img: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if img.dim() == 3:
        return img.unsqueeze(0), True
    return img, False


def _ssim(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Per-pixel SSIM over 3x3 windows (same spatial size as the inputs)."""
    c1 = 0.01**2
    c2 = 0.03**2

    def pool(t: torch.Tensor) -> torch.Tensor:
        return F.avg_pool2d(t, 3, stride=1, padding=1, count_include_pad=False)

    mu_x = pool(x)
    mu_y = pool(y)
    sigma_x = pool(x * x) - mu_x**2
    sigma_y = pool(y * y) - mu_y**2
    sigma_xy = pool(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sigma_x + sigma_y + c2)
    return num / den


def photometric_loss(
    ref: torch.Tensor, tgt_warped: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """0.85 * (1 - SSIM)/2 + 0.15 * L1, averaged over masked pixels.

    ref, tgt_warped: (3, H, W) or (B, 3, H, W); mask: matching (..., H, W)
    booleans excluding occluded / out-of-bounds pixels.
    """
    ref, squeezed = _as_nchw(ref)
    tgt_warped, _ = _as_nchw(tgt_warped)
    if squeezed:
        mask = mask.unsqueeze(0)
    ssim_term = torch.clamp((1 - _ssim(ref, tgt_warped)) / 2, 0, 1).mean(dim=1)
    l1_term = (ref - tgt_warped).abs().mean(dim=1)
    per_pixel = SSIM_WEIGHT * ssim_term + (1 - SSIM_WEIGHT) * l1_term
    return masked_mean(per_pixel, mask)


def smoothness_loss(field_map: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
    """First-order edge-aware smoothness: mean |d field| * exp(-|d image|).

    field_map: (..., H, W) with optional channel dim; image: (3, H, W) or
    (B, 3, H, W). The two spatial directions contribute one mean each.
    """
    if field_map.dim() == 2:
        field_map = field_map.unsqueeze(0)
    field_map, squeezed = _as_nchw(field_map)
    image, _ = _as_nchw(image)

    grad_fx = (field_map[..., :, 1:] - field_map[..., :, :-1]).abs()
    grad_fy = (field_map[..., 1:, :] - field_map[..., :-1, :]).abs()
    wx = torch.exp(-(image[..., :, 1:] - image[..., :, :-1]).abs().mean(dim=1, keepdim=True))
    wy = torch.exp(-(image[..., 1:, :] - image[..., :-1, :]).abs().mean(dim=1, keepdim=True))
    return (grad_fx * wx).mean() + (grad_fy * wy).mean()


def _fb_inconsistency(
    fwd: torch.Tensor, bwd_warped: torch.Tensor, alpha1: float, alpha2: float
) -> torch.Tensor:
    """UnFlow-style test: |f + b(p+f)|^2 > a1 (|f|^2 + |b(p+f)|^2) + a2."""
    composed_sq = (fwd + bwd_warped).pow(2).sum(dim=-3)
    magnitude_sq = fwd.pow(2).sum(dim=-3) + bwd_warped.pow(2).sum(dim=-3)
    return composed_sq > alpha1 * magnitude_sq + alpha2


def occlusion_masks(
    d_fwd: torch.Tensor,
    d_bwd: torch.Tensor,
    s_fwd: torch.Tensor,
    s_bwd: torch.Tensor,
    cam: CameraModel,
    alpha1: float = FB_ALPHA1,
    alpha2: float = FB_ALPHA2,
) -> OcclusionMasks:
    """Forward-backward consistency occlusion masks for the reference frame.

    d_fwd/s_fwd describe the reference frame's disparity and forward scene
    flow, d_bwd/s_bwd the target frame's disparity and its scene flow back
    toward the reference. occ_sf tests the derived optical flows; occ_disp
    tests the temporal disparity change (the frame-to-frame disparity of a
    tracked point), since both disparities live in the left view. Pixels
    whose correspondence leaves the image count as occluded.
    """
    with torch.no_grad():
        squeeze = d_fwd.dim() == 2
        if squeeze:
            d_fwd, d_bwd = d_fwd.unsqueeze(0), d_bwd.unsqueeze(0)
            s_fwd, s_bwd = s_fwd.unsqueeze(0), s_bwd.unsqueeze(0)
        d_fwd = clamp_disparity(d_fwd)
        d_bwd = clamp_disparity(d_bwd)

        flow_f, valid_f = flow_from_sceneflow(d_fwd, s_fwd, cam)
        flow_b, _ = flow_from_sceneflow(d_bwd, s_bwd, cam)

        flow_b_w, _ = warp_bilinear(flow_b.permute(0, 3, 1, 2), flow_f)
        # in-bounds with subpixel slack: coordinate jitter at the exact
        # border must not read as an occlusion
        h, w = d_fwd.shape[-2:]
        grid = pixel_grid(h, w, dtype=flow_f.dtype, device=flow_f.device)
        coords = grid + flow_f
        tol = 1e-6
        inb = (
            (coords[..., 0] >= -tol)
            & (coords[..., 0] <= w - 1 + tol)
            & (coords[..., 1] >= -tol)
            & (coords[..., 1] <= h - 1 + tol)
        )
        flow_f_c = flow_f.permute(0, 3, 1, 2)
        occ_sf = _fb_inconsistency(flow_f_c, flow_b_w, alpha1, alpha2) | ~inb | ~valid_f

        def disparity_change(d: torch.Tensor, s: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
            depth = disparity_to_depth(d, cam)
            z2 = depth + s[..., 2, :, :]
            ok = z2 > 0
            return cam.f * cam.b / z2.clamp_min(1e-6) - d, ok

        dd_f, ok_f = disparity_change(d_fwd, s_fwd)
        dd_b, _ = disparity_change(d_bwd, s_bwd)
        dd_b_w, _ = warp_bilinear(dd_b.unsqueeze(1), flow_f)
        occ_disp = (
            _fb_inconsistency(dd_f.unsqueeze(1), dd_b_w, alpha1, alpha2)
            | ~inb
            | ~ok_f
            | ~valid_f
        )
        if squeeze:
            return OcclusionMasks(occ_disp=occ_disp[0], occ_sf=occ_sf[0])
        return OcclusionMasks(occ_disp=occ_disp, occ_sf=occ_sf)


def reliable_mask(
    region: RegionMask,
    occ: OcclusionMasks,
    p_warp: torch.Tensor,
    p_tgt: torch.Tensor,
    depth: torch.Tensor,
    theta: float,
    max_depth: float = 75.0,
    mean_depth_limit: float = 25.0,
    min_points: int = 10,
) -> tuple[torch.Tensor, bool]:
    """Reliable-point mask of one region plus its keep decision.

    Reliable points lie in the region, are non-occluded in both masks,
    agree in 3D with the target frame within theta, and sit at depth
    <= max_depth. The region is dropped when fewer than min_points survive
    or the mean reliable depth exceeds mean_depth_limit (far regions like
    sky carry unusable geometry).
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    consistent = (p_warp - p_tgt).pow(2).sum(dim=0).sqrt() < theta
    mask = region.mask & ~occ.occ_disp & ~occ.occ_sf & consistent & (depth <= max_depth)
    count = int(mask.sum())
    if count < min_points:
        return mask, False
    return mask, float(depth.detach()[mask].mean()) <= mean_depth_limit


def occlusion_regularization(
    regions: list[RegionMask],
    depth: torch.Tensor,
    s_fwd: torch.Tensor,
    occ: OcclusionMasks,
    cam: CameraModel,
    theta: float,
    target_points: torch.Tensor,
    min_points: int = 10,
    max_depth: float = 75.0,
) -> tuple[torch.Tensor, OcclusionRegInfo]:
    """Rigid-motion anchor loss over segmentation regions.

    Per kept region a rigid transform is fitted (SVD, no grad) between the
    reliable points' positions and their scene-flow-warped positions, then
    applied to every region pixel inside the max_depth cutoff (distant
    points are discarded everywhere); the loss is the mean distance between
    that (gradient-stopped) rigid prediction and the flow prediction P + s.
    Gradients reach depth and scene flow only through the direct P + s term.

    depth: (H, W); s_fwd: (3, H, W); target_points: (3, H, W) 3D points of
    the target frame sampled at the flow-warped positions (for the
    reliability test). Returns (loss, info); no kept regions -> (0, empty).
    """
    points = backproject(depth, cam)
    p_warp = points + s_fwd

    info = OcclusionRegInfo()
    total = depth.sum() * 0.0
    count = 0
    for region in sorted(regions, key=lambda r: r.id):
        mask, keep = reliable_mask(
            region, occ, p_warp, p_tgt=target_points, depth=depth, theta=theta,
            max_depth=max_depth, min_points=min_points,
        )
        if not keep:
            info.dropped_ids.append(region.id)
            continue
        with torch.no_grad():
            src = points[:, mask].T
            dst = p_warp[:, mask].T
            try:
                rt = rigid_fit_svd(src, dst)
            except RigidFitError:
                info.dropped_ids.append(region.id)
                continue
        info.kept_ids.append(region.id)
        info.transforms[region.id] = rt
        apply_mask = region.mask & (depth.detach() <= max_depth)
        region_pts = points[:, apply_mask]
        with torch.no_grad():
            anchor = (rt.R @ region_pts.double() + rt.T.unsqueeze(1)).to(region_pts.dtype)
        flow_pred = p_warp[:, apply_mask]
        total = total + stable_norm(anchor - flow_pred, dim=0).sum()
        count += int(apply_mask.sum())
    if count == 0:
        return total, info
    return total / count, info


def total_loss(
    disp_terms: list[torch.Tensor],
    sf_terms: list[torch.Tensor],
    occ_terms: list[torch.Tensor] | torch.Tensor,
    decay: float,
    occ_weight: float,
    sf_weight: float,
    timing: str = "final",
) -> tuple[torch.Tensor, LossReport]:
    """Iteration-weighted total; see the module docstring for the formula.

    disp_terms/sf_terms hold one entry per iteration (i = 1..N). occ_terms
    is a single tensor (or 1-list) when timing == "final", else one entry
    per iteration decayed with the same weights.
    """
    n = len(disp_terms)
    if n < 1:
        raise ValueError("need at least one iteration term")
    if len(sf_terms) != n:
        raise ValueError(f"sf_terms has {len(sf_terms)} entries, expected {n}")
    if not 0 < decay <= 1:
        raise ValueError("decay must lie in (0, 1]")
    if timing not in ("final", "all"):
        raise ValueError(f"unknown occ timing {timing!r}")
    if isinstance(occ_terms, torch.Tensor):
        occ_terms = [occ_terms]
    if timing == "all" and len(occ_terms) != n:
        raise ValueError(f"occ_terms has {len(occ_terms)} entries, expected {n}")

    weights = [decay ** (n - i) for i in range(1, n + 1)]
    total = sum(
        w * (ld + sf_weight * ls) for w, ld, ls in zip(weights, disp_terms, sf_terms)
    )
    if timing == "final":
        occ_part = occ_terms[-1]
    else:
        occ_part = sum(w * lo for w, lo in zip(weights, occ_terms))
    total = total + occ_weight * occ_part

    report = LossReport(
        disp_terms=[float(t.detach()) for t in disp_terms],
        sf_terms=[float(t.detach()) for t in sf_terms],
        occ_terms=[float(t.detach()) for t in occ_terms],
        n_iterations=n,
        decay=decay,
        occ_weight=occ_weight,
        sf_weight=sf_weight,
        occ_timing=timing,
        total=float(total.detach()),
    )
    return total, report
