"""Pinhole camera geometry: disparity/depth, 3D back-projection and projection,
scene-flow warping, optical-flow derivation, and bilinear warping.

Conventions used throughout the package:
  * pixel coordinates are (u, v) = (column, row), origin at the top-left
    pixel center;
  * disparity fields are (..., H, W), strictly positive, in pixels;
  * depth fields are (..., H, W), in meters;
  * 3D point maps and scene-flow fields are (..., 3, H, W), camera
    coordinates of the reference frame, meters;
  * 2D flows / pixel positions are (..., H, W, 2) in (u, v) order.

All operations are pure tensor functions and differentiable wherever
defined. Out-of-frustum points are reported through validity masks, never
exceptions: intermediate iterates legitimately project outside the image.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

# Predicted disparity is clamped to this floor before depth conversion so
# depth stays finite.
DISPARITY_FLOOR = 1e-3

_Z_EPS = 1e-6


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with isotropic focal length and stereo baseline.

    K must be the canonical [[f, 0, cx], [0, f, cy], [0, 0, 1]] form
    (fx == fy == f, no skew); anisotropic intrinsics are rejected.
    """

    K: torch.Tensor
    f: float
    b: float

    def __post_init__(self) -> None:
        K = torch.as_tensor(self.K, dtype=torch.float64)
        if K.shape != (3, 3):
            raise ValueError(f"K must be 3x3, got {tuple(K.shape)}")
        if not self.f > 0:
            raise ValueError(f"focal length must be positive, got {self.f}")
        if not self.b > 0:
            raise ValueError(f"baseline must be positive, got {self.b}")
        if abs(float(K[0, 0]) - self.f) > 1e-9 * max(1.0, self.f):
            raise ValueError("K[0,0] must equal f")
        if abs(float(K[1, 1]) - self.f) > 1e-9 * max(1.0, self.f):
            raise ValueError("anisotropic intrinsics (fx != fy) are not supported")
        expected_zeros = [(0, 1), (1, 0), (2, 0), (2, 1)]
        if any(abs(float(K[i, j])) > 1e-12 for i, j in expected_zeros) or abs(
            float(K[2, 2]) - 1.0
        ) > 1e-12:
            raise ValueError("K must be a canonical pinhole intrinsic matrix")
        object.__setattr__(self, "K", K)

    @property
    def cx(self) -> float:
        return float(self.K[0, 2])

    @property
    def cy(self) -> float:
        return float(self.K[1, 2])

    @property
    def K_inv(self) -> torch.Tensor:
        f, cx, cy = self.f, self.cx, self.cy
        return torch.tensor(
            [[1.0 / f, 0.0, -cx / f], [0.0, 1.0 / f, -cy / f], [0.0, 0.0, 1.0]],
            dtype=torch.float64,
        )

    def scaled(self, factor: float) -> "CameraModel":
        """Camera for a resolution scaled by `factor` (e.g. 1/8 for feature maps).

        K is scaled directly; sub-pixel coordinates at the low resolution are
        interpreted against the scaled intrinsics.
        """
        K = self.K.clone()
        K[0, 0] *= factor
        K[1, 1] *= factor
        K[0, 2] *= factor
        K[1, 2] *= factor
        return replace(self, K=K, f=self.f * factor)


def pixel_grid(
    height: int,
    width: int,
    *,
    dtype: torch.dtype = torch.float64,
    device: torch.device | None = None,
) -> torch.Tensor:
    """(H, W, 2) grid of pixel-center coordinates in (u, v) order."""
    v, u = torch.meshgrid(
        torch.arange(height, dtype=dtype, device=device),
        torch.arange(width, dtype=dtype, device=device),
        indexing="ij",
    )
    return torch.stack([u, v], dim=-1)


def clamp_disparity(disparity: torch.Tensor, floor: float = DISPARITY_FLOOR) -> torch.Tensor:
    return disparity.clamp_min(floor)


def _check_positive_disparity(disparity: torch.Tensor) -> None:
    good = disparity > 0  # NaN compares false, so it is caught too
    if not torch.all(good):
        bad = (~good).nonzero()[0].tolist()
        raise ValueError(f"non-positive disparity at index {tuple(bad)}")


def disparity_to_depth(disparity: torch.Tensor, cam: CameraModel) -> torch.Tensor:
    """depth = f * b / disparity. Raises on non-positive disparity."""
    _check_positive_disparity(disparity)
    return cam.f * cam.b / disparity


def depth_to_disparity(depth: torch.Tensor, cam: CameraModel) -> torch.Tensor:
    """Inverse of disparity_to_depth (same hyperbola)."""
    if not torch.all(depth > 0):
        bad = (depth <= 0).nonzero()[0].tolist()
        raise ValueError(f"non-positive depth at index {tuple(bad)}")
    return cam.f * cam.b / depth


def backproject(depth: torch.Tensor, cam: CameraModel) -> torch.Tensor:
    """Lift a depth map to a 3D point map: P = depth * K^-1 (u, v, 1).

    depth: (..., H, W) -> points: (..., 3, H, W).
    """
    h, w = depth.shape[-2:]
    grid = pixel_grid(h, w, dtype=depth.dtype, device=depth.device)
    ones = torch.ones(h, w, dtype=depth.dtype, device=depth.device)
    hom = torch.stack([grid[..., 0], grid[..., 1], ones], dim=0)  # (3, H, W)
    rays = torch.einsum("ij,jhw->ihw", cam.K_inv.to(depth.dtype), hom)
    return depth.unsqueeze(-3) * rays


def project(points: torch.Tensor, cam: CameraModel) -> tuple[torch.Tensor, torch.Tensor]:
    """Perspective projection of a point map.

    points: (..., 3, H, W) -> (pixels (..., H, W, 2), valid (..., H, W)).
    Points with z <= 0 are flagged invalid (out of frustum), not raised: the
    returned coordinates there come from a clamped z and must not be used.
    """
    x = points[..., 0, :, :]
    y = points[..., 1, :, :]
    z = points[..., 2, :, :]
    valid = z > 0
    zc = z.clamp_min(_Z_EPS)
    u = cam.f * x / zc + cam.cx
    v = cam.f * y / zc + cam.cy
    return torch.stack([u, v], dim=-1), valid


def apply_scene_flow(points: torch.Tensor, scene_flow: torch.Tensor) -> torch.Tensor:
    """Element-wise 3D displacement: P + s."""
    if points.shape != scene_flow.shape:
        raise ValueError(
            f"shape mismatch: points {tuple(points.shape)} vs scene flow {tuple(scene_flow.shape)}"
        )
    return points + scene_flow


def flow_from_sceneflow(
    disparity: torch.Tensor, scene_flow: torch.Tensor, cam: CameraModel
) -> tuple[torch.Tensor, torch.Tensor]:
    """Optical flow induced by a disparity + scene-flow pair.

    flow = project(backproject(depth(disparity)) + s) - pixel grid.
    Returns (flow (..., H, W, 2), valid (..., H, W)); validity comes from the
    projection (z <= 0 after displacement).
    """
    depth = disparity_to_depth(disparity, cam)
    points = apply_scene_flow(backproject(depth, cam), scene_flow)
    pix, valid = project(points, cam)
    h, w = disparity.shape[-2:]
    grid = pixel_grid(h, w, dtype=pix.dtype, device=pix.device)
    return pix - grid, valid


def bilinear_sample(
    field: torch.Tensor, coords: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Bilinear sampling of (B, C, H, W) at absolute pixel coords (B, N, 2).

    Zero padding outside the image; returns (samples (B, C, N),
    in_bounds (B, N)) where in_bounds marks coords inside
    [0, W-1] x [0, H-1]. Differentiable with respect to both arguments.
    """
    B, C, H, W = field.shape
    # non-finite coordinates read as out-of-bounds zeros rather than crashing
    coords = torch.nan_to_num(coords, nan=-1e9, posinf=1e9, neginf=-1e9)
    x = coords[..., 0]
    y = coords[..., 1]

    x0 = torch.floor(x)
    y0 = torch.floor(y)
    x1 = x0 + 1
    y1 = y0 + 1

    wx1 = x - x0
    wy1 = y - y0
    wx0 = 1.0 - wx1
    wy0 = 1.0 - wy1

    flat = field.reshape(B, C, H * W)

    def corner(xi: torch.Tensor, yi: torch.Tensor, wgt: torch.Tensor) -> torch.Tensor:
        inside = (xi >= 0) & (xi <= W - 1) & (yi >= 0) & (yi <= H - 1)
        xi_c = xi.clamp(0, W - 1).long()
        yi_c = yi.clamp(0, H - 1).long()
        idx = (yi_c * W + xi_c).unsqueeze(1).expand(B, C, -1)
        vals = torch.gather(flat, 2, idx)
        return vals * (wgt * inside.to(field.dtype)).unsqueeze(1)

    out = (
        corner(x0, y0, wx0 * wy0)
        + corner(x1, y0, wx1 * wy0)
        + corner(x0, y1, wx0 * wy1)
        + corner(x1, y1, wx1 * wy1)
    )
    in_bounds = (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    return out, in_bounds


def warp_bilinear(
    field: torch.Tensor, flow: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Warp a field by a flow: output(p) = field(p + flow(p)).

    field: (..., C, H, W), flow: (..., H, W, 2). Returns (warped field,
    in-bounds mask (..., H, W)); samples outside [0, W-1] x [0, H-1] read
    zeros and are masked out.
    """
    squeeze = field.dim() == 3
    if squeeze:
        field = field.unsqueeze(0)
        flow = flow.unsqueeze(0)
    B, C, H, W = field.shape
    grid = pixel_grid(H, W, dtype=flow.dtype, device=flow.device)
    coords = (grid + flow).reshape(B, H * W, 2)
    samples, in_bounds = bilinear_sample(field, coords)
    warped = samples.reshape(B, C, H, W)
    mask = in_bounds.reshape(B, H, W)
    if squeeze:
        return warped[0], mask[0]
    return warped, mask
