"""Closed-form least-squares rigid alignment of 3D point sets (Kabsch).

Used to anchor per-region motion during occlusion regularization: the
transform fitted on reliable (visible, consistent) points is applied to the
whole region, occluded points included.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


class RigidFitError(ValueError):
    """Raised when a rigid fit is degenerate (too few or collinear points)."""


@dataclass(frozen=True)
class RigidTransform:
    """Rotation R (3x3, det +1) and translation T (3,), meters."""

    R: torch.Tensor
    T: torch.Tensor

    def __post_init__(self) -> None:
        if self.R.shape != (3, 3) or self.T.shape != (3,):
            raise ValueError("RigidTransform needs a 3x3 R and a 3-vector T")

    def apply(self, points: torch.Tensor) -> torch.Tensor:
        """Transform points of shape (..., 3) or (3, N)."""
        if points.shape[0] == 3 and points.dim() == 2:
            return self.R @ points + self.T.unsqueeze(1)
        return points @ self.R.T + self.T


def rigid_fit_svd(p_src: torch.Tensor, p_dst: torch.Tensor) -> RigidTransform:
    """Least-squares rigid transform mapping p_src onto p_dst.

    Kabsch: remove centroids, SVD the cross-covariance, fix a possible
    reflection via the determinant sign, then T = c_dst - R c_src.

    p_src, p_dst: (N, 3) with N >= 3 non-collinear correspondences.
    Raises RigidFitError for fewer than 3 points or a rank-deficient
    covariance (collinear points leave a rotation about the line free).
    """
    if p_src.shape != p_dst.shape or p_src.dim() != 2 or p_src.shape[1] != 3:
        raise ValueError(
            f"expected matching (N, 3) point sets, got {tuple(p_src.shape)} and {tuple(p_dst.shape)}"
        )
    n = p_src.shape[0]
    if n < 3:
        raise RigidFitError(f"rigid fit needs at least 3 correspondences, got {n}")

    src = p_src.to(torch.float64)
    dst = p_dst.to(torch.float64)
    c_src = src.mean(dim=0)
    c_dst = dst.mean(dim=0)
    src_c = src - c_src
    dst_c = dst - c_dst

    H = src_c.T @ dst_c
    U, S, Vt = torch.linalg.svd(H)

    # Rank < 2 means the points are (numerically) collinear; the in-line
    # rotation component is unobservable.
    scale = max(float(S[0]), torch.finfo(torch.float64).tiny)
    if float(S[1]) <= 1e-9 * scale:
        raise RigidFitError("rank-deficient covariance: points are collinear")

    d = torch.sign(torch.det(Vt.T @ U.T))
    D = torch.diag(torch.tensor([1.0, 1.0, float(d)], dtype=torch.float64))
    R = Vt.T @ D @ U.T
    T = c_dst - R @ c_src
    return RigidTransform(R=R, T=T)
