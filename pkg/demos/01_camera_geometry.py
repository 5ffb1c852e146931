"""Pinhole geometry walkthrough: disparity, depth, 3D points, warping.

Run:  python demos/01_camera_geometry.py
"""

import numpy as np
import torch

from msflow import (
    CameraModel,
    backproject,
    depth_to_disparity,
    disparity_to_depth,
    flow_from_sceneflow,
    pixel_grid,
    project,
    warp_bilinear,
)

# A KITTI-flavoured camera: 120 px focal length, 30 cm baseline.
cam = CameraModel(
    K=torch.tensor([[120.0, 0.0, 63.5], [0.0, 120.0, 31.5], [0.0, 0.0, 1.0]]),
    f=120.0,
    b=0.3,
)
print("camera:", f"f={cam.f}px  b={cam.b}m  principal=({cam.cx}, {cam.cy})")

# Disparity and depth are two views of the same quantity: d_hat = f*b/d.
disparity = torch.tensor([[1.0, 2.0, 4.0, 9.0]], dtype=torch.float64)
depth = disparity_to_depth(disparity, cam)
print("\ndisparity [px]:", disparity.numpy().round(3).tolist()[0])
print("depth     [m] :", depth.numpy().round(3).tolist()[0])
roundtrip = depth_to_disparity(depth, cam)
print("roundtrip error:", float((roundtrip - disparity).abs().max()))

# Back-projection lifts every pixel to a 3D point; projection inverts it.
depth_map = torch.full((32, 64), 12.0, dtype=torch.float64)
points = backproject(depth_map, cam)
pix, valid = project(points, cam)
err = (pix - pixel_grid(32, 64)).abs().max()
print("\nproject(backproject(depth)) grid error:", float(err))

# A rigid scene-flow field moves the points; the induced optical flow is
# the projected displacement. Pure forward motion makes everything stream
# away from the principal point (the epipole), here pixel (63.5, 31.5).
sf = torch.zeros(3, 64, 128, dtype=torch.float64)
sf[2] = -1.0  # everything 1 m closer
flow, _ = flow_from_sceneflow(torch.full((64, 128), 3.0, dtype=torch.float64), sf, cam)
mag = flow.norm(dim=-1)
print("\npure forward motion: flow next to the epipole %.3f px, far corner %.2f px"
      % (mag[31, 63].item(), mag[0, 127].item()))

# Bilinear warping resamples one image at flow-displaced positions and
# reports which samples stayed inside the frame.
rng = np.random.default_rng(0)
image = torch.tensor(rng.uniform(0, 1, size=(3, 32, 64)))
shift = torch.zeros(32, 64, 2, dtype=torch.float64)
shift[..., 0] = 1.5
warped, inbounds = warp_bilinear(image, shift)
print("\nwarp by 1.5 px: in-bounds fraction %.3f" % inbounds.double().mean().item())
print("left column now blends its two right neighbours:",
      torch.allclose(warped[:, :, 0], 0.5 * image[:, :, 1] + 0.5 * image[:, :, 2]))
