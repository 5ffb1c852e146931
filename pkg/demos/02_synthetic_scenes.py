"""Render a synthetic rigid scene and inspect its exact ground truth.

Run:  python demos/02_synthetic_scenes.py
Writes preview PNGs to demos/out/.
"""

from pathlib import Path

import numpy as np
import torch

from msflow import flow_from_sceneflow
from msflow.kitti_io import write_image_png
from msflow.synthetic import SceneConfig, synth_scene

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

scene = synth_scene(SceneConfig(seed=3))
cfg = scene.config
print(f"{cfg.n_frames} frames at {cfg.height}x{cfg.width}, {cfg.n_boxes} boxes "
      f"+ ground + backdrop, seed {cfg.seed}")
print("depth range: %.1f .. %.1f m" % (scene.depth[1].min(), scene.depth[1].max()))
print("disparity range: %.2f .. %.2f px" % (scene.disp[1].min(), scene.disp[1].max()))
print("temporally occluded pixels (frame 1 -> 2): %.1f%%" % (100 * scene.occ_fwd[1].mean()))

write_image_png(out / "frame_left.png", scene.frames[1])
write_image_png(out / "frame_right.png", scene.rights[1])

# depth as a normalized grayscale preview
z = scene.depth[1]
zn = (z - z.min()) / (z.max() - z.min())
write_image_png(out / "depth.png", np.repeat(zn[None], 3, axis=0))

# occlusion mask preview
write_image_png(out / "occlusion.png", np.repeat(scene.occ_fwd[1][None].astype(float), 3, 0))

# the headline identity: the generator's optical flow equals the flow
# derived from its disparity + scene flow through the camera model
cam = scene.camera_model()
flow, _ = flow_from_sceneflow(
    torch.as_tensor(scene.disp[1]), torch.as_tensor(scene.sf_fwd[1]), cam
)
err = np.abs(flow.numpy() - scene.flow_fwd[1])[scene.valid_fwd[1]]
print("flow identity max error: %.2e px" % err.max())

# region ids double as stand-in segmentation masks
ids = scene.regions[1]
palette = np.array([[0, 0, 0], [214, 73, 48], [48, 160, 73], [73, 48, 214],
                    [214, 180, 48], [48, 180, 214], [160, 160, 160], [240, 120, 200]])
seg = palette[ids % len(palette)].transpose(2, 0, 1) / 255.0
write_image_png(out / "regions.png", seg)

print("wrote previews to", out)
