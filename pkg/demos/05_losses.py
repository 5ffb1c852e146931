"""The self-supervised loss stack, term by term, on exact ground truth.

Run:  python demos/05_losses.py
"""

import warnings

import numpy as np
import torch

from msflow import photometric_loss, smoothness_loss, total_loss, warp_bilinear
from msflow.synthetic import SceneConfig, synth_scene

warnings.simplefilter("ignore")

scene = synth_scene(SceneConfig(seed=3))
I_t = torch.as_tensor(scene.frames[1])
I_right = torch.as_tensor(scene.rights[1])

# Photometric: warp the right view by the true disparity and compare.
d = torch.as_tensor(scene.disp[1])
stereo_flow = torch.stack([-d, torch.zeros_like(d)], dim=-1)
warped, inb = warp_bilinear(I_right, stereo_flow)
mask = inb & ~torch.as_tensor(scene.stereo_occ[1])
print("photometric at true disparity: %.5f" % photometric_loss(I_t, warped, mask).item())
print("photometric at 2x disparity:   %.5f"
      % photometric_loss(I_t, warp_bilinear(I_right, 2 * stereo_flow)[0], mask).item())

# Smoothness: edge-aware, so discontinuities are cheap only on image edges.
flat_img = torch.full_like(I_t, 0.5)
step_field = torch.zeros(64, 128, dtype=torch.float64)
step_field[:, 64:] = 1.0
print("\nstep field on flat image:   %.5f" % smoothness_loss(step_field, flat_img).item())
edge_img = flat_img.clone()
edge_img[:, :, 64:] = 1.0
print("same field on edged image:  %.5f" % smoothness_loss(step_field, edge_img).item())

# The iteration-weighted total: later iterations dominate (decay^(N-i)).
n = 10
rng = np.random.default_rng(0)
disp_terms = [torch.tensor(v) for v in rng.uniform(0.2, 0.4, size=n)]
sf_terms = [torch.tensor(v) for v in rng.uniform(0.2, 0.4, size=n)]
occ = torch.tensor(0.05)
total, report = total_loss(disp_terms, sf_terms, occ, decay=0.8, occ_weight=1.0, sf_weight=0.1)
print("\niteration weights:", [round(w, 4) for w in report.iteration_weights()])
print("total: %.4f  (reconstructed from the report: %.4f)"
      % (total.item(), report.expected_total()))

# The timing flag moves the occlusion term between final-only and decayed.
occ_terms = [torch.tensor(0.05)] * n
total_all, _ = total_loss(disp_terms, sf_terms, occ_terms, decay=0.8,
                          occ_weight=1.0, sf_weight=0.1, timing="all")
print("final-only occlusion: %.4f   every-iteration occlusion: %.4f"
      % (total.item(), total_all.item()))
