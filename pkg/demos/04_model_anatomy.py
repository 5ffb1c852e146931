"""Open up one refinement iteration: correlation lookup, GMF fusion,
positional attention, GRU update, convex upsampling.

Run:  python demos/04_model_anatomy.py
"""

import torch

from msflow.model import ModelConfig, SceneFlowModel
from msflow.synthetic import SceneConfig, synth_scene

scene = synth_scene(SceneConfig(seed=3))
cam = scene.camera_model()
frames = tuple(torch.as_tensor(f) for f in scene.frames[:3])

model = SceneFlowModel(ModelConfig(), seed=0)
n_params = sum(p.numel() for p in model.parameters())
print(f"model: {n_params/1e6:.2f}M parameters, dtype {model.config.dtype}")

# Record what enters the temporal fusion: the forward branch sees its own
# GMF concatenated with the negated backward GMF, and vice versa.
log = []
model.fusion.input_hook = lambda direction, x: log.append((direction, x.shape))
trace = model.run_iterations(frames, cam, n_iterations=3)
model.fusion.input_hook = None
print("\nfusion inputs per iteration (direction, channels x h x w):")
for direction, shape in log[:4]:
    print("  ", direction, tuple(shape))

# The attention map is position-only: row-stochastic over all source cells.
g, _ = model.cnet(frames[1].unsqueeze(0))
A = model.attention.attention_map(g)
print("\nattention: shape", tuple(A.shape), " row sums ~", float(A.sum(-1).mean()))
print("alpha (residual gate, learnable, starts at 0):", float(model.attention.alpha.detach()))

# Snapshots hold both resolutions; disparity upsampling rescales units by 8
snap = trace.forward[-1]
print("\nfinal forward snapshot:")
print("  scene flow  1/8:", tuple(snap.s_low.shape), " full:", tuple(snap.s_full.shape))
print("  disparity   1/8:", tuple(snap.d_low.shape), " full:", tuple(snap.d_full.shape))
print("  disparity means: low %.3f px, full %.3f px (x8 rescale)"
      % (snap.d_low.mean().item(), snap.d_full.mean().item()))

# Residual refinement telescopes: the final field is the sum of updates.
deltas = [trace.forward[0].s_low] + [
    trace.forward[i].s_low - trace.forward[i - 1].s_low for i in range(1, 3)
]
err = (sum(deltas) - snap.s_low).abs().max().item()
print("\nresidual telescoping error: %.1e" % err)
