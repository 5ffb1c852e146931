"""End-to-end miniature: synthesize, train briefly, evaluate, render maps.

This is the full pipeline at toy scale (60 steps rather than 300) so it
finishes in about two minutes; the CLI wires the same pieces together
(see README). Writes into demos/out/pipeline/.

Run:  python demos/06_train_eval_pipeline.py
"""

import warnings
from pathlib import Path

import torch

from msflow.config import RunConfig
from msflow.dataset import SequenceBatch
from msflow.inference import evaluate_prediction, predict
from msflow.metrics import occlusion_split, outlier_map, render_error_map
from msflow.model import SceneFlowModel
from msflow.synthetic import SceneConfig, synth_scene
from msflow.train import Trainer

warnings.simplefilter("ignore")
out = Path(__file__).parent / "out" / "pipeline"
out.mkdir(parents=True, exist_ok=True)

scene = synth_scene(SceneConfig(seed=3))
cam = scene.camera_model()
batch = SequenceBatch(
    frames=[torch.as_tensor(f) for f in scene.frames],
    rights=[torch.as_tensor(r) for r in scene.rights],
    cam=cam,
    regions_ref=scene.region_masks(1),
)

cfg = RunConfig(steps=60, log_every=10)
model = SceneFlowModel(cfg.model_config((64, 128)), seed=cfg.seed)
gt = scene.ground_truth(1)

before = evaluate_prediction(predict(model, batch.triplet_a(), cam, cfg.iterations), gt)
print("untrained:", before.as_dict())

trainer = Trainer(model, [batch], cfg, out / "run")
result = trainer.run()
print("loss: %.3f -> %.3f over %d steps"
      % (result.first_total, result.last_total, result.steps))

pred = predict(model, batch.triplet_a(), cam, cfg.iterations)
after = evaluate_prediction(pred, gt)
print("trained:  ", after.as_dict())

# error map for the scene-flow outliers, occluded pixels darkened
import cv2

d1_map = outlier_map(pred.d1, gt.d1, gt.valid_d1_occ, "disparity")
d2_map = outlier_map(pred.d2, gt.d2, gt.valid_d2_occ, "disparity")
fl_map = outlier_map(pred.fl, gt.fl, gt.valid_fl_occ, "flow")
joint = gt.valid_d1_occ & gt.valid_d2_occ & gt.valid_fl_occ
sf = (d1_map | d2_map | fl_map) & joint
_, occ_set = occlusion_split(gt)
img = render_error_map(sf, joint, occ_set)
cv2.imwrite(str(out / "sf_error.png"), img[..., ::-1])
print("wrote", out / "sf_error.png")
