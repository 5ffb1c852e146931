"""Model inference to benchmark quantities (D1/D2/Fl predictions)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .geometry import CameraModel, clamp_disparity, disparity_to_depth, flow_from_sceneflow
from .metrics import GroundTruth, MetricsReport, evaluate
from .model import SceneFlowModel


@dataclass(frozen=True)
class Predictions:
    """Reference-frame predictions in benchmark form (numpy)."""

    d1: np.ndarray
    d2: np.ndarray
    fl: np.ndarray  # (H, W, 2)


def predict(
    model: SceneFlowModel,
    triplet: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    cam: CameraModel,
    n_iterations: int,
) -> Predictions:
    """Run the model and convert the final iterate to D1/D2/Fl maps.

    D2 is the disparity of the tracked point in the next frame: the z
    component of P + s converted back through f*b/z.
    """
    with torch.no_grad():
        trace = model.run_iterations(triplet, cam, n_iterations)
        d1 = clamp_disparity(trace.disparity_full(-1)[0, 0])
        s = trace.forward[-1].s_full[0]
        depth = disparity_to_depth(d1, cam)
        z2 = (depth + s[2]).clamp_min(1e-6)
        d2 = cam.f * cam.b / z2
        fl, _ = flow_from_sceneflow(d1, s, cam)
    return Predictions(d1=d1.numpy(), d2=d2.numpy(), fl=fl.numpy())


def evaluate_prediction(
    pred: Predictions, gt: GroundTruth, combiner: str = "and"
) -> MetricsReport:
    return evaluate(pred.d1, pred.d2, pred.fl, gt, combiner)
