"""Multi-frame self-supervised monocular scene flow.

Recurrent refinement of scene flow and disparity from three monocular
frames, with bidirectional geometry-motion feature fusion, relative
positional attention, an SVD-anchored occlusion regularizer, KITTI-style
outlier metrics, exact-ground-truth synthetic scenes and the file codecs
to round-trip them.
"""

from .attention import PositionalAttention, aggregate_position, attention_map
from .config import RunConfig
from .correlation import CorrelationPyramid, build_corr_pyramid, lookup_corr
from .encoders import ContextEncoder, FeatureEncoder
from .geometry import (
    CameraModel,
    apply_scene_flow,
    backproject,
    clamp_disparity,
    depth_to_disparity,
    disparity_to_depth,
    flow_from_sceneflow,
    pixel_grid,
    project,
    warp_bilinear,
)
from .gmf import GmfProjection, MotionEncoder, TemporalFusion, encode_motion, fuse_gmf
from .inference import Predictions, evaluate_prediction, predict
from .losses import (
    EmptyMaskWarning,
    LossReport,
    OcclusionMasks,
    RegionMask,
    occlusion_masks,
    occlusion_regularization,
    photometric_loss,
    reliable_mask,
    smoothness_loss,
    total_loss,
)
from .metrics import (
    GroundTruth,
    MetricsReport,
    evaluate,
    occlusion_split,
    outlier_map,
    render_error_map,
    sceneflow_outliers,
)
from .model import (
    IterationTrace,
    ModelConfig,
    SceneFlowModel,
    SceneFlowState,
    average_disparity,
    apply_residuals,
)
from .rigid import RigidFitError, RigidTransform, rigid_fit_svd
from .synthetic import SceneConfig, SyntheticScene, synth_scene
from .train import SelfSupervisedCriterion, Trainer, TrainingDiverged
from .update import ConvexUpsampler, ConvGRU, DisparityInit, ResidualHeads, convex_upsample

__version__ = "0.1.0"
