"""KITTI-style outlier metrics (D1/D2/Fl/SF) with all/noc/occ splits.

A pixel is an outlier when its error exceeds 3 pixels AND 5% of the ground
truth magnitude (the official benchmark rule); an OR combiner is available
because the two appear interchangeably in the literature. The scene-flow
outlier set is the union of the component outliers over jointly valid
pixels. The noc/occ split is strict: a pixel counts as occluded when it is
noc-invalid in any component while still occ-valid overall.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

PIXEL_THRESHOLD = 3.0
RELATIVE_THRESHOLD = 0.05

METRIC_KEYS = ("D1-all", "D2-all", "Fl-all", "SF-all", "SF-noc", "SF-occ")


@dataclass(frozen=True)
class GroundTruth:
    """Reference-frame ground truth with per-component occ/noc validity."""

    d1: np.ndarray
    d2: np.ndarray
    fl: np.ndarray  # (H, W, 2)
    valid_d1_occ: np.ndarray
    valid_d1_noc: np.ndarray
    valid_d2_occ: np.ndarray
    valid_d2_noc: np.ndarray
    valid_fl_occ: np.ndarray
    valid_fl_noc: np.ndarray

    def __post_init__(self) -> None:
        pairs = (
            (self.valid_d1_noc, self.valid_d1_occ),
            (self.valid_d2_noc, self.valid_d2_occ),
            (self.valid_fl_noc, self.valid_fl_occ),
        )
        for noc, occ in pairs:
            if np.any(noc & ~occ):
                raise ValueError("noc validity must be a subset of occ validity")


@dataclass(frozen=True)
class MetricsReport:
    """Outlier percentages in [0, 100]."""

    d1_all: float
    d2_all: float
    fl_all: float
    sf_all: float
    sf_noc: float
    sf_occ: float

    def as_dict(self) -> dict[str, float]:
        vals = (self.d1_all, self.d2_all, self.fl_all, self.sf_all, self.sf_noc, self.sf_occ)
        return {k: round_percent(v) for k, v in zip(METRIC_KEYS, vals)}

    def as_text(self) -> str:
        return "\n".join(f"{k}: {v:.2f}" for k, v in self.as_dict().items()) + "\n"

    def write(self, text_path: str | Path, json_path: str | Path | None = None) -> None:
        Path(text_path).write_text(self.as_text())
        if json_path is not None:
            Path(json_path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")


def round_percent(value: float) -> float:
    """Two decimals, round half up (not banker's)."""
    return float(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def outlier_map(
    pred: np.ndarray,
    gt: np.ndarray,
    valid: np.ndarray,
    kind: str,
    combiner: str = "and",
) -> np.ndarray:
    """Binary outlier map restricted to valid pixels.

    kind 'disparity' compares absolute scalar error against |gt|; kind
    'flow' uses endpoint error against ||gt||. combiner 'and' is the
    official rule (err > 3px AND err > 5% of magnitude), 'or' the looser
    reading.
    """
    if kind == "disparity":
        err = np.abs(pred - gt)
        mag = np.abs(gt)
    elif kind == "flow":
        if pred.shape != gt.shape or pred.shape[-1] != 2:
            raise ValueError(f"flow maps must be (H, W, 2), got {pred.shape} vs {gt.shape}")
        err = np.linalg.norm(pred - gt, axis=-1)
        mag = np.linalg.norm(gt, axis=-1)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    if err.shape != valid.shape:
        raise ValueError(f"shape mismatch: error {err.shape} vs valid {valid.shape}")

    over_px = err > PIXEL_THRESHOLD
    over_rel = err > RELATIVE_THRESHOLD * mag
    if combiner == "and":
        out = over_px & over_rel
    elif combiner == "or":
        out = over_px | over_rel
    else:
        raise ValueError(f"unknown combiner {combiner!r}")
    return out & valid


def sceneflow_outliers(
    d1_map: np.ndarray,
    d2_map: np.ndarray,
    fl_map: np.ndarray,
    joint_valid: np.ndarray,
) -> np.ndarray:
    """SF outlier = any component outlier, over jointly valid pixels."""
    return (d1_map | d2_map | fl_map) & joint_valid


def occlusion_split(gt: GroundTruth) -> tuple[np.ndarray, np.ndarray]:
    """(noc set, occ set): a partition of the jointly occ-valid pixels.

    noc = noc-valid in all three components; occ = occ-valid overall but
    noc-invalid in at least one component.
    """
    joint_occ = gt.valid_d1_occ & gt.valid_d2_occ & gt.valid_fl_occ
    noc = gt.valid_d1_noc & gt.valid_d2_noc & gt.valid_fl_noc & joint_occ
    occ = joint_occ & ~noc
    return noc, occ


def _rate(outliers: np.ndarray, support: np.ndarray) -> float:
    n = int(support.sum())
    if n == 0:
        return 0.0
    return 100.0 * int((outliers & support).sum()) / n


def evaluate(
    d1_pred: np.ndarray,
    d2_pred: np.ndarray,
    fl_pred: np.ndarray,
    gt: GroundTruth,
    combiner: str = "and",
) -> MetricsReport:
    """Full metric suite for one frame.

    Component rates use their own occ-valid supports (benchmark
    convention); SF rates use the jointly valid support and its noc/occ
    partition.
    """
    d1_map = outlier_map(d1_pred, gt.d1, gt.valid_d1_occ, "disparity", combiner)
    d2_map = outlier_map(d2_pred, gt.d2, gt.valid_d2_occ, "disparity", combiner)
    fl_map = outlier_map(fl_pred, gt.fl, gt.valid_fl_occ, "flow", combiner)
    joint = gt.valid_d1_occ & gt.valid_d2_occ & gt.valid_fl_occ
    sf_map = sceneflow_outliers(d1_map, d2_map, fl_map, joint)
    noc, occ = occlusion_split(gt)
    return MetricsReport(
        d1_all=_rate(d1_map, gt.valid_d1_occ),
        d2_all=_rate(d2_map, gt.valid_d2_occ),
        fl_all=_rate(fl_map, gt.valid_fl_occ),
        sf_all=_rate(sf_map, joint),
        sf_noc=_rate(sf_map, noc),
        sf_occ=_rate(sf_map, occ),
    )


def aggregate_reports(reports: list[MetricsReport]) -> MetricsReport:
    """Unweighted mean over frames (ordered reduction)."""
    if not reports:
        raise ValueError("no reports to aggregate")
    n = len(reports)
    return MetricsReport(
        d1_all=sum(r.d1_all for r in reports) / n,
        d2_all=sum(r.d2_all for r in reports) / n,
        fl_all=sum(r.fl_all for r in reports) / n,
        sf_all=sum(r.sf_all for r in reports) / n,
        sf_noc=sum(r.sf_noc for r in reports) / n,
        sf_occ=sum(r.sf_occ for r in reports) / n,
    )


INLIER_COLOR = (48, 73, 214)  # blue-ish (RGB)
OUTLIER_COLOR = (208, 49, 37)  # red-ish
OCCLUDED_COLOR = (30, 30, 30)


def render_error_map(
    outliers: np.ndarray,
    valid: np.ndarray,
    occ_set: np.ndarray | None = None,
) -> np.ndarray:
    """RGB uint8 error image: blue inliers, red outliers, dark occluded or
    invalid pixels."""
    h, w = outliers.shape
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[...] = OCCLUDED_COLOR
    shown = valid if occ_set is None else (valid & ~occ_set)
    img[shown & ~outliers] = INLIER_COLOR
    img[shown & outliers] = OUTLIER_COLOR
    return img
