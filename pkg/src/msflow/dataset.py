"""Scene directory layout, sequence batching and training augmentations.

A dataset root holds scene directories (any name, scanned in sorted
order), each laid out as:

    scene_xxxx/
      calib.txt                 f, b, K row-major
      frames/left_00.png ...    8-bit RGB, left and right views
      frames/right_00.png ...
      disp/disp_00.png ...      16-bit KITTI disparity per frame
      disp/disp2_00.png ...     disparity of the tracked point in the next
                                frame, stored at reference pixels
      flow/flow_00.png ...      16-bit KITTI forward flow (k -> k+1)
      regions/regions_00.png    indexed-integer region ids (0 = unassigned)
      masks/noc_d1_00.png ...   8-bit 0/255 noc validity per component

Training consumes two overlapping temporal triplets (frames 0-2 and 1-3);
inference needs a single triplet. Scenes with fewer than four frames are
eval-only; scenes with fewer than three are skipped with a log entry.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .geometry import CameraModel
from .kitti_io import (
    read_calib,
    read_disparity_png,
    read_flow_png,
    read_image_png,
    write_calib,
    write_disparity_png,
    write_flow_png,
    write_image_png,
    write_region_png,
    load_region_masks,
)
from .losses import RegionMask
from .metrics import GroundTruth
from .synthetic import SyntheticScene

logger = logging.getLogger(__name__)


@dataclass
class SequenceBatch:
    """Frames of one scene plus stereo views, calibration and region masks.

    frames/rights: (3, H, W) float64 tensors in [0, 1]; regions_ref are the
    reference frame's (index 1) masks, used by the occlusion regularizer.
    """

    frames: list[torch.Tensor]
    rights: list[torch.Tensor]
    cam: CameraModel
    regions_ref: list[RegionMask]
    scene_dir: str = ""

    @property
    def trainable(self) -> bool:
        return len(self.frames) >= 4

    def triplet_a(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.frames[0], self.frames[1], self.frames[2]

    def triplet_b(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        if not self.trainable:
            raise ValueError("eval-only sequence has no second triplet")
        return self.frames[1], self.frames[2], self.frames[3]


def write_scene(scene: SyntheticScene, out_dir: str | Path) -> None:
    """Persist a synthetic scene in the documented layout."""
    out = Path(out_dir)
    for sub in ("frames", "disp", "flow", "regions", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    write_calib(out / "calib.txt", scene.camera_model())
    n = scene.config.n_frames
    for k in range(n):
        write_image_png(out / "frames" / f"left_{k:02d}.png", scene.frames[k])
        write_image_png(out / "frames" / f"right_{k:02d}.png", scene.rights[k])
        write_disparity_png(out / "disp" / f"disp_{k:02d}.png", scene.disp[k])
        write_region_png(out / "regions" / f"regions_{k:02d}.png", scene.regions[k])
    for k in range(n - 1):
        gt = scene.ground_truth(k)
        write_disparity_png(out / "disp" / f"disp2_{k:02d}.png", gt.d2, gt.valid_d2_occ)
        write_flow_png(out / "flow" / f"flow_{k:02d}.png", gt.fl, gt.valid_fl_occ)
        for name, mask in (
            ("noc_d1", gt.valid_d1_noc),
            ("noc_d2", gt.valid_d2_noc),
            ("noc_fl", gt.valid_fl_noc),
        ):
            write_image_png(
                out / "masks" / f"{name}_{k:02d}.png",
                np.repeat(mask[None].astype(np.float64), 3, axis=0),
            )


def read_ground_truth(scene_dir: str | Path, k: int = 1) -> GroundTruth:
    """Ground truth of the pair k -> k+1 from a scene directory."""
    d = Path(scene_dir)
    d1, valid_d1 = read_disparity_png(d / "disp" / f"disp_{k:02d}.png")
    d2, valid_d2 = read_disparity_png(d / "disp" / f"disp2_{k:02d}.png")
    fl, valid_fl = read_flow_png(d / "flow" / f"flow_{k:02d}.png")

    def noc(name: str) -> np.ndarray:
        return read_image_png(d / "masks" / f"{name}_{k:02d}.png")[0] > 0.5

    return GroundTruth(
        d1=d1,
        d2=d2,
        fl=fl,
        valid_d1_occ=valid_d1,
        valid_d1_noc=noc("noc_d1") & valid_d1,
        valid_d2_occ=valid_d2,
        valid_d2_noc=noc("noc_d2") & valid_d2,
        valid_fl_occ=valid_fl,
        valid_fl_noc=noc("noc_fl") & valid_fl,
    )


def _frame_indices(scene_dir: Path) -> list[int]:
    pattern = re.compile(r"left_(\d+)\.png$")
    out = []
    for p in (scene_dir / "frames").glob("left_*.png"):
        m = pattern.search(p.name)
        if m:
            out.append(int(m.group(1)))
    return sorted(out)


def load_sequence(scene_dir: str | Path, max_frames: int = 4) -> SequenceBatch:
    d = Path(scene_dir)
    cam = read_calib(d / "calib.txt")
    idx = _frame_indices(d)[:max_frames]
    expected = list(range(len(idx)))
    if idx != expected:
        raise ValueError(f"{d}: non-consecutive frames {idx}")
    frames, rights = [], []
    for k in idx:
        frames.append(torch.as_tensor(read_image_png(d / "frames" / f"left_{k:02d}.png")))
        rights.append(torch.as_tensor(read_image_png(d / "frames" / f"right_{k:02d}.png")))
    regions_path = d / "regions" / "regions_01.png"
    regions = load_region_masks(regions_path) if regions_path.exists() else []
    return SequenceBatch(
        frames=frames, rights=rights, cam=cam, regions_ref=regions, scene_dir=str(d)
    )


def build_sequences(root: str | Path, max_frames: int = 4) -> list[SequenceBatch]:
    """Deterministically ordered sequence batches from a dataset root.

    Scenes missing frames are skipped with a log entry; scenes with exactly
    three frames load as eval-only batches.
    """
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "calib.txt").exists())
    if not dirs and (root / "calib.txt").exists():
        dirs = [root]
    batches = []
    for d in dirs:
        try:
            batch = load_sequence(d, max_frames)
        except (ValueError, FileNotFoundError) as exc:
            logger.warning("skipping %s: %s", d, exc)
            continue
        if len(batch.frames) < 3:
            logger.warning("skipping %s: fewer than 3 frames", d)
            continue
        batches.append(batch)
    return batches


@dataclass
class AugmentConfig:
    photometric: bool = True
    flip: bool = True
    gamma: tuple[float, float] = (0.8, 1.2)
    brightness: tuple[float, float] = (0.8, 1.2)
    color: tuple[float, float] = (0.9, 1.1)


def _photometric(images: list[torch.Tensor], rng: np.random.Generator, cfg: AugmentConfig) -> list[torch.Tensor]:
    gamma = rng.uniform(*cfg.gamma)
    gain = rng.uniform(*cfg.brightness)
    color = torch.as_tensor(rng.uniform(*cfg.color, size=3)).view(3, 1, 1)
    return [torch.clamp(img.clamp_min(0) ** gamma * gain * color, 0.0, 1.0) for img in images]


def augment_batch(
    batch: SequenceBatch, rng: np.random.Generator, cfg: AugmentConfig | None = None
) -> SequenceBatch:
    """Photometric jitter applied to all views consistently; horizontal flip
    swaps and mirrors the stereo pair (the mirrored right view becomes a
    geometrically valid left view). Region masks belong to the original
    left view, so flipped samples carry none and skip the occlusion
    regularizer for that step."""
    cfg = cfg or AugmentConfig()
    frames, rights, cam, regions = batch.frames, batch.rights, batch.cam, batch.regions_ref
    if cfg.flip and rng.random() < 0.5:
        frames, rights = (
            [torch.flip(r, dims=[-1]) for r in rights],
            [torch.flip(f, dims=[-1]) for f in frames],
        )
        regions = []
        w = frames[0].shape[-1]
        K = cam.K.clone()
        K[0, 2] = w - 1 - K[0, 2]
        cam = CameraModel(K=K, f=cam.f, b=cam.b)
    if cfg.photometric:
        n = len(frames)
        both = _photometric(frames + rights, rng, cfg)
        frames, rights = both[:n], both[n:]
    return SequenceBatch(
        frames=frames, rights=rights, cam=cam, regions_ref=regions, scene_dir=batch.scene_dir
    )
