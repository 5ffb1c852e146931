"""KITTI 2015 file codecs and calibration IO.

Disparity: 16-bit single-channel PNG, stored = round(d * 256), 0 = invalid.
Flow: 16-bit 3-channel PNG, stored = round(f * 64 + 2^15) for u and v,
third channel = validity. Both are exact inverses on their representable
grids. Region masks are indexed-integer images (one region id per pixel,
0 = unassigned). Calibration is a small text file with f, b and K row-major.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
import torch

from .geometry import CameraModel
from .losses import RegionMask

FLOW_OFFSET = 2**15
FLOW_SCALE = 64.0
DISP_SCALE = 256.0


def _read_png(path: str | Path) -> np.ndarray:
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise FileNotFoundError(f"cannot read {path}")
    return arr


def write_disparity_png(path: str | Path, disparity: np.ndarray, valid: np.ndarray | None = None) -> None:
    scaled = np.round(np.asarray(disparity, dtype=np.float64) * DISP_SCALE)
    if valid is None:
        valid = scaled > 0
    if np.any((scaled > 65535) | (scaled < 0)):
        raise ValueError("disparity out of the representable range [0, 256)")
    stored = np.where(valid, scaled, 0.0).astype(np.uint16)
    if not cv2.imwrite(str(path), stored):
        raise OSError(f"cannot write {path}")


def read_disparity_png(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    arr = _read_png(path)
    if arr.dtype != np.uint16 or arr.ndim != 2:
        raise ValueError(f"{path}: expected 16-bit single-channel disparity PNG")
    valid = arr > 0
    return arr.astype(np.float64) / DISP_SCALE, valid


def write_flow_png(path: str | Path, flow: np.ndarray, valid: np.ndarray | None = None) -> None:
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ValueError("flow must be (H, W, 2)")
    if valid is None:
        valid = np.ones(flow.shape[:2], dtype=bool)
    scaled = np.round(flow * FLOW_SCALE + FLOW_OFFSET)
    if np.any((scaled > 65535) | (scaled < 0)):
        raise ValueError("flow out of the representable range [-512, 512)")
    rgb = np.zeros((*flow.shape[:2], 3), dtype=np.uint16)
    rgb[..., 0] = scaled[..., 0]
    rgb[..., 1] = scaled[..., 1]
    rgb[..., 2] = valid.astype(np.uint16)
    # cv2 stores BGR
    if not cv2.imwrite(str(path), rgb[..., ::-1]):
        raise OSError(f"cannot write {path}")


def read_flow_png(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    arr = _read_png(path)
    if arr.dtype != np.uint16 or arr.ndim != 3 or arr.shape[-1] != 3:
        raise ValueError(f"{path}: expected 16-bit 3-channel flow PNG")
    rgb = arr[..., ::-1].astype(np.float64)
    flow = (rgb[..., :2] - FLOW_OFFSET) / FLOW_SCALE
    valid = rgb[..., 2] > 0
    return flow, valid


def write_region_png(path: str | Path, ids: np.ndarray) -> None:
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer) or ids.min() < 0 or ids.max() > 65535:
        raise ValueError("region ids must be integers in [0, 65535]")
    if not cv2.imwrite(str(path), ids.astype(np.uint16)):
        raise OSError(f"cannot write {path}")


def load_region_masks(path: str | Path) -> list[RegionMask]:
    """One RegionMask per nonzero id; disjointness is enforced by the format."""
    arr = _read_png(path)
    if arr.ndim != 2 or not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{path}: expected an indexed-integer region image")
    ids = sorted(int(i) for i in np.unique(arr) if i > 0)
    return [
        RegionMask(id=i, mask=torch.as_tensor(arr == i), source=str(path)) for i in ids
    ]


def write_image_png(path: str | Path, image: np.ndarray) -> None:
    """(3, H, W) float in [0, 1] -> 8-bit RGB file."""
    img8 = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), img8.transpose(1, 2, 0)[..., ::-1]):
        raise OSError(f"cannot write {path}")


def read_image_png(path: str | Path) -> np.ndarray:
    arr = _read_png(path)
    if arr.ndim != 3:
        raise ValueError(f"{path}: expected an RGB image")
    return arr[..., ::-1].transpose(2, 0, 1).astype(np.float64) / 255.0


def write_calib(path: str | Path, cam: CameraModel) -> None:
    K = " ".join(repr(float(v)) for v in cam.K.reshape(-1))
    Path(path).write_text(f"f {cam.f!r}\nb {cam.b!r}\nK {K}\n")


def read_calib(path: str | Path) -> CameraModel:
    values: dict[str, list[float]] = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if parts:
            values[parts[0]] = [float(v) for v in parts[1:]]
    try:
        f = values["f"][0]
        b = values["b"][0]
        K = torch.tensor(values["K"], dtype=torch.float64).reshape(3, 3)
    except (KeyError, IndexError) as exc:
        raise ValueError(f"{path}: malformed calibration file") from exc
    return CameraModel(K=K, f=f, b=b)
