"""Synthetic rigid scenes with exact ground truth.

A textured ground plane, a far backdrop and a handful of textured boxes
move rigidly (plus camera ego-motion) over four frames with stereo pairs.
Everything is rendered by per-pixel ray casting (nearest hit = z-buffer),
so disparity, scene flow, optical flow, occlusion masks and region ids are
exact by construction. Textures are band-limited sinusoid mixtures, so
photometric gradients exist everywhere and move rigidly with the surfaces.

Coordinates: camera x right, y down, z forward; the world frame is the
camera frame of frame 0. Scene flow at pixel p of frame t is the tracked
point's position in frame t+1's camera coordinates minus its position in
frame t's camera coordinates (ego-motion folded in), so projecting P + s
with the shared intrinsics lands on the corresponding pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .geometry import CameraModel
from .metrics import GroundTruth

_VIS_TOL = 1e-6


@dataclass
class SceneConfig:
    seed: int = 0
    height: int = 64
    width: int = 128
    n_frames: int = 4
    n_boxes: int = 3
    focal: float = 120.0
    baseline: float = 0.3
    ground_y: float = 1.5
    backdrop_z: float = 40.0
    box_half_size: tuple[float, float] = (0.4, 1.2)
    box_x: tuple[float, float] = (-5.0, 5.0)
    box_z: tuple[float, float] = (6.0, 22.0)
    object_speed: float = 0.25
    object_spin_deg: float = 2.0
    ego_translation: tuple[float, float, float] | None = None  # exact per-frame step
    ego_yaw_deg: float | None = None
    static: bool = False

    def validate(self) -> None:
        if self.height % 8 or self.width % 8:
            raise ValueError("scene size must be divisible by 8")
        if self.box_half_size[0] <= 0:
            raise ValueError("degenerate config: zero-area objects")
        if self.n_frames < 2:
            raise ValueError("need at least two frames")


def _yaw(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass
class _Texture:
    base: np.ndarray  # (3,)
    freqs: np.ndarray  # (3, K, 3)
    phases: np.ndarray  # (3, K)
    amps: np.ndarray  # (3, K)

    @staticmethod
    def random(rng: np.random.Generator, n_waves: int = 4) -> "_Texture":
        return _Texture(
            base=rng.uniform(0.35, 0.65, size=3),
            freqs=rng.uniform(0.8, 7.0, size=(3, n_waves, 3)) * rng.choice([-1, 1], size=(3, n_waves, 3)),
            phases=rng.uniform(0, 2 * np.pi, size=(3, n_waves)),
            amps=rng.uniform(0.04, 0.14, size=(3, n_waves)),
        )

    def sample(self, pts: np.ndarray) -> np.ndarray:
        """pts (3, N) local coordinates -> colors (3, N) in [0, 1]."""
        phase = np.einsum("ckd,dn->ckn", self.freqs, pts) + self.phases[..., None]
        waves = np.einsum("ck,ckn->cn", self.amps, np.sin(phase))
        return np.clip(self.base[:, None] + waves, 0.0, 1.0)


@dataclass
class _Object:
    oid: int
    kind: str  # "box" | "plane"
    texture: _Texture
    # box
    half: np.ndarray | None = None  # (3,)
    centers: list[np.ndarray] = field(default_factory=list)  # world center per frame
    rotations: list[np.ndarray] = field(default_factory=list)  # local->world per frame
    # plane: n . X = offset, static
    normal: np.ndarray | None = None
    offset: float = 0.0

    def local_to_world(self, frame: int, pts_local: np.ndarray) -> np.ndarray:
        if self.kind == "plane":
            return pts_local
        return self.rotations[frame] @ pts_local + self.centers[frame][:, None]

    def world_to_local(self, frame: int, pts_world: np.ndarray) -> np.ndarray:
        if self.kind == "plane":
            return pts_world
        return self.rotations[frame].T @ (pts_world - self.centers[frame][:, None])

    def intersect(
        self, frame: int, origin: np.ndarray, dirs: np.ndarray
    ) -> np.ndarray:
        """Ray parameters (N,) of the nearest hit, +inf where missed.

        origin (3,), dirs (3, N), both world; the parameter is measured
        along dirs (camera z when dirs has unit z in camera coords).
        """
        if self.kind == "plane":
            denom = self.normal @ dirs
            num = self.offset - self.normal @ origin
            with np.errstate(divide="ignore", invalid="ignore"):
                lam = num / denom
            lam = np.where(np.abs(denom) > 1e-12, lam, np.inf)
            return np.where(lam > 1e-9, lam, np.inf)

        o = self.rotations[frame].T @ (origin - self.centers[frame])
        d = self.rotations[frame].T @ dirs
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
        t1 = (-self.half[:, None] - o[:, None]) * inv
        t2 = (self.half[:, None] - o[:, None]) * inv
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        # axis-parallel rays: hit only if the origin lies inside the slab
        parallel = np.abs(d) < 1e-12
        inside = np.abs(o[:, None]) <= self.half[:, None]
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        tmin = near.max(axis=0)
        tmax = far.min(axis=0)
        lam = np.where((tmax >= tmin) & (tmin > 1e-9), tmin, np.inf)
        return lam


@dataclass
class _CameraPose:
    """X_cam = R_wc @ (X_world - center)."""

    R_wc: np.ndarray
    center: np.ndarray

    def to_camera(self, pts_world: np.ndarray) -> np.ndarray:
        return self.R_wc @ (pts_world - self.center[:, None])

    def to_world(self, pts_cam: np.ndarray) -> np.ndarray:
        return self.R_wc.T @ pts_cam + self.center[:, None]

    def right(self, baseline: float) -> "_CameraPose":
        return _CameraPose(self.R_wc, self.center + self.R_wc.T @ np.array([baseline, 0.0, 0.0]))


@dataclass
class SyntheticScene:
    """Rendered frames plus exact ground truth; arrays are numpy float64.

    Per-pair quantities (index k covers the pair k -> k+1):
      flow_fwd[k] / sf_fwd[k] / occ_fwd[k] / disp2_fwd[k] live on frame k;
      flow_bwd[k] / sf_bwd[k] / occ_bwd[k] live on frame k+1.
    """

    config: SceneConfig
    K: np.ndarray
    frames: list[np.ndarray]
    rights: list[np.ndarray]
    depth: list[np.ndarray]
    disp: list[np.ndarray]
    regions: list[np.ndarray]
    stereo_occ: list[np.ndarray]
    flow_fwd: list[np.ndarray]
    flow_bwd: list[np.ndarray]
    sf_fwd: list[np.ndarray]
    sf_bwd: list[np.ndarray]
    occ_fwd: list[np.ndarray]
    occ_bwd: list[np.ndarray]
    disp2_fwd: list[np.ndarray]
    valid_fwd: list[np.ndarray]  # target point in front of the camera
    stereo_occ_next: list[np.ndarray]

    def camera_model(self) -> CameraModel:
        return CameraModel(K=torch.as_tensor(self.K), f=self.config.focal, b=self.config.baseline)

    def region_masks(self, frame: int):
        from .losses import RegionMask

        ids = sorted(int(i) for i in np.unique(self.regions[frame]) if i > 0)
        return [
            RegionMask(id=i, mask=torch.as_tensor(self.regions[frame] == i))
            for i in ids
        ]

    def ground_truth(self, k: int) -> GroundTruth:
        """Benchmark-style ground truth for the pair k -> k+1 (reference k)."""
        all_valid = np.ones_like(self.occ_fwd[k], dtype=bool)
        valid_pair = self.valid_fwd[k]
        return GroundTruth(
            d1=self.disp[k],
            d2=self.disp2_fwd[k],
            fl=self.flow_fwd[k],
            valid_d1_occ=all_valid,
            valid_d1_noc=~self.stereo_occ[k],
            valid_d2_occ=valid_pair,
            valid_d2_noc=valid_pair & ~self.occ_fwd[k] & ~self.stereo_occ_next[k],
            valid_fl_occ=valid_pair,
            valid_fl_noc=valid_pair & ~self.occ_fwd[k],
        )


class _Renderer:
    def __init__(self, config: SceneConfig, objects: list[_Object], K: np.ndarray):
        self.config = config
        self.objects = objects
        self.K_inv = np.linalg.inv(K)
        h, w = config.height, config.width
        v, u = np.mgrid[0:h, 0:w]
        hom = np.stack([u.ravel(), v.ravel(), np.ones(h * w)])
        self.dirs_cam = self.K_inv @ hom  # (3, N), unit z
        self.K = K

    def cast(
        self, pose: _CameraPose, frame: int, dirs_cam: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Nearest-hit (lambda (N,), object index (N,)) for rays through pose."""
        dirs = pose.R_wc.T @ (self.dirs_cam if dirs_cam is None else dirs_cam)
        lams = np.stack([obj.intersect(frame, pose.center, dirs) for obj in self.objects])
        idx = lams.argmin(axis=0)
        lam = lams[idx, np.arange(lams.shape[1])]
        return lam, idx

    def render(self, pose: _CameraPose, frame: int):
        """(rgb (3,H,W), depth (H,W), oid (H,W), local pts (3,N), obj idx (N,))."""
        cfg = self.config
        h, w = cfg.height, cfg.width
        lam, idx = self.cast(pose, frame)
        if not np.all(np.isfinite(lam)):
            raise RuntimeError("ray escaped the scene; backdrop must close the frustum")
        pts_cam = lam * self.dirs_cam  # z = lam
        pts_world = pose.to_world(pts_cam)
        rgb = np.zeros((3, h * w))
        local = np.zeros((3, h * w))
        for i, obj in enumerate(self.objects):
            sel = idx == i
            if not sel.any():
                continue
            loc = obj.world_to_local(frame, pts_world[:, sel])
            local[:, sel] = loc
            rgb[:, sel] = obj.texture.sample(loc)
        oid = np.array([self.objects[i].oid for i in idx]).reshape(h, w)
        return (
            rgb.reshape(3, h, w),
            lam.reshape(h, w),
            oid,
            local,
            idx,
        )

    def visible(self, pose: _CameraPose, frame: int, pts_world: np.ndarray) -> np.ndarray:
        """True where a world point is seen by the camera (in frustum and
        not occluded by a nearer surface)."""
        cfg = self.config
        pts_cam = pose.to_camera(pts_world)
        z = pts_cam[2]
        ok = z > 1e-9
        zs = np.where(ok, z, 1.0)
        dirs = pts_cam / zs  # unit z
        u = self.K[0, 0] * dirs[0] + self.K[0, 2]
        v = self.K[1, 1] * dirs[1] + self.K[1, 2]
        in_frame = (u >= 0) & (u <= cfg.width - 1) & (v >= 0) & (v <= cfg.height - 1)
        dirs_world = pose.R_wc.T @ dirs
        lams = np.stack(
            [obj.intersect(frame, pose.center, dirs_world) for obj in self.objects]
        )
        nearest = lams.min(axis=0)
        unoccluded = nearest >= z - _VIS_TOL * (1.0 + z)
        return ok & in_frame & unoccluded


def _build_objects(cfg: SceneConfig, rng: np.random.Generator) -> list[_Object]:
    objects: list[_Object] = []
    n = cfg.n_frames
    for i in range(cfg.n_boxes):
        half = rng.uniform(cfg.box_half_size[0], cfg.box_half_size[1], size=3)
        x = rng.uniform(*cfg.box_x)
        z = rng.uniform(*cfg.box_z)
        center0 = np.array([x, cfg.ground_y - half[1], z])
        step = rng.uniform(-cfg.object_speed, cfg.object_speed, size=3)
        step[1] *= 0.1  # mostly in-plane motion
        spin = np.deg2rad(rng.uniform(-cfg.object_spin_deg, cfg.object_spin_deg))
        if cfg.static:
            step = np.zeros(3)
            spin = 0.0
        centers = [center0 + k * step for k in range(n)]
        rotations = [_yaw(spin * k) for k in range(n)]
        objects.append(
            _Object(
                oid=i + 1,
                kind="box",
                texture=_Texture.random(rng),
                half=half,
                centers=centers,
                rotations=rotations,
            )
        )
    objects.append(
        _Object(
            oid=cfg.n_boxes + 1,
            kind="plane",
            texture=_Texture.random(rng),
            normal=np.array([0.0, 1.0, 0.0]),
            offset=cfg.ground_y,
        )
    )
    objects.append(
        _Object(
            oid=cfg.n_boxes + 2,
            kind="plane",
            texture=_Texture.random(rng),
            normal=np.array([0.0, 0.0, 1.0]),
            offset=cfg.backdrop_z,
        )
    )
    return objects


def _ego_poses(cfg: SceneConfig, rng: np.random.Generator) -> list[_CameraPose]:
    if cfg.ego_translation is not None:
        step = np.asarray(cfg.ego_translation, dtype=float)
    else:
        step = np.array([rng.uniform(-0.1, 0.1), 0.0, rng.uniform(0.15, 0.45)])
    yaw = np.deg2rad(cfg.ego_yaw_deg if cfg.ego_yaw_deg is not None else rng.uniform(-0.5, 0.5))
    if cfg.static:
        step = np.zeros(3)
        yaw = 0.0
    poses = [_CameraPose(np.eye(3), np.zeros(3))]
    for _ in range(cfg.n_frames - 1):
        prev = poses[-1]
        center = prev.center + prev.R_wc.T @ step
        R_wc = _yaw(yaw).T @ prev.R_wc
        poses.append(_CameraPose(R_wc, center))
    return poses


def synth_scene(config: SceneConfig | None = None) -> SyntheticScene:
    """Render a deterministic scene (bit-identical per seed)."""
    cfg = config or SceneConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)

    K = np.array(
        [
            [cfg.focal, 0.0, (cfg.width - 1) / 2.0],
            [0.0, cfg.focal, (cfg.height - 1) / 2.0],
            [0.0, 0.0, 1.0],
        ]
    )
    objects = _build_objects(cfg, rng)
    poses = _ego_poses(cfg, rng)
    renderer = _Renderer(cfg, objects, K)
    h, w = cfg.height, cfg.width
    fb = cfg.focal * cfg.baseline
    v_grid, u_grid = np.mgrid[0:h, 0:w]

    frames, rights, depth, disp, regions, stereo_occ = [], [], [], [], [], []
    locals_per_frame, idx_per_frame, world_per_frame = [], [], []
    for k in range(cfg.n_frames):
        rgb, z, oid, local, idx = renderer.render(poses[k], k)
        right_rgb, _, _, _, _ = renderer.render(poses[k].right(cfg.baseline), k)
        pts_world = poses[k].to_world(z.reshape(1, -1) * renderer.dirs_cam)
        frames.append(rgb)
        rights.append(right_rgb)
        depth.append(z)
        disp.append(fb / z)
        regions.append(oid.astype(np.int32))
        stereo_occ.append(
            ~renderer.visible(poses[k].right(cfg.baseline), k, pts_world).reshape(h, w)
        )
        locals_per_frame.append(local)
        idx_per_frame.append(idx)
        world_per_frame.append(pts_world)

    def pair_gt(src: int, dst: int):
        """Flow/scene-flow/occlusion of frame src toward frame dst."""
        local = locals_per_frame[src]
        idx = idx_per_frame[src]
        pts_world_dst = np.zeros_like(local)
        for i, obj in enumerate(objects):
            sel = idx == i
            if sel.any():
                pts_world_dst[:, sel] = obj.local_to_world(dst, local[:, sel])
        p_src = poses[src].to_camera(world_per_frame[src])
        p_dst = poses[dst].to_camera(pts_world_dst)
        sf = (p_dst - p_src).reshape(3, h, w)
        z_dst = p_dst[2]
        valid = (z_dst > 1e-9).reshape(h, w)
        zc = np.where(z_dst > 1e-9, z_dst, 1.0)
        u = K[0, 0] * p_dst[0] / zc + K[0, 2]
        v = K[1, 1] * p_dst[1] / zc + K[1, 2]
        flow = np.stack([u.reshape(h, w) - u_grid, v.reshape(h, w) - v_grid], axis=-1)
        occ = ~renderer.visible(poses[dst], dst, pts_world_dst).reshape(h, w)
        disp2 = (fb / zc).reshape(h, w)
        occ_right = ~renderer.visible(
            poses[dst].right(cfg.baseline), dst, pts_world_dst
        ).reshape(h, w)
        return flow, sf, occ, disp2, valid, occ_right

    flow_fwd, flow_bwd, sf_fwd, sf_bwd = [], [], [], []
    occ_fwd, occ_bwd, disp2_fwd, valid_fwd, stereo_occ_next = [], [], [], [], []
    for k in range(cfg.n_frames - 1):
        fl, sf, occ, d2, valid, occ_r = pair_gt(k, k + 1)
        flow_fwd.append(fl)
        sf_fwd.append(sf)
        occ_fwd.append(occ)
        disp2_fwd.append(d2)
        valid_fwd.append(valid)
        stereo_occ_next.append(occ_r)
        fl_b, sf_b, occ_b, _, _, _ = pair_gt(k + 1, k)
        flow_bwd.append(fl_b)
        sf_bwd.append(sf_b)
        occ_bwd.append(occ_b)

    return SyntheticScene(
        config=cfg,
        K=K,
        frames=frames,
        rights=rights,
        depth=depth,
        disp=disp,
        regions=regions,
        stereo_occ=stereo_occ,
        flow_fwd=flow_fwd,
        flow_bwd=flow_bwd,
        sf_fwd=sf_fwd,
        sf_bwd=sf_bwd,
        occ_fwd=occ_fwd,
        occ_bwd=occ_bwd,
        disp2_fwd=disp2_fwd,
        valid_fwd=valid_fwd,
        stereo_occ_next=stereo_occ_next,
    )
