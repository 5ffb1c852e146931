"""Training: the full self-supervised criterion over two temporal triplets,
and a small AdamW loop with cosine annealing, gradient clipping, periodic
checkpoints and a plain-text loss curve.

Each step runs the model on the triplets {I0, I1, I2} and {I1, I2, I3} and
applies losses on the adjacent pair (I1, I2) with disparities (d_t, d_t+1)
and scene flows (s_t forward, s_t+1 backward). Occlusion masks come from
the final iterates and are shared by all iterations' terms; the occlusion
regularizer activates after a configurable fraction of training.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .config import RunConfig
from .dataset import AugmentConfig, SequenceBatch, augment_batch
from .geometry import (
    CameraModel,
    backproject,
    clamp_disparity,
    disparity_to_depth,
    flow_from_sceneflow,
    warp_bilinear,
)
from .losses import (
    LossReport,
    OcclusionMasks,
    masked_mean,
    occlusion_masks,
    occlusion_regularization,
    photometric_loss,
    smoothness_loss,
    stable_norm,
    total_loss,
)
from .model import IterationTrace, SceneFlowModel, average_disparity


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, batch_index: int):
        super().__init__(f"non-finite loss at step {step} (batch index {batch_index})")
        self.step = step
        self.batch_index = batch_index


def _adaptive(occ: torch.Tensor) -> torch.Tensor:
    """Drop an occlusion mask that blanks out more than half the image.

    Early in training the forward-backward test can mark everything
    occluded, which would zero the photometric losses; falling back to
    all-visible keeps the training signal alive.
    """
    flat = occ.reshape(occ.shape[0], -1)
    runaway = flat.to(torch.float64).mean(dim=1) > 0.5
    out = occ.clone()
    out[runaway] = False
    return out


class SelfSupervisedCriterion:
    """Composes the per-iteration disparity/scene-flow losses and the
    occlusion regularizer into the weighted total.

    `sf_weight_schedule`, when set, maps the training step to the
    scene-flow loss weight (hook for dynamic weighting); otherwise the
    configured constant applies.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.sf_weight_schedule: Callable[[int], float] | None = None

    def _stereo_term(
        self,
        left: torch.Tensor,
        right: torch.Tensor,
        disp: torch.Tensor,
        occ_d: torch.Tensor,
    ) -> torch.Tensor:
        """Photometric stereo reconstruction + edge-aware disparity smoothness."""
        flow = torch.stack([-disp, torch.zeros_like(disp)], dim=-1)
        warped, inb = warp_bilinear(right, flow)
        photo = photometric_loss(left, warped, inb & ~occ_d)
        norm = disp / disp.mean(dim=(-2, -1), keepdim=True).clamp_min(1e-6)
        return photo + self.config.disp_smooth_weight * smoothness_loss(norm, left)

    def _flow_terms(
        self,
        ref: torch.Tensor,
        tgt: torch.Tensor,
        d_ref: torch.Tensor,
        d_tgt: torch.Tensor,
        s: torch.Tensor,
        occ_sf: torch.Tensor,
        cam: CameraModel,
    ) -> torch.Tensor:
        """Temporal photometric + 3D point consistency + scene-flow smoothness
        for one direction."""
        cfg = self.config
        flow, valid = flow_from_sceneflow(clamp_disparity(d_ref), s, cam)
        warped, inb = warp_bilinear(tgt, flow)
        mask = inb & valid & ~occ_sf
        photo = photometric_loss(ref, warped, mask)

        p_ref = backproject(disparity_to_depth(clamp_disparity(d_ref), cam), cam)
        p_tgt = backproject(disparity_to_depth(clamp_disparity(d_tgt), cam), cam)
        p_tgt_w, inb2 = warp_bilinear(p_tgt, flow)
        # relative 3D distance: bounded leverage for far / runaway points
        dist = stable_norm(p_ref + s - p_tgt_w, dim=-3) / stable_norm(p_ref, dim=-3)
        points = masked_mean(dist, mask & inb2)

        smooth = smoothness_loss(s, ref)
        return photo + cfg.point_weight * points + cfg.sf_smooth_weight * smooth

    def __call__(
        self,
        trace_a: IterationTrace,
        trace_b: IterationTrace,
        batch: SequenceBatch,
        include_occ: bool = True,
        step: int | None = None,
    ) -> tuple[torch.Tensor, LossReport]:
        cfg = self.config
        cam = batch.cam
        ref = batch.frames[1].unsqueeze(0)
        tgt = batch.frames[2].unsqueeze(0)
        lefts = torch.cat([ref, tgt], dim=0)
        rights = torch.cat(
            [batch.rights[1].unsqueeze(0), batch.rights[2].unsqueeze(0)], dim=0
        )
        # temporal pairs stacked: row 0 = t -> t+1, row 1 = t+1 -> t
        refs2 = torch.cat([ref, tgt], dim=0)
        tgts2 = torch.cat([tgt, ref], dim=0)
        n = len(trace_a)

        def fields(i: int):
            d_t = average_disparity(trace_a.forward[i].d_full, trace_a.backward[i].d_full)[:, 0]
            d_t1 = average_disparity(trace_b.forward[i].d_full, trace_b.backward[i].d_full)[:, 0]
            return d_t, d_t1, trace_a.forward[i].s_full, trace_b.backward[i].s_full

        d_t_N, d_t1_N, s_f_N, s_b_N = fields(n - 1)
        with torch.no_grad():
            occ_t = occlusion_masks(d_t_N, d_t1_N, s_f_N, s_b_N, cam)
            occ_t1 = occlusion_masks(d_t1_N, d_t_N, s_b_N, s_f_N, cam)
            occ_d2 = _adaptive(torch.cat([occ_t.occ_disp, occ_t1.occ_disp], dim=0))
            occ_sf2 = _adaptive(torch.cat([occ_t.occ_sf, occ_t1.occ_sf], dim=0))
            occ_t_adaptive = OcclusionMasks(occ_disp=occ_d2[:1], occ_sf=occ_sf2[:1])

        disp_terms, sf_terms, occ_terms = [], [], []
        zero = ref.sum() * 0.0
        for i in range(n):
            d_t, d_t1, s_f, s_b = fields(i)
            disp2 = torch.cat([d_t, d_t1], dim=0)
            l_d = self._stereo_term(lefts, rights, disp2, occ_d2)
            l_sf = self._flow_terms(
                refs2,
                tgts2,
                disp2,
                torch.cat([d_t1, d_t], dim=0),
                torch.cat([s_f, s_b], dim=0),
                occ_sf2,
                cam,
            )
            disp_terms.append(l_d)
            sf_terms.append(l_sf)
            if include_occ and batch.regions_ref and (cfg.occ_timing == "all" or i == n - 1):
                occ_terms.append(
                    self._occ_term(batch.regions_ref, d_t, d_t1, s_f, occ_t_adaptive, cam)
                )
            else:
                occ_terms.append(zero)

        sf_weight = cfg.sf_weight
        if self.sf_weight_schedule is not None and step is not None:
            sf_weight = self.sf_weight_schedule(step)
        return total_loss(
            disp_terms,
            sf_terms,
            occ_terms if cfg.occ_timing == "all" else occ_terms[-1],
            decay=cfg.decay,
            occ_weight=cfg.occ_weight,
            sf_weight=sf_weight,
            timing=cfg.occ_timing,
        )

    def _occ_term(
        self,
        regions,
        d_t: torch.Tensor,
        d_t1: torch.Tensor,
        s_f: torch.Tensor,
        occ_t: OcclusionMasks,
        cam: CameraModel,
    ) -> torch.Tensor:
        cfg = self.config
        total = d_t.sum() * 0.0
        B = d_t.shape[0]
        for b in range(B):
            depth = disparity_to_depth(clamp_disparity(d_t[b]), cam)
            depth_t1 = disparity_to_depth(clamp_disparity(d_t1[b]), cam)
            flow, _ = flow_from_sceneflow(clamp_disparity(d_t[b]), s_f[b], cam)
            target_points, _ = warp_bilinear(backproject(depth_t1, cam), flow)
            occ_b = OcclusionMasks(occ_disp=occ_t.occ_disp[b], occ_sf=occ_t.occ_sf[b])
            loss, _ = occlusion_regularization(
                regions,
                depth,
                s_f[b],
                occ_b,
                cam,
                cfg.theta,
                target_points,
                min_points=cfg.min_region_points,
            )
            total = total + loss
        return total / B


@dataclass
class TrainResult:
    checkpoint: Path
    loss_curve: Path
    first_total: float
    last_total: float
    steps: int


def save_checkpoint(
    path: str | Path,
    model: SceneFlowModel,
    optimizer: torch.optim.Optimizer | None = None,
    scheduler: torch.optim.lr_scheduler.LRScheduler | None = None,
    step: int = 0,
    config: RunConfig | None = None,
    rng: np.random.Generator | None = None,
) -> None:
    state = {
        "model": model.state_dict(),
        "step": step,
        "config": vars(config) if config else None,
        "attn_base_shape": model.config.attn_base_shape,
    }
    if optimizer is not None:
        state["optimizer"] = optimizer.state_dict()
    if scheduler is not None:
        state["scheduler"] = scheduler.state_dict()
    state["torch_rng"] = torch.get_rng_state()
    if rng is not None:
        state["numpy_rng"] = rng.bit_generator.state
    torch.save(state, str(path))


def load_checkpoint(path: str | Path) -> tuple[SceneFlowModel, RunConfig, dict]:
    state = torch.load(str(path), weights_only=False)
    config = RunConfig(**state["config"]) if state["config"] else RunConfig()
    model_cfg = config.model_config()
    model_cfg.attn_base_shape = tuple(state.get("attn_base_shape", model_cfg.attn_base_shape))
    model = SceneFlowModel(model_cfg)
    model.load_state_dict(state["model"])
    return model, config, state


class Trainer:
    """AdamW + cosine annealing + gradient clipping over sequence batches."""

    def __init__(
        self,
        model: SceneFlowModel,
        batches: list[SequenceBatch],
        config: RunConfig,
        out_dir: str | Path,
    ):
        trainable = [b for b in batches if b.trainable]
        if not trainable:
            raise ValueError("no trainable (4-frame) sequences in the dataset")
        self.model = model
        dtype = model.config.dtype
        self.batches = [
            SequenceBatch(
                frames=[f.to(dtype) for f in b.frames],
                rights=[r.to(dtype) for r in b.rights],
                cam=b.cam,
                regions_ref=b.regions_ref,
                scene_dir=b.scene_dir,
            )
            for b in trainable
        ]
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.criterion = SelfSupervisedCriterion(config)
        self.optimizer = torch.optim.AdamW(
            model.parameters(),
            lr=config.lr,
            betas=(0.9, 0.99),
            weight_decay=config.weight_decay,
        )
        self.scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            self.optimizer, T_max=config.steps
        )
        self.start_step = 0
        self.rng = np.random.default_rng(config.seed)
        self.rows: list[str] = []
        self.first_total: float | None = None

    def resume(self, checkpoint: str | Path) -> None:
        state = torch.load(str(checkpoint), weights_only=False)
        self.model.load_state_dict(state["model"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.scheduler.load_state_dict(state["scheduler"])
        self.start_step = state["step"]
        torch.set_rng_state(state["torch_rng"])
        if "numpy_rng" in state:
            self.rng.bit_generator.state = state["numpy_rng"]
        curve = self.out_dir / "loss_curve.txt"
        if curve.exists():
            self.rows = curve.read_text().rstrip("\n").splitlines()

    def step_once(self, step: int) -> LossReport:
        cfg = self.config
        batch_index = step % len(self.batches)
        batch = self.batches[batch_index]
        if cfg.augment:
            batch = augment_batch(batch, self.rng, AugmentConfig())
        include_occ = step >= cfg.occ_activation * cfg.steps

        # the two temporal triplets share all weights: run them as one batch
        stacked = tuple(
            torch.stack([a, b])
            for a, b in zip(batch.triplet_a(), batch.triplet_b())
        )
        trace = self.model.run_iterations(stacked, batch.cam, cfg.iterations)
        final = trace.forward[-1]
        if not (torch.isfinite(final.s_full).all() and torch.isfinite(final.d_full).all()):
            self._dump_divergence(step, batch_index, None)
            raise TrainingDiverged(step, batch_index)
        trace_a = trace.select(0, 1)
        trace_b = trace.select(1, 2)
        total, report = self.criterion(trace_a, trace_b, batch, include_occ, step=step)
        if not torch.isfinite(total):
            self._dump_divergence(step, batch_index, report)
            raise TrainingDiverged(step, batch_index)

        self.optimizer.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.grad_clip)
        self.optimizer.step()
        self.scheduler.step()
        return report

    def run(self) -> TrainResult:
        cfg = self.config
        curve_path = self.out_dir / "loss_curve.txt"
        ckpt_path = self.out_dir / "checkpoint.pt"
        if self.start_step == 0:
            self.rows = ["# step total disp sf occ lr"]
        last = None
        for step in range(self.start_step, cfg.steps):
            report = self.step_once(step)
            last = report
            if self.first_total is None:
                self.first_total = report.total
            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                lr = self.scheduler.get_last_lr()[0]
                self.rows.append(
                    f"{step} {report.total:.6f} {report.disp_terms[-1]:.6f} "
                    f"{report.sf_terms[-1]:.6f} {report.occ_terms[-1]:.6f} {lr:.2e}"
                )
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                self._save(self.out_dir / f"checkpoint_{step + 1:06d}.pt", step + 1)
        self._save(ckpt_path, cfg.steps)
        curve_path.write_text("\n".join(self.rows) + "\n")
        cfg.to_file(self.out_dir / "config_used.txt")
        return TrainResult(
            checkpoint=ckpt_path,
            loss_curve=curve_path,
            first_total=self.first_total if self.first_total is not None else float("nan"),
            last_total=last.total if last else float("nan"),
            steps=cfg.steps,
        )

    def _save(self, path: Path, step: int) -> None:
        save_checkpoint(
            path,
            self.model,
            self.optimizer,
            self.scheduler,
            step=step,
            config=self.config,
            rng=self.rng,
        )

    def _dump_divergence(self, step: int, batch_index: int, report: LossReport | None) -> None:
        dump = self.out_dir / "nan_dump.txt"
        lines = [f"step {step}", f"batch_index {batch_index}"]
        if report is None:
            lines.append("non-finite model output before loss evaluation")
        else:
            lines += [
                f"disp_terms {report.disp_terms}",
                f"sf_terms {report.sf_terms}",
                f"occ_terms {report.occ_terms}",
            ]
        dump.write_text("\n".join(lines) + "\n")
