"""Trainer: criterion composition, determinism, resume, divergence dump."""

import warnings

import pytest
import torch

from msflow.config import RunConfig
from msflow.dataset import SequenceBatch
from msflow.model import SceneFlowModel
from msflow.synthetic import SceneConfig, synth_scene
from msflow.train import (
    SelfSupervisedCriterion,
    Trainer,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture(scope="module")
def small_setup():
    scene = synth_scene(SceneConfig(seed=3))
    batch = SequenceBatch(
        frames=[torch.as_tensor(f) for f in scene.frames],
        rights=[torch.as_tensor(r) for r in scene.rights],
        cam=scene.camera_model(),
        regions_ref=scene.region_masks(1),
    )
    return scene, batch


def _config(**kw):
    defaults = dict(steps=4, iterations=2, log_every=1, checkpoint_every=2)
    defaults.update(kw)
    return RunConfig(**defaults)


class TestCriterion:
    def test_report_structure(self, small_setup):
        scene, batch = small_setup
        cfg = _config()
        model = SceneFlowModel(cfg.model_config((64, 128)), seed=0)
        crit = SelfSupervisedCriterion(cfg)
        ta = model.run_iterations(batch.triplet_a(), batch.cam, 2)
        tb = model.run_iterations(batch.triplet_b(), batch.cam, 2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            total, rep = crit(ta, tb, batch, include_occ=False)
        assert len(rep.disp_terms) == 2 and len(rep.sf_terms) == 2
        assert rep.occ_terms[-1] == 0.0
        assert torch.isfinite(total)
        assert rep.expected_total() == pytest.approx(total.item(), rel=1e-9)

    def test_sf_weight_schedule_hook(self, small_setup):
        scene, batch = small_setup
        cfg = _config()
        model = SceneFlowModel(cfg.model_config((64, 128)), seed=0)
        crit = SelfSupervisedCriterion(cfg)
        crit.sf_weight_schedule = lambda step: 0.5 if step >= 10 else 0.1
        ta = model.run_iterations(batch.triplet_a(), batch.cam, 1)
        tb = model.run_iterations(batch.triplet_b(), batch.cam, 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, rep_early = crit(ta, tb, batch, include_occ=False, step=0)
            _, rep_late = crit(ta, tb, batch, include_occ=False, step=20)
        assert rep_early.sf_weight == 0.1
        assert rep_late.sf_weight == 0.5


class TestTrainer:
    def test_runs_and_writes_outputs(self, small_setup, tmp_path):
        scene, batch = small_setup
        cfg = _config()
        model = SceneFlowModel(cfg.model_config((64, 128)), seed=0)
        trainer = Trainer(model, [batch], cfg, tmp_path)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = trainer.run()
        assert result.checkpoint.exists()
        assert result.loss_curve.exists()
        rows = result.loss_curve.read_text().strip().splitlines()
        assert rows[0].startswith("#")
        assert len(rows) == 1 + cfg.steps  # log_every=1
        assert (tmp_path / "config_used.txt").exists()

    def test_deterministic_given_seed(self, small_setup, tmp_path):
        scene, batch = small_setup
        losses = []
        for run in range(2):
            cfg = _config(steps=3)
            model = SceneFlowModel(cfg.model_config((64, 128)), seed=cfg.seed)
            trainer = Trainer(model, [batch], cfg, tmp_path / f"run{run}")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                reps = [trainer.step_once(s) for s in range(3)]
            losses.append([r.total for r in reps])
        assert losses[0] == losses[1]

    def test_resume_bit_for_bit(self, small_setup, tmp_path):
        scene, batch = small_setup
        cfg = _config(steps=4, checkpoint_every=2)

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = SceneFlowModel(cfg.model_config((64, 128)), seed=cfg.seed)
            trainer = Trainer(model, [batch], cfg, tmp_path / "full")
            full = [trainer.step_once(s).total for s in range(4)]
            trainer._save(tmp_path / "full" / "ignored.pt", 4)

            model2 = SceneFlowModel(cfg.model_config((64, 128)), seed=cfg.seed)
            t2 = Trainer(model2, [batch], cfg, tmp_path / "half")
            for s in range(2):
                t2.step_once(s)
            t2._save(tmp_path / "half" / "checkpoint_000002.pt", 2)

            model3 = SceneFlowModel(cfg.model_config((64, 128)), seed=cfg.seed)
            t3 = Trainer(model3, [batch], cfg, tmp_path / "resumed")
            t3.resume(tmp_path / "half" / "checkpoint_000002.pt")
            resumed = [t3.step_once(s).total for s in (2, 3)]
        assert resumed == full[2:]

    def test_no_trainable_sequences(self, small_setup, tmp_path):
        scene, batch = small_setup
        short = SequenceBatch(
            frames=batch.frames[:3], rights=batch.rights[:3], cam=batch.cam, regions_ref=[]
        )
        cfg = _config()
        model = SceneFlowModel(cfg.model_config((64, 128)), seed=0)
        with pytest.raises(ValueError, match="trainable"):
            Trainer(model, [short], cfg, tmp_path)

    def test_divergence_dump(self, small_setup, tmp_path):
        scene, batch = small_setup
        cfg = _config()
        model = SceneFlowModel(cfg.model_config((64, 128)), seed=0)
        trainer = Trainer(model, [batch], cfg, tmp_path)
        with torch.no_grad():
            model.gmf_init.fill_(float("nan"))
        with pytest.raises(TrainingDiverged, match="batch index 0"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                trainer.step_once(0)
        assert (tmp_path / "nan_dump.txt").exists()
        assert "batch_index 0" in (tmp_path / "nan_dump.txt").read_text()


class TestCheckpointIO:
    def test_roundtrip(self, tmp_path):
        cfg = RunConfig(iterations=2)
        model = SceneFlowModel(cfg.model_config((64, 128)), seed=1)
        p = tmp_path / "ckpt.pt"
        save_checkpoint(p, model, step=7, config=cfg)
        back, back_cfg, state = load_checkpoint(p)
        assert back_cfg.iterations == 2
        assert state["step"] == 7
        for a, b in zip(model.parameters(), back.parameters()):
            assert torch.equal(a, b)
