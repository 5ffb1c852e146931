"""Run configuration: iteration counts, loss weights, model widths and the
training schedule, plus a plain-text key = value config file format whose
copies are written next to every run for provenance. Command-line flags
override file values."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelConfig


@dataclass
class RunConfig:
    # refinement iterations and loss weights
    iterations: int = 10
    decay: float = 0.8
    occ_weight: float = 1.0
    sf_weight: float = 0.1
    theta: float = 0.025
    occ_timing: str = "final"  # final | all
    occ_activation: float = 0.5  # fraction of training after which L_occ turns on
    combiner: str = "and"  # outlier rule: and | or
    # loss composition details
    disp_smooth_weight: float = 0.1
    sf_smooth_weight: float = 0.1
    point_weight: float = 0.2
    min_region_points: int = 10
    # model widths
    feat_channels: int = 64
    context_channels: int = 48
    hidden_channels: int = 48
    gmf_channels: int = 64
    motion_channels: int = 96
    corr_radius: int = 3
    embed_dim: int = 32
    precision: str = "float32"  # training/eval precision; contract tests use float64
    # training schedule
    seed: int = 0
    steps: int = 300
    lr: float = 1e-3
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    log_every: int = 10
    checkpoint_every: int = 100
    augment: bool = False

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.occ_timing not in ("final", "all"):
            raise ValueError("occ_timing must be 'final' or 'all'")
        if self.combiner not in ("and", "or"):
            raise ValueError("combiner must be 'and' or 'or'")
        if not 0 <= self.occ_activation <= 1:
            raise ValueError("occ_activation must lie in [0, 1]")
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be 'float32' or 'float64'")

    def model_config(self, image_shape: tuple[int, int] | None = None) -> ModelConfig:
        import torch

        base = (image_shape[0] // 8, image_shape[1] // 8) if image_shape else (8, 16)
        return ModelConfig(
            feat_channels=self.feat_channels,
            context_channels=self.context_channels,
            hidden_channels=self.hidden_channels,
            gmf_channels=self.gmf_channels,
            motion_channels=self.motion_channels,
            corr_radius=self.corr_radius,
            embed_dim=self.embed_dim,
            attn_base_shape=base,
            dtype=torch.float32 if self.precision == "float32" else torch.float64,
        )

    def to_file(self, path: str | Path) -> None:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        cfg = cls()
        cfg.apply_overrides(parse_config_text(Path(path).read_text()))
        cfg.validate()
        return cfg

    def apply_overrides(self, overrides: dict[str, str]) -> None:
        types = {f.name: f.type for f in fields(self)}
        for key, raw in overrides.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            current = getattr(self, key)
            if isinstance(current, bool):
                value: object = str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            else:
                value = str(raw).strip()
            setattr(self, key, value)


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out
