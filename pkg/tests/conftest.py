import pytest
import torch

from msflow.geometry import CameraModel
from msflow.synthetic import SceneConfig, synth_scene


@pytest.fixture
def cam() -> CameraModel:
    K = torch.tensor([[120.0, 0.0, 63.5], [0.0, 120.0, 31.5], [0.0, 0.0, 1.0]])
    return CameraModel(K=K, f=120.0, b=0.3)


@pytest.fixture
def identity_cam() -> CameraModel:
    return CameraModel(K=torch.eye(3), f=1.0, b=1.0)


@pytest.fixture(scope="session")
def scene():
    return synth_scene(SceneConfig(seed=3))


@pytest.fixture(scope="session")
def static_scene():
    return synth_scene(SceneConfig(seed=7, static=True))


def fd_grad(fn, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Central finite-difference gradient of a scalar function of x."""
    g = torch.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = float(fn(x))
            flat[i] = orig - eps
            lo = float(fn(x))
            flat[i] = orig
            gf[i] = (hi - lo) / (2 * eps)
    return g


def autograd_grad(fn, x: torch.Tensor) -> torch.Tensor:
    leaf = x.clone().requires_grad_(True)
    out = fn(leaf)
    out.backward()
    return leaf.grad.detach()
