import numpy as np
import pytest
import torch

from videobc.envs import EnvConfig, record_expert_videos


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def grid_cfg():
    return EnvConfig.for_env("gridpix")


@pytest.fixture(scope="session")
def point_cfg():
    return EnvConfig.for_env("pointpix")


@pytest.fixture(scope="session")
def small_grid_videos(grid_cfg):
    return record_expert_videos(grid_cfg, 600, seed=123)


@pytest.fixture(scope="session")
def small_pretrained_encoder(small_grid_videos):
    from videobc.features import FeaturePretrainConfig, FeaturePretrainer
    cfg = FeaturePretrainConfig(update_count=300, feature_dim=32,
                                channels=16, batch_size=32, seed=0)
    return FeaturePretrainer(cfg).fit(small_grid_videos).encoder_


def fd_gradients(params, loss_fn, eps=1e-5):
    """Central finite differences of a scalar loss over parameter tensors."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = float(loss_fn())
                flat[i] = orig - eps
                lo = float(loss_fn())
                flat[i] = orig
                gflat[i] = (hi - lo) / (2 * eps)
            grads.append(g)
    return grads


def analytic_gradients(params, loss_fn):
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    return [p.grad.clone() if p.grad is not None else torch.zeros_like(p)
            for p in params]


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = max(float(n.norm()), float(a.norm()), 1e-10)
        worst = max(worst, float((a - n).norm()) / denom)
    return worst


def check_gradients(params, loss_fn, rtol, eps=1e-5):
    """Assert autograd gradients match central finite differences."""
    analytic = analytic_gradients(params, loss_fn)
    numeric = fd_gradients(params, loss_fn, eps)
    err = max_relative_error(analytic, numeric)
    assert err < rtol, f"gradient mismatch: relative error {err:.3e}"
    return err
