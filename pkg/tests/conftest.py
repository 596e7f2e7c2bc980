import numpy as np
import pytest

from app.config import Settings
from app.services.diagnostics import toy_settings
from app.services.params import init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_settings() -> Settings:
    """Four patches (2 x 2 grid), one channel, two classes"""
    return toy_settings()


@pytest.fixture
def tiny_params(tiny_settings):
    return init_params(tiny_settings, seed=0)


@pytest.fixture
def small_settings(tmp_path) -> Settings:
    """32 x 32 RGB images on a 4 x 4 patch grid, all eight shape classes"""
    return Settings(
        image_size=32,
        patch_size=8,
        channels=3,
        embed_dim=8,
        depth=1,
        num_heads=2,
        mlp_ratio=2,
        num_classes=8,
        init_std=0.1,
        epochs=1,
        batch_size=4,
        n_train=16,
        n_test=8,
        sinkhorn_max_iters=50,
        train_workers=1,
        data_dir=tmp_path / "data",
        run_dir=tmp_path / "runs",
    )
