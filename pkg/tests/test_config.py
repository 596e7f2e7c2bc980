import pytest

from app.config import Settings, load_settings, read_config_file
from app.core.errors import ConfigError


def test_overrides_beat_the_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# local run\nseed = 3\nshuffle_eta=0.25\nepochs=2  # short\n")
    settings = load_settings(path, {"seed": 9, "epochs": None})
    assert settings.seed == 9
    assert settings.shuffle_eta == 0.25
    assert settings.epochs == 2


def test_environment_is_below_the_config_file(tmp_path, monkeypatch):
    monkeypatch.setenv("SCMN_SEED", "42")
    monkeypatch.setenv("SCMN_EPOCHS", "5")
    path = tmp_path / "run.cfg"
    path.write_text("seed=3\n")
    settings = load_settings(path)
    assert settings.seed == 3
    assert settings.epochs == 5


def test_unknown_keys_are_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        load_settings(overrides={"shufle_eta": 0.3})


def test_malformed_line(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("seed 3\n")
    with pytest.raises(ConfigError, match="bad.cfg:1"):
        read_config_file(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_settings(tmp_path / "absent.cfg")


@pytest.mark.parametrize("overrides", [
    {"shuffle_eta": 1.5},
    {"equivariant_weight": -0.1},
    {"stair_scale": 0.0},
    {"sinkhorn_epsilon": 0.0},
    {"box_threshold": 1.0},
    {"image_size": 60, "patch_size": 8},
    {"embed_dim": 10, "num_heads": 4},
    {"use_local_shuffle": True, "use_global_shuffle": True},
    {"image_size": 24, "patch_size": 8},
    {"log_level": "LOUD"},
    {"train_workers": -1},
])
def test_invalid_values_raise_config_error(overrides):
    with pytest.raises(ConfigError):
        load_settings(overrides=overrides)


def test_odd_grid_is_fine_with_the_global_shuffle():
    settings = load_settings(overrides={"image_size": 24, "patch_size": 8,
                                        "use_local_shuffle": False, "use_global_shuffle": True})
    assert settings.grid_h == 3


def test_derived_sizes():
    settings = Settings(image_size=64, patch_size=8, channels=3, embed_dim=16, num_heads=4, num_classes=5)
    assert settings.num_patches == 64
    assert settings.patch_dim == 192
    assert settings.head_dim == 4
    assert settings.matching_dim == 10
    assert settings.class_names[-1] == "ring"


def test_worker_count_is_capped_by_the_batch(monkeypatch):
    assert Settings(train_workers=3, batch_size=16).worker_count == 3
    assert Settings(train_workers=32, batch_size=4).worker_count == 4
    monkeypatch.setattr("app.config.os.cpu_count", lambda: None)
    assert Settings(train_workers=0).worker_count == 1
    monkeypatch.setattr("app.config.os.cpu_count", lambda: 6)
    assert Settings(train_workers=0, batch_size=16).worker_count == 6
