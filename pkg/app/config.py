import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from pydantic import ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigError

CLASS_NAMES: List[str] = [
    "disk",
    "square",
    "triangle",
    "cross",
    "ring",
    "horizontal_bar",
    "vertical_bar",
    "diamond",
]


class Settings(BaseSettings):
    """Pipeline settings from environment variables, config files and CLI flags"""

    # Application settings
    app_name: str = "SCMN-desk"
    app_version: str = "0.1.0"
    host: str = "127.0.0.1"
    port: int = 8000
    debug: bool = False

    # Encoder shape
    image_size: int = 64
    patch_size: int = 8
    channels: int = 3
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    mlp_ratio: int = 2
    num_classes: int = 8
    init_std: float = 0.02

    # Pair construction
    use_local_shuffle: bool = True
    use_global_shuffle: bool = False
    shuffle_eta: float = 0.5
    shuffle_block_layout: Literal["spatial", "sequential"] = "spatial"

    # Semantic-constraint matching
    use_matching: bool = True
    use_across_transformer: bool = False
    across_dim: Optional[int] = None
    across_heads: int = 2
    stair_scale: float = 1.0
    sinkhorn_epsilon: float = 0.1
    sinkhorn_max_iters: int = 200
    sinkhorn_tol: float = 1e-6

    # Training
    equivariant_weight: float = 0.5
    learning_rate: float = 1e-2
    epochs: int = 30
    batch_size: int = 16
    optimizer: Literal["sgd", "adamw"] = "sgd"
    adamw_beta1: float = 0.9
    adamw_beta2: float = 0.99
    adamw_eps: float = 1e-8
    weight_decay: float = 5e-4
    seed: int = 7
    # Processes computing per-image gradients; 0 uses every core, at most batch_size
    train_workers: int = 0

    # Dataset
    n_train: int = 800
    n_test: int = 200
    data_dir: Path = Path("data")

    # Localization
    box_threshold: float = 0.1

    # Outputs
    run_dir: Path = Path("runs")
    checkpoint_path: Optional[Path] = None

    # Logging settings
    log_level: str = "INFO"
    log_format: Literal["json", "console"] = "console"

    model_config = SettingsConfigDict(
        env_prefix="SCMN_",
        case_sensitive=False,
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        """Validate log level"""
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"Log level must be one of: {valid_levels}")
        return v.upper()

    @field_validator("image_size", "patch_size", "channels", "embed_dim", "depth",
                     "num_heads", "mlp_ratio", "num_classes", "across_heads",
                     "sinkhorn_max_iters", "epochs", "batch_size")
    @classmethod
    def validate_positive(cls, v, info):
        if v <= 0:
            raise ValueError(f"{info.field_name} must be positive")
        return v

    @field_validator("patch_size")
    @classmethod
    def validate_patch_size(cls, v, info):
        """Patches must tile the image exactly"""
        if "image_size" in info.data and info.data["image_size"] % v != 0:
            raise ValueError(
                f"image_size {info.data['image_size']} is not divisible by patch_size {v}"
            )
        return v

    @field_validator("num_heads")
    @classmethod
    def validate_num_heads(cls, v, info):
        if "embed_dim" in info.data and info.data["embed_dim"] % v != 0:
            raise ValueError(f"embed_dim {info.data['embed_dim']} is not divisible by num_heads {v}")
        return v

    @field_validator("shuffle_eta")
    @classmethod
    def validate_eta(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("shuffle_eta must lie in [0, 1]")
        return v

    @field_validator("use_global_shuffle")
    @classmethod
    def validate_shuffle_flags(cls, v, info):
        if v and info.data.get("use_local_shuffle"):
            raise ValueError("use_local_shuffle and use_global_shuffle are mutually exclusive")
        return v

    @field_validator("stair_scale", "sinkhorn_epsilon", "learning_rate")
    @classmethod
    def validate_strictly_positive(cls, v, info):
        if v <= 0:
            raise ValueError(f"{info.field_name} must be > 0")
        return v

    @field_validator("sinkhorn_tol", "equivariant_weight", "weight_decay", "init_std", "train_workers")
    @classmethod
    def validate_non_negative(cls, v, info):
        if v < 0:
            raise ValueError(f"{info.field_name} must be >= 0")
        return v

    @field_validator("box_threshold")
    @classmethod
    def validate_box_threshold(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("box_threshold must lie in (0, 1)")
        return v

    @model_validator(mode="after")
    def validate_block_grid(self):
        """Quadrille blocks need an even patch grid unless the global shuffle is used"""
        grid = self.image_size // self.patch_size
        if self.use_local_shuffle and grid % 2 != 0:
            raise ValueError(f"local shuffle needs an even patch grid, got {grid}x{grid}")
        if self.across_dim is not None and self.across_dim % self.across_heads != 0:
            raise ValueError("across_dim must be divisible by across_heads")
        if self.across_dim is None and (2 * self.num_classes) % self.across_heads != 0:
            raise ValueError("2 * num_classes must be divisible by across_heads")
        return self

    @property
    def grid_h(self) -> int:
        return self.image_size // self.patch_size

    @property
    def grid_w(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def matching_dim(self) -> int:
        """Width d_x of the across-transformer tokens"""
        return self.across_dim if self.across_dim is not None else 2 * self.num_classes

    @property
    def worker_count(self) -> int:
        """Resolved gradient worker count, never more than one per batch image"""
        workers = self.train_workers or os.cpu_count() or 1
        return max(1, min(workers, self.batch_size))

    @property
    def class_names(self) -> List[str]:
        if self.num_classes <= len(CLASS_NAMES):
            return CLASS_NAMES[: self.num_classes]
        return CLASS_NAMES + [f"class_{k}" for k in range(len(CLASS_NAMES), self.num_classes)]


def read_config_file(path: Path) -> Dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped"""
    values: Dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e

    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().lower()] = value.strip()
    return values


def load_settings(
    config_file: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> Settings:
    """Build settings with precedence overrides > config file > environment > defaults"""
    values: Dict[str, Any] = {}
    if config_file is not None:
        values.update(read_config_file(config_file))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    unknown = sorted(set(values) - set(Settings.model_fields))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {unknown}")

    try:
        return Settings(**values)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


# Global settings instance
settings = Settings()
