"""Binary PPM (P6) images and PGM (P5) heatmaps through Pillow."""
import io
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from app.core.errors import DatasetError, ShapeError

PathLike = Union[str, Path]


def to_uint8(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> 0..255 bytes, rounding half up"""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def image_to_array(image: Image.Image, channels: int = 3) -> np.ndarray:
    """PIL image -> C x H x W float64 in [0, 1]"""
    mode = "RGB" if channels == 3 else "L"
    if channels not in (1, 3):
        raise ShapeError(f"only 1 or 3 channels are supported, got {channels}")
    pixels = np.asarray(image.convert(mode), dtype=np.float64) / 255.0
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return np.ascontiguousarray(pixels.transpose(2, 0, 1))


def array_to_image(array: np.ndarray) -> Image.Image:
    """C x H x W in [0, 1] (C of 1 or 3) -> PIL image"""
    array = np.asarray(array)
    if array.ndim != 3 or array.shape[0] not in (1, 3):
        raise ShapeError(f"expected 1 x H x W or 3 x H x W, got {array.shape}")
    pixels = to_uint8(array.transpose(1, 2, 0))
    if pixels.shape[2] == 1:
        return Image.fromarray(pixels[:, :, 0])
    return Image.fromarray(pixels)


def write_ppm(path: PathLike, array: np.ndarray) -> None:
    try:
        array_to_image(array).save(path, format="PPM")
    except OSError as e:
        raise DatasetError(f"cannot write image {path}: {e}") from e


def read_ppm(path: PathLike, channels: int = 3) -> np.ndarray:
    try:
        with Image.open(path) as image:
            return image_to_array(image, channels)
    except (OSError, UnidentifiedImageError) as e:
        raise DatasetError(f"cannot read image {path}: {e}") from e


def decode_ppm(payload: bytes, channels: int = 3) -> np.ndarray:
    """Decode an uploaded PPM/PGM body"""
    try:
        with Image.open(io.BytesIO(payload)) as image:
            return image_to_array(image, channels)
    except (OSError, UnidentifiedImageError) as e:
        raise DatasetError(f"payload is not a readable PPM image: {e}") from e


def write_heatmap(path: PathLike, heatmap: np.ndarray) -> None:
    """H x W map in [0, 1] -> binary PGM"""
    heatmap = np.asarray(heatmap)
    if heatmap.ndim != 2:
        raise ShapeError(f"heatmap must be H x W, got {heatmap.shape}")
    write_ppm(path, heatmap[None, :, :])
