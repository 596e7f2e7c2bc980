"""Synthetic shapes dataset: rendering, manifest files and image loading.

Each image shows one shape class at a random position, scale and colour on a
low-amplitude noise background with up to two distractor texture patches.
The ground-truth box is the tight box of the rendered shape mask.
"""
import math
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np
from PIL import Image, ImageDraw

from app.config import Settings
from app.core.errors import DatasetError
from app.core.logging import get_logger
from app.core.seeds import derive_seed
from app.models.dataset import DatasetManifest, ManifestEntry
from app.models.localization import Box
from app.services.imaging import read_ppm, write_ppm

logger = get_logger("dataset")

MANIFEST_NAME = "manifest.txt"
SPLITS = ("train", "test")
MIN_SCALE, MAX_SCALE = 16, 32
NOISE_AMPLITUDE = 0.06
MAX_DISTRACTORS = 2


def _bar(s: int) -> int:
    return max(5, s // 3)


def _disk(draw: ImageDraw.ImageDraw, x: int, y: int, s: int) -> None:
    draw.ellipse((x, y, x + s - 1, y + s - 1), fill=255)


def _square(draw: ImageDraw.ImageDraw, x: int, y: int, s: int) -> None:
    draw.rectangle((x, y, x + s - 1, y + s - 1), fill=255)


def _triangle(draw: ImageDraw.ImageDraw, x: int, y: int, s: int) -> None:
    draw.polygon([(x + (s - 1) / 2, y), (x, y + s - 1), (x + s - 1, y + s - 1)], fill=255)


def _cross(draw: ImageDraw.ImageDraw, x: int, y: int, s: int) -> None:
    t = _bar(s)
    off = (s - t) // 2
    draw.rectangle((x, y + off, x + s - 1, y + off + t - 1), fill=255)
    draw.rectangle((x + off, y, x + off + t - 1, y + s - 1), fill=255)


def _ring(draw: ImageDraw.ImageDraw, x: int, y: int, s: int) -> None:
    draw.ellipse((x, y, x + s - 1, y + s - 1), outline=255, width=max(3, s // 5))


def _horizontal_bar(draw: ImageDraw.ImageDraw, x: int, y: int, s: int) -> None:
    t = _bar(s)
    off = (s - t) // 2
    draw.rectangle((x, y + off, x + s - 1, y + off + t - 1), fill=255)


def _vertical_bar(draw: ImageDraw.ImageDraw, x: int, y: int, s: int) -> None:
    t = _bar(s)
    off = (s - t) // 2
    draw.rectangle((x + off, y, x + off + t - 1, y + s - 1), fill=255)


def _diamond(draw: ImageDraw.ImageDraw, x: int, y: int, s: int) -> None:
    mid = (s - 1) / 2
    draw.polygon([(x + mid, y), (x + s - 1, y + mid), (x + mid, y + s - 1), (x, y + mid)], fill=255)


# Indexed by class label, same order as the configured class names.
SHAPE_PAINTERS: List[Callable[[ImageDraw.ImageDraw, int, int, int], None]] = [
    _disk,
    _square,
    _triangle,
    _cross,
    _ring,
    _horizontal_bar,
    _vertical_bar,
    _diamond,
]


def shape_mask(label: int, size: int, x: int, y: int, scale: int) -> np.ndarray:
    """Boolean size x size mask of shape ``label`` with its box corner at (x, y)"""
    if not 0 <= label < len(SHAPE_PAINTERS):
        raise DatasetError(f"no shape painter for class {label}")
    canvas = Image.new("L", (size, size), 0)
    SHAPE_PAINTERS[label](ImageDraw.Draw(canvas), x, y, scale)
    return np.asarray(canvas) > 127


def mask_box(mask: np.ndarray) -> Box:
    bbox = Image.fromarray(mask.astype(np.uint8) * 255).getbbox()
    if bbox is None:
        raise DatasetError("rendered shape is empty")
    x0, y0, x1, y1 = bbox
    return Box(x0=x0, y0=y0, x1=x1, y1=y1)


def render_example(label: int, size: int, channels: int, rng: np.random.Generator) -> Tuple[np.ndarray, Box]:
    """C x H x W image in [0, 1] and the ground-truth box of its shape"""
    background = rng.uniform(0.15, 0.35, size=(channels, 1, 1))
    image = background + rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=(channels, size, size))

    for _ in range(int(rng.integers(0, MAX_DISTRACTORS + 1))):
        side = int(rng.integers(6, 11))
        px, py = (int(v) for v in rng.integers(0, size - side + 1, size=2))
        texture = rng.uniform(0.0, 0.6, size=(channels, side, side))
        image[:, py:py + side, px:px + side] = texture

    scale = int(rng.integers(MIN_SCALE, min(MAX_SCALE, size) + 1))
    x, y = (int(v) for v in rng.integers(0, size - scale + 1, size=2))
    mask = shape_mask(label, size, x, y, scale)
    colour = rng.uniform(0.65, 1.0, size=(channels, 1, 1))
    image = np.where(mask[None, :, :], colour, image)
    return np.clip(image, 0.0, 1.0), mask_box(mask)


def balanced_labels(n: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Labels with counts differing by at most one, in random order"""
    tiled = np.tile(np.arange(num_classes), math.ceil(n / num_classes))[:n]
    return rng.permutation(tiled)


def write_manifest(manifest: DatasetManifest, path: Path, image_size: int) -> None:
    lines = [f"# seed={manifest.seed} size={image_size} classes={','.join(manifest.class_names)}"]
    for e in manifest.entries:
        for box in e.boxes:
            lines.append(f"{e.path} {e.label} {box.x0} {box.y0} {box.x1} {box.y1}")
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot write manifest {path}: {exc}") from exc


def gen_dataset(settings: Settings, n_train: int = None, n_test: int = None,
                seed: int = None, out_dir: Path = None) -> DatasetManifest:
    """Render the train and test splits and write ``manifest.txt`` next to them"""
    n_train = settings.n_train if n_train is None else n_train
    n_test = settings.n_test if n_test is None else n_test
    seed = settings.seed if seed is None else seed
    out_dir = Path(out_dir or settings.data_dir)
    size = settings.image_size
    if settings.num_classes > len(SHAPE_PAINTERS):
        raise DatasetError(f"the generator renders {len(SHAPE_PAINTERS)} classes, "
                           f"configuration asks for {settings.num_classes}")
    if size < MIN_SCALE:
        raise DatasetError(f"image_size {size} is smaller than the minimum shape scale {MIN_SCALE}")

    entries: List[ManifestEntry] = []
    for split_index, (split, count) in enumerate(zip(SPLITS, (n_train, n_test))):
        split_dir = out_dir / split
        try:
            split_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DatasetError(f"cannot create {split_dir}: {e}") from e

        labels = balanced_labels(count, settings.num_classes,
                                 np.random.default_rng(derive_seed(seed, split_index)))
        for index, label in enumerate(labels):
            rng = np.random.default_rng(derive_seed(seed, split_index, index))
            image, box = render_example(int(label), size, settings.channels, rng)
            relative = f"{split}/{index:06d}.ppm"
            write_ppm(out_dir / relative, image)
            entries.append(ManifestEntry(path=relative, label=int(label), boxes=[box]))

    manifest = DatasetManifest(entries=entries, class_names=settings.class_names,
                               seed=seed, root=str(out_dir))
    write_manifest(manifest, out_dir / MANIFEST_NAME, size)
    logger.info("dataset_generated", root=str(out_dir), train=n_train, test=n_test, seed=seed)
    return manifest


def _parse_header(line: str) -> Dict[str, str]:
    fields = {}
    for token in line.lstrip("#").split():
        if "=" in token:
            key, value = token.split("=", 1)
            fields[key] = value
    return fields


def load_manifest(path: Path) -> DatasetManifest:
    """Read a manifest and check that every image exists and every box fits"""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DatasetError(f"cannot read manifest {path}: {e}") from e
    if not lines or not lines[0].startswith("#"):
        raise DatasetError(f"{path}: missing header line")

    header = _parse_header(lines[0])
    try:
        seed, size = int(header["seed"]), int(header["size"])
        class_names = header["classes"].split(",")
    except (KeyError, ValueError) as e:
        raise DatasetError(f"{path}: malformed header {lines[0]!r}") from e

    root = path.parent
    by_path: Dict[str, ManifestEntry] = {}
    for number, raw in enumerate(lines[1:], start=2):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 6:
            raise DatasetError(f"{path}:{number}: expected 'path label x0 y0 x1 y1'")
        rel, label = parts[0], int(parts[1])
        x0, y0, x1, y1 = (int(v) for v in parts[2:])
        if not 0 <= label < len(class_names):
            raise DatasetError(f"{path}:{number}: label {label} out of range")
        try:
            box = Box(x0=x0, y0=y0, x1=x1, y1=y1)
        except ValueError as e:
            raise DatasetError(f"{path}:{number}: {e}") from e
        if not box.within(size, size):
            raise DatasetError(f"{path}:{number}: box {box.as_tuple()} exceeds {size}x{size}")
        if not (root / rel).is_file():
            raise DatasetError(f"{path}:{number}: missing image {rel}")
        if rel in by_path:
            by_path[rel].boxes.append(box)
        else:
            by_path[rel] = ManifestEntry(path=rel, label=label, boxes=[box])

    return DatasetManifest(entries=list(by_path.values()), class_names=class_names,
                           seed=seed, root=str(root))


def load_image(manifest: DatasetManifest, entry: ManifestEntry, channels: int = 3) -> np.ndarray:
    return read_ppm(Path(manifest.root) / entry.path, channels)
