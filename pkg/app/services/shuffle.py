"""Local (quadrille-block) and global patch shuffles that build the primal-shuffled pair.

Shuffles act on image pixels before patch embedding. Block positions never
move under the local shuffle; only the four patches inside a fired block are
permuted.
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.config import Settings
from app.core.errors import ShapeError
from app.models.shuffle import ShuffleConfig, ShuffleRecord
from app.services.tensor import Tensor, as_tensor
from app.services.vit import patchify, unpatchify


def _grid(image: Tensor, patch_size: int) -> Tuple[int, int]:
    if image.ndim != 3:
        raise ShapeError(f"shuffle: expected C x H x W, got {image.shape}")
    _, height, width = image.shape
    if height % patch_size != 0 or width % patch_size != 0:
        raise ShapeError(f"shuffle: image {height}x{width} not divisible by patch size {patch_size}")
    return height // patch_size, width // patch_size


def block_members(grid: Tuple[int, int], layout: str = "spatial") -> List[List[int]]:
    """Patch indices of every quadrille block, listed TL, TR, BL, BR"""
    h, w = grid
    if layout == "sequential":
        n = h * w
        if n % 4 != 0:
            raise ShapeError(f"sequential blocks need N divisible by 4, got N={n}")
        return [list(range(4 * i, 4 * i + 4)) for i in range(n // 4)]
    if h % 2 != 0 or w % 2 != 0:
        raise ShapeError(
            f"local patch shuffle needs an even patch grid (h and w even), got {h}x{w}"
        )
    blocks = []
    for bi in range(h // 2):
        for bj in range(w // 2):
            top, left = 2 * bi, 2 * bj
            blocks.append([
                top * w + left,
                top * w + left + 1,
                (top + 1) * w + left,
                (top + 1) * w + left + 1,
            ])
    return blocks


def apply_permutation(image: Tensor, permutation: Sequence[int], patch_size: int) -> Tensor:
    """Destination patch k receives source patch ``permutation[k]``"""
    image = as_tensor(image)
    grid = _grid(image, patch_size)
    patches = patchify(image, patch_size).data
    if len(permutation) != patches.shape[0]:
        raise ShapeError.mismatch("apply_permutation", (len(permutation),), patches.shape)
    shuffled = patches[np.asarray(permutation, dtype=int)]
    return unpatchify(Tensor(shuffled), patch_size, image.shape[0], grid)


def local_patch_shuffle(
    image: Tensor,
    cfg: ShuffleConfig,
    block_permutation: Optional[Sequence[int]] = None,
) -> Tuple[Tensor, ShuffleRecord]:
    """Shuffle the four patches of each quadrille block with probability eta.

    ``block_permutation`` (dest -> source, over TL, TR, BL, BR) replaces the
    uniform random draw whenever a block fires.
    """
    image = as_tensor(image)
    grid = _grid(image, cfg.patch_size)
    blocks = block_members(grid, cfg.block_layout)
    rng = np.random.default_rng(cfg.rng_seed)

    permutation = list(range(grid[0] * grid[1]))
    fired: List[int] = []
    for index, members in enumerate(blocks):
        if rng.random() >= cfg.eta:
            continue
        order = (list(block_permutation) if block_permutation is not None
                 else [int(i) for i in rng.permutation(4)])
        for dst_slot, src_slot in enumerate(order):
            permutation[members[dst_slot]] = members[src_slot]
        fired.append(index)

    record = ShuffleRecord(permutation=permutation, shuffled_blocks=fired)
    if record.is_identity:
        return Tensor(image), record
    return apply_permutation(image, permutation, cfg.patch_size), record


def global_patch_shuffle(image: Tensor, cfg: ShuffleConfig) -> Tuple[Tensor, ShuffleRecord]:
    """One uniformly random permutation over all N patches"""
    image = as_tensor(image)
    h, w = _grid(image, cfg.patch_size)
    rng = np.random.default_rng(cfg.rng_seed)
    permutation = [int(i) for i in rng.permutation(h * w)]
    moved = permutation != list(range(h * w))
    record = ShuffleRecord(permutation=permutation, shuffled_blocks=[0] if moved else [])
    if record.is_identity:
        return Tensor(image), record
    return apply_permutation(image, permutation, cfg.patch_size), record


def make_pair(image: Tensor, settings: Settings, seed: int) -> Tuple[Tensor, Optional[ShuffleRecord]]:
    """Shuffled partner of ``image`` per the configured strategy.

    Without any shuffle the partner is the primal image itself.
    """
    cfg = ShuffleConfig(
        patch_size=settings.patch_size,
        eta=settings.shuffle_eta,
        rng_seed=seed,
        block_layout=settings.shuffle_block_layout,
    )
    if settings.use_local_shuffle:
        return local_patch_shuffle(image, cfg)
    if settings.use_global_shuffle:
        return global_patch_shuffle(image, cfg)
    return image, None
