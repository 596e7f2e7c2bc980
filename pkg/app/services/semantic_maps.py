from typing import Optional

import numpy as np

from app.config import Settings
from app.core.errors import ShapeError
from app.models.encoder import EncoderOutput
from app.models.maps import SemanticMaps
from app.services.params import ModelParams
from app.services.tensor import (
    Tensor,
    amax,
    amin,
    as_tensor,
    conv2d_3x3,
    mean,
    multiply,
    reshape,
    select,
    stop_gradient,
    transpose,
)

# Below this range a map counts as constant and normalizes to zeros.
DEGENERATE_RANGE = 1e-12


def tokens_to_featmap(patch_tokens: Tensor, grid_h: int, grid_w: int) -> Tensor:
    """N x D tokens -> D x h x w; token k lands at (k // w, k % w)"""
    patch_tokens = as_tensor(patch_tokens)
    if patch_tokens.ndim != 2 or patch_tokens.shape[0] != grid_h * grid_w:
        raise ShapeError.mismatch("tokens_to_featmap", patch_tokens.shape, (grid_h * grid_w, "D"))
    return reshape(transpose(patch_tokens), (patch_tokens.shape[1], grid_h, grid_w))


def conv_head(feature_map: Tensor, params: ModelParams) -> Tensor:
    """3x3 convolution D -> c channels, spatial size kept"""
    return conv2d_3x3(feature_map, params["head.weight"], params["head.bias"])


def couple(F_prime: Tensor, S_prime: Tensor) -> Tensor:
    """M_hat[k] = F'[k] * S' for every channel k"""
    F_prime, S_prime = as_tensor(F_prime), as_tensor(S_prime)
    if F_prime.ndim != 3 or S_prime.shape != F_prime.shape[1:]:
        raise ShapeError.mismatch("couple", F_prime.shape, S_prime.shape)
    return multiply(F_prime, reshape(S_prime, (1,) + S_prime.shape))


def select_class(M_hat: Tensor, y: int) -> Tensor:
    M_hat = as_tensor(M_hat)
    if not 0 <= y < M_hat.shape[0]:
        raise ShapeError(f"select_class: class {y} out of range for {M_hat.shape[0]} classes")
    return select(M_hat, 0, y)


def gap_logits(maps: Tensor) -> Tensor:
    """Spatial mean of every channel of a c x h x w map"""
    maps = as_tensor(maps)
    if maps.ndim != 3:
        raise ShapeError(f"gap_logits: expected c x h x w, got {maps.shape}")
    return mean(maps, axis=(1, 2))


def minmax_normalize(x: Tensor) -> Tensor:
    """Differentiable (x - min) / (max - min); constant maps give zeros"""
    x = as_tensor(x)
    lo, hi = amin(x), amax(x)
    if hi.item() - lo.item() < DEGENERATE_RANGE:
        return multiply(x, 0.0)
    return (x - lo) / (hi - lo)


def normalize_map(x: Tensor) -> np.ndarray:
    """Min-max normalized values of ``x`` as a constant array"""
    return minmax_normalize(stop_gradient(x)).numpy()


def build_maps(encoded: EncoderOutput, params: ModelParams, settings: Settings,
               label: int, F_prime: Optional[Tensor] = None) -> SemanticMaps:
    """F, F', M_hat and the ``label`` channel M for one encoded image.

    ``F_prime`` overrides the conv-head output (the across-transformer path).
    """
    F = tokens_to_featmap(encoded.patch_tokens, settings.grid_h, settings.grid_w)
    if F_prime is None:
        F_prime = conv_head(F, params)
    M_hat = couple(F_prime, encoded.inner_guided)
    return SemanticMaps(
        F=F,
        F_prime=F_prime,
        S_prime=encoded.inner_guided,
        M_hat=M_hat,
        M=select_class(M_hat, label),
        label_used=label,
    )
