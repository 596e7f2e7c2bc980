"""Toy vision-transformer encoder.

Pre-norm blocks (multi-head self-attention then MLP, both residual), a
learnable classification token at position 0 and learnable position
embeddings added before the first block. Every layer's post-softmax
attention, averaged over heads, is kept for the inner-guided map.
"""
from typing import List, Tuple

import numpy as np

from app.config import Settings
from app.core.errors import ShapeError
from app.models.encoder import AttentionStack, EncoderOutput
from app.services.params import ModelParams
from app.services.tensor import (
    Tensor,
    add,
    as_tensor,
    concatenate,
    gelu,
    layer_norm,
    matmul,
    mean,
    reshape,
    select,
    softmax,
    stack,
    take,
    transpose,
)


def patchify(image: Tensor, patch_size: int) -> Tensor:
    """C x H x W image -> N x (P*P*C) rows.

    Row k is the row-major flattening (channel, row, column) of the patch at
    grid position (k // w, k % w).
    """
    image = as_tensor(image)
    if image.ndim != 3:
        raise ShapeError(f"patchify: expected C x H x W, got {image.shape}")
    c, height, width = image.shape
    p = patch_size
    if p <= 0 or height % p != 0 or width % p != 0:
        raise ShapeError(f"patchify: image {height}x{width} is not divisible by patch size {p}")
    h, w = height // p, width // p
    blocks = reshape(image, (c, h, p, w, p))
    blocks = transpose(blocks, (1, 3, 0, 2, 4))
    return reshape(blocks, (h * w, c * p * p))


def unpatchify(patches: Tensor, patch_size: int, channels: int, grid: Tuple[int, int]) -> Tensor:
    """Inverse of :func:`patchify`"""
    patches = as_tensor(patches)
    h, w = grid
    p = patch_size
    if patches.shape != (h * w, channels * p * p):
        raise ShapeError.mismatch("unpatchify", patches.shape, (h * w, channels * p * p))
    blocks = reshape(patches, (h, w, channels, p, p))
    blocks = transpose(blocks, (2, 0, 3, 1, 4))
    return reshape(blocks, (channels, h * p, w * p))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return add(matmul(x, weight), bias)


def attention_block(x: Tensor, params: ModelParams, prefix: str,
                    num_heads: int) -> Tuple[Tensor, Tensor]:
    """One pre-norm transformer block over a T x d sequence.

    Returns the new sequence and the head-averaged attention (T x T).
    """
    length, width = x.shape
    head_dim = width // num_heads

    h = layer_norm(x, params[prefix + "norm1.weight"], params[prefix + "norm1.bias"])
    qkv = linear(h, params[prefix + "attn.qkv.weight"], params[prefix + "attn.qkv.bias"])
    qkv = transpose(reshape(qkv, (length, 3, num_heads, head_dim)), (1, 2, 0, 3))
    q, k, v = select(qkv, 0, 0), select(qkv, 0, 1), select(qkv, 0, 2)

    scores = matmul(q, transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(head_dim))
    weights = softmax(scores, axis=-1)
    context = transpose(matmul(weights, v), (1, 0, 2))
    context = reshape(context, (length, width))
    x = add(x, linear(context, params[prefix + "attn.proj.weight"],
                      params[prefix + "attn.proj.bias"]))

    h = layer_norm(x, params[prefix + "norm2.weight"], params[prefix + "norm2.bias"])
    h = gelu(linear(h, params[prefix + "mlp.fc1.weight"], params[prefix + "mlp.fc1.bias"]))
    x = add(x, linear(h, params[prefix + "mlp.fc2.weight"], params[prefix + "mlp.fc2.bias"]))
    return x, mean(weights, axis=0)


def embed(image: Tensor, params: ModelParams, settings: Settings) -> Tensor:
    """Patch projection, classification token, position embeddings: (N+1) x D"""
    image = as_tensor(image)
    expected = (settings.channels, settings.image_size, settings.image_size)
    if image.shape != expected:
        raise ShapeError.mismatch("encode image", image.shape, expected)
    patches = patchify(image, settings.patch_size)
    tokens = linear(patches, params["patch_embed.weight"], params["patch_embed.bias"])
    tokens = concatenate([params["cls_token"], tokens], axis=0)
    return add(tokens, params["pos_embed"])


def inner_guided_attention(attn: AttentionStack) -> Tensor:
    """S' = mean over layers of the classification-token query row, patches only, as h x w"""
    if not attn.per_layer:
        raise ShapeError("inner_guided_attention: empty attention stack")
    n = attn.grid_h * attn.grid_w
    rows = []
    for layer in attn.per_layer:
        if layer.shape != (n + 1, n + 1):
            raise ShapeError.mismatch("inner_guided_attention", layer.shape, (n + 1, n + 1))
        row = take(select(layer, 0, 0), 0, 1, n + 1)
        rows.append(reshape(row, (attn.grid_h, attn.grid_w)))
    return mean(stack(rows, axis=0), axis=0)


def encode(image: Tensor, params: ModelParams, settings: Settings) -> EncoderOutput:
    """Run the encoder on one C x H x W image"""
    x = embed(image, params, settings)
    if x.shape[1] != settings.embed_dim:
        raise ShapeError.mismatch("encode tokens", x.shape, (x.shape[0], settings.embed_dim))

    per_layer: List[Tensor] = []
    for layer in range(settings.depth):
        x, weights = attention_block(x, params, f"blocks.{layer}.", settings.num_heads)
        per_layer.append(weights)

    attention = AttentionStack(per_layer=per_layer, grid_h=settings.grid_h, grid_w=settings.grid_w)
    return EncoderOutput(
        patch_tokens=take(x, 0, 1, x.shape[0]),
        cls_token=select(x, 0, 0),
        attention=attention,
        inner_guided=inner_guided_attention(attention),
    )
