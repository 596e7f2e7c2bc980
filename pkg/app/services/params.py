from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

import numpy as np
from scipy.stats import truncnorm

from app.config import Settings
from app.core.errors import CheckpointError, ShapeError
from app.services.tensor import GradTape, Tensor, reshape, take

ACROSS_PREFIX = "across."


def parameter_shapes(settings: Settings) -> Dict[str, Tuple[int, ...]]:
    """Ordered name -> shape map of every learnable tensor"""
    d = settings.embed_dim
    hidden = d * settings.mlp_ratio
    shapes: Dict[str, Tuple[int, ...]] = {
        "patch_embed.weight": (settings.patch_dim, d),
        "patch_embed.bias": (d,),
        "cls_token": (1, d),
        "pos_embed": (settings.num_patches + 1, d),
    }
    for layer in range(settings.depth):
        shapes.update(_block_shapes(f"blocks.{layer}.", d, hidden))
    shapes["head.weight"] = (settings.num_classes, d, 3, 3)
    shapes["head.bias"] = (settings.num_classes,)

    c, dx = settings.num_classes, settings.matching_dim
    shapes[ACROSS_PREFIX + "in_proj.weight"] = (c, dx)
    shapes[ACROSS_PREFIX + "in_proj.bias"] = (dx,)
    shapes.update(_block_shapes(ACROSS_PREFIX + "block.", dx, dx * settings.mlp_ratio))
    shapes[ACROSS_PREFIX + "out_proj.weight"] = (dx, c)
    shapes[ACROSS_PREFIX + "out_proj.bias"] = (c,)
    return shapes


def _block_shapes(prefix: str, d: int, hidden: int) -> Dict[str, Tuple[int, ...]]:
    return {
        prefix + "norm1.weight": (d,),
        prefix + "norm1.bias": (d,),
        prefix + "attn.qkv.weight": (d, 3 * d),
        prefix + "attn.qkv.bias": (3 * d,),
        prefix + "attn.proj.weight": (d, d),
        prefix + "attn.proj.bias": (d,),
        prefix + "norm2.weight": (d,),
        prefix + "norm2.bias": (d,),
        prefix + "mlp.fc1.weight": (d, hidden),
        prefix + "mlp.fc1.bias": (hidden,),
        prefix + "mlp.fc2.weight": (hidden, d),
        prefix + "mlp.fc2.bias": (d,),
    }


class ModelParams:
    """Named, ordered learnable tensors of the encoder, conv head and across-transformer.

    The tensors themselves are shared: both Siamese branches read the very
    same objects, so a tape holds one accumulator per parameter.
    """

    def __init__(self, tensors: Mapping[str, Tensor]):
        self._tensors: Dict[str, Tensor] = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise ShapeError(f"missing parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> List[str]:
        return list(self._tensors)

    def items(self) -> Iterable[Tuple[str, Tensor]]:
        return self._tensors.items()

    def tensors(self) -> List[Tensor]:
        return list(self._tensors.values())

    def num_values(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def replace(self, updates: Mapping[str, Tensor]) -> "ModelParams":
        merged = dict(self._tensors)
        merged.update(updates)
        return ModelParams(merged)

    def watch(self, tape: GradTape) -> "ModelParams":
        for tensor in self._tensors.values():
            tape.watch(tensor)
        return self

    def validate(self, settings: Settings) -> None:
        """Check names and shapes against the configuration"""
        expected = parameter_shapes(settings)
        missing = [n for n in expected if n not in self._tensors]
        if missing:
            raise CheckpointError(f"parameters missing for this configuration: {missing[:5]}")
        for name, shape in expected.items():
            if self._tensors[name].shape != shape:
                raise CheckpointError(
                    f"parameter {name} has shape {self._tensors[name].shape}, "
                    f"configuration expects {shape}"
                )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self._tensors.values()])

    @classmethod
    def from_vector(cls, vector: Tensor, template: "ModelParams") -> "ModelParams":
        """Rebuild parameters from a flat tensor; differentiable through ``take``"""
        tensors, offset = {}, 0
        for name, ref in template.items():
            tensors[name] = reshape(take(vector, 0, offset, offset + ref.size), ref.shape)
            offset += ref.size
        if offset != vector.size:
            raise ShapeError(f"from_vector: {vector.size} values for {offset} parameters")
        return cls(tensors)


def _trunc_normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float) -> np.ndarray:
    if std == 0:
        return np.zeros(shape)
    return truncnorm.rvs(-2.0, 2.0, scale=std, size=shape, random_state=rng)


def init_params(settings: Settings, seed: Optional[int] = None,
                std: Optional[float] = None) -> ModelParams:
    """Truncated-normal projections, unit norms, zero biases and position embeddings"""
    rng = np.random.default_rng(settings.seed if seed is None else seed)
    std = settings.init_std if std is None else std
    tensors: Dict[str, Tensor] = {}
    for name, shape in parameter_shapes(settings).items():
        if name.endswith(("norm1.weight", "norm2.weight")):
            value = np.ones(shape)
        elif name.endswith(".bias") or name == "pos_embed":
            value = np.zeros(shape)
        else:
            value = _trunc_normal(rng, shape, std)
        tensors[name] = Tensor(value)
    return ModelParams(tensors)
