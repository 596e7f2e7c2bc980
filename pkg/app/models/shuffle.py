from typing import List, Literal

from pydantic import BaseModel, Field, field_validator


class ShuffleConfig(BaseModel):
    """Parameters of the primal-shuffled pair construction"""
    patch_size: int = Field(..., gt=0)
    eta: float = Field(0.5, ge=0.0, le=1.0, description="Per-block shuffle probability")
    rng_seed: int = Field(0, description="64-bit seed")
    block_layout: Literal["spatial", "sequential"] = Field(
        "spatial",
        description="spatial: 2x2 patch blocks; sequential: consecutive flattened indices 4i..4i+3",
    )


class ShuffleRecord(BaseModel):
    """What a shuffle did: destination patch index -> source patch index"""
    permutation: List[int]
    shuffled_blocks: List[int] = Field(default_factory=list)

    @field_validator("permutation")
    @classmethod
    def validate_bijection(cls, v):
        if sorted(v) != list(range(len(v))):
            raise ValueError("permutation must be a bijection on 0..N-1")
        return v

    @property
    def is_identity(self) -> bool:
        return all(dst == src for dst, src in enumerate(self.permutation))

    def cycles(self) -> List[List[int]]:
        seen, cycles = set(), []
        for start in range(len(self.permutation)):
            if start in seen:
                continue
            cycle, node = [], start
            while node not in seen:
                seen.add(node)
                cycle.append(node)
                node = self.permutation[node]
            cycles.append(cycle)
        return cycles
