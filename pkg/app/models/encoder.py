from typing import List

from pydantic import BaseModel, ConfigDict, Field

from app.services.tensor import Tensor


class AttentionStack(BaseModel):
    """Head-averaged post-softmax attention of every encoder layer"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    per_layer: List[Tensor] = Field(..., description="L matrices of dims (N+1) x (N+1)")
    grid_h: int = Field(..., gt=0)
    grid_w: int = Field(..., gt=0)


class EncoderOutput(BaseModel):
    """Patch tokens, classification token and attention of one encoder pass"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    patch_tokens: Tensor = Field(..., description="N x D")
    cls_token: Tensor = Field(..., description="D")
    attention: AttentionStack
    inner_guided: Tensor = Field(..., description="h x w inner-guided attention map S'")
