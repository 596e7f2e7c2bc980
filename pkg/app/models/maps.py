from pydantic import BaseModel, ConfigDict, Field

from app.services.tensor import Tensor


class SemanticMaps(BaseModel):
    """Activation maps of one branch: F, F', M_hat = F' * S' and the class channel M"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    F: Tensor = Field(..., description="D x h x w reshaped patch tokens")
    F_prime: Tensor = Field(..., description="c x h x w analogous class activation maps")
    S_prime: Tensor = Field(..., description="h x w inner-guided attention map")
    M_hat: Tensor = Field(..., description="c x h x w coupled maps")
    M: Tensor = Field(..., description="h x w semantic activation map of label_used")
    label_used: int = Field(..., ge=0)
