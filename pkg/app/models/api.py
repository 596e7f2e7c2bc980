from typing import List, Optional

from pydantic import BaseModel, Field

from app.models.localization import Box


class RankedClass(BaseModel):
    index: int
    name: str
    logit: float


class LocalizeResponse(BaseModel):
    """Response model for a single-image localization"""
    ranked_classes: List[RankedClass] = Field(..., description="Best class first")
    box: Box = Field(..., description="Box from the top-1 class map, exclusive x1/y1")
    heatmap_size: List[int] = Field(..., description="[height, width] of the heatmap")
    heatmap: Optional[List[List[float]]] = Field(None, description="Normalized heatmap when requested")
    dagger: bool = Field(False, description="Across-transformer used at inference")
