from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class Box(BaseModel):
    """Pixel box, inclusive x0/y0 and exclusive x1/y1"""
    x0: int = Field(..., ge=0)
    y0: int = Field(..., ge=0)
    x1: int
    y1: int

    @model_validator(mode="after")
    def validate_extent(self):
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValueError(f"empty box ({self.x0},{self.y0},{self.x1},{self.y1})")
        return self

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, x: int, y: int) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    def within(self, width: int, height: int) -> bool:
        return self.x1 <= width and self.y1 <= height

    def as_tuple(self):
        return self.x0, self.y0, self.x1, self.y1


class LocalizationRecord(BaseModel):
    """Per-image prediction scored against its ground truth"""
    image_id: str = ""
    ranked_classes: List[int] = Field(..., min_length=1, description="Class indices, best first")
    pred_box: Box = Field(..., description="Box from the top-1 predicted class map")
    gt_class: int = Field(..., ge=0)
    gt_boxes: List[Box] = Field(..., min_length=1)
    iou_best: float = Field(..., ge=0.0, le=1.0)
    gt_known_box: Optional[Box] = Field(None, description="Box from the ground-truth class map")
    gt_known_iou: Optional[float] = Field(None, ge=0.0, le=1.0)


class LocMetrics(BaseModel):
    """Top-1 / Top-5 / GT-known localization accuracy"""
    top1_loc: float
    top5_loc: float
    gt_known_loc: float
    top1_cls: float = 0.0
    mean_iou: float = 0.0
    count: int = 0


class InferenceResult(BaseModel):
    """Ranked classes, predicted box and the H x W heatmap of the top-1 class map"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    ranked_classes: List[int] = Field(..., min_length=1)
    logits: List[float]
    box: Box
    heatmap: np.ndarray = Field(..., description="H x W, min-max normalized")
    class_maps: np.ndarray = Field(..., description="c x h x w coupled maps M_hat")
