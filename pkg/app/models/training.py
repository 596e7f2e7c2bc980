from pydantic import BaseModel, Field


class LossBreakdown(BaseModel):
    """Scalar loss terms of one step; l_total == l_cls + lambda * l_er"""
    l_cls: float
    l_er: float
    l_total: float
    ce_f_primal: float = Field(..., description="CE of GAP(F'_p)")
    ce_f_shuffled: float = Field(..., description="CE of GAP(F'_h)")
    ce_t_primal: float = Field(0.0, description="CE of GAP(T_p), 0 without matching")
    ce_t_shuffled: float = Field(0.0, description="CE of GAP(T_h), 0 without matching")


class TrainLogRecord(LossBreakdown):
    """One line of the training log"""
    step: int
    epoch: int
