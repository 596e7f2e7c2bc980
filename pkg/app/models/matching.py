from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.services.tensor import Tensor

STAIR_THRESHOLD_FACTORS = (0.0, 0.4, 0.5, 0.6)
STAIR_WEIGHTS = (0.0, 0.8, 0.9, 1.0)


class StaircaseConfig(BaseModel):
    """Thresholds alpha = [0, .4mu, .5mu, .6mu] and weights beta of the staircase"""
    mu: float = Field(1.0, description="Stair scale")
    beta: List[float] = Field(default_factory=lambda: list(STAIR_WEIGHTS))

    @field_validator("beta")
    @classmethod
    def validate_beta(cls, v):
        if len(v) != 4 or any(b < 0 for b in v):
            raise ValueError("beta must hold 4 non-negative weights")
        return v

    @property
    def alpha(self) -> List[float]:
        return [f * self.mu for f in STAIR_THRESHOLD_FACTORS]


class DiscreteDistribution(BaseModel):
    """Non-negative weights over the hw flattened positions, summing to one"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: np.ndarray

    @field_validator("weights")
    @classmethod
    def validate_weights(cls, v):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        return v

    @property
    def support_size(self) -> int:
        return int(self.weights.size)


class TransportPlan(BaseModel):
    """Entropic transport problem and its Sinkhorn solution"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    cost: Tensor = Field(..., description="hw x hw cost matrix Gamma")
    source: np.ndarray = Field(..., description="Row marginal zeta_s")
    target: np.ndarray = Field(..., description="Column marginal zeta_t")
    epsilon: float = Field(..., gt=0)
    iterations: int = Field(..., ge=0)
    flow: Tensor = Field(..., description="Solved plan T_hat")
    marginal_error: float
    converged: bool

    def objective(self) -> float:
        """<T, Gamma> + eps * sum T (log T - 1), with 0 log 0 = 0"""
        return entropic_objective(self.flow.data, self.cost.data, self.epsilon)


def entropic_objective(plan: np.ndarray, cost: np.ndarray, epsilon: float) -> float:
    plan = np.asarray(plan, dtype=np.float64)
    safe = np.where(plan > 0, plan, 1.0)
    entropy = np.where(plan > 0, plan * (np.log(safe) - 1.0), 0.0)
    return float(np.sum(plan * cost) + epsilon * np.sum(entropy))
