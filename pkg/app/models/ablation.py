from typing import Dict, List

import numpy as np
from pydantic import BaseModel, Field

from app.models.localization import LocMetrics


class ArmResult(BaseModel):
    """Metrics of every seed of one configuration arm"""
    arm: str
    overrides: Dict[str, object] = Field(default_factory=dict)
    seeds: List[int]
    runs: List[LocMetrics]

    def _values(self, field: str) -> np.ndarray:
        return np.array([getattr(r, field) for r in self.runs], dtype=np.float64)

    def mean(self, field: str) -> float:
        return float(np.mean(self._values(field)))

    def std(self, field: str) -> float:
        """Population standard deviation across seeds"""
        return float(np.std(self._values(field)))


class AblationReport(BaseModel):
    rows: List[ArmResult]
