import math
from typing import Iterable, Union

import numpy as np
from pydantic import BaseModel, model_validator
from typing_extensions import Self


class MeanSD(BaseModel):
    """
    MeanSD data model to represent a statistic aggregated over repetitions.

    Attributes:
        mean: Mean over the finite observations.
        sd: Sample standard deviation (ddof=1, 0 for a single observation).
        count: Number of finite observations.
        missing: Number of observations reported as missing (NaN).
    """
    mean: float
    sd: float
    count: int
    missing: int = 0

    @model_validator(mode="after")
    def check_counts(self) -> Self:
        if self.count < 0 or self.missing < 0:
            raise ValueError("counts must be nonnegative")
        if self.sd < 0 and not math.isnan(self.sd):
            raise ValueError("sd must be nonnegative")
        return self

    @classmethod
    def from_values(cls, values: Iterable[Union[float, int]]) -> "MeanSD":
        arr = np.asarray(list(values), dtype=float)
        finite = arr[np.isfinite(arr)]
        missing = int(arr.size - finite.size)
        if finite.size == 0:
            return cls(mean=math.nan, sd=math.nan, count=0, missing=missing)
        sd = float(np.std(finite, ddof=1)) if finite.size > 1 else 0.0
        return cls(mean=float(np.mean(finite)), sd=sd, count=int(finite.size), missing=missing)
