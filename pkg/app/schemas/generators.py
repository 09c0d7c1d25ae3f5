import math
from typing import Literal

from pydantic import BaseModel, Field, model_validator

GeneratorKind = Literal[
    "random_semimartingale",
    "random_barriers",
    "zigzag",
    "equal_barriers",
    "g_zigzag",
    "volatility_family",
]


class GeneratorSpec(BaseModel):
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    depth: int = Field(default=3, ge=1)
    branching: int = Field(default=2, ge=2)
    value_scale: float = Field(default=1.0, gt=0)
    kind: GeneratorKind = "random_semimartingale"
    # monotone predictable part (energy bound suite)
    monotone: bool = False
    # levels ahead at which predictable increments are decided
    stride: int = Field(default=1, ge=1)
    sigma_low: float = Field(default=0.5, gt=0)
    sigma_high: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def check_tractable(self):
        branching = 4 if self.kind == "volatility_family" else self.branching
        if self.depth * math.log2(branching) > 24:
            raise ValueError(f"depth {self.depth} with branching {branching} exceeds the tractability cap")
        if self.sigma_low > self.sigma_high:
            raise ValueError("sigma_low must not exceed sigma_high")
        return self
