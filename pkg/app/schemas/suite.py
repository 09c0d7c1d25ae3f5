from typing import Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from app.schemas.reports import Strategy

CheckName = Literal[
    "doob",
    "finest_identity",
    "norm_equivalence",
    "monotone_energy",
    "sampled_energy",
    "partition_sup",
    "zigzag",
    "skorokhod",
    "penalization",
    "sandwich",
    "solution_estimate",
    "sensitivity",
    "dpp",
    "classification",
    "family_norm_ratio",
    "g_triangle",
]


# Checks whose value is a ratio of two positive quantities; their windows
# must sit strictly above zero.
RATIO_CHECKS = frozenset({
    "norm_equivalence",
    "monotone_energy",
    "sampled_energy",
    "solution_estimate",
    "sensitivity",
    "family_norm_ratio",
})


class SeedRange(BaseModel):
    start: int = Field(default=0, ge=0)
    count: int = Field(default=100, gt=0)

    def seeds(self) -> range:
        return range(self.start, self.start + self.count)


class DepthRange(BaseModel):
    min: int = Field(default=1, ge=1)
    max: int = Field(default=4, ge=1)

    @model_validator(mode="after")
    def check_order(self):
        if self.min > self.max:
            raise ValueError("depth range is empty")
        return self

    def for_seed(self, seed: int) -> int:
        return self.min + seed % (self.max - self.min + 1)


class WindowProvenance(BaseModel):
    """Where a window came from: a provable bound or a pilot run over a seed block"""
    source: Literal["bound", "pilot"]
    seeds: Optional[SeedRange] = None
    margin: Optional[float] = None
    generated: Optional[str] = None
    note: Optional[str] = None


class SuiteConfig(BaseModel):
    """One seeded check and the window its values are held to"""
    check: CheckName
    seeds: SeedRange = Field(default_factory=SeedRange)
    depth: DepthRange = Field(default_factory=DepthRange)
    branching: int = Field(default=2, ge=2)
    value_scale: float = Field(default=1.0, gt=0)
    strategy: Strategy = "finest"
    max_segments: Optional[int] = Field(default=None, ge=1)
    window: Optional[Tuple[float, float]] = None
    provenance: Optional[WindowProvenance] = None
    workers: int = Field(default=1, ge=1)
    csv: Optional[str] = None
    summary: Optional[str] = None

    @model_validator(mode="after")
    def check_window(self):
        if self.window is None:
            return self
        low, high = self.window
        if not low < high:
            raise ValueError("window must satisfy low < high")
        if self.check in RATIO_CHECKS and not low > 0:
            raise ValueError(f"ratio window of {self.check} must satisfy 0 < low < high")
        return self
