"""
Report documents produced by the norm, DRBSDE and G-expectation services.
Every report that is checked against a ratio window carries that window.
"""

from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field

Strategy = Literal["finest", "enumerate", "greedy"]
Window = Tuple[float, float]


class NormReport(BaseModel):
    """Squared norms of one process under one measure"""
    norm_p0_sq: float
    norm_p_sq: float
    partition_term: float
    attaining_partition: Optional[List[List[str]]] = None
    strategy: Strategy
    lower_bound: bool = False
    decomposition_energy: float
    ratio: Optional[float] = None
    window: Optional[Window] = None
    passed: Optional[bool] = None
    measure: str = "ref"


class DecompositionDocument(BaseModel):
    base: float
    martingale_part: Dict[str, float]
    fv_part: Dict[str, float]
    bracket_energy: float
    variation_energy: float


class SolutionDocument(BaseModel):
    scheme: str
    Y: Dict[str, float]
    Z: Dict[str, float]
    K_plus: Dict[str, float]
    K_minus: Dict[str, float]
    z_surrogate: bool = False
    expected_variation: float
    max_variation: float


class EstimateReport(BaseModel):
    i0_sq: float
    barrier_norm_sq: float
    solution_norm_sq: float
    ratio: Optional[float] = None
    window: Optional[Window] = None
    passed: Optional[bool] = None


class DifferenceReport(BaseModel):
    lhs: float
    driver_term: float
    barrier_term: float
    rhs: float
    ratio: Optional[float] = None


class SensitivityPoint(BaseModel):
    n: int
    shift: float
    report: DifferenceReport


class SensitivityReport(BaseModel):
    points: List[SensitivityPoint]
    decay_rate: Optional[float] = None


class JumpBoundReport(BaseModel):
    holds: bool
    violating_leaves: List[str] = Field(default_factory=list)
    max_excess: float = 0.0


class Witness(BaseModel):
    measure: str
    node: str
    gap: float


class GClassification(BaseModel):
    flags: Dict[str, bool]
    witnesses: Dict[str, Witness] = Field(default_factory=dict)

    def implication_violations(self) -> List[str]:
        """Implications every classification must satisfy"""
        f = self.flags
        rules = [
            ("P-martingale", "G-martingale"),
            ("P-super", "G-super"),
            ("P-sub", "G-sub"),
            ("G-super", "P-super"),
            ("G-martingale", "P-super"),
        ]
        return [f"{a} => {b}" for a, b in rules if f[a] and not f[b]]


class MeyerCheckResult(BaseModel):
    measure: str
    outcome: Literal["holds", "fails", "ambiguous"]
    max_gap: float


class MeasureDecomposition(BaseModel):
    measure: str
    martingale_part: Dict[str, float]
    increasing_part: Dict[str, float]
    decreasing_part: Dict[str, float]


class FamilyDecompositionReport(BaseModel):
    decompositions: List[MeasureDecomposition]
    is_g_submartingale: bool
    doob_meyer: List[MeyerCheckResult] = Field(default_factory=list)


class FamilyNormReport(BaseModel):
    value_sq: float
    attaining_measure: Optional[str] = None
    strategy: Strategy
    lower_bound: bool = False


class SummaryReport(BaseModel):
    check: str
    count: int
    min: Optional[float] = None
    max: Optional[float] = None
    mean: Optional[float] = None
    window: Optional[Window] = None
    violating_seeds: List[int] = Field(default_factory=list)
    # serialized as "pass", which is a keyword here
    passed: bool = Field(serialization_alias="pass")


class EnergyCheck(BaseModel):
    """Decomposition energy against a reference norm for one instance"""
    energy: float
    reference: float
    ratio: Optional[float] = None
    window: Window
    passed: bool
