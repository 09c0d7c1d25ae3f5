"""
JSON documents for filtration models and everything that rides along with
them in one file: named measures, processes, a measure family and DRBSDE
instances.
"""

from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field


class ChildEdge(BaseModel):
    id: str
    prob: float
    increment: Optional[float] = None


class NodeDocument(BaseModel):
    id: str
    time: int
    children: List[ChildEdge] = Field(default_factory=list)


class DriverDocument(BaseModel):
    """f(t, y, z) = a*y + b*z + c, where c is a constant or a node map"""
    kind: Literal["zero", "linear"] = "zero"
    a: float = 0.0
    b: float = 0.0
    c: Union[float, Dict[str, float]] = 0.0
    lipschitz: Optional[float] = None


class DrbsdeInstanceDocument(BaseModel):
    terminal: str
    lower: str
    upper: str
    driver: DriverDocument = Field(default_factory=DriverDocument)
    dt: float = Field(default=1.0, gt=0)


class FamilyDocument(BaseModel):
    kind: Literal["explicit", "rectangular"]
    measures: List[str] = Field(default_factory=list)
    choices: Dict[str, List[List[float]]] = Field(default_factory=dict)


class ModelDocument(BaseModel):
    horizon: int
    nodes: List[NodeDocument]
    measures: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    processes: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    family: Optional[FamilyDocument] = None
    instances: Dict[str, DrbsdeInstanceDocument] = Field(default_factory=dict)


class Violation(BaseModel):
    node: Optional[str] = None
    message: str


class ValidationReport(BaseModel):
    passed: bool
    violations: List[Violation] = Field(default_factory=list)
    warnings: List[Violation] = Field(default_factory=list)
