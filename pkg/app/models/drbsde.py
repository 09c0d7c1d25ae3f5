"""
Doubly reflected BSDE instances and solutions on a finite model.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from app.core.exceptions import BarriersCrossedError, DriverLipschitzError, TerminalOutsideBarriersError
from app.models.filtration import AdaptedProcess, FiltrationModel
from app.schemas.reports import SolutionDocument


class Driver(ABC):
    """Generator f(t, y, z) of the backward equation, evaluated node-wise"""

    lipschitz: float = 0.0

    @abstractmethod
    def __call__(self, nodes: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        ...

    def at_zero(self, model: FiltrationModel) -> np.ndarray:
        """f(t, 0, 0) at every node"""
        zeros = np.zeros(model.node_count)
        return self(np.arange(model.node_count), zeros, zeros)

    def check_lipschitz(self, model: FiltrationModel, rng: np.random.Generator, samples: int = 256) -> bool:
        """Spot-check |f(y,z) - f(y',z')| <= L_f (|y-y'| + |z-z'|) on random points"""
        nodes = rng.integers(0, model.node_count, samples)
        y1, y2, z1, z2 = rng.uniform(-10.0, 10.0, (4, samples))
        gap = np.abs(self(nodes, y1, z1) - self(nodes, y2, z2))
        bound = self.lipschitz * (np.abs(y1 - y2) + np.abs(z1 - z2))
        return bool(np.all(gap <= bound + 1e-12))


class ZeroDriver(Driver):
    lipschitz = 0.0

    def __call__(self, nodes, y, z):
        return np.zeros(np.shape(y))

    def __repr__(self) -> str:
        return "ZeroDriver()"


class LinearDriver(Driver):
    """f(t, y, z) = a*y + b*z + c(node)"""

    def __init__(self, a: float = 0.0, b: float = 0.0, c: Union[float, np.ndarray] = 0.0,
                 lipschitz: Optional[float] = None):
        self.a = float(a)
        self.b = float(b)
        self.c = c if np.isscalar(c) else np.asarray(c, dtype=float)
        self.lipschitz = max(abs(self.a), abs(self.b)) if lipschitz is None else float(lipschitz)

    def __call__(self, nodes, y, z):
        c = self.c if np.isscalar(self.c) else self.c[nodes]
        return self.a * np.asarray(y) + self.b * np.asarray(z) + c

    def __repr__(self) -> str:
        return f"LinearDriver(a={self.a}, b={self.b}, L={self.lipschitz})"


@dataclass(frozen=True, eq=False)
class DrbsdeInstance:
    """(xi, f, L, U, dt); only the horizon level of ``terminal`` is read"""

    model: FiltrationModel
    terminal: AdaptedProcess
    lower: AdaptedProcess
    upper: AdaptedProcess
    driver: Driver = ZeroDriver()
    dt: float = 1.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for process in (self.terminal, self.lower, self.upper):
            self.model.check_process(process)

    def validate(self) -> None:
        L, U = self.lower.values, self.upper.values
        crossed = np.flatnonzero(L > U)
        if crossed.size:
            raise BarriersCrossedError(self.model.ids[crossed[0]])
        leaves = self.model.leaves
        xi = self.terminal.values[leaves]
        outside = np.flatnonzero((xi < L[leaves]) | (xi > U[leaves]))
        if outside.size:
            raise TerminalOutsideBarriersError(self.model.ids[leaves[outside[0]]])
        if not self.driver.check_lipschitz(self.model, np.random.default_rng(0)):
            raise DriverLipschitzError(repr(self.driver), self.driver.lipschitz)

    def with_upper(self, upper: AdaptedProcess) -> "DrbsdeInstance":
        return DrbsdeInstance(self.model, self.terminal, self.lower, upper, self.driver, self.dt)

    def with_terminal(self, terminal: AdaptedProcess) -> "DrbsdeInstance":
        return DrbsdeInstance(self.model, terminal, self.lower, self.upper, self.driver, self.dt)


@dataclass(frozen=True, eq=False)
class DrbsdeSolution:
    """
    (Y, Z, K+, K-). The reflection decided at node v is the increment
    K(child) - K(v), shared by every child of v.
    """

    model: FiltrationModel
    Y: AdaptedProcess
    Z: AdaptedProcess
    K_plus: AdaptedProcess
    K_minus: AdaptedProcess
    scheme: str
    z_surrogate: bool = False
    dt: float = 1.0

    @property
    def A(self) -> AdaptedProcess:
        return self.K_plus - self.K_minus

    def _decided(self, K: AdaptedProcess) -> np.ndarray:
        model = self.model
        inc = np.zeros(model.node_count)
        internal = np.flatnonzero(~model.is_leaf)
        first_child = np.array([model.children[v][0] for v in internal], dtype=int)
        inc[internal] = K.values[first_child] - K.values[internal]
        return inc

    @property
    def push_up(self) -> np.ndarray:
        """Delta K+ decided at each node (0 at leaves)"""
        return self._decided(self.K_plus)

    @property
    def push_down(self) -> np.ndarray:
        return self._decided(self.K_minus)

    def leaf_variation(self) -> np.ndarray:
        """Total variation of A = K+ - K- on each path; K+ + K- by orthogonality"""
        leaves = self.model.leaves
        return self.K_plus.values[leaves] + self.K_minus.values[leaves]

    def to_document(self, expected_variation: float) -> SolutionDocument:
        model = self.model
        return SolutionDocument(
            scheme=self.scheme,
            Y=self.Y.to_mapping(model),
            Z=self.Z.to_mapping(model),
            K_plus=self.K_plus.to_mapping(model),
            K_minus=self.K_minus.to_mapping(model),
            z_surrogate=self.z_surrogate,
            expected_variation=expected_variation,
            max_variation=float(self.leaf_variation().max()),
        )
