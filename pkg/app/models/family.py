"""
Finite measure families: an explicit list of measures, or a rectangular
family given by an independent choice set of child-probability vectors at
every internal node. Rectangular families are closed under pasting.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import EnumerationTooLargeError, ModelValidationError
from app.models.filtration import FiltrationModel, Measure

FamilyKind = Literal["explicit", "rectangular"]


@dataclass(frozen=True, eq=False)
class MeasureFamily:
    model: FiltrationModel
    kind: FamilyKind
    measures: Tuple[Measure, ...] = ()
    # rectangular: choices[v] has one row per choice, one column per child of v
    choices: Tuple[Optional[np.ndarray], ...] = ()

    def __post_init__(self):
        if self.kind == "explicit":
            if not self.measures:
                raise ModelValidationError("explicit family must list at least one measure")
            for m in self.measures:
                if m.prob.shape != (self.model.node_count,):
                    raise ModelValidationError(f"measure {m.name} is not on the family's model")
        elif self.kind == "rectangular":
            if len(self.choices) != self.model.node_count:
                raise ModelValidationError("rectangular family needs a choice entry per node")
            for v, rows in enumerate(self.choices):
                if self.model.is_leaf[v]:
                    continue
                width = len(self.model.children[v])
                if rows is None or rows.ndim != 2 or rows.shape[0] == 0 or rows.shape[1] != width:
                    raise ModelValidationError(f"empty or malformed choice set at node {self.model.ids[v]}")
                if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-9):
                    raise ModelValidationError(f"choice at node {self.model.ids[v]} is not a probability vector")
        else:
            raise ModelValidationError(f"unknown family kind {self.kind}")

    # Constructors ---------------------------------------------------------

    @classmethod
    def explicit(cls, model: FiltrationModel, measures: Sequence[Measure]) -> "MeasureFamily":
        return cls(model, "explicit", tuple(measures))

    @classmethod
    def singleton(cls, model: FiltrationModel, measure: Optional[Measure] = None) -> "MeasureFamily":
        return cls.explicit(model, [measure or model.reference_measure()])

    @classmethod
    def rectangular(
        cls, model: FiltrationModel, choices: Dict[int, Sequence[Sequence[float]]]
    ) -> "MeasureFamily":
        """Nodes missing from ``choices`` keep the reference transition as their only choice"""
        rows: List[Optional[np.ndarray]] = []
        for v in range(model.node_count):
            if model.is_leaf[v]:
                rows.append(None)
            elif v in choices:
                arr = np.array(choices[v], dtype=float)
                arr.setflags(write=False)
                rows.append(arr)
            else:
                arr = model.ref_prob[list(model.children[v])][None, :].copy()
                arr.setflags(write=False)
                rows.append(arr)
        return cls(model, "rectangular", choices=tuple(rows))

    @classmethod
    def uniform_choices(cls, model: FiltrationModel, rows: Sequence[Sequence[float]]) -> "MeasureFamily":
        """Same choice set at every internal node"""
        return cls.rectangular(model, {v: rows for v in range(model.node_count) if not model.is_leaf[v]})

    # Selections -----------------------------------------------------------

    def internal_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.model.is_leaf)

    def selection_count(self) -> int:
        if self.kind == "explicit":
            return len(self.measures)
        count = 1
        for v in self.internal_nodes():
            count *= self.choices[v].shape[0]
        return count

    def selection_measure(self, picks: Dict[int, int], name: str = "") -> Measure:
        """Measure that uses choice ``picks[v]`` (default 0) at each internal node"""
        prob = np.ones(self.model.node_count)
        for v in self.internal_nodes():
            prob[list(self.model.children[v])] = self.choices[v][picks.get(v, 0)]
        return Measure(prob, name)

    def iter_selections(self) -> Iterator[Measure]:
        internal = self.internal_nodes()
        ranges = [range(self.choices[v].shape[0]) for v in internal]
        for i, combo in enumerate(itertools.product(*ranges)):
            yield self.selection_measure(dict(zip(internal.tolist(), combo)), name=f"sel{i}")

    def extreme_measures(self, cap: int) -> List[Measure]:
        """The listed measures, or every selection of a rectangular family"""
        if self.kind == "explicit":
            return list(self.measures)
        count = self.selection_count()
        if count > cap:
            raise EnumerationTooLargeError(count, cap, "supply an explicit extreme-measure list")
        return list(self.iter_selections())

    def contains(self, measure: Measure, tol: float = 1e-12) -> bool:
        """Membership up to edges below null nodes"""
        reach = measure.reach(self.model)
        if self.kind == "explicit":
            return any(self._agree(measure, m, reach > 0, tol) for m in self.measures)
        for v in self.internal_nodes():
            if reach[v] <= 0:
                continue
            row = measure.prob[list(self.model.children[v])]
            if not np.any(np.all(np.abs(self.choices[v] - row) <= tol, axis=1)):
                return False
        return True

    def _agree(self, a: Measure, b: Measure, live: np.ndarray, tol: float) -> bool:
        edges = np.flatnonzero(live[self.model.parent[1:]]) + 1
        return bool(np.all(np.abs(a.prob[edges] - b.prob[edges]) <= tol))
