"""
Finite filtered probability models for martnorm.

A model is an event tree stored in breadth-first order (root = index 0).
Processes, measures and stopping times are node-indexed numpy arrays over
that order, so every conditional expectation is an exact backward sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import ModelValidationError, TimesNotOrderedError


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiltrationModel:
    """Event tree with levels 0..horizon and reference transition probabilities"""

    ids: Tuple[str, ...]
    time: np.ndarray
    parent: np.ndarray
    ref_prob: np.ndarray
    horizon: int
    increments: Optional[np.ndarray] = None
    children: Tuple[Tuple[int, ...], ...] = field(init=False)
    levels: Tuple[np.ndarray, ...] = field(init=False)
    leaves: np.ndarray = field(init=False)
    is_leaf: np.ndarray = field(init=False)
    ancestors: np.ndarray = field(init=False)
    index: Dict[str, int] = field(init=False)

    def __post_init__(self):
        n = len(self.ids)
        time = _frozen(self.time, int)
        parent = _frozen(self.parent, int)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "ref_prob", _frozen(self.ref_prob))
        if self.increments is not None:
            object.__setattr__(self, "increments", _frozen(self.increments))

        if n == 0 or time[0] != 0 or parent[0] != -1:
            raise ModelValidationError("model must start with a root at level 0")
        if np.any(np.diff(time) < 0):
            raise ModelValidationError("nodes must be stored in level order")
        if np.any(time[1:] != time[parent[1:]] + 1):
            raise ModelValidationError("level inconsistency")

        kids: List[List[int]] = [[] for _ in range(n)]
        for v in range(1, n):
            kids[parent[v]].append(v)
        children = tuple(tuple(k) for k in kids)
        is_leaf = np.array([len(k) == 0 for k in children])
        if np.any(time[is_leaf] != self.horizon):
            raise ModelValidationError("terminal node below horizon")

        levels = tuple(_frozen(np.flatnonzero(time == k), int) for k in range(self.horizon + 1))

        # ancestors[v, k]: ancestor of v at level k, -1 below time(v)
        ancestors = np.full((n, self.horizon + 1), -1, dtype=int)
        ancestors[0, 0] = 0
        for k in range(1, self.horizon + 1):
            nodes = levels[k]
            ancestors[nodes, :k] = ancestors[parent[nodes], :k]
            ancestors[nodes, k] = nodes
        ancestors.setflags(write=False)

        object.__setattr__(self, "children", children)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "is_leaf", _frozen(is_leaf, bool))
        object.__setattr__(self, "leaves", levels[self.horizon])
        object.__setattr__(self, "ancestors", ancestors)
        object.__setattr__(self, "index", {node_id: i for i, node_id in enumerate(self.ids)})

    @property
    def node_count(self) -> int:
        return len(self.ids)

    @property
    def root(self) -> int:
        return 0

    def is_binary(self) -> bool:
        return all(len(kids) == 2 for kids, leaf in zip(self.children, self.is_leaf) if not leaf)

    def reference_measure(self) -> "Measure":
        return Measure(self.ref_prob, name="ref")

    def leaf_paths(self) -> np.ndarray:
        """Rows are root-to-leaf node paths, one per leaf"""
        return self.ancestors[self.leaves]

    def level_mean(self, values: np.ndarray, prob: np.ndarray, level: int) -> np.ndarray:
        """Child-weighted sum of ``values`` for every node at ``level``"""
        kids = self.levels[level + 1]
        acc = np.zeros(self.node_count)
        np.add.at(acc, self.parent[kids], prob[kids] * values[kids])
        return acc[self.levels[level]]

    def one_step_mean(self, values: np.ndarray, prob: np.ndarray) -> np.ndarray:
        """Per-node child-weighted sum of a fully known process (0 at leaves)"""
        acc = np.zeros(self.node_count)
        np.add.at(acc, self.parent[1:], prob[1:] * values[1:])
        return acc

    def check_process(self, process: "AdaptedProcess") -> np.ndarray:
        values = process.values
        if values.shape != (self.node_count,):
            raise ValueError(f"process {process.name or '?'} has {values.shape[0]} values for {self.node_count} nodes")
        return values

    # Constructors ---------------------------------------------------------

    @classmethod
    def from_parents(
        cls,
        parents: Sequence[int],
        probs: Sequence[float],
        horizon: Optional[int] = None,
        ids: Optional[Sequence[str]] = None,
        increments: Optional[Sequence[float]] = None,
    ) -> "FiltrationModel":
        """Build from a parent list already in level order"""
        parents = np.asarray(parents, dtype=int)
        time = np.zeros(len(parents), dtype=int)
        for v in range(1, len(parents)):
            time[v] = time[parents[v]] + 1
        horizon = int(time.max()) if horizon is None else horizon
        ids = tuple(ids) if ids is not None else tuple(str(i) for i in range(len(parents)))
        return cls(ids, time, parents, np.asarray(probs, dtype=float), horizon,
                   None if increments is None else np.asarray(increments, dtype=float))

    @classmethod
    def uniform_tree(
        cls, depth: int, branching: int = 2, probs: Optional[Sequence[float]] = None
    ) -> "FiltrationModel":
        """Full tree where every internal node has ``branching`` children with the same probabilities"""
        if depth < 1 or branching < 1:
            raise ValueError("depth and branching must be positive")
        child_probs = np.full(branching, 1.0 / branching) if probs is None else np.asarray(probs, dtype=float)
        if child_probs.shape != (branching,):
            raise ValueError("probs must have one entry per branch")
        ids: List[str] = ["0"]
        parents: List[int] = [-1]
        prob: List[float] = [1.0]
        frontier = [0]
        for _ in range(depth):
            nxt = []
            for v in frontier:
                for b in range(branching):
                    ids.append(f"{ids[v]}.{b}")
                    parents.append(v)
                    prob.append(float(child_probs[b]))
                    nxt.append(len(ids) - 1)
            frontier = nxt
        return cls.from_parents(parents, prob, depth, ids)

    @classmethod
    def binomial(cls, depth: int, p: float = 0.5) -> "FiltrationModel":
        return cls.uniform_tree(depth, 2, (p, 1.0 - p))

    @classmethod
    def chain(cls, depth: int) -> "FiltrationModel":
        """Deterministic model: one child per node"""
        return cls.uniform_tree(depth, 1, (1.0,))


@dataclass(frozen=True, eq=False)
class AdaptedProcess:
    """A real value per node of a model"""

    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, node):
        return self.values[node]

    def __add__(self, other) -> "AdaptedProcess":
        other_values = other.values if isinstance(other, AdaptedProcess) else other
        return AdaptedProcess(self.values + other_values)

    __radd__ = __add__

    def __sub__(self, other) -> "AdaptedProcess":
        other_values = other.values if isinstance(other, AdaptedProcess) else other
        return AdaptedProcess(self.values - other_values)

    def __neg__(self) -> "AdaptedProcess":
        return AdaptedProcess(-self.values, self.name)

    def __mul__(self, scalar: float) -> "AdaptedProcess":
        return AdaptedProcess(self.values * scalar)

    __rmul__ = __mul__

    def renamed(self, name: str) -> "AdaptedProcess":
        return AdaptedProcess(self.values, name)

    def to_mapping(self, model: FiltrationModel) -> Dict[str, float]:
        return {node_id: float(v) for node_id, v in zip(model.ids, self.values)}

    @classmethod
    def constant(cls, model: FiltrationModel, value: float, name: str = "") -> "AdaptedProcess":
        return cls(np.full(model.node_count, float(value)), name)

    @classmethod
    def from_levels(cls, model: FiltrationModel, level_values: Sequence[float], name: str = "") -> "AdaptedProcess":
        """Deterministic process taking ``level_values[k]`` at every node of level k"""
        return cls(np.asarray(level_values, dtype=float)[model.time], name)

    @classmethod
    def from_mapping(cls, model: FiltrationModel, mapping: Mapping[str, float], name: str = "") -> "AdaptedProcess":
        missing = [node_id for node_id in model.ids if node_id not in mapping]
        if missing:
            raise ModelValidationError(f"process {name or '?'} missing node {missing[0]}")
        return cls(np.array([mapping[node_id] for node_id in model.ids], dtype=float), name)


@dataclass(frozen=True, eq=False)
class Measure:
    """Transition kernel: prob[v] is the probability of the edge parent(v) -> v"""

    prob: np.ndarray
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "prob", _frozen(self.prob))

    def reach(self, model: FiltrationModel) -> np.ndarray:
        """Probability of passing through each node"""
        reach = np.empty(model.node_count)
        reach[0] = 1.0
        for k in range(1, model.horizon + 1):
            nodes = model.levels[k]
            reach[nodes] = reach[model.parent[nodes]] * self.prob[nodes]
        return reach

    def leaf_weights(self, model: FiltrationModel) -> np.ndarray:
        return self.reach(model)[model.leaves]

    def same_as(self, other: "Measure", tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.prob - other.prob) <= tol))


class StoppingTime:
    """
    A stopping time encoded as an antichain cut of the tree.

    ``stop_node[v]`` is the cut node on the path through v when v sits at or
    below the cut, and -1 while the decision is still open.
    """

    __slots__ = ("model", "cut", "stop_node", "stop_level", "key")

    def __init__(self, model: FiltrationModel, cut: np.ndarray):
        cut = np.asarray(cut, dtype=bool)
        if cut.shape != (model.node_count,):
            raise ValueError(f"cut has {cut.shape[0]} entries for {model.node_count} nodes")
        crossings = cut[model.leaf_paths()].sum(axis=1)
        if np.any(crossings != 1):
            raise ModelValidationError("stopping time cut must cross every path exactly once")
        anc = model.ancestors
        on_cut = np.where(anc >= 0, cut[np.clip(anc, 0, None)], False)
        decided = on_cut.any(axis=1)
        first = on_cut.argmax(axis=1)
        stop_node = np.where(decided, anc[np.arange(model.node_count), first], -1)
        self.model = model
        self.cut = _frozen(cut, bool)
        self.stop_node = _frozen(stop_node, int)
        self.stop_level = _frozen(np.where(decided, model.time[np.clip(stop_node, 0, None)], -1), int)
        self.key = tuple(np.flatnonzero(cut).tolist())

    def __eq__(self, other) -> bool:
        return isinstance(other, StoppingTime) and other.model is self.model and other.key == self.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __repr__(self) -> str:
        return f"StoppingTime({[self.model.ids[v] for v in self.key]})"

    @property
    def nodes(self) -> np.ndarray:
        return np.flatnonzero(self.cut)

    def le(self, other: "StoppingTime") -> bool:
        """Pathwise self <= other"""
        at = other.stop_node[self.nodes]
        return bool(np.all((at == -1) | (at == self.nodes)))

    def leaf_stop(self) -> np.ndarray:
        """Cut node reached on each leaf's path"""
        return self.stop_node[self.model.leaves]

    def to_ids(self) -> List[str]:
        return [self.model.ids[v] for v in self.key]

    @classmethod
    def from_nodes(cls, model: FiltrationModel, nodes: Iterable[int]) -> "StoppingTime":
        cut = np.zeros(model.node_count, dtype=bool)
        cut[list(nodes)] = True
        return cls(model, cut)

    @classmethod
    def constant(cls, model: FiltrationModel, level: int) -> "StoppingTime":
        if not 0 <= level <= model.horizon:
            raise ValueError(f"level {level} outside [0, {model.horizon}]")
        return cls(model, model.time == level)

    @classmethod
    def initial(cls, model: FiltrationModel) -> "StoppingTime":
        return cls.constant(model, 0)

    @classmethod
    def terminal(cls, model: FiltrationModel) -> "StoppingTime":
        return cls.constant(model, model.horizon)

    @classmethod
    def first_hitting(
        cls,
        model: FiltrationModel,
        hit: np.ndarray,
        after: Optional["StoppingTime"] = None,
        strict: bool = True,
    ) -> "StoppingTime":
        """
        First node at or after ``after`` (strictly after when ``strict``)
        where ``hit`` holds, capped at the horizon.
        """
        hit = np.asarray(hit, dtype=bool)
        if after is None:
            after = cls.initial(model)
        decided = after.stop_node >= 0
        eligible = decided & (after.stop_node != np.arange(model.node_count)) if strict else decided
        candidate = eligible & (hit | model.is_leaf)
        # a cut node already at the horizon stays there
        candidate |= after.cut & model.is_leaf
        cut = np.zeros(model.node_count, dtype=bool)
        blocked = np.zeros(model.node_count, dtype=bool)
        cut[0] = candidate[0]
        for k in range(1, model.horizon + 1):
            nodes = model.levels[k]
            par = model.parent[nodes]
            blocked[nodes] = blocked[par] | cut[par]
            cut[nodes] = candidate[nodes] & ~blocked[nodes]
        return cls(model, cut)


class StoppingPartition:
    """Monotone chain 0 = tau_0 <= ... <= tau_n = N"""

    __slots__ = ("times",)

    def __init__(self, times: Sequence[StoppingTime], check: bool = True):
        times = tuple(times)
        if check:
            if len(times) < 2:
                raise ValueError("a partition needs at least two times")
            model = times[0].model
            if times[0] != StoppingTime.initial(model) or times[-1] != StoppingTime.terminal(model):
                raise TimesNotOrderedError("partition must start at 0 and end at the horizon")
            for earlier, later in zip(times, times[1:]):
                if not earlier.le(later):
                    raise TimesNotOrderedError()
        self.times = times

    @property
    def segments(self) -> int:
        return len(self.times) - 1

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self):
        return iter(self.times)

    def pairs(self):
        return zip(self.times, self.times[1:])

    def to_ids(self) -> List[List[str]]:
        return [tau.to_ids() for tau in self.times]

    @classmethod
    def grid(cls, model: FiltrationModel, levels: Optional[Sequence[int]] = None) -> "StoppingPartition":
        """Deterministic partition; the finest grid when ``levels`` is omitted"""
        levels = range(model.horizon + 1) if levels is None else levels
        return cls([StoppingTime.constant(model, k) for k in levels])
