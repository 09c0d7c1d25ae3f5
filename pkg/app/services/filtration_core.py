"""
Filtration Service for martnorm
Validates and builds finite event-tree models and computes exact
(conditional) expectations and stopping-time enumerations on them.
"""

import itertools
import logging
from collections import deque
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from app.core.config import Settings, settings
from app.core.exceptions import EnumerationTooLargeError, ModelValidationError, TimesNotOrderedError
from app.models.filtration import (
    AdaptedProcess,
    FiltrationModel,
    Measure,
    StoppingPartition,
    StoppingTime,
)
from app.schemas.model import ModelDocument, ValidationReport, Violation

logger = logging.getLogger(__name__)

CutKey = Tuple[int, ...]


class FiltrationService:
    """Service for finite filtered probability models"""

    def __init__(self, config: Settings = settings):
        self.config = config

    # Validation and construction ------------------------------------------

    def validate_model(self, model: Union[ModelDocument, FiltrationModel]) -> ValidationReport:
        """Check a model document (or a built model) against the tree invariants"""
        if isinstance(model, FiltrationModel):
            model = self.to_document(model)

        violations: List[Violation] = []
        warnings: List[Violation] = []
        doc = model

        if doc.horizon < 1:
            violations.append(Violation(message="horizon must be positive"))

        nodes: Dict[str, object] = {}
        for node in doc.nodes:
            if node.id in nodes:
                violations.append(Violation(node=node.id, message="duplicate node id"))
            nodes[node.id] = node

        parents: Dict[str, str] = {}
        for node in doc.nodes:
            if not 0 <= node.time <= doc.horizon:
                violations.append(Violation(node=node.id, message=f"time {node.time} outside [0, {doc.horizon}]"))
            for edge in node.children:
                child = nodes.get(edge.id)
                if child is None:
                    violations.append(Violation(node=node.id, message=f"unknown child id {edge.id}"))
                    continue
                if edge.id in parents:
                    violations.append(Violation(node=edge.id, message="multiple parents"))
                parents[edge.id] = node.id
                if child.time != node.time + 1:
                    violations.append(Violation(node=edge.id, message="level inconsistency"))
                if not 0.0 <= edge.prob <= 1.0:
                    violations.append(Violation(node=edge.id, message=f"probability {edge.prob} outside [0,1]"))
                elif edge.prob == 0.0:
                    warnings.append(Violation(node=edge.id, message="zero-probability edge"))
            if node.children:
                self._check_sum(node.id, sum(e.prob for e in node.children), "", violations, warnings)
            elif node.time < doc.horizon:
                violations.append(Violation(node=node.id, message="terminal node below horizon"))

        roots = [n.id for n in doc.nodes if n.id not in parents]
        if len(roots) != 1:
            violations.append(Violation(message=f"expected a single root, found {len(roots)}"))
        elif nodes[roots[0]].time != 0:
            violations.append(Violation(node=roots[0], message="root not at level 0"))
        else:
            reached = self._reachable(doc, roots[0])
            for node in doc.nodes:
                if node.id not in reached:
                    violations.append(Violation(node=node.id, message="unreachable node"))

        for name, overrides in doc.measures.items():
            for child_id in overrides:
                if child_id not in parents:
                    violations.append(Violation(node=child_id, message=f"measure {name} overrides unknown edge"))
            for node in doc.nodes:
                if node.children:
                    total = sum(overrides.get(e.id, e.prob) for e in node.children)
                    self._check_sum(node.id, total, f"measure {name}: ", violations, warnings)

        for name, values in doc.processes.items():
            missing = [n.id for n in doc.nodes if n.id not in values]
            if missing:
                violations.append(Violation(node=missing[0], message=f"process {name} missing {len(missing)} node(s)"))

        return ValidationReport(passed=not violations, violations=violations, warnings=warnings)

    def _check_sum(self, node_id, total, prefix, violations, warnings):
        gap = abs(total - 1.0)
        if gap <= self.config.PROB_TOLERANCE:
            return
        if gap <= self.config.RENORMALIZE_TOLERANCE:
            warnings.append(Violation(node=node_id, message=f"{prefix}renormalized probabilities sum {total!r}"))
        else:
            violations.append(Violation(node=node_id, message=f"{prefix}probabilities sum {total:g}"))

    @staticmethod
    def _reachable(doc: ModelDocument, root: str) -> set:
        by_id = {n.id: n for n in doc.nodes}
        seen = {root}
        queue = deque([root])
        while queue:
            for edge in by_id[queue.popleft()].children:
                if edge.id in by_id and edge.id not in seen:
                    seen.add(edge.id)
                    queue.append(edge.id)
        return seen

    def build_model(self, doc: ModelDocument) -> FiltrationModel:
        """Validate a document and build the breadth-first model"""
        report = self.validate_model(doc)
        if not report.passed:
            first = report.violations[0]
            raise ModelValidationError(f"{first.message} (node {first.node})", report)
        for warning in report.warnings:
            logger.warning(f"model node {warning.node}: {warning.message}")

        by_id = {n.id: n for n in doc.nodes}
        root = next(n.id for n in doc.nodes if n.time == 0)
        ids, parents, probs, increments = [root], [-1], [1.0], [np.nan]
        queue = deque([(root, 0)])
        while queue:
            node_id, index = queue.popleft()
            edges = by_id[node_id].children
            total = sum(e.prob for e in edges)
            for edge in edges:
                ids.append(edge.id)
                parents.append(index)
                probs.append(edge.prob / total)
                increments.append(np.nan if edge.increment is None else edge.increment)
                queue.append((edge.id, len(ids) - 1))

        declared = np.asarray(increments)
        return FiltrationModel.from_parents(
            parents, probs, doc.horizon, ids,
            None if np.all(np.isnan(declared[1:])) else declared,
        )

    def to_document(self, model: FiltrationModel) -> ModelDocument:
        nodes = []
        for v, node_id in enumerate(model.ids):
            children = []
            for c in model.children[v]:
                edge = {"id": model.ids[c], "prob": float(model.ref_prob[c])}
                if model.increments is not None and not np.isnan(model.increments[c]):
                    edge["increment"] = float(model.increments[c])
                children.append(edge)
            nodes.append({"id": node_id, "time": int(model.time[v]), "children": children})
        return ModelDocument(horizon=model.horizon, nodes=nodes)

    def measure_from_overrides(self, model: FiltrationModel, overrides: Dict[str, float], name: str) -> Measure:
        prob = model.ref_prob.copy()
        for child_id, p in overrides.items():
            prob[model.index[child_id]] = p
        sums = model.one_step_mean(np.ones(model.node_count), prob)
        internal = ~model.is_leaf
        prob[1:] = prob[1:] / sums[model.parent[1:]]
        if np.any(np.abs(sums[internal] - 1.0) > self.config.RENORMALIZE_TOLERANCE):
            raise ModelValidationError(f"measure {name} does not sum to 1")
        return Measure(prob, name)

    # Expectations ---------------------------------------------------------

    def running_expectation(
        self, model: FiltrationModel, measure: Measure, X: AdaptedProcess, of_time: StoppingTime
    ) -> np.ndarray:
        """v -> E[X_of | F_v] above the cut, X at the cut node at or below it"""
        values = model.check_process(X)
        decided = of_time.stop_node >= 0
        W = np.zeros(model.node_count)
        W[decided] = values[of_time.stop_node[decided]]
        for level in range(model.horizon - 1, -1, -1):
            nodes = model.levels[level]
            open_nodes = ~decided[nodes]
            if open_nodes.any():
                W[nodes[open_nodes]] = model.level_mean(W, measure.prob, level)[open_nodes]
        return W

    def conditional_expectation(
        self,
        model: FiltrationModel,
        measure: Measure,
        X: AdaptedProcess,
        from_time: StoppingTime,
        of_time: StoppingTime,
    ) -> AdaptedProcess:
        """
        E[X_of | F_from] as the process v -> E[X_of | F_{from ^ time(v)}]:
        constant below each from-cut node, the running expectation above it.
        """
        if not from_time.le(of_time):
            raise TimesNotOrderedError()
        W = self.running_expectation(model, measure, X, of_time)
        decided = from_time.stop_node >= 0
        result = W.copy()
        result[decided] = W[from_time.stop_node[decided]]
        return AdaptedProcess(result, X.name)

    def expectation(
        self, model: FiltrationModel, measure: Measure, X: AdaptedProcess, at: Optional[StoppingTime] = None
    ) -> float:
        """E[X_at]; at defaults to the horizon"""
        values = model.check_process(X)
        at = at or StoppingTime.terminal(model)
        nodes = at.nodes
        return float(np.dot(measure.reach(model)[nodes], values[nodes]))

    def leaf_expectation(self, model: FiltrationModel, measure: Measure, leaf_values: np.ndarray) -> float:
        """Expectation of a pathwise quantity given per leaf"""
        return float(np.dot(measure.leaf_weights(model), leaf_values))

    # Stopping-time enumeration -------------------------------------------

    @staticmethod
    def count_stopping_times(model: FiltrationModel) -> int:
        counts = [1] * model.node_count
        for level in range(model.horizon - 1, -1, -1):
            for v in model.levels[level]:
                product = 1
                for c in model.children[v]:
                    product *= counts[c]
                counts[v] = 1 + product
        return counts[0]

    @staticmethod
    def count_partitions(model: FiltrationModel, max_segments: int) -> int:
        """Number of monotone chains 0 = tau_0 <= ... <= tau_n = N with n = max_segments"""
        k = max(max_segments - 1, 0)
        # chains[v][j]: chains of j cuts of the subtree rooted at v
        chains = [[1] * (k + 1) for _ in range(model.node_count)]
        for level in range(model.horizon - 1, -1, -1):
            for v in model.levels[level]:
                row = []
                for j in range(k + 1):
                    total = 0
                    for m in range(j + 1):
                        product = 1
                        for c in model.children[v]:
                            product *= chains[c][j - m]
                        total += product
                    row.append(total)
                chains[v] = row
        return chains[0][k]

    def _chains_at(self, model: FiltrationModel, v: int, k: int, memo: dict) -> Iterator[Tuple[CutKey, ...]]:
        """Monotone chains of k cuts of the subtree rooted at v, yielded one at a time"""
        if k == 0:
            yield ()
            return
        if model.is_leaf[v]:
            yield ((v,),) * k
            return
        for m in range(k, -1, -1):
            head = ((v,),) * m
            per_child = [self._subtree_chains(model, c, k - m, memo) for c in model.children[v]]
            for combo in itertools.product(*per_child):
                yield head + tuple(
                    tuple(sorted(itertools.chain.from_iterable(part[j] for part in combo)))
                    for j in range(k - m)
                )

    def _subtree_chains(self, model: FiltrationModel, v: int, k: int, memo: dict) -> List[Tuple[CutKey, ...]]:
        """Memoized chains of a proper subtree; the root's chains are never materialized"""
        if (v, k) not in memo:
            memo[(v, k)] = list(self._chains_at(model, v, k, memo))
        return memo[(v, k)]

    def iter_cut_chains(self, model: FiltrationModel, max_segments: int) -> Iterator[Tuple[CutKey, ...]]:
        """Intermediate cut chains (as node-index keys) of every partition with max_segments segments"""
        count = self.count_partitions(model, max_segments)
        if count > self.config.MARTNORM_CAP:
            raise EnumerationTooLargeError(count, self.config.MARTNORM_CAP)
        logger.debug(f"enumerating {count} partitions with {max_segments} segments")
        yield from self._chains_at(model, 0, max(max_segments - 1, 0), {})

    def enumerate_stopping_times(self, model: FiltrationModel) -> List[StoppingTime]:
        count = self.count_stopping_times(model)
        if count > self.config.MARTNORM_CAP:
            raise EnumerationTooLargeError(count, self.config.MARTNORM_CAP)
        return [StoppingTime.from_nodes(model, chain[0]) for chain in self._chains_at(model, 0, 1, {})]

    def enumerate_stopping_partitions(self, model: FiltrationModel, max_segments: int) -> Iterator[StoppingPartition]:
        """Every monotone stopping partition with at most max_segments segments, each exactly once"""
        if max_segments < 1:
            raise ValueError("max_segments must be at least 1")
        cache: Dict[CutKey, StoppingTime] = {}

        def time_for(key: CutKey) -> StoppingTime:
            if key not in cache:
                cache[key] = StoppingTime.from_nodes(model, key)
            return cache[key]

        first, last = StoppingTime.initial(model), StoppingTime.terminal(model)
        for chain in self.iter_cut_chains(model, max_segments):
            yield StoppingPartition([first, *(time_for(key) for key in chain), last], check=False)


filtration_service = FiltrationService()
