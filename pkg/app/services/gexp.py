"""
G-Expectation Service for martnorm
Sublinear expectation over finite measure families: G-expectation and its
conditional version by dynamic programming, pasting, martingale
classification under the family, and the family norms.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import Settings, settings
from app.core.exceptions import NotInFamilyError, NotInSliceError, TimesNotOrderedError
from app.models.family import MeasureFamily
from app.models.filtration import AdaptedProcess, FiltrationModel, Measure, StoppingTime
from app.schemas.reports import (
    FamilyDecompositionReport,
    FamilyNormReport,
    GClassification,
    MeasureDecomposition,
    MeyerCheckResult,
    Witness,
)
from app.services.decomposition import DecompositionService, PartitionSearch, decomposition_service
from app.services.filtration_core import FiltrationService, filtration_service

logger = logging.getLogger(__name__)

LABELS = ("P-martingale", "P-super", "P-sub", "G-martingale", "G-super", "G-sub")


@dataclass
class TowerCheck:
    nodes: List[str]
    one_stage: np.ndarray
    two_stage: np.ndarray

    @property
    def gap(self) -> float:
        return float(np.max(np.abs(self.one_stage - self.two_stage), initial=0.0))


class GExpectationService:
    """Service for sublinear expectations over measure families"""

    def __init__(self, config: Settings = settings, core: FiltrationService = filtration_service,
                 decomposition: DecompositionService = decomposition_service):
        self.config = config
        self.core = core
        self.decomposition = decomposition

    # Dynamic programming ------------------------------------------------------

    def g_running(self, model: FiltrationModel, family: MeasureFamily, X: AdaptedProcess,
                  of_time: Optional[StoppingTime] = None) -> np.ndarray:
        """Rectangular DP: v -> E^G[X_of | F_v] above the cut, X at the cut node below it"""
        values = model.check_process(X)
        of_time = of_time or StoppingTime.terminal(model)
        decided = of_time.stop_node >= 0
        W = np.zeros(model.node_count)
        W[decided] = values[of_time.stop_node[decided]]
        for level in range(model.horizon - 1, -1, -1):
            for v in model.levels[level]:
                if not decided[v]:
                    W[v] = np.max(family.choices[v] @ W[list(model.children[v])])
        return W

    def g_leaf(self, model: FiltrationModel, family: MeasureFamily, leaf_values: np.ndarray) -> float:
        """E^G of a quantity given per leaf"""
        if family.kind == "explicit":
            return max(self.core.leaf_expectation(model, m, leaf_values) for m in family.measures)
        terminal = np.zeros(model.node_count)
        terminal[model.leaves] = leaf_values
        return float(self.g_running(model, family, AdaptedProcess(terminal))[0])

    def g_expectation(self, model: FiltrationModel, family: MeasureFamily, xi: AdaptedProcess) -> float:
        return self.g_leaf(model, family, model.check_process(xi)[model.leaves])

    def agrees_on(self, model: FiltrationModel, first: Measure, second: Measure, cut: StoppingTime) -> bool:
        """Same law on the sigma-algebra at the cut: equal reach probability at every cut node"""
        nodes = cut.nodes
        gap = np.abs(first.reach(model)[nodes] - second.reach(model)[nodes])
        return bool(np.all(gap <= self.config.PROB_TOLERANCE))

    def explicit_at_cut(self, model: FiltrationModel, family: MeasureFamily, X: AdaptedProcess,
                        sigma: StoppingTime, of_time: StoppingTime, base: Measure) -> np.ndarray:
        """
        Max over listed measures agreeing with ``base`` at the sigma cut of
        E[X_of | cut node]; on base-null cut nodes the max runs over the whole list.
        """
        nodes = sigma.nodes
        live = base.reach(model)[nodes] > 0
        best = np.full(model.node_count, -np.inf)
        for m in family.measures:
            W = self.core.running_expectation(model, m, X, of_time)
            mask = np.ones(len(nodes), dtype=bool) if self.agrees_on(model, m, base, sigma) else ~live
            best[nodes[mask]] = np.maximum(best[nodes[mask]], W[nodes[mask]])
        return best

    def conditional_g_expectation(self, model: FiltrationModel, family: MeasureFamily, xi: AdaptedProcess,
                                  at: StoppingTime, base: Measure) -> AdaptedProcess:
        """E^{G,base}[xi | F_{at ^ time(v)}] at every node v"""
        if not family.contains(base):
            raise NotInFamilyError(f"measure {base.name or '?'} is not in the family")
        terminal = StoppingTime.terminal(model)
        decided = at.stop_node >= 0
        if family.kind == "rectangular":
            W = self.g_running(model, family, xi, terminal)
            result = W.copy()
            result[decided] = W[at.stop_node[decided]]
            return AdaptedProcess(result, xi.name)

        result = np.zeros(model.node_count)
        at_cut = self.explicit_at_cut(model, family, xi, at, terminal, base)
        result[decided] = at_cut[at.stop_node[decided]]
        for level in sorted(set(model.time[~decided].tolist())):
            level_values = self.explicit_at_cut(model, family, xi, StoppingTime.constant(model, level), terminal, base)
            open_nodes = model.levels[level][~decided[model.levels[level]]]
            result[open_nodes] = level_values[open_nodes]
        return AdaptedProcess(result, xi.name)

    # Pasting ------------------------------------------------------------------

    def paste(self, model: FiltrationModel, first: Measure, second: Measure,
              at: StoppingTime, event: Sequence[int]) -> Measure:
        """first's transitions below the cut nodes in ``event``, second's below the rest"""
        event = set(int(v) for v in event)
        if not event <= set(at.nodes.tolist()):
            raise ValueError("paste event must be a set of cut nodes")
        parents = model.parent[1:]
        before = at.stop_node[parents] == -1
        live = first.reach(model)[parents] > 0
        edges = np.flatnonzero(before & live) + 1
        disagree = edges[np.abs(first.prob[edges] - second.prob[edges]) > self.config.PROB_TOLERANCE]
        if disagree.size:
            raise NotInSliceError(model.ids[disagree[0]])
        prob = first.prob.copy()
        below = np.flatnonzero(~before) + 1
        use_second = np.array([at.stop_node[model.parent[c]] not in event for c in below], dtype=bool)
        prob[below[use_second]] = second.prob[below[use_second]]
        return Measure(prob, f"paste({first.name},{second.name})")

    def pasting_maximum(self, model: FiltrationModel, first: Measure, second: Measure,
                        xi: AdaptedProcess, at: StoppingTime) -> Tuple[Measure, float]:
        """Paste along {E^first[xi] >= E^second[xi]} at the cut; returns the paste and its gap to the node-wise max"""
        terminal = StoppingTime.terminal(model)
        W1 = self.core.running_expectation(model, first, xi, terminal)
        W2 = self.core.running_expectation(model, second, xi, terminal)
        nodes = at.nodes
        event = nodes[W1[nodes] >= W2[nodes]]
        pasted = self.paste(model, first, second, at, event)
        W = self.core.running_expectation(model, pasted, xi, terminal)
        gap = float(np.max(np.abs(W[nodes] - np.maximum(W1[nodes], W2[nodes]))))
        return pasted, gap

    def dpp_tower(self, model: FiltrationModel, family: MeasureFamily, xi: AdaptedProcess,
                  first: StoppingTime, second: StoppingTime, base: Measure) -> TowerCheck:
        """
        One-stage E^{G,base} at ``first`` against the sup over members agreeing
        with base at ``first`` of E^{P'}_first[E^{G,P'}_second[xi]], both on
        base-live cut nodes.
        """
        if not first.le(second):
            raise TimesNotOrderedError()
        nodes = first.nodes[base.reach(model)[first.nodes] > 0]
        one_stage = self.conditional_g_expectation(model, family, xi, first, base).values[nodes]
        two_stage = np.full(len(nodes), -np.inf)
        for m in family.extreme_measures(self.config.SELECTION_CAP):
            if not self.agrees_on(model, m, base, first):
                continue
            inner = self.conditional_g_expectation(model, family, xi, second, m)
            W = self.core.running_expectation(model, m, inner, second)
            two_stage = np.maximum(two_stage, W[nodes])
        return TowerCheck([model.ids[v] for v in nodes], one_stage, two_stage)

    # Classification -------------------------------------------------------------

    def _rectangular_reachable(self, model: FiltrationModel, family: MeasureFamily) -> np.ndarray:
        live = np.zeros(model.node_count, dtype=bool)
        live[0] = True
        for v in np.flatnonzero(~model.is_leaf):
            if live[v]:
                kids = list(model.children[v])
                live[kids] = family.choices[v].max(axis=0) > 0
        return live

    def classify(self, model: FiltrationModel, family: MeasureFamily, Y: AdaptedProcess,
                 tol: Optional[float] = None) -> GClassification:
        """One-step comparisons of E^P[Y_next] and E^{G,P}[Y_next] against Y at every live node"""
        tol = self.config.CLASSIFY_TOLERANCE if tol is None else tol
        values = model.check_process(Y)
        # rows of (label, node, linear value, G value)
        rows: List[Tuple[str, int, float, float]] = []
        if family.kind == "rectangular":
            live = self._rectangular_reachable(model, family)
            for v in np.flatnonzero(~model.is_leaf & live):
                means = family.choices[v] @ values[list(model.children[v])]
                top = float(means.max())
                for i, mean in enumerate(means):
                    rows.append((f"choice {i}", int(v), float(mean), top))
        else:
            means = [model.one_step_mean(values, m.prob) for m in family.measures]
            reach = [m.reach(model) for m in family.measures]
            for level in range(model.horizon):
                cut = StoppingTime.constant(model, level)
                nodes = model.levels[level]
                for i, m in enumerate(family.measures):
                    agreeing = [j for j, o in enumerate(family.measures) if self.agrees_on(model, o, m, cut)]
                    for v in nodes[reach[i][nodes] > 0]:
                        top = max(means[j][v] for j in agreeing)
                        rows.append((m.name or f"measure {i}", int(v), float(means[i][v]), float(top)))

        flags = {label: True for label in LABELS}
        witnesses: Dict[str, Witness] = {}

        def record(label: str, name: str, v: int, gap: float):
            if gap > tol:
                flags[label] = False
                if label not in witnesses or gap > witnesses[label].gap:
                    witnesses[label] = Witness(measure=name, node=model.ids[v], gap=gap)

        for name, v, mean, top in rows:
            y = values[v]
            record("P-super", name, v, mean - y)
            record("P-sub", name, v, y - mean)
            record("P-martingale", name, v, abs(mean - y))
            record("G-super", name, v, top - y)
            record("G-sub", name, v, y - top)
            record("G-martingale", name, v, abs(top - y))

        result = GClassification(flags=flags, witnesses=witnesses)
        broken = result.implication_violations()
        if broken:
            logger.error(f"classification implications violated: {broken}")
        return result

    # Norms ------------------------------------------------------------------

    def norm_cp(self, model: FiltrationModel, family: MeasureFamily, Y: AdaptedProcess,
                strategy: Optional[str] = None, max_segments: Optional[int] = None) -> FamilyNormReport:
        """sup over family members of the squared partition norm"""
        strategy = strategy or self.config.NORM_STRATEGY
        best, best_name, lower = -np.inf, None, False
        for m in family.extreme_measures(self.config.SELECTION_CAP):
            report = self.decomposition.norm_p(model, m, Y, strategy, max_segments)
            lower = lower or report.lower_bound
            if report.norm_p_sq > best:
                best, best_name = report.norm_p_sq, m.name
        return FamilyNormReport(value_sq=float(best), attaining_measure=best_name,
                                strategy=strategy, lower_bound=lower)

    def norm_g(self, model: FiltrationModel, family: MeasureFamily, Y: AdaptedProcess,
               strategy: Optional[str] = None, max_segments: Optional[int] = None) -> FamilyNormReport:
        """E^G[sup |Y|^2] plus the partition supremum built on conditional G-expectations"""
        strategy = strategy or self.config.NORM_STRATEGY
        values = model.check_process(Y)
        sup_sq = self.g_leaf(model, family, self.decomposition.running_sup_sq(model, Y))

        if family.kind == "rectangular":
            running: Dict[StoppingTime, np.ndarray] = {}

            def segment(sigma: StoppingTime, tau: StoppingTime) -> np.ndarray:
                if tau not in running:
                    running[tau] = self.g_running(model, family, Y, tau)
                s = sigma.leaf_stop()
                return np.abs(running[tau][s] - values[s])

            search = PartitionSearch(model, segment, lambda total: self.g_leaf(model, family, total ** 2),
                                     self.config, self.core)
            result = search.run(strategy, max_segments)
            return FamilyNormReport(value_sq=sup_sq + result.value, strategy=strategy,
                                    lower_bound=result.lower_bound)

        best, best_name, lower = -np.inf, None, False
        for m in family.measures:
            def segment(sigma: StoppingTime, tau: StoppingTime, base: Measure = m) -> np.ndarray:
                at_cut = self.explicit_at_cut(model, family, Y, sigma, tau, base)
                s = sigma.leaf_stop()
                return np.abs(at_cut[s] - values[s])

            search = PartitionSearch(model, segment, self.decomposition.leaf_second_moment(model, m),
                                     self.config, self.core)
            result = search.run(strategy, max_segments)
            lower = lower or result.lower_bound
            if result.value > best:
                best, best_name = result.value, m.name
        return FamilyNormReport(value_sq=sup_sq + best, attaining_measure=best_name,
                                strategy=strategy, lower_bound=lower)

    def triangle_defect(self, model: FiltrationModel, family: MeasureFamily, first: AdaptedProcess,
                        second: AdaptedProcess, strategy: Optional[str] = None) -> float:
        """||Y1 + Y2||_G - ||Y1||_G - ||Y2||_G; positive values break the triangle inequality"""
        norm = lambda Y: np.sqrt(self.norm_g(model, family, Y, strategy).value_sq)
        return float(norm(first + second) - norm(first) - norm(second))

    # Decomposition under the family ---------------------------------------------

    def decomposition_family(self, model: FiltrationModel, family: MeasureFamily,
                             Y: AdaptedProcess) -> FamilyDecompositionReport:
        """
        Doob decomposition under every member with A = L - K split into its
        increasing and decreasing parts; for G-submartingales also checks
        whether -K^P is the ess sup over P(t, P) of E^{P'}_t[-K^{P'}_N].
        """
        measures = family.extreme_measures(self.config.SELECTION_CAP)
        parts = []
        for m in measures:
            dec = self.decomposition.doob_decompose(model, m, Y)
            steps = np.zeros(model.node_count)
            steps[1:] = dec.A.values[1:] - dec.A.values[model.parent[1:]]
            L = np.zeros(model.node_count)
            K = np.zeros(model.node_count)
            for level in range(1, model.horizon + 1):
                nodes = model.levels[level]
                par = model.parent[nodes]
                L[nodes] = L[par] + np.maximum(steps[nodes], 0.0)
                K[nodes] = K[par] + np.maximum(-steps[nodes], 0.0)
            parts.append((m, dec, L, K))

        is_sub = self.classify(model, family, Y).flags["G-sub"]
        meyer = self._doob_meyer_check(model, parts) if is_sub else []
        return FamilyDecompositionReport(
            decompositions=[
                MeasureDecomposition(
                    measure=m.name,
                    martingale_part=dec.M.to_mapping(model),
                    increasing_part=AdaptedProcess(L).to_mapping(model),
                    decreasing_part=AdaptedProcess(K).to_mapping(model),
                )
                for m, dec, L, K in parts
            ],
            is_g_submartingale=is_sub,
            doob_meyer=meyer,
        )

    def _doob_meyer_check(self, model: FiltrationModel, parts) -> List[MeyerCheckResult]:
        terminal = StoppingTime.terminal(model)
        # E^{P'}[-K^{P'}_N | F_v] for every member P'
        running = [
            self.core.running_expectation(model, m, AdaptedProcess(-K), terminal) for m, _, _, K in parts
        ]
        results = []
        for m, _, _, K in parts:
            reach = m.reach(model)
            worst = 0.0
            for level in range(model.horizon + 1):
                cut = StoppingTime.constant(model, level)
                nodes = model.levels[level]
                nodes = nodes[reach[nodes] > 0]
                if not nodes.size:
                    continue
                best = np.full(len(nodes), -np.inf)
                for (other, _, _, _), W in zip(parts, running):
                    if self.agrees_on(model, other, m, cut):
                        best = np.maximum(best, W[nodes])
                worst = max(worst, float(np.max(np.abs(best + K[nodes]))))
            if worst <= self.config.MEYER_HOLDS_TOL:
                outcome = "holds"
            elif worst > self.config.MEYER_FAILS_TOL:
                outcome = "fails"
            else:
                outcome = "ambiguous"
            results.append(MeyerCheckResult(measure=m.name, outcome=outcome, max_gap=worst))
        return results


g_expectation_service = GExpectationService()
