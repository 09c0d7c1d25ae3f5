"""
Decomposition Service for martnorm
Doob decomposition, bracket and variation energies, and the sup-norm and
partition-supremum norms of a process, with a shared partition search used
by every partition-supremum norm in the package.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from app.core.config import Settings, settings
from app.core.exceptions import NotAMartingaleError, NotMonotoneError
from app.models.filtration import (
    AdaptedProcess,
    FiltrationModel,
    Measure,
    StoppingPartition,
    StoppingTime,
)
from app.schemas.reports import DecompositionDocument, EnergyCheck, NormReport, Window
from app.services.filtration_core import FiltrationService, filtration_service

logger = logging.getLogger(__name__)

SegmentFn = Callable[[StoppingTime, StoppingTime], np.ndarray]
ScoreFn = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class Decomposition:
    """Y = base + M + A with M a martingale and A predictable"""

    base: float
    M: AdaptedProcess
    A: AdaptedProcess

    def to_document(self, model: FiltrationModel, bracket_energy: float, variation_energy: float) -> DecompositionDocument:
        return DecompositionDocument(
            base=self.base,
            martingale_part=self.M.to_mapping(model),
            fv_part=self.A.to_mapping(model),
            bracket_energy=bracket_energy,
            variation_energy=variation_energy,
        )


@dataclass
class PartitionResult:
    value: float
    partition: StoppingPartition
    lower_bound: bool
    evaluated: int


class PartitionSearch:
    """
    Supremum over stopping partitions of score(sum of per-leaf segment terms).

    ``segment_fn(sigma, tau)`` returns a nonnegative value per leaf for the
    segment [sigma, tau]; ``score_fn`` maps the per-leaf sum to a real.
    """

    def __init__(self, model: FiltrationModel, segment_fn: SegmentFn, score_fn: ScoreFn,
                 config: Settings = settings, core: FiltrationService = filtration_service):
        self.model = model
        self.segment_fn = segment_fn
        self.score_fn = score_fn
        self.config = config
        self.core = core
        self._times: Dict[Tuple[int, ...], StoppingTime] = {}
        self._segments: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], np.ndarray] = {}

    def time(self, key: Tuple[int, ...]) -> StoppingTime:
        if key not in self._times:
            self._times[key] = StoppingTime.from_nodes(self.model, key)
        return self._times[key]

    def segment(self, sigma: StoppingTime, tau: StoppingTime) -> np.ndarray:
        pair = (sigma.key, tau.key)
        if pair not in self._segments:
            self._segments[pair] = self.segment_fn(sigma, tau)
        return self._segments[pair]

    def total(self, times) -> np.ndarray:
        acc = np.zeros(len(self.model.leaves))
        for sigma, tau in zip(times, times[1:]):
            acc = acc + self.segment(sigma, tau)
        return acc

    def run(self, strategy: str, max_segments: Optional[int] = None) -> PartitionResult:
        max_segments = max_segments or self.model.horizon
        if strategy == "finest":
            return self.finest()
        if strategy == "enumerate":
            return self.enumerate(max_segments)
        if strategy == "greedy":
            return self.greedy(max_segments)
        raise ValueError(f"unknown strategy {strategy}")

    def finest(self) -> PartitionResult:
        partition = StoppingPartition.grid(self.model)
        return PartitionResult(self.score_fn(self.total(partition.times)), partition, False, 1)

    def enumerate(self, max_segments: int) -> PartitionResult:
        first = StoppingTime.initial(self.model)
        last = StoppingTime.terminal(self.model)
        best_value, best_times, evaluated = -np.inf, None, 0
        for chain in self.core.iter_cut_chains(self.model, max_segments):
            times = [first, *(self.time(key) for key in chain), last]
            value = self.score_fn(self.total(times))
            evaluated += 1
            if value > best_value:
                best_value, best_times = value, times
        logger.debug(f"enumerated {evaluated} partitions, best {best_value:.6g}")
        return PartitionResult(float(best_value), StoppingPartition(best_times, check=False), False, evaluated)

    def _initial_chain(self, max_segments: int) -> List[StoppingTime]:
        N = self.model.horizon
        if max_segments >= N:
            levels = list(range(N + 1)) + [N] * (max_segments - N)
        else:
            levels = np.round(np.linspace(0, N, max_segments + 1)).astype(int).tolist()
        return [StoppingTime.constant(self.model, k) for k in levels]

    def _moves(self, times: List[StoppingTime], j: int):
        """Cuts reachable from times[j] by one node move that keep the chain monotone"""
        model = self.model
        prev, cur, nxt = times[j - 1], times[j], times[j + 1]
        for v in cur.nodes:
            if not model.is_leaf[v] and nxt.stop_node[v] == -1:
                cut = cur.cut.copy()
                cut[v] = False
                cut[list(model.children[v])] = True
                yield cut
        parents = {model.parent[v] for v in cur.nodes if v != 0}
        for u in parents:
            kids = list(model.children[u])
            if cur.cut[kids].all() and prev.stop_node[u] >= 0:
                cut = cur.cut.copy()
                cut[kids] = False
                cut[u] = True
                yield cut

    def greedy(self, max_segments: int) -> PartitionResult:
        """Hill-climb from the even grid by single-node cut moves; a lower bound"""
        times = self._initial_chain(max_segments)
        total = self.total(times)
        value = self.score_fn(total)
        evaluated = 1
        for _ in range(self.config.GREEDY_MAX_ROUNDS):
            best = None
            for j in range(1, len(times) - 1):
                base = total - self.segment(times[j - 1], times[j]) - self.segment(times[j], times[j + 1])
                for cut in self._moves(times, j):
                    candidate = self.time(tuple(np.flatnonzero(cut).tolist()))
                    trial = base + self.segment(times[j - 1], candidate) + self.segment(candidate, times[j + 1])
                    score = self.score_fn(trial)
                    evaluated += 1
                    if score > value + 1e-15 and (best is None or score > best[0]):
                        best = (score, j, candidate, trial)
            if best is None:
                break
            value, j, candidate, total = best
            times[j] = candidate
        return PartitionResult(float(value), StoppingPartition(times, check=False), True, evaluated)


class DecompositionService:
    """Service for semimartingale decompositions and partition norms"""

    def __init__(self, config: Settings = settings, core: FiltrationService = filtration_service):
        self.config = config
        self.core = core

    def doob_decompose(self, model: FiltrationModel, measure: Measure, Y: AdaptedProcess) -> Decomposition:
        values = model.check_process(Y)
        drift = model.one_step_mean(values, measure.prob) - values
        drift[model.is_leaf] = 0.0
        A = np.zeros(model.node_count)
        for k in range(1, model.horizon + 1):
            nodes = model.levels[k]
            par = model.parent[nodes]
            A[nodes] = A[par] + drift[par]
        base = float(values[0])
        M = values - base - A
        return Decomposition(base, AdaptedProcess(M, f"M[{Y.name}]"), AdaptedProcess(A, f"A[{Y.name}]"))

    def martingale_drift(self, model: FiltrationModel, measure: Measure, M: AdaptedProcess) -> np.ndarray:
        values = model.check_process(M)
        drift = model.one_step_mean(values, measure.prob) - values
        drift[model.is_leaf] = 0.0
        return drift

    def quadratic_variation_energy(self, model: FiltrationModel, measure: Measure, M: AdaptedProcess) -> float:
        """E[sum of squared martingale increments]"""
        drift = self.martingale_drift(model, measure, M)
        worst = int(np.argmax(np.abs(drift)))
        if abs(drift[worst]) > self.config.MARTINGALE_TOLERANCE:
            raise NotAMartingaleError(model.ids[worst], float(drift[worst]))
        values = M.values
        reach = measure.reach(model)
        increments = values[1:] - values[model.parent[1:]]
        return float(np.dot(reach[1:], increments ** 2))

    def total_variation(self, model: FiltrationModel, A: AdaptedProcess, up_to: Optional[StoppingTime] = None) -> AdaptedProcess:
        """Running pathwise variation of A, frozen once the path passes ``up_to``"""
        values = model.check_process(A)
        up_to = up_to or StoppingTime.terminal(model)
        tv = np.zeros(model.node_count)
        for k in range(1, model.horizon + 1):
            nodes = model.levels[k]
            par = model.parent[nodes]
            open_step = up_to.stop_node[par] == -1
            tv[nodes] = tv[par] + np.where(open_step, np.abs(values[nodes] - values[par]), 0.0)
        return AdaptedProcess(tv, f"TV[{A.name}]")

    def running_sup_sq(self, model: FiltrationModel, Y: AdaptedProcess) -> np.ndarray:
        """max over each root-to-leaf path of |Y|^2, per leaf"""
        return np.abs(model.check_process(Y))[model.leaf_paths()].max(axis=1) ** 2

    def norm_p0(self, model: FiltrationModel, measure: Measure, Y: AdaptedProcess) -> float:
        """E[sup |Y|^2]"""
        return self.core.leaf_expectation(model, measure, self.running_sup_sq(model, Y))

    def decomposition_energy(self, model: FiltrationModel, measure: Measure, Y: AdaptedProcess) -> float:
        """|Y_0|^2 + E[<M>_N] + E[(total variation of A)^2]"""
        dec = self.doob_decompose(model, measure, Y)
        bracket = self.quadratic_variation_energy(model, measure, dec.M)
        tv = self.total_variation(model, dec.A).values[model.leaves]
        return dec.base ** 2 + bracket + self.core.leaf_expectation(model, measure, tv ** 2)

    # Partition terms --------------------------------------------------------

    def conditional_gap_segments(self, model: FiltrationModel, measure: Measure, Y: AdaptedProcess) -> SegmentFn:
        """Per-leaf |E_sigma[Y_tau] - Y_sigma| for the segment [sigma, tau]"""
        values = model.check_process(Y)
        running: Dict[StoppingTime, np.ndarray] = {}

        def segment(sigma: StoppingTime, tau: StoppingTime) -> np.ndarray:
            if tau not in running:
                running[tau] = self.core.running_expectation(model, measure, Y, tau)
            stop = sigma.leaf_stop()
            return np.abs(running[tau][stop] - values[stop])

        return segment

    def leaf_second_moment(self, model: FiltrationModel, measure: Measure) -> ScoreFn:
        weights = measure.leaf_weights(model)
        return lambda total: float(np.dot(weights, total ** 2))

    def partition_term(self, model: FiltrationModel, measure: Measure, Y: AdaptedProcess,
                       strategy: str, max_segments: Optional[int] = None) -> PartitionResult:
        search = PartitionSearch(
            model,
            self.conditional_gap_segments(model, measure, Y),
            self.leaf_second_moment(model, measure),
            self.config,
            self.core,
        )
        return search.run(strategy, max_segments)

    def norm_p(self, model: FiltrationModel, measure: Measure, Y: AdaptedProcess,
               strategy: Optional[str] = None, max_segments: Optional[int] = None) -> NormReport:
        strategy = strategy or self.config.NORM_STRATEGY
        sup_sq = self.norm_p0(model, measure, Y)
        result = self.partition_term(model, measure, Y, strategy, max_segments)
        energy = self.decomposition_energy(model, measure, Y)
        norm_sq = sup_sq + result.value
        return NormReport(
            norm_p0_sq=sup_sq,
            norm_p_sq=norm_sq,
            partition_term=result.value,
            attaining_partition=result.partition.to_ids(),
            strategy=strategy,
            lower_bound=result.lower_bound,
            decomposition_energy=energy,
            ratio=energy / norm_sq if norm_sq > 0 else None,
            measure=measure.name or "ref",
        )

    def verify_norm_equivalence(self, model: FiltrationModel, measure: Measure, Y: AdaptedProcess,
                                strategy: Optional[str] = None, window: Optional[Window] = None) -> NormReport:
        window = window or (self.config.EQUIVALENCE_WINDOW_LOW, self.config.EQUIVALENCE_WINDOW_HIGH)
        report = self.norm_p(model, measure, Y, strategy)
        low, high = window
        passed = report.ratio is None or low <= report.ratio <= high
        if not passed:
            logger.warning(f"norm ratio {report.ratio:.6g} outside window [{low}, {high}]")
        return report.model_copy(update={"window": tuple(window), "passed": passed})

    def quasimartingale_variation(self, model: FiltrationModel, measure: Measure, Y: AdaptedProcess) -> float:
        """
        Supremum over deterministic partitions of E[sum |E_t Y_next - Y_t|].
        Refining a deterministic partition never lowers the sum, so the full
        grid attains it: E[total variation of the predictable part].
        """
        dec = self.doob_decompose(model, measure, Y)
        tv = self.total_variation(model, dec.A).values[model.leaves]
        return self.core.leaf_expectation(model, measure, tv)

    # Energy checks ----------------------------------------------------------

    def monotone_energy_check(self, model: FiltrationModel, measure: Measure, Y: AdaptedProcess,
                              bound: Optional[float] = None) -> EnergyCheck:
        """|Y_0|^2 + E[<M>_N] + E[A_N^2] against E[sup |Y|^2] for monotone A"""
        bound = self.config.MONOTONE_ENERGY_C if bound is None else bound
        dec = self.doob_decompose(model, measure, Y)
        steps = dec.A.values[1:] - dec.A.values[model.parent[1:]]
        if not (np.all(steps >= -1e-12) or np.all(steps <= 1e-12)):
            raise NotMonotoneError()
        bracket = self.quadratic_variation_energy(model, measure, dec.M)
        terminal = self.core.leaf_expectation(model, measure, dec.A.values[model.leaves] ** 2)
        energy = dec.base ** 2 + bracket + terminal
        reference = self.norm_p0(model, measure, Y)
        ratio = energy / reference if reference > 0 else None
        return EnergyCheck(energy=energy, reference=reference, ratio=ratio,
                           window=(0.0, bound), passed=ratio is None or ratio <= bound)

    def sampled_energy_check(self, model: FiltrationModel, measure: Measure, Y: AdaptedProcess,
                             partition: StoppingPartition, window: Optional[Window] = None) -> EnergyCheck:
        """
        Two-sided bound for Y sampled along a stopping partition: the Doob
        energy of the sampled chain against its sampled sup and partition term.
        """
        window = window or (self.config.EQUIVALENCE_WINDOW_LOW, self.config.EQUIVALENCE_WINDOW_HIGH)
        values = model.check_process(Y)
        stops = [tau.leaf_stop() for tau in partition.times]
        bracket = np.zeros(len(model.leaves))
        variation = np.zeros(len(model.leaves))
        for (sigma, tau), here, there in zip(partition.pairs(), stops, stops[1:]):
            W = self.core.running_expectation(model, measure, Y, tau)
            bracket += (values[there] - W[here]) ** 2
            variation += np.abs(W[here] - values[here])
        sampled_sup = np.max(np.abs(np.stack([values[s] for s in stops])), axis=0) ** 2
        energy = values[0] ** 2 + self.core.leaf_expectation(model, measure, bracket + variation ** 2)
        reference = self.core.leaf_expectation(model, measure, sampled_sup + variation ** 2)
        ratio = energy / reference if reference > 0 else None
        low, high = window
        return EnergyCheck(energy=float(energy), reference=reference, ratio=ratio,
                           window=tuple(window), passed=ratio is None or low <= ratio <= high)


decomposition_service = DecompositionService()
