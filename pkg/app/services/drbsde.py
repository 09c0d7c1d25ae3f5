"""
DRBSDE Service for martnorm
Backward reflected solver for doubly reflected BSDEs on finite models, its
penalized counterpart, the barrier norm and the a priori estimates built on
them.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import Settings, settings
from app.core.exceptions import BarriersCrossedError, DriverDivergedError
from app.models.drbsde import DrbsdeInstance, DrbsdeSolution, Driver, ZeroDriver
from app.models.filtration import (
    AdaptedProcess,
    FiltrationModel,
    Measure,
    StoppingPartition,
    StoppingTime,
)
from app.schemas.reports import (
    DifferenceReport,
    EstimateReport,
    JumpBoundReport,
    SensitivityPoint,
    SensitivityReport,
    Window,
)
from app.services.decomposition import DecompositionService, PartitionResult, PartitionSearch, decomposition_service
from app.services.filtration_core import FiltrationService, filtration_service

logger = logging.getLogger(__name__)

# (y_tilde, L, U) -> (y, push_up, push_down)
Reflection = Callable[[np.ndarray, np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]


def reflect(y_tilde: np.ndarray, L: np.ndarray, U: np.ndarray):
    y = np.minimum(np.maximum(y_tilde, L), U)
    return y, np.maximum(L - y_tilde, 0.0), np.maximum(y_tilde - U, 0.0)


class DrbsdeService:
    """Service for doubly reflected backward equations"""

    def __init__(self, config: Settings = settings, core: FiltrationService = filtration_service,
                 decomposition: DecompositionService = decomposition_service):
        self.config = config
        self.core = core
        self.decomposition = decomposition

    # Solvers ----------------------------------------------------------------

    def pick_scheme(self, instance: DrbsdeInstance, scheme: Optional[str]) -> str:
        if scheme in (None, "auto"):
            contraction = instance.driver.lipschitz * instance.dt
            scheme = "picard" if contraction >= self.config.PICARD_THRESHOLD else "explicit"
            logger.info(f"driver L*dt = {contraction:.3g}, using {scheme} scheme")
        if scheme not in ("explicit", "picard"):
            raise ValueError(f"unknown scheme {scheme}")
        return scheme

    def _binary_slopes(self, model: FiltrationModel, measure: Measure, dt: float) -> np.ndarray:
        """Martingale increment per child edge used for the two-point Z"""
        if model.increments is not None:
            return np.nan_to_num(model.increments)
        b = np.zeros(model.node_count)
        for v in np.flatnonzero(~model.is_leaf):
            up, down = model.children[v]
            p = measure.prob[up]
            if 0.0 < p < 1.0:
                b[up] = np.sqrt(dt * (1.0 - p) / p)
                b[down] = -np.sqrt(dt * p / (1.0 - p))
        return b

    def _z_level(self, model, measure, Y, level, slopes, dt) -> np.ndarray:
        nodes = model.levels[level]
        if slopes is not None:
            z = np.zeros(len(nodes))
            for i, v in enumerate(nodes):
                up, down = model.children[v]
                spread = slopes[up] - slopes[down]
                if spread != 0.0:
                    z[i] = (Y[up] - Y[down]) / spread
            return z
        mean = model.level_mean(Y, measure.prob, level)
        square = model.level_mean(Y ** 2, measure.prob, level)
        return np.sqrt(np.maximum(square - mean ** 2, 0.0) / dt)

    def _driver_step(self, model: FiltrationModel, driver: Driver, nodes, mean, z, dt, scheme) -> np.ndarray:
        if scheme == "explicit":
            return mean + driver(nodes, mean, z) * dt
        y = mean.copy()
        for _ in range(self.config.PICARD_MAX_ITER):
            nxt = mean + driver(nodes, y, z) * dt
            gap = np.abs(nxt - y)
            y = nxt
            if np.all(np.isfinite(y)) and gap.max(initial=0.0) <= self.config.PICARD_TOL:
                return y
        worst = nodes[int(np.nanargmax(np.where(np.isfinite(gap), gap, np.inf)))]
        raise DriverDivergedError(model.ids[worst], self.config.PICARD_MAX_ITER)

    def _backward(self, model: FiltrationModel, measure: Measure, instance: DrbsdeInstance,
                  scheme: str, clamp: Reflection, label: str) -> DrbsdeSolution:
        instance.validate()
        dt = instance.dt
        L, U = instance.lower.values, instance.upper.values
        binary = model.is_binary()
        if not binary:
            logger.warning("model is not binary; Z is the martingale increment energy surrogate")
        slopes = self._binary_slopes(model, measure, dt) if binary else None

        Y = np.zeros(model.node_count)
        Z = np.zeros(model.node_count)
        up = np.zeros(model.node_count)
        down = np.zeros(model.node_count)
        Y[model.leaves] = instance.terminal.values[model.leaves]
        for level in range(model.horizon - 1, -1, -1):
            nodes = model.levels[level]
            mean = model.level_mean(Y, measure.prob, level)
            Z[nodes] = self._z_level(model, measure, Y, level, slopes, dt)
            y_tilde = self._driver_step(model, instance.driver, nodes, mean, Z[nodes], dt, scheme)
            Y[nodes], up[nodes], down[nodes] = clamp(y_tilde, L[nodes], U[nodes])

        K_plus = np.zeros(model.node_count)
        K_minus = np.zeros(model.node_count)
        for level in range(1, model.horizon + 1):
            nodes = model.levels[level]
            par = model.parent[nodes]
            K_plus[nodes] = K_plus[par] + up[par]
            K_minus[nodes] = K_minus[par] + down[par]

        return DrbsdeSolution(
            model,
            AdaptedProcess(Y, "Y"),
            AdaptedProcess(Z, "Z"),
            AdaptedProcess(K_plus, "K+"),
            AdaptedProcess(K_minus, "K-"),
            label,
            z_surrogate=not binary,
            dt=dt,
        )

    def solve(self, model: FiltrationModel, measure: Measure, instance: DrbsdeInstance,
              scheme: Optional[str] = None) -> DrbsdeSolution:
        scheme = self.pick_scheme(instance, scheme)
        return self._backward(model, measure, instance, scheme, reflect, scheme)

    def solve_penalized(self, model: FiltrationModel, measure: Measure, instance: DrbsdeInstance,
                        penalty: Optional[float] = None, scheme: Optional[str] = None) -> DrbsdeSolution:
        """Reflection replaced by the implicit penalty p(L - y)+ - p(y - U)+"""
        scheme = self.pick_scheme(instance, scheme)
        weight = (penalty or self.config.PENALTY) * instance.dt

        def penalize(y_tilde, L, U):
            y = np.where(y_tilde < L, (y_tilde + weight * L) / (1.0 + weight), y_tilde)
            y = np.where(y_tilde > U, (y_tilde + weight * U) / (1.0 + weight), y)
            return y, weight * np.maximum(L - y, 0.0), weight * np.maximum(y - U, 0.0)

        return self._backward(model, measure, instance, scheme, penalize, "penalized")

    # Norms ----------------------------------------------------------------

    def _check_barriers(self, model: FiltrationModel, L: AdaptedProcess, U: AdaptedProcess) -> None:
        crossed = np.flatnonzero(model.check_process(L) > model.check_process(U))
        if crossed.size:
            raise BarriersCrossedError(model.ids[crossed[0]])

    def barrier_partition(self, model: FiltrationModel, measure: Measure, L: AdaptedProcess, U: AdaptedProcess,
                          strategy: Optional[str] = None, max_segments: Optional[int] = None) -> PartitionResult:
        """Partition supremum of E[(sum ([E L - U]+ + [L - E U]+))^2]"""
        self._check_barriers(model, L, U)
        running = {}

        def expectations(tau: StoppingTime):
            if tau not in running:
                running[tau] = (
                    self.core.running_expectation(model, measure, L, tau),
                    self.core.running_expectation(model, measure, U, tau),
                )
            return running[tau]

        def segment(sigma: StoppingTime, tau: StoppingTime) -> np.ndarray:
            EL, EU = expectations(tau)
            s = sigma.leaf_stop()
            return np.maximum(EL[s] - U.values[s], 0.0) + np.maximum(L.values[s] - EU[s], 0.0)

        search = PartitionSearch(model, segment, self.decomposition.leaf_second_moment(model, measure),
                                 self.config, self.core)
        return search.run(strategy or self.config.NORM_STRATEGY, max_segments)

    def barrier_norm(self, model: FiltrationModel, measure: Measure, L: AdaptedProcess, U: AdaptedProcess,
                     strategy: Optional[str] = None, max_segments: Optional[int] = None) -> float:
        """Squared barrier norm ||L+||^2 + ||U-||^2 + partition supremum"""
        partition = self.barrier_partition(model, measure, L, U, strategy, max_segments)
        lower_part = AdaptedProcess(np.maximum(L.values, 0.0))
        upper_part = AdaptedProcess(np.maximum(-U.values, 0.0))
        return (self.decomposition.norm_p0(model, measure, lower_part)
                + self.decomposition.norm_p0(model, measure, upper_part)
                + partition.value)

    def _path_sum(self, model: FiltrationModel, per_node: np.ndarray) -> np.ndarray:
        """Sum over levels 0..N-1 of a node quantity along each path"""
        paths = model.leaf_paths()[:, :-1]
        return per_node[paths].sum(axis=1)

    def i0(self, model: FiltrationModel, measure: Measure, terminal: AdaptedProcess,
           driver: Driver = ZeroDriver(), dt: float = 1.0) -> float:
        """E[|xi|^2 + (sum |f(t, 0, 0)| dt)^2]"""
        xi = model.check_process(terminal)[model.leaves]
        running = self._path_sum(model, np.abs(driver.at_zero(model)) * dt)
        return self.core.leaf_expectation(model, measure, xi ** 2 + running ** 2)

    def solution_norm(self, model: FiltrationModel, measure: Measure, solution: DrbsdeSolution) -> float:
        """E[sup |Y|^2 + sum Z^2 dt + (total variation of K+ - K-)^2]"""
        sup_sq = self.decomposition.running_sup_sq(model, solution.Y)
        z_energy = self._path_sum(model, solution.Z.values ** 2 * solution.dt)
        return self.core.leaf_expectation(model, measure, sup_sq + z_energy + solution.leaf_variation() ** 2)

    # Proof devices ------------------------------------------------------------

    def excursion_times(self, model: FiltrationModel, K_plus: AdaptedProcess, K_minus: AdaptedProcess) -> List[StoppingTime]:
        """Alternating first-increase times of K+ and K-, from 0 until both sit at the horizon"""
        plus, minus = model.check_process(K_plus), model.check_process(K_minus)
        terminal = StoppingTime.terminal(model)
        times = [StoppingTime.initial(model)]

        def next_increase(K: np.ndarray, after: StoppingTime) -> StoppingTime:
            start = np.where(after.stop_node >= 0, K[np.clip(after.stop_node, 0, None)], np.inf)
            return StoppingTime.first_hitting(model, K > start, after=after, strict=False)

        while True:
            up = next_increase(plus, times[-1])
            down = next_increase(minus, up)
            times.extend([up, down])
            if up == terminal and down == terminal:
                return times

    def mokobodski_witness(self, model: FiltrationModel, measure: Measure, L: AdaptedProcess, U: AdaptedProcess) -> AdaptedProcess:
        """f = 0 reflected solution with terminal value at the barrier midpoint"""
        self._check_barriers(model, L, U)
        inf = self.config.BARRIER_INFINITY
        lo, hi = L.values[model.leaves], U.values[model.leaves]
        lo_finite, hi_finite = lo > -inf, hi < inf
        xi = np.where(lo_finite & hi_finite, (lo + hi) / 2.0,
                      np.where(lo_finite, lo, np.where(hi_finite, hi, 0.0)))
        terminal = np.zeros(model.node_count)
        terminal[model.leaves] = xi
        instance = DrbsdeInstance(model, AdaptedProcess(terminal, "xi"), L, U)
        return self.solve(model, measure, instance, "explicit").Y.renamed("witness")

    def check_separation(self, model: FiltrationModel, L: AdaptedProcess, U: AdaptedProcess) -> List[str]:
        """Nodes where L < U fails; empty when the barriers are strictly separated"""
        touching = np.flatnonzero(model.check_process(L) >= model.check_process(U))
        return [model.ids[v] for v in touching]

    def sandwich_gap(self, model: FiltrationModel, measure: Measure, L: AdaptedProcess, U: AdaptedProcess,
                     S: AdaptedProcess, partition: StoppingPartition) -> float:
        """
        Largest excess of the barrier segment term over |E_sigma S_tau - S_sigma|
        over every segment and cut node; nonpositive when L <= S <= U.
        """
        worst = -np.inf
        for sigma, tau in partition.pairs():
            EL = self.core.running_expectation(model, measure, L, tau)
            EU = self.core.running_expectation(model, measure, U, tau)
            ES = self.core.running_expectation(model, measure, S, tau)
            s = sigma.nodes
            barrier = np.maximum(EL[s] - U.values[s], 0.0) + np.maximum(L.values[s] - EU[s], 0.0)
            worst = max(worst, float(np.max(barrier - np.abs(ES[s] - S.values[s]))))
        return worst

    def jump_bound_report(self, model: FiltrationModel, solution: DrbsdeSolution,
                          L: AdaptedProcess, U: AdaptedProcess) -> JumpBoundReport:
        """Pathwise K+_N <= sum (dL)- and K-_N <= sum (dU)+"""
        inf = self.config.BARRIER_INFINITY
        lower = np.clip(L.values, -inf, inf)
        upper = np.clip(U.values, -inf, inf)
        steps_L = np.zeros(model.node_count)
        steps_U = np.zeros(model.node_count)
        steps_L[1:] = np.maximum(lower[model.parent[1:]] - lower[1:], 0.0)
        steps_U[1:] = np.maximum(upper[1:] - upper[model.parent[1:]], 0.0)
        paths = model.leaf_paths()[:, 1:]
        leaves = model.leaves
        excess = np.maximum(solution.K_plus.values[leaves] - steps_L[paths].sum(axis=1),
                            solution.K_minus.values[leaves] - steps_U[paths].sum(axis=1))
        bad = np.flatnonzero(excess > 1e-12)
        if bad.size:
            logger.warning(f"jump bound exceeded on {bad.size} path(s), max excess {excess.max():.3g}")
        return JumpBoundReport(
            holds=not bad.size,
            violating_leaves=[model.ids[leaves[i]] for i in bad],
            max_excess=float(max(excess.max(), 0.0)),
        )

    # Estimates ------------------------------------------------------------

    def estimate_report(self, model: FiltrationModel, measure: Measure, instance: DrbsdeInstance,
                        scheme: Optional[str] = None, window: Optional[Window] = None) -> EstimateReport:
        window = window or (0.0, self.config.SOLUTION_ESTIMATE_HIGH)
        solution = self.solve(model, measure, instance, scheme)
        i0_sq = self.i0(model, measure, instance.terminal, instance.driver, instance.dt)
        barrier_sq = self.barrier_norm(model, measure, instance.lower, instance.upper)
        solution_sq = self.solution_norm(model, measure, solution)
        denominator = i0_sq + barrier_sq
        ratio = solution_sq / denominator if denominator > 0 else None
        low, high = window
        return EstimateReport(
            i0_sq=i0_sq,
            barrier_norm_sq=barrier_sq,
            solution_norm_sq=solution_sq,
            ratio=ratio,
            window=tuple(window),
            passed=ratio is None or low <= ratio <= high,
        )

    def difference_report(self, model: FiltrationModel, measure: Measure,
                          first: DrbsdeInstance, second: DrbsdeInstance,
                          sol1: DrbsdeSolution, sol2: DrbsdeSolution) -> DifferenceReport:
        dt = first.dt
        dY = sol1.Y.values - sol2.Y.values
        dA = sol1.A.values - sol2.A.values
        dZ = sol1.Z.values - sol2.Z.values
        paths = model.leaf_paths()
        lhs = self.core.leaf_expectation(
            model, measure,
            (dY ** 2 + dA ** 2)[paths].max(axis=1) + self._path_sum(model, dZ ** 2 * dt),
        )

        nodes = np.arange(model.node_count)
        df = first.driver(nodes, sol1.Y.values, sol1.Z.values) - second.driver(nodes, sol1.Y.values, sol1.Z.values)
        dxi = (first.terminal.values - second.terminal.values)[model.leaves]
        driver_term = self.core.leaf_expectation(
            model, measure, dxi ** 2 + self._path_sum(model, np.abs(df) * dt) ** 2
        )

        dL = first.lower.values - second.lower.values
        dU = first.upper.values - second.upper.values
        barrier_gap = np.sqrt(self.core.leaf_expectation(model, measure, (dL ** 2 + dU ** 2)[paths].max(axis=1)))
        scale = sum(
            np.sqrt(self.i0(model, measure, inst.terminal, inst.driver, inst.dt))
            + np.sqrt(self.barrier_norm(model, measure, inst.lower, inst.upper))
            for inst in (first, second)
        )
        barrier_term = float(scale * barrier_gap) if barrier_gap > 0 else 0.0
        rhs = driver_term + barrier_term
        if rhs > 0:
            ratio = lhs / rhs
        else:
            ratio = 0.0 if lhs == 0 else None
        return DifferenceReport(lhs=lhs, driver_term=driver_term, barrier_term=barrier_term, rhs=rhs, ratio=ratio)

    def barrier_shift_sensitivity(self, model: FiltrationModel, measure: Measure, instance: DrbsdeInstance,
                                  ns: Sequence[int] = (2, 4, 8, 16), scheme: Optional[str] = None) -> SensitivityReport:
        """Difference reports for U + 1/n and the log-log decay rate of the difference norm"""
        base = self.solve(model, measure, instance, scheme)
        points = []
        for n in ns:
            shifted = instance.with_upper(instance.upper + 1.0 / n)
            report = self.difference_report(model, measure, instance, shifted, base,
                                            self.solve(model, measure, shifted, scheme))
            points.append(SensitivityPoint(n=n, shift=1.0 / n, report=report))

        usable = [(p.n, p.report.lhs) for p in points if p.report.lhs > 0]
        rate = None
        if len(usable) >= 2:
            n_values, lhs = np.array(usable).T
            slope = np.polyfit(np.log(n_values), 0.5 * np.log(lhs), 1)[0]
            rate = float(-slope)
        return SensitivityReport(points=points, decay_rate=rate)


drbsde_service = DrbsdeService()
