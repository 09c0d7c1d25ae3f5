"""
Generator Service for martnorm
Builds the constructed examples (zig-zag processes, equal barriers, the
G-submartingale zig-zag, a volatility-uncertainty family) and seeded random
instances. Every output is a deterministic function of its inputs.
"""

import hashlib
import logging
from typing import Dict, List, Tuple

import numpy as np

from app.core.config import Settings, settings
from app.core.exceptions import NoAdmissibleProcessError
from app.models.family import MeasureFamily
from app.models.filtration import AdaptedProcess, FiltrationModel, StoppingTime
from app.schemas.generators import GeneratorSpec
from app.schemas.model import ModelDocument
from app.services.model_io import dump_document, measure_overrides, model_document

logger = logging.getLogger(__name__)

ADMISSIBLE_TOL = 1e-12


class GeneratorService:
    """Service for constructed examples and seeded random instances"""

    def __init__(self, config: Settings = settings):
        self.config = config

    # Zig-zag construction ---------------------------------------------------

    def check_admissible(self, model: FiltrationModel, K: AdaptedProcess) -> None:
        """K_0 = 0, nondecreasing, and no step passes strictly over an integer"""
        values = model.check_process(K)
        if abs(values[0]) > ADMISSIBLE_TOL:
            raise NoAdmissibleProcessError(f"K starts at {values[0]:g}, expected 0")
        start, end = values[model.parent[1:]], values[1:]
        drops = np.flatnonzero(end < start - ADMISSIBLE_TOL)
        if drops.size:
            raise NoAdmissibleProcessError(f"K decreases into node {model.ids[drops[0] + 1]}")
        crossing = np.floor(end - ADMISSIBLE_TOL) > np.floor(start + ADMISSIBLE_TOL)
        crossing &= np.ceil(start + ADMISSIBLE_TOL) < end - ADMISSIBLE_TOL
        if np.any(crossing):
            node = model.ids[np.flatnonzero(crossing)[0] + 1]
            raise NoAdmissibleProcessError(f"K steps over an integer threshold into node {node}")

    def threshold_times(self, model: FiltrationModel, K: AdaptedProcess) -> List[StoppingTime]:
        """tau_0 = 0 and tau_n = first time K reaches n, capped at the horizon"""
        values = model.check_process(K)
        top = int(np.ceil(values.max() - ADMISSIBLE_TOL))
        times = [StoppingTime.initial(model)]
        for n in range(1, top + 1):
            times.append(StoppingTime.first_hitting(model, values >= n - ADMISSIBLE_TOL, strict=False))
        return times

    def zigzag_example(self, model: FiltrationModel, K: AdaptedProcess) -> AdaptedProcess:
        """
        Y_0 = 0; Y follows -K between tau_2n and tau_2n+1 and +K between
        tau_2n+1 and tau_2n+2.
        """
        self.check_admissible(model, K)
        values = K.values
        # thresholds already reached at each node
        reached = np.zeros(model.node_count, dtype=int)
        for tau in self.threshold_times(model, K)[1:]:
            reached += tau.stop_node >= 0
        Y = np.zeros(model.node_count)
        for level in range(1, model.horizon + 1):
            nodes = model.levels[level]
            par = model.parent[nodes]
            step = values[nodes] - values[par]
            sign = np.where(reached[par] % 2 == 0, -1.0, 1.0)
            Y[nodes] = Y[par] + sign * step
        return AdaptedProcess(Y, "Y")

    def equal_barriers_counterexample(self, depth: int) -> Tuple[FiltrationModel, AdaptedProcess, AdaptedProcess]:
        """Deterministic L = U alternating 0, 1, 0, ... so that its variation equals the depth"""
        if depth < 1:
            raise ValueError("depth must be at least 1")
        model = FiltrationModel.chain(depth)
        S = AdaptedProcess.from_levels(model, [k % 2 for k in range(depth + 1)], "S")
        return model, S.renamed("L"), S.renamed("U")

    def g_zigzag_increments(self, model: FiltrationModel, family: MeasureFamily, delta: float) -> AdaptedProcess:
        """
        Nondecreasing K whose negative is a G-martingale: at every node K steps
        by ``delta`` exactly on the children some choice leaves without mass.
        """
        if family.kind != "rectangular":
            raise NoAdmissibleProcessError("g_zigzag needs a rectangular family")
        steps = np.zeros(model.node_count)
        for v in family.internal_nodes():
            rows = family.choices[v]
            zeros = rows <= 0.0
            pick = int(np.argmax(zeros.sum(axis=1)))
            kids = np.array(model.children[v])
            steps[kids[zeros[pick]]] = delta
        if not steps.any():
            raise NoAdmissibleProcessError(
                "no choice set leaves a child without mass; -K can only be a G-martingale for K = 0"
            )
        K = np.zeros(model.node_count)
        for level in range(1, model.horizon + 1):
            nodes = model.levels[level]
            K[nodes] = K[model.parent[nodes]] + steps[nodes]
        return AdaptedProcess(K, "K")

    def g_zigzag_example(self, model: FiltrationModel, family: MeasureFamily,
                         delta: float = 0.5) -> Tuple[AdaptedProcess, AdaptedProcess]:
        """(K, Y): the zig-zag built on a K with -K a G-martingale under ``family``"""
        K = self.g_zigzag_increments(model, family, delta)
        return K, self.zigzag_example(model, K)

    # Random instances -----------------------------------------------------------

    def _random_tree(self, rng: np.random.Generator, depth: int, branching: int) -> FiltrationModel:
        shape = FiltrationModel.uniform_tree(depth, branching)
        probs = np.ones(shape.node_count)
        for v in np.flatnonzero(~shape.is_leaf):
            kids = list(shape.children[v])
            draw = rng.uniform(0.2, 1.0, len(kids))
            probs[kids] = draw / draw.sum()
        return FiltrationModel.from_parents(shape.parent, probs, depth, shape.ids)

    def _semimartingale(self, rng: np.random.Generator, model: FiltrationModel, spec: GeneratorSpec) -> np.ndarray:
        s = spec.value_scale
        Y = np.zeros(model.node_count)
        Y[0] = rng.uniform(-s, s)
        if not spec.monotone and spec.stride == 1:
            for level in range(1, model.horizon + 1):
                nodes = model.levels[level]
                Y[nodes] = Y[model.parent[nodes]] + rng.uniform(-s, s, len(nodes))
            return Y

        # martingale part with centred increments plus a predictable part
        # decided ``stride`` levels before it is paid
        noise = rng.uniform(-s, s, model.node_count)
        drift = rng.uniform(0.0 if spec.monotone else -s, s, model.node_count)
        for level in range(1, model.horizon + 1):
            nodes = model.levels[level]
            par = model.parent[nodes]
            centred = noise[nodes] - model.one_step_mean(noise, model.ref_prob)[par]
            decided_at = model.ancestors[par, np.maximum(level - spec.stride, 0)]
            Y[nodes] = Y[par] + centred + drift[decided_at]
        return Y

    def _alternative_choices(self, rng: np.random.Generator, model: FiltrationModel) -> Dict[str, List[List[float]]]:
        choices = {}
        for v in np.flatnonzero(~model.is_leaf):
            kids = list(model.children[v])
            draw = rng.uniform(0.2, 1.0, len(kids))
            choices[model.ids[v]] = [model.ref_prob[kids].tolist(), (draw / draw.sum()).tolist()]
        return choices

    def random_instance(self, spec: GeneratorSpec) -> ModelDocument:
        rng = np.random.default_rng(spec.seed)
        builder = getattr(self, f"_build_{spec.kind}")
        doc = builder(rng, spec)
        logger.debug(f"generated {spec.kind} seed={spec.seed} depth={spec.depth}: {len(doc.nodes)} nodes")
        return doc

    def _build_random_semimartingale(self, rng, spec: GeneratorSpec) -> ModelDocument:
        model = self._random_tree(rng, spec.depth, spec.branching)
        Y = AdaptedProcess(self._semimartingale(rng, model, spec), "Y")
        Y2 = AdaptedProcess(self._semimartingale(rng, model, spec), "Y2")
        choices = self._alternative_choices(rng, model)
        family = MeasureFamily.rectangular(model, {model.index[k]: rows for k, rows in choices.items()})
        Q = family.selection_measure({v: 1 for v in family.internal_nodes()}, "Q")
        return model_document(
            model, {"Y": Y, "Y2": Y2},
            measures={"Q": measure_overrides(model, Q)},
            family={"kind": "rectangular", "choices": choices},
        )

    def _build_random_barriers(self, rng, spec: GeneratorSpec) -> ModelDocument:
        model = self._random_tree(rng, spec.depth, spec.branching)
        s = spec.value_scale
        S = self._semimartingale(rng, model, spec)
        paths = model.ancestors
        lower = np.empty(model.node_count)
        upper = np.empty(model.node_count)
        for v in range(model.node_count):
            history = S[paths[v, : model.time[v] + 1]]
            lower[v] = history.min()
            upper[v] = history.max()
        lower -= rng.uniform(0.0, s, model.node_count)
        upper += rng.uniform(0.0, s, model.node_count)
        xi = np.where(model.is_leaf, S, 0.0)
        c = rng.uniform(-0.1 * s, 0.1 * s, model.node_count)
        a, b = rng.uniform(-0.5, 0.5, 2)
        processes = {
            "S": AdaptedProcess(S), "L": AdaptedProcess(lower), "U": AdaptedProcess(upper),
            "xi": AdaptedProcess(xi),
        }
        driver = {"kind": "linear", "a": float(a), "b": float(b), "c": dict(zip(model.ids, c.tolist()))}
        return model_document(
            model, processes,
            instances={"main": {"terminal": "xi", "lower": "L", "upper": "U",
                                "driver": driver, "dt": 1.0 / spec.depth}},
        )

    def _build_zigzag(self, rng, spec: GeneratorSpec) -> ModelDocument:
        model = self._random_tree(rng, spec.depth, spec.branching)
        steps = rng.choice([0.0, 0.5, 1.0], model.node_count)
        K = np.zeros(model.node_count)
        for level in range(1, model.horizon + 1):
            nodes = model.levels[level]
            start = K[model.parent[nodes]]
            # a unit step from a half-integer would pass over a threshold
            step = np.where((steps[nodes] == 1.0) & (start % 1.0 != 0.0), 0.5, steps[nodes])
            K[nodes] = start + step
        K = AdaptedProcess(K, "K")
        return model_document(model, {"K": K, "Y": self.zigzag_example(model, K)})

    def _build_equal_barriers(self, rng, spec: GeneratorSpec) -> ModelDocument:
        model, L, U = self.equal_barriers_counterexample(spec.depth)
        xi = AdaptedProcess(np.where(model.is_leaf, L.values, 0.0))
        return model_document(
            model, {"L": L, "U": U, "xi": xi},
            instances={"main": {"terminal": "xi", "lower": "L", "upper": "U"}},
        )

    def _build_g_zigzag(self, rng, spec: GeneratorSpec) -> ModelDocument:
        model = FiltrationModel.binomial(spec.depth)
        theta = float(rng.uniform(0.2, 0.8))
        rows = [[1.0, 0.0], [1.0 - theta, theta]]
        family = MeasureFamily.uniform_choices(model, rows)
        K, Y = self.g_zigzag_example(model, family)
        return model_document(
            model, {"K": K, "Y": Y},
            family={"kind": "rectangular", "choices": {model.ids[v]: rows for v in family.internal_nodes()}},
        )

    def _build_volatility_family(self, rng, spec: GeneratorSpec) -> ModelDocument:
        """Four children per node: a low-volatility pair and a high-volatility pair"""
        model = FiltrationModel.uniform_tree(spec.depth, 4)
        s = spec.value_scale
        scale = np.array([spec.sigma_low, -spec.sigma_low, spec.sigma_high, -spec.sigma_high]) * s
        X = np.zeros(model.node_count)
        for level in range(1, model.horizon + 1):
            nodes = model.levels[level]
            slot = np.array([int(model.ids[v].rsplit(".", 1)[1]) for v in nodes])
            X[nodes] = X[model.parent[nodes]] + scale[slot]
        strike = float(rng.uniform(-s, s))
        xi = np.where(model.is_leaf, np.maximum(X - strike, 0.0), 0.0)
        low, high = [0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]
        internal = [model.ids[v] for v in np.flatnonzero(~model.is_leaf)]
        family = MeasureFamily.uniform_choices(model, [low, high])
        return model_document(
            model,
            {"X": AdaptedProcess(X), "X2": AdaptedProcess(X ** 2), "xi": AdaptedProcess(xi)},
            measures={
                "low": measure_overrides(model, family.selection_measure({}, "low")),
                "high": measure_overrides(model, family.selection_measure(
                    {v: 1 for v in family.internal_nodes()}, "high")),
            },
            family={"kind": "rectangular", "choices": {node_id: [low, high] for node_id in internal}},
        )


def instance_fingerprint(doc: ModelDocument) -> str:
    """sha256 of the canonical JSON of a document"""
    return hashlib.sha256(dump_document(doc).encode("utf-8")).hexdigest()


generator_service = GeneratorService()
