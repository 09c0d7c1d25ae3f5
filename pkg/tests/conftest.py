"""
Shared fixtures and brute-force oracles.

The oracles walk root-to-leaf paths directly and never call the backward
recursions they are checked against.
"""
import numpy as np
import pytest

from app.models.filtration import AdaptedProcess, FiltrationModel, Measure
from app.schemas.model import ModelDocument


def path_oracle(model: FiltrationModel, measure: Measure, leaf_values, node: int) -> float:
    """E[leaf quantity | node] as a weighted sum over the leaves below ``node``"""
    paths = model.leaf_paths()
    level = model.time[node]
    below = paths[:, level] == node
    weights = np.array([np.prod(measure.prob[path[level + 1:]]) for path in paths[below]])
    return float(np.dot(weights, np.asarray(leaf_values, dtype=float)[below]))


def martingale_from_leaves(model: FiltrationModel, measure: Measure, leaf_values) -> AdaptedProcess:
    values = np.array([path_oracle(model, measure, leaf_values, v) for v in range(model.node_count)])
    return AdaptedProcess(values, "M")


def random_measure(model: FiltrationModel, rng: np.random.Generator) -> Measure:
    """Non-uniform kernel with Dirichlet child probabilities at every internal node"""
    prob = np.ones(model.node_count)
    for v in np.flatnonzero(~model.is_leaf):
        children = list(model.children[v])
        prob[children] = rng.dirichlet(np.ones(len(children)))
    return Measure(prob, "random")


def one_step(p_up: float = 0.5, p_down: float = 0.5, **extra) -> ModelDocument:
    return ModelDocument.model_validate({
        "horizon": 1,
        "nodes": [
            {"id": "r", "time": 0, "children": [{"id": "u", "prob": p_up}, {"id": "d", "prob": p_down}]},
            {"id": "u", "time": 1},
            {"id": "d", "time": 1},
        ],
        **extra,
    })


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)


@pytest.fixture
def one_step_doc():
    return one_step()


@pytest.fixture
def binomial3():
    return FiltrationModel.binomial(3, 0.3)


@pytest.fixture
def monotone_chain():
    """Deterministic chain of depth 5 with Y climbing 0, 1, ..., 5"""
    model = FiltrationModel.chain(5)
    return model, AdaptedProcess.from_levels(model, range(6), "Y")
