"""Shared fixtures and the ``--runslow`` option."""

import numpy as np
import pytest
from hirex.kg import KnowledgeGraph
from hirex.params import ParameterStore


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def star_graph_triplets(relation: str, count: int, *, offset: int = 0):
    """*count* triplets of *relation*, each from a distinct head to a distinct tail."""
    return [
        (f"h{offset + i}", relation, f"t{offset + i}") for i in range(count)
    ]


@pytest.fixture
def small_graph() -> KnowledgeGraph:
    """Background chain plus one few-shot relation per split."""
    background = [(f"e{i}", "next", f"e{i + 1}") for i in range(30)]
    background += [(f"e{i}", "skip", f"e{i + 2}") for i in range(0, 28, 2)]
    background += [(f"h{i}", "links", f"e{i}") for i in range(30)]
    background += [(f"t{i}", "links", f"e{i + 1}") for i in range(30)]
    tasks = dict(
        train={"likes": star_graph_triplets("likes", 12)},
        valid={"knows": star_graph_triplets("knows", 8, offset=12)},
        test={"owns": star_graph_triplets("owns", 8, offset=20)},
    )
    return KnowledgeGraph(background, tasks, seed=0)


@pytest.fixture
def tiny_params(small_graph) -> ParameterStore:
    """Freshly initialized parameters with d=8."""
    return ParameterStore.initialize(
        small_graph.num_entities, small_graph.num_relation_ids, 8, 0
    )


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for test data."""
    return np.random.default_rng(1234)
