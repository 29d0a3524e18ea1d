"""Pytest configuration and shared builders for qassa tests."""

import random

import pytest

from qassa.model import (
    ActivityNode,
    Instance,
    LoopNode,
    ParallelNode,
    PropertySet,
    QoSVector,
    SequenceNode,
    ServiceCandidate,
    TaskGraph,
    UserRequest,
)
from qassa.workload import PROPERTIES_DESCRIPTOR, bundled_file


def pytest_addoption(parser):
    """Add command line options for testing."""
    parser.addoption(
        "--slow",
        action="store_true",
        default=False,
        help="Run acceptance-scale sweeps",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--slow"):
        return
    skip = pytest.mark.skip(reason="needs --slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def runs(request, fast: int, slow: int) -> int:
    """Repetition count: reduced by default, full scale with --slow."""
    return slow if request.config.getoption("--slow") else fast


@pytest.fixture
def two_props() -> PropertySet:
    """Response time (time, lower is better) and availability (product)."""
    return PropertySet.from_descriptor(
        [
            {"name": "response_time", "direction": "negative", "category": "time"},
            {
                "name": "availability",
                "direction": "positive",
                "category": "multiplicative",
            },
        ]
    )


@pytest.fixture
def four_props() -> PropertySet:
    return PropertySet.from_descriptor(
        [
            {"name": "response_time", "direction": "negative", "category": "time"},
            {"name": "price", "direction": "negative", "category": "cost"},
            {
                "name": "availability",
                "direction": "positive",
                "category": "multiplicative",
            },
            {"name": "throughput", "direction": "positive", "category": "bottleneck"},
        ]
    )


@pytest.fixture
def qws_props() -> PropertySet:
    return PropertySet.load(bundled_file(PROPERTIES_DESCRIPTOR))


def candidate(service: str, *values: float) -> ServiceCandidate:
    return ServiceCandidate(service, QoSVector.of(*values))


def make_instance(
    properties: PropertySet,
    task: TaskGraph,
    candidates: dict[str, list[ServiceCandidate]],
    constraints: tuple[float, ...] | None,
    weights: tuple[float, ...] | None = None,
    dependencies=(),
) -> Instance:
    n = len(properties)
    if weights is None:
        weights = tuple(1.0 / n for _ in range(n))
    request = UserRequest(task=task, weights=weights, constraints=constraints)
    return Instance(
        properties,
        request,
        {a: tuple(c) for a, c in candidates.items()},
        tuple(dependencies),
    )


def random_value(rng: random.Random, category: str) -> float:
    if category == "multiplicative":
        return round(rng.uniform(0.8, 1.0), 4)
    if category == "bottleneck":
        return float(rng.randint(1, 50))
    return float(rng.randint(10, 500))


def random_tree(rng: random.Random, activities: list[str], depth: int = 0):
    """A pattern tree built without the library generator."""
    if len(activities) == 1:
        leaf = ActivityNode(activities[0])
        if depth < 2 and rng.random() < 0.2:
            lo = rng.randint(1, 2)
            hi = lo + rng.randint(0, 2)
            return LoopNode(leaf, lo, (lo + hi) / 2, hi)
        return leaf
    cut = rng.randint(1, len(activities) - 1)
    kind = SequenceNode if rng.random() < 0.5 else ParallelNode
    return kind(
        (
            random_tree(rng, activities[:cut], depth + 1),
            random_tree(rng, activities[cut:], depth + 1),
        )
    )


def random_instance(
    seed: int,
    properties: PropertySet,
    activities: int,
    services: int,
    constraints: tuple[float, ...] | None = None,
) -> Instance:
    """Random instance; the default constraints are loose per-activity bounds
    scaled by the activity count, so most instances are satisfiable."""
    rng = random.Random(seed)
    ids = [f"A{i + 1}" for i in range(activities)]
    task = TaskGraph(random_tree(rng, ids))
    candidates = {
        a: [
            candidate(
                f"{a}-s{j + 1}",
                *(random_value(rng, p.category.value) for p in properties),
            )
            for j in range(services)
        ]
        for a in ids
    }
    if constraints is None:
        bounds = []
        for prop in properties:
            if prop.category.value == "multiplicative":
                bounds.append(0.3**activities)
            elif prop.category.value == "bottleneck":
                bounds.append(1.0)
            else:
                bounds.append(400.0 * activities * 3)
        constraints = tuple(bounds)
    return make_instance(properties, task, candidates, constraints)
