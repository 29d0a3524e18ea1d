"""End-to-end QoS aggregation over a task graph, utility and feasibility.

The operator table (per category, per pattern):

============== ======== ======== =================
category       sequence parallel loop (L iterations)
============== ======== ======== =================
time           sum      max      L * v
cost           sum      sum      L * v
multiplicative product  product  v ** L
bottleneck     min      min      v
============== ======== ======== =================

The aggregation approach only changes the loop iteration count L: max_iter for
the worst case, min_iter for the best case and mean_iter for the mean value.

Children are always folded left to right, in the scalar and in the batch
(numpy) paths alike, so both produce bit-identical results for sum, product,
min and max.
"""

import logging
import operator
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from enum import Enum
from functools import reduce

import numpy as np
import numpy.typing as npt

from .errors import UnboundActivity
from .model import (
    ActivityNode,
    Category,
    Direction,
    LinkPattern,
    LoopNode,
    ParallelNode,
    PatternNode,
    PropertySet,
    QoSVector,
    SequenceNode,
    ServiceCandidate,
    TaskGraph,
)

logger = logging.getLogger(__name__)


class AggregationApproach(Enum):
    """How loop iteration counts are resolved during aggregation."""

    WORST = "worst"
    BEST = "best"
    MEAN = "mean"


ScalarOp = Callable[[float, float], float]

SEQUENCE_OPS: dict[Category, ScalarOp] = {
    Category.TIME: operator.add,
    Category.COST: operator.add,
    Category.MULTIPLICATIVE: operator.mul,
    Category.BOTTLENECK: min,
}

PARALLEL_OPS: dict[Category, ScalarOp] = {
    Category.TIME: max,
    Category.COST: operator.add,
    Category.MULTIPLICATIVE: operator.mul,
    Category.BOTTLENECK: min,
}

SEQUENCE_UFUNCS: dict[Category, np.ufunc] = {
    Category.TIME: np.add,
    Category.COST: np.add,
    Category.MULTIPLICATIVE: np.multiply,
    Category.BOTTLENECK: np.minimum,
}

PARALLEL_UFUNCS: dict[Category, np.ufunc] = {
    Category.TIME: np.maximum,
    Category.COST: np.add,
    Category.MULTIPLICATIVE: np.multiply,
    Category.BOTTLENECK: np.minimum,
}


def loop_iterations(node: LoopNode, approach: AggregationApproach) -> float:
    """Iteration count of a loop under an aggregation approach."""
    match approach:
        case AggregationApproach.WORST:
            return node.max_iter
        case AggregationApproach.BEST:
            return node.min_iter
        case AggregationApproach.MEAN:
            return node.mean_iter


def _repeat(category: Category, value: float, iterations: float) -> float:
    if category is Category.MULTIPLICATIVE:
        return value**iterations
    if category is Category.BOTTLENECK:
        return value
    return iterations * value


def _combine(
    ops: dict[Category, ScalarOp],
    categories: tuple[Category, ...],
    vectors: list[tuple[float, ...]],
) -> tuple[float, ...]:
    return tuple(
        reduce(ops[category], (v[j] for v in vectors))
        for j, category in enumerate(categories)
    )


def fold(
    node: PatternNode,
    lookup: Mapping[str, tuple[float, ...]],
    categories: tuple[Category, ...],
    approach: AggregationApproach,
) -> tuple[float, ...]:
    """Fold per-activity value tuples through a pattern tree.

    Raises:
        UnboundActivity: If an activity of the tree is missing from `lookup`
    """
    if isinstance(node, ActivityNode):
        try:
            return lookup[node.id]
        except KeyError:
            raise UnboundActivity(node.id) from None
    if isinstance(node, SequenceNode):
        children = [fold(c, lookup, categories, approach) for c in node.children]
        return _combine(SEQUENCE_OPS, categories, children)
    if isinstance(node, ParallelNode):
        children = [fold(c, lookup, categories, approach) for c in node.children]
        return _combine(PARALLEL_OPS, categories, children)
    iterations = loop_iterations(node, approach)
    inner = fold(node.child, lookup, categories, approach)
    return tuple(
        _repeat(category, value, iterations)
        for category, value in zip(categories, inner, strict=True)
    )


def categories_of(properties: PropertySet) -> tuple[Category, ...]:
    return tuple(p.category for p in properties)


def aggregate(
    task: TaskGraph,
    binding: Mapping[str, ServiceCandidate],
    properties: PropertySet,
    approach: AggregationApproach,
) -> QoSVector:
    """Aggregate the QoS of a binding (activity -> service) over the task graph.

    >>> from qassa.model import PropertySet
    >>> props = PropertySet.from_descriptor(
    ...     [{"name": "rt", "direction": "negative", "category": "time"}]
    ... )
    >>> task = TaskGraph.sequence("A", "B")
    >>> binding = {
    ...     "A": ServiceCandidate("a", QoSVector.of(10)),
    ...     "B": ServiceCandidate("b", QoSVector.of(20)),
    ... }
    >>> aggregate(task, binding, props, AggregationApproach.WORST).values
    (30.0,)

    Raises:
        UnboundActivity: If the binding does not cover every activity
    """
    lookup = {activity: service.qos.values for activity, service in binding.items()}
    return QoSVector(fold(task.root, lookup, categories_of(properties), approach))


def link_fold(
    vectors: list[tuple[float, ...]],
    properties: PropertySet,
    pattern: LinkPattern,
) -> tuple[float, ...]:
    """Fold QoS vectors of linked services under a sequence or parallel link."""
    ops = SEQUENCE_OPS if pattern is LinkPattern.SEQUENCE else PARALLEL_OPS
    return _combine(ops, categories_of(properties), vectors)


# =============================================================================
# Batch aggregation (oracle)
# =============================================================================


def fold_batch(
    node: PatternNode,
    lookup: Mapping[str, npt.NDArray[np.float64]],
    categories: tuple[Category, ...],
    approach: AggregationApproach,
) -> npt.NDArray[np.float64]:
    """Fold arrays of shape (bindings, properties) through a pattern tree."""
    if isinstance(node, ActivityNode):
        try:
            return lookup[node.id]
        except KeyError:
            raise UnboundActivity(node.id) from None
    if isinstance(node, SequenceNode | ParallelNode):
        ufuncs = SEQUENCE_UFUNCS if isinstance(node, SequenceNode) else PARALLEL_UFUNCS
        children = [fold_batch(c, lookup, categories, approach) for c in node.children]
        result = children[0].copy()
        for child in children[1:]:
            for j, category in enumerate(categories):
                result[:, j] = ufuncs[category](result[:, j], child[:, j])
        return result
    iterations = loop_iterations(node, approach)
    inner = fold_batch(node.child, lookup, categories, approach)
    result = inner.copy()
    for j, category in enumerate(categories):
        if category is Category.MULTIPLICATIVE:
            result[:, j] = np.power(inner[:, j], iterations)
        elif category is not Category.BOTTLENECK:
            result[:, j] = iterations * inner[:, j]
    return result


# =============================================================================
# Utility and feasibility
# =============================================================================


@dataclass(frozen=True)
class UtilityBounds:
    """Per-property aggregated extremes used to normalise utilities."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if any(lo > hi for lo, hi in zip(self.lower, self.upper, strict=True)):
            raise ValueError(f"Invalid bounds {self.lower} > {self.upper}")


def compute_bounds(
    task: TaskGraph,
    candidates: Mapping[str, tuple[ServiceCandidate, ...]],
    properties: PropertySet,
    approach: AggregationApproach,
) -> UtilityBounds:
    """Aggregate per-activity minimum and maximum values through the task.

    Every operator in the table is non-decreasing in each argument, so the
    fold of the minima (maxima) bounds every binding from below (above).
    """
    minima = {}
    maxima = {}
    for activity in task.activities:
        columns = list(zip(*(s.qos.values for s in candidates[activity]), strict=True))
        minima[activity] = tuple(min(column) for column in columns)
        maxima[activity] = tuple(max(column) for column in columns)
    categories = categories_of(properties)
    return UtilityBounds(
        lower=fold(task.root, minima, categories, approach),
        upper=fold(task.root, maxima, categories, approach),
    )


def utility(
    q: QoSVector | tuple[float, ...],
    weights: tuple[float, ...],
    bounds: UtilityBounds,
    properties: PropertySet,
) -> float:
    """Weighted sum of normalised property values, in [0, 1] with 1 best.

    A property whose bounds coincide normalises to 1.
    """
    values = q.values if isinstance(q, QoSVector) else q
    total = 0.0
    for j, prop in enumerate(properties):
        lo = bounds.lower[j]
        hi = bounds.upper[j]
        if hi == lo:
            norm = 1.0
        elif prop.direction is Direction.NEGATIVE:
            norm = (hi - values[j]) / (hi - lo)
        else:
            norm = (values[j] - lo) / (hi - lo)
        total += weights[j] * norm
    return min(1.0, max(0.0, total))


def utility_batch(
    q: npt.NDArray[np.float64],
    weights: tuple[float, ...],
    bounds: UtilityBounds,
    properties: PropertySet,
) -> npt.NDArray[np.float64]:
    """Vectorised :func:`utility` over rows of q, same operation order."""
    total = np.zeros(q.shape[0])
    for j, prop in enumerate(properties):
        lo = bounds.lower[j]
        hi = bounds.upper[j]
        if hi == lo:
            norm = np.ones(q.shape[0])
        elif prop.direction is Direction.NEGATIVE:
            norm = (hi - q[:, j]) / (hi - lo)
        else:
            norm = (q[:, j] - lo) / (hi - lo)
        total = total + weights[j] * norm
    return np.clip(total, 0.0, 1.0)


def violated(
    q: QoSVector | tuple[float, ...],
    constraints: tuple[float, ...],
    properties: PropertySet,
) -> tuple[str, ...]:
    """Names of the properties whose constraint q does not satisfy."""
    values = q.values if isinstance(q, QoSVector) else q
    names = []
    for prop, value, bound in zip(properties, values, constraints, strict=True):
        if prop.direction is Direction.NEGATIVE:
            ok = value <= bound
        else:
            ok = value >= bound
        if not ok:
            names.append(prop.name)
    return tuple(names)


def feasible(
    q: QoSVector | tuple[float, ...],
    constraints: tuple[float, ...],
    properties: PropertySet,
) -> bool:
    """True iff q is <= u for negative and >= u for positive properties."""
    return not violated(q, constraints, properties)


def feasible_batch(
    q: npt.NDArray[np.float64],
    constraints: tuple[float, ...],
    properties: PropertySet,
) -> npt.NDArray[np.bool_]:
    ok = np.ones(q.shape[0], dtype=bool)
    for j, prop in enumerate(properties):
        if prop.direction is Direction.NEGATIVE:
            ok &= q[:, j] <= constraints[j]
        else:
            ok &= q[:, j] >= constraints[j]
    return ok
