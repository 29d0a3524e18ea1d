"""Exhaustive exact selection, the ground truth for optimality measurements.

Bindings are enumerated in mixed-radix order over the task's activities (the
last activity varies fastest, as :func:`itertools.product` does) in numpy
chunks. Among feasible bindings the first one with the highest utility wins.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .aggregation import (
    AggregationApproach,
    categories_of,
    compute_bounds,
    feasible_batch,
    fold_batch,
    utility_batch,
)
from .errors import BudgetExceeded, UndefinedOptimality
from .global_selection import CompositionSolution, evaluate
from .model import Instance

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 10**7
CHUNK_SIZE = 2**18


@dataclass(frozen=True)
class OracleResult:
    """Outcome of exhaustive enumeration.

    Attributes:
        best: Highest-utility feasible binding, or None if none is feasible
        f_opt: Utility of `best`, or None
        evaluated: Number of bindings enumerated (product of candidate counts)
        feasible_count: Number of feasible bindings
    """

    best: CompositionSolution | None
    f_opt: float | None
    evaluated: int
    feasible_count: int


def exhaustive_optimal(
    instance: Instance,
    approach: AggregationApproach,
    budget: int = DEFAULT_BUDGET,
    chunk_size: int = CHUNK_SIZE,
) -> OracleResult:
    """Enumerate every binding and return the best feasible one.

    Raises:
        BudgetExceeded: If the number of bindings exceeds `budget`
    """
    activities = instance.task.activities
    radices = [len(instance.candidates[a]) for a in activities]
    space = math.prod(radices)
    if space > budget:
        raise BudgetExceeded(f"{space} bindings exceed the oracle budget of {budget}")

    properties = instance.properties
    categories = categories_of(properties)
    constraints = instance.constraints
    bounds = compute_bounds(instance.task, instance.candidates, properties, approach)
    tables = {
        a: np.asarray([c.qos.values for c in instance.candidates[a]], dtype=np.float64)
        for a in activities
    }

    # last activity varies fastest
    digits = list(zip(reversed(activities), reversed(radices), strict=True))
    best_index: int | None = None
    best_utility = -math.inf
    feasible_count = 0
    for start in range(0, space, chunk_size):
        indexes = np.arange(start, min(start + chunk_size, space), dtype=np.int64)
        remainder = indexes.copy()
        lookup = {}
        for activity, radix in digits:
            lookup[activity] = tables[activity][remainder % radix]
            remainder //= radix
        q = fold_batch(instance.task.root, lookup, categories, approach)
        ok = feasible_batch(q, constraints, properties)
        count = int(ok.sum())
        if count == 0:
            continue
        feasible_count += count
        scores = utility_batch(q, instance.weights, bounds, properties)
        utilities = np.where(ok, scores, -np.inf)
        position = int(np.argmax(utilities))
        if utilities[position] > best_utility:
            best_utility = float(utilities[position])
            best_index = int(indexes[position])

    if best_index is None:
        logger.info(f"Oracle: none of {space} bindings is feasible")
        return OracleResult(None, None, space, 0)

    binding = {}
    remainder = best_index
    for activity, radix in digits:
        binding[activity] = instance.candidates[activity][remainder % radix]
        remainder //= radix
    ordered = {a: binding[a] for a in activities}
    best = evaluate(instance, ordered, approach, bounds)
    logger.info(
        f"Oracle: {feasible_count}/{space} feasible bindings, F_opt={best.utility}"
    )
    return OracleResult(best, best.utility, space, feasible_count)


def optimality(f: float, f_opt: float | None) -> float:
    """Ratio of a heuristic utility to the optimal utility.

    >>> optimality(0.45, 0.5)
    0.9

    Raises:
        UndefinedOptimality: If f_opt is None or not positive
    """
    if f_opt is None or f_opt <= 0:
        raise UndefinedOptimality(f"Optimality is undefined for F_opt={f_opt}")
    return f / f_opt
