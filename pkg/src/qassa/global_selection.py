"""Global selection by controlled random search over the local candidate pools.

A working composition is built by drawing one service per activity, then
improved by replacing a single service at a time. Every feasible composition
met on the way is kept in a bounded archive of ranked alternatives.
"""

import bisect
import logging
import random
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field

from .aggregation import (
    AggregationApproach,
    UtilityBounds,
    aggregate,
    compute_bounds,
    feasible,
    utility,
)
from .model import Instance, QoSVector, ServiceCandidate

logger = logging.getLogger(__name__)

DEFAULT_ARCHIVE_SIZE = 10

BindingKey = tuple[tuple[str, str], ...]


@dataclass(frozen=True, eq=False)
class CompositionSolution:
    """One concrete service per activity, with its aggregated QoS and utility."""

    binding: Mapping[str, ServiceCandidate]
    qos: QoSVector
    utility: float

    @property
    def key(self) -> BindingKey:
        """(activity, service id) pairs sorted by activity; identifies the binding."""
        return tuple(sorted((a, s.id) for a, s in self.binding.items()))

    def service_ids(self) -> dict[str, str]:
        return {activity: service.id for activity, service in self.binding.items()}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CompositionSolution):
            return NotImplemented
        return (
            self.key == other.key
            and self.qos == other.qos
            and self.utility == other.utility
        )

    def __hash__(self) -> int:
        return hash(self.key)


def _order(solution: CompositionSolution) -> tuple[float, BindingKey]:
    return (-solution.utility, solution.key)


def rank(solutions: Iterable[CompositionSolution]) -> list[CompositionSolution]:
    """Sort by descending utility, ties by binding key.

    >>> rank([])
    []
    """
    return sorted(solutions, key=_order)


class SolutionArchive:
    """Bounded, ranked set of distinct feasible compositions."""

    def __init__(self, capacity: int = DEFAULT_ARCHIVE_SIZE):
        if capacity < 1:
            raise ValueError(f"Archive capacity must be at least 1, got {capacity}")
        self.capacity = capacity
        self._solutions: list[CompositionSolution] = []
        self._keys: set[BindingKey] = set()

    def __len__(self) -> int:
        return len(self._solutions)

    def __iter__(self) -> Iterator[CompositionSolution]:
        return iter(self._solutions)

    def __getitem__(self, index: int) -> CompositionSolution:
        return self._solutions[index]

    def __repr__(self) -> str:
        return f"SolutionArchive(capacity={self.capacity}, size={len(self)})"

    @property
    def solutions(self) -> tuple[CompositionSolution, ...]:
        return tuple(self._solutions)

    @property
    def best(self) -> CompositionSolution | None:
        return self._solutions[0] if self._solutions else None

    def add(self, solution: CompositionSolution) -> bool:
        """Insert a solution; return True if it is in the archive afterwards."""
        key = solution.key
        if key in self._keys:
            return False
        bisect.insort(self._solutions, solution, key=_order)
        self._keys.add(key)
        if len(self._solutions) > self.capacity:
            evicted = self._solutions.pop()
            self._keys.discard(evicted.key)
            return evicted is not solution
        return True

    def merge(self, other: Iterable[CompositionSolution]) -> None:
        for solution in other:
            self.add(solution)


@dataclass
class CRSStats:
    """Counters of one controlled random search run."""

    iterations: int = 0
    visited: int = 0
    accepted: int = 0
    trace: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class CRSResult:
    archive: SolutionArchive
    stats: CRSStats
    working: CompositionSolution


def evaluate(
    instance: Instance,
    binding: Mapping[str, ServiceCandidate],
    approach: AggregationApproach,
    bounds: UtilityBounds,
) -> CompositionSolution:
    """Aggregate a binding and score it."""
    qos = aggregate(instance.task, binding, instance.properties, approach)
    return CompositionSolution(
        dict(binding),
        qos,
        utility(qos, instance.weights, bounds, instance.properties),
    )


def crs_search(
    instance: Instance,
    pools: Mapping[str, Sequence[ServiceCandidate]],
    approach: AggregationApproach,
    seed: int,
    capacity: int = DEFAULT_ARCHIVE_SIZE,
    bounds: UtilityBounds | None = None,
) -> CRSResult:
    """Controlled random search with exactly T - Z + 1 mutation iterations.

    T is the total pool size and Z the number of activities. The initial
    binding is drawn separately. A mutation replaces the service of one
    activity (drawn among activities with more than one pooled service) by
    another pooled service; it becomes the working composition only if it is
    feasible and strictly improves the utility.
    """
    activities = instance.task.activities
    for activity in activities:
        if not pools.get(activity):
            raise ValueError(f"Empty local pool for activity {activity!r}")
    if bounds is None:
        bounds = compute_bounds(
            instance.task, instance.candidates, instance.properties, approach
        )
    constraints = instance.constraints
    rng = random.Random(seed)
    archive = SolutionArchive(capacity)
    stats = CRSStats()

    binding = {a: rng.choice(pools[a]) for a in activities}
    working = evaluate(instance, binding, approach, bounds)
    if feasible(working.qos, constraints, instance.properties):
        archive.add(working)
    stats.visited += 1

    mutable = [a for a in activities if len(pools[a]) > 1]
    total = sum(len(pools[a]) for a in activities)
    budget = total - len(activities) + 1
    for _ in range(budget):
        stats.iterations += 1
        if mutable:
            activity = rng.choice(mutable)
            current = working.binding[activity].id
            alternatives = [s for s in pools[activity] if s.id != current]
            mutated = dict(working.binding)
            mutated[activity] = rng.choice(alternatives)
            candidate = evaluate(instance, mutated, approach, bounds)
            stats.visited += 1
            if feasible(candidate.qos, constraints, instance.properties):
                archive.add(candidate)
                if candidate.utility > working.utility:
                    working = candidate
                    stats.accepted += 1
        stats.trace.append(working.utility)

    logger.debug(
        f"CRS seed={seed}: {stats.iterations} iterations, {stats.visited} visited, "
        f"{stats.accepted} accepted, archive size {len(archive)}"
    )
    return CRSResult(archive, stats, working)


def crs_select(
    instance: Instance,
    pools: Mapping[str, Sequence[ServiceCandidate]],
    approach: AggregationApproach,
    seed: int,
    capacity: int = DEFAULT_ARCHIVE_SIZE,
    bounds: UtilityBounds | None = None,
) -> SolutionArchive:
    """Run controlled random search and return its archive."""
    return crs_search(instance, pools, approach, seed, capacity, bounds).archive


def multi_start(
    instance: Instance,
    pools: Mapping[str, Sequence[ServiceCandidate]],
    approach: AggregationApproach,
    seeds: Sequence[int],
    capacity: int = DEFAULT_ARCHIVE_SIZE,
) -> SolutionArchive:
    """Merge the archives of independent seeded runs into one of capacity K."""
    bounds = compute_bounds(
        instance.task, instance.candidates, instance.properties, approach
    )
    merged = SolutionArchive(capacity)
    for seed in seeds:
        merged.merge(crs_select(instance, pools, approach, seed, capacity, bounds))
    return merged
