"""Centralized selection: pre-processing, local phase, global phase, expansion.

Every random draw derives from the configured seed through
:func:`~qassa.clustering.derive_seed` with a fixed key per purpose, so the
distributed simulator reproduces the centralized draws exactly.
"""

import logging
import time
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

from .aggregation import AggregationApproach
from .clustering import DEFAULT_G_RANGE, cluster_count, derive_seed
from .dependency_prep import ExpansionTable, expand_fictive, preprocess
from .errors import ValidationError
from .global_selection import (
    DEFAULT_ARCHIVE_SIZE,
    CompositionSolution,
    SolutionArchive,
    crs_select,
    multi_start,
    rank,
)
from .local_selection import DEFAULT_TOP_K, QoSClass, pool_from_classes, select_classes
from .model import Instance, ServiceCandidate, ValidatedInstance, validate_instance
from .workload import ConstraintMode, derive_constraints

logger = logging.getLogger(__name__)

LOCAL_KEY = 1
CRS_KEY = 2
CLUSTER_COUNT_KEY = 3


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs of one selection run.

    Attributes:
        approach: Aggregation approach for constraints and utility
        g_range: Range searched for each property's cluster count
        g: Fixed cluster count overriding the search
        top_k: QoS classes kept per activity
        archive_size: Capacity K of the solution archive
        seed: Seed every random draw derives from
        starts: Independent CRS runs merged into one archive
        constraint_mode: Derive constraints from candidate statistics instead
            of using the instance's own
    """

    approach: AggregationApproach = AggregationApproach.WORST
    g_range: tuple[int, int] = DEFAULT_G_RANGE
    g: int | None = None
    top_k: int = DEFAULT_TOP_K
    archive_size: int = DEFAULT_ARCHIVE_SIZE
    seed: int = 0
    starts: int = 1
    constraint_mode: ConstraintMode | None = None

    def __post_init__(self):
        g_lo, g_hi = self.g_range
        if not 2 <= g_lo <= g_hi:
            raise ValueError(f"Invalid cluster-count range {self.g_range}")
        if self.g is not None and self.g < 1:
            raise ValueError(f"Cluster count must be at least 1, got {self.g}")
        if self.top_k < 1 or self.archive_size < 1 or self.starts < 1:
            raise ValueError("top_k, archive_size and starts must be at least 1")
        if self.seed < 0:
            raise ValueError(f"Seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class PreparedInstance:
    """A validated, dependency-reduced instance with its cluster counts."""

    original: ValidatedInstance
    instance: ValidatedInstance
    expansion: ExpansionTable
    cluster_counts: Mapping[str, tuple[int, ...]]

    @property
    def warnings(self) -> tuple[str, ...]:
        return self.instance.warnings


@dataclass(frozen=True)
class LocalResult:
    classes: Mapping[str, list[QoSClass]]
    pools: Mapping[str, tuple[ServiceCandidate, ...]]

    @property
    def pool_size(self) -> int:
        return sum(len(p) for p in self.pools.values())


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of :func:`select`.

    `archive` ranks compositions over the reduced instance; `ranked` holds the
    same compositions expanded onto the original activities. Timings are
    nanoseconds.
    """

    prepared: PreparedInstance
    local: LocalResult
    archive: SolutionArchive
    ranked: list[CompositionSolution]
    timings: dict[str, int] = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return bool(self.ranked)

    def to_dict(self) -> dict[str, Any]:
        names = self.prepared.instance.properties.names
        return {
            "status": "feasible" if self.feasible else "infeasible",
            "timings_ns": dict(self.timings),
            "pool_sizes": {a: len(p) for a, p in self.local.pools.items()},
            "warnings": list(self.prepared.warnings),
            "solutions": [
                {
                    "rank": position + 1,
                    "utility": solution.utility,
                    "qos": dict(zip(names, solution.qos.values, strict=True)),
                    "binding": solution.service_ids(),
                }
                for position, solution in enumerate(self.ranked)
            ],
        }


def activity_seed(config: SelectionConfig, index: int) -> int:
    """Seed of the local selection for the activity at `index` in graph order."""
    return derive_seed(config.seed, LOCAL_KEY, index)


def crs_seeds(config: SelectionConfig) -> list[int]:
    return [derive_seed(config.seed, CRS_KEY, start) for start in range(config.starts)]


def prepare(instance: Instance, config: SelectionConfig) -> PreparedInstance:
    """Validate, pre-process dependencies and choose cluster counts."""
    if config.constraint_mode is not None:
        base = validate_instance(instance)
        constraints = derive_constraints(base, config.constraint_mode, config.approach)
        instance = instance.with_constraints(constraints)
    validated = validate_instance(instance)
    if validated.request.constraints is None:
        raise ValidationError(
            "The instance has no global QoS constraints; choose a constraint mode"
        )
    reduced = preprocess(validated)
    properties = reduced.instance.properties
    counts = {}
    for index, activity in enumerate(reduced.instance.task.activities):
        services = reduced.instance.candidates[activity]
        if config.g is not None:
            counts[activity] = tuple(config.g for _ in properties)
            continue
        counts[activity] = tuple(
            cluster_count(
                [(s.id, s.qos.values[prop.id]) for s in services],
                config.g_range,
                derive_seed(config.seed, CLUSTER_COUNT_KEY, index, prop.id),
            )
            for prop in properties
        )
    return PreparedInstance(validated, reduced.instance, reduced.expansion, counts)


def local_for_activity(
    prepared: PreparedInstance, config: SelectionConfig, index: int
) -> list[QoSClass]:
    """Local selection of one activity, identified by its graph-order index."""
    instance = prepared.instance
    activity = instance.task.activities[index]
    return select_classes(
        activity,
        instance.candidates[activity],
        instance.weights,
        prepared.cluster_counts[activity],
        activity_seed(config, index),
        instance.properties,
        config.top_k,
    )


def pools_from(
    prepared: PreparedInstance, classes: Mapping[str, list[QoSClass]]
) -> dict[str, tuple[ServiceCandidate, ...]]:
    candidates = prepared.instance.candidates
    return {
        activity: pool_from_classes(candidates[activity], classes[activity])
        for activity in prepared.instance.task.activities
    }


def run_local(prepared: PreparedInstance, config: SelectionConfig) -> LocalResult:
    """Local selection for every activity of the reduced instance."""
    activities = prepared.instance.task.activities
    classes = {
        activity: local_for_activity(prepared, config, index)
        for index, activity in enumerate(activities)
    }
    return LocalResult(classes, pools_from(prepared, classes))


def run_global(
    prepared: PreparedInstance,
    pools: Mapping[str, tuple[ServiceCandidate, ...]],
    config: SelectionConfig,
) -> SolutionArchive:
    """Controlled random search over the pools; several starts are merged."""
    seeds = crs_seeds(config)
    if len(seeds) == 1:
        return crs_select(
            prepared.instance, pools, config.approach, seeds[0], config.archive_size
        )
    return multi_start(
        prepared.instance, pools, config.approach, seeds, config.archive_size
    )


def expand_archive(
    prepared: PreparedInstance, archive: SolutionArchive
) -> list[CompositionSolution]:
    return [expand_fictive(s, prepared.expansion) for s in rank(archive)]


def select(instance: Instance, config: SelectionConfig) -> SelectionResult:
    """Run the whole selection and time each phase."""
    start = time.perf_counter_ns()
    prepared = prepare(instance, config)
    prepared_at = time.perf_counter_ns()
    local = run_local(prepared, config)
    local_at = time.perf_counter_ns()
    archive = run_global(prepared, local.pools, config)
    global_at = time.perf_counter_ns()
    ranked = expand_archive(prepared, archive)
    end = time.perf_counter_ns()
    timings = {
        "prepare": prepared_at - start,
        "local": local_at - prepared_at,
        "global": global_at - local_at,
        "expand": end - global_at,
        "total": end - start,
    }
    logger.info(
        f"Selected {len(archive)} compositions from {local.pool_size} pooled "
        f"services in {timings['total'] / 1e6:.2f} ms"
    )
    return SelectionResult(prepared, local, archive, ranked, timings)
