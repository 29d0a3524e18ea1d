"""Instance generation, QoS dataset ingestion and constraint derivation.

The generator builds a random pattern tree over ``a`` activities and binds
``k`` services to every activity, drawing their QoS vectors from a dataset
such as QWS. Global constraints are derived from per-activity statistics of
the candidates, aggregated through the task graph.
"""

import logging
import os
import re
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from importlib.resources import files
from pathlib import Path

import numpy as np
import pandas as pd

from .aggregation import AggregationApproach, categories_of, fold
from .errors import MalformedRow, SourceExhausted, UnmappedProperty
from .model import (
    ActivityNode,
    Category,
    Direction,
    Instance,
    LoopNode,
    ParallelNode,
    PatternNode,
    PropertySet,
    QoSVector,
    SequenceNode,
    ServiceCandidate,
    TaskGraph,
    UserRequest,
    ValidatedInstance,
    validate_request,
)

logger = logging.getLogger(__name__)

DATASET_ENV = "QASSA_DATASET"
SYNTHETIC_DATASET = "synthetic_qws.csv"
PROPERTIES_DESCRIPTOR = "properties.json"


class ConstraintMode(Enum):
    """Per-activity statistic aggregated into each global constraint."""

    MEAN = "mean"
    MEAN_SIGMA = "mean-sigma"


class PatternKind(Enum):
    SEQUENCE = 0
    PARALLEL = 1
    LOOP = 2


def bundled_file(name: str) -> Path:
    """Path of a data file shipped with the package."""
    return Path(str(files("qassa").joinpath("data", name)))


def default_dataset() -> Path | None:
    """Dataset path from the environment, if set."""
    value = os.environ.get(DATASET_ENV)
    return Path(value) if value else None


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the composition generator.

    Attributes:
        activities: Number of activities (a)
        services: Candidate services per activity (k)
        mix: Relative weights of sequence, parallel and loop patterns
        loop_bounds: (min, mean, max) iterations of generated loops
        max_depth: Maximum depth of the pattern tree
        seed: Random seed
        replacement: Whether QoS vectors may be drawn more than once
    """

    activities: int
    services: int
    mix: tuple[float, float, float] = (1.0, 1.0, 1.0)
    loop_bounds: tuple[int, float, int] = (1, 2.0, 3)
    max_depth: int = 3
    seed: int = 0
    replacement: bool = True

    def __post_init__(self):
        if self.activities < 1 or self.services < 1:
            raise ValueError("Need at least one activity and one service per activity")
        if any(w < 0 for w in self.mix) or sum(self.mix) <= 0:
            raise ValueError(f"Pattern mix {self.mix} must be non-negative, not all 0")
        lo, mean, hi = self.loop_bounds
        if not 1 <= lo <= mean <= hi:
            raise ValueError(f"Invalid loop bounds {self.loop_bounds}")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")


# =============================================================================
# Pattern trees
# =============================================================================


def _split(count: int, rng: np.random.Generator) -> list[int]:
    """Sizes of 2-4 contiguous non-empty groups covering `count` items."""
    groups = int(rng.integers(2, min(4, count) + 1))
    cuts = np.sort(rng.choice(np.arange(1, count), size=groups - 1, replace=False))
    edges = [0, *(int(c) for c in cuts), count]
    return [b - a for a, b in zip(edges[:-1], edges[1:], strict=True)]


def _flatten(
    kind: type[SequenceNode] | type[ParallelNode], children: list[PatternNode]
) -> PatternNode:
    flat: list[PatternNode] = []
    for child in children:
        if isinstance(child, kind):
            flat.extend(child.children)
        else:
            flat.append(child)
    return kind(tuple(flat))


def random_tree(
    activities: Sequence[str], config: GeneratorConfig, rng: np.random.Generator
) -> PatternNode:
    """Random pattern tree over `activities` following the configured mix."""
    probabilities = np.asarray(config.mix, dtype=np.float64)
    probabilities = probabilities / probabilities.sum()
    lo, mean, hi = config.loop_bounds

    def build(ids: Sequence[str], depth: int, allow_loop: bool) -> PatternNode:
        kind = PatternKind(int(rng.choice(3, p=probabilities)))
        if kind is PatternKind.LOOP and (not allow_loop or depth >= config.max_depth):
            kind = (
                PatternKind.PARALLEL
                if probabilities[1] > probabilities[0]
                else PatternKind.SEQUENCE
            )
        if kind is PatternKind.LOOP:
            return LoopNode(build(ids, depth + 1, False), lo, mean, hi)
        if len(ids) == 1:
            return ActivityNode(ids[0])
        container = SequenceNode if kind is PatternKind.SEQUENCE else ParallelNode
        if depth >= config.max_depth:
            return container(tuple(ActivityNode(a) for a in ids))
        children = []
        start = 0
        for size in _split(len(ids), rng):
            children.append(build(ids[start : start + size], depth + 1, True))
            start += size
        return _flatten(container, children)

    return build(list(activities), 1, True)


# =============================================================================
# Generation
# =============================================================================


def generate(
    config: GeneratorConfig,
    qos_source: Sequence[QoSVector],
    properties: PropertySet,
    weights: tuple[float, ...] | None = None,
    mode: ConstraintMode = ConstraintMode.MEAN,
    approach: AggregationApproach = AggregationApproach.WORST,
) -> ValidatedInstance:
    """Generate a validated instance with derived constraints.

    Raises:
        SourceExhausted: If sampling without replacement needs more vectors
            than the source holds
    """
    if not qos_source:
        raise SourceExhausted("The QoS source is empty")
    rng = np.random.default_rng(config.seed)
    activities = [f"A{i + 1}" for i in range(config.activities)]
    task = TaskGraph(random_tree(activities, config, rng))

    needed = config.activities * config.services
    if config.replacement:
        draws = rng.integers(0, len(qos_source), size=needed)
    else:
        if needed > len(qos_source):
            raise SourceExhausted(
                f"Need {needed} QoS vectors without replacement, "
                f"the source has {len(qos_source)}"
            )
        draws = rng.permutation(len(qos_source))[:needed]

    candidates = {}
    for i, activity in enumerate(activities):
        candidates[activity] = tuple(
            ServiceCandidate(
                f"{activity}-s{j + 1}",
                _project(qos_source[int(draws[i * config.services + j])], properties),
            )
            for j in range(config.services)
        )

    n = len(properties)
    if weights is None:
        weights = tuple(1.0 / n for _ in range(n))
    request = UserRequest(task=task, weights=weights)
    instance = validate_request(request, candidates, properties)
    constraints = derive_constraints(instance, mode, approach)
    logger.info(
        f"Generated instance: {config.activities} activities x "
        f"{config.services} services, {n} properties, seed {config.seed}"
    )
    return validate_request(
        UserRequest(task=task, weights=weights, constraints=constraints),
        candidates,
        properties,
    )


def _project(vector: QoSVector, properties: PropertySet) -> QoSVector:
    """Keep the first len(properties) values of a source vector."""
    return QoSVector(vector.values[: len(properties)])


def derive_constraints(
    instance: Instance,
    mode: ConstraintMode,
    approach: AggregationApproach,
) -> tuple[float, ...]:
    """Aggregate per-activity candidate statistics into global constraints.

    MEAN uses each activity's mean. MEAN_SIGMA moves one population standard
    deviation toward stringency: up for positive properties, down for
    negative ones. Multiplicative statistics are clamped to [0, 1].
    """
    properties = instance.properties
    stats = {}
    for activity in instance.task.activities:
        values = np.asarray(
            [c.qos.values for c in instance.candidates[activity]], dtype=np.float64
        )
        mean = values.mean(axis=0)
        if mode is ConstraintMode.MEAN_SIGMA:
            sigma = values.std(axis=0, ddof=0)
            for prop in properties:
                if prop.direction is Direction.POSITIVE:
                    mean[prop.id] += sigma[prop.id]
                else:
                    mean[prop.id] -= sigma[prop.id]
        for prop in properties:
            if prop.category is Category.MULTIPLICATIVE:
                mean[prop.id] = min(1.0, max(0.0, mean[prop.id]))
        stats[activity] = tuple(float(v) for v in mean)
    return fold(instance.task.root, stats, categories_of(properties), approach)


# =============================================================================
# Datasets
# =============================================================================


def load_dataset(
    path: str | Path, properties: PropertySet, delimiter: str = ","
) -> list[QoSVector]:
    """Read QoS vectors from a delimited file with a header row.

    Each property reads the column named by its descriptor (its name by
    default) and is multiplied by its scale. An empty file yields no vectors.

    Raises:
        UnmappedProperty: If a property's column is missing
        MalformedRow: If a mapped field is missing, non-numeric or out of range
    """
    try:
        frame = pd.read_csv(
            path,
            sep=delimiter,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
        )
    except pd.errors.EmptyDataError:
        return []
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise MalformedRow(int(match.group(1)) if match else 0, str(e)) from e
    frame.columns = [str(c).strip() for c in frame.columns]
    columns = []
    for prop in properties:
        if prop.dataset_column not in frame.columns:
            raise UnmappedProperty(prop.name)
        columns.append(prop.dataset_column)
    if frame.empty:
        return []

    numeric = frame[columns].apply(
        lambda column: pd.to_numeric(column.str.strip(), errors="coerce")
    )
    values = numeric.to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = (int(i) for i in np.argwhere(bad)[0])
        text = frame.iloc[row][columns[col]]
        raise MalformedRow(row + 2, f"{columns[col]!r} is not a number: {text!r}")
    scales = np.asarray([p.scale for p in properties])
    values = values * scales
    for prop in properties:
        if prop.category is Category.MULTIPLICATIVE:
            outside = (values[:, prop.id] < 0) | (values[:, prop.id] > 1)
            if outside.any():
                row = int(np.flatnonzero(outside)[0])
                raise MalformedRow(
                    row + 2, f"{prop.name} = {values[row, prop.id]} not in [0, 1]"
                )
    logger.debug(f"Loaded {len(values)} QoS vectors from {path}")
    return [QoSVector(tuple(float(v) for v in row)) for row in values]


def dump_dataset(
    vectors: Sequence[QoSVector],
    properties: PropertySet,
    path: str | Path,
    delimiter: str = ",",
) -> None:
    """Write QoS vectors back out under their mapped column names, unscaled."""
    frame = pd.DataFrame(
        [[v.values[p.id] / p.scale for p in properties] for v in vectors],
        columns=[p.dataset_column for p in properties],
    )
    frame.to_csv(path, sep=delimiter, index=False)


def load_source(
    dataset: str | Path | None, properties: PropertySet, synthetic: bool = False
) -> list[QoSVector]:
    """Load the QoS source: an explicit path, the bundled synthetic data, or
    the dataset named by the environment."""
    if dataset is None and synthetic:
        dataset = bundled_file(SYNTHETIC_DATASET)
    if dataset is None:
        dataset = default_dataset()
    if dataset is None:
        raise FileNotFoundError(
            f"No dataset given: pass --dataset, --synthetic or set {DATASET_ENV}"
        )
    return load_dataset(dataset, properties)
