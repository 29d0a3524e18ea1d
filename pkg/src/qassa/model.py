"""Domain types shared by every qassa module, plus request validation.

This module provides:
- QoS property definitions and the property-set descriptor (JSON)
- QoS vectors and concrete service candidates (including fictive services)
- The task graph: activities composed with sequence, parallel and loop patterns
- User requests (global constraints and weights) and problem instances
- Request validation with a fixed check order
- The instance JSON format

Instance JSON schema::

    {
      "properties": [{"name": "response_time", "direction": "negative",
                      "category": "time"}, ...],
      "task": {"sequence": [{"activity": "A1"},
                            {"loop": {"activity": "A2"},
                             "min": 1, "mean": 2.0, "max": 3}]},
      "candidates": {"A1": [{"id": "s1", "qos": [120.0, 0.98]}, ...], ...},
      "request": {"constraints": [900.0, 0.9], "weights": [0.5, 0.5]},
      "dependencies": [{"kind": "intra", "activities": ["A1", "A2"]}]
    }

Task nodes are ``{"activity": id}``, ``{"sequence": [nodes]}``,
``{"parallel": [nodes]}`` or ``{"loop": node, "min": i, "mean": x, "max": j}``.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import (
    DimensionMismatch,
    EmptyCandidateList,
    InstanceFormatError,
    InvalidLoopBounds,
    InvalidPropertySet,
    InvalidQoSValue,
    InvalidTaskGraph,
    UnknownActivity,
    ValidationError,
    WeightSumViolation,
)

logger = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-9


class Direction(Enum):
    """Whether higher (positive) or lower (negative) values are better."""

    POSITIVE = "positive"
    NEGATIVE = "negative"


class Category(Enum):
    """Aggregation category of a QoS property.

    - TIME: response time, latency (sum in sequence, max in parallel)
    - COST: price (sum everywhere)
    - MULTIPLICATIVE: availability, reliability in [0, 1] (product)
    - BOTTLENECK: throughput (min)
    """

    TIME = "time"
    COST = "cost"
    MULTIPLICATIVE = "multiplicative"
    BOTTLENECK = "bottleneck"


class LinkPattern(Enum):
    """Pattern used to aggregate the QoS of services linked by a dependency."""

    SEQUENCE = "sequence"
    PARALLEL = "parallel"


# =============================================================================
# QoS properties
# =============================================================================


@dataclass(frozen=True)
class QoSProperty:
    """Definition of a single QoS property.

    Attributes:
        id: Index of the property within its property set
        name: Property name (e.g. 'response_time')
        direction: Whether higher or lower values are better
        category: Aggregation category
        column: Dataset column holding this property (defaults to name)
        scale: Factor applied to dataset values on load
    """

    id: int
    name: str
    direction: Direction
    category: Category
    column: str | None = None
    scale: float = 1.0

    def __post_init__(self):
        """Validate category and direction are consistent."""
        if self.id < 0:
            raise InvalidPropertySet(f"Property id {self.id} must be non-negative")
        if (
            self.category is Category.MULTIPLICATIVE
            and self.direction is not Direction.POSITIVE
        ):
            raise InvalidPropertySet(
                f"Multiplicative property {self.name!r} must have positive direction"
            )
        if not math.isfinite(self.scale) or self.scale <= 0:
            raise InvalidPropertySet(f"Property {self.name!r} has invalid scale")

    @property
    def dataset_column(self) -> str:
        """Name of the dataset column for this property."""
        return self.column if self.column is not None else self.name

    def better(self, a: float, b: float) -> bool:
        """Return True if value a is strictly better than value b."""
        if self.direction is Direction.POSITIVE:
            return a > b
        return a < b


@dataclass(frozen=True)
class PropertySet:
    """Ordered set of QoS properties, indexed by id and by name."""

    properties: tuple[QoSProperty, ...]
    _by_name: dict[str, QoSProperty] = field(
        init=False, repr=False, compare=False, hash=False
    )

    def __post_init__(self):
        if not self.properties:
            raise InvalidPropertySet("A property set needs at least one property")
        by_name: dict[str, QoSProperty] = {}
        for index, prop in enumerate(self.properties):
            if prop.id != index:
                raise InvalidPropertySet(
                    f"Property {prop.name!r} has id {prop.id}, expected {index}"
                )
            if prop.name in by_name:
                raise InvalidPropertySet(f"Duplicate property name {prop.name!r}")
            by_name[prop.name] = prop
        object.__setattr__(self, "_by_name", by_name)

    def __len__(self) -> int:
        return len(self.properties)

    def __iter__(self) -> Iterator[QoSProperty]:
        return iter(self.properties)

    def __getitem__(self, key: int | str) -> QoSProperty:
        if isinstance(key, str):
            try:
                return self._by_name[key]
            except KeyError:
                raise KeyError(f"Unknown property {key!r}") from None
        return self.properties[key]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.properties)

    def subset(self, count: int) -> PropertySet:
        """Return the first `count` properties as a new property set."""
        if not 1 <= count <= len(self):
            raise InvalidPropertySet(
                f"Property count must be 1-{len(self)}, got {count}"
            )
        return PropertySet(self.properties[:count])

    def check_vector(self, values: tuple[float, ...], owner: str = "vector") -> None:
        """Check dimension, finiteness and category ranges of a QoS vector.

        Raises:
            DimensionMismatch: If the length differs from the property count
            InvalidQoSValue: If a value is not finite or out of range
        """
        if len(values) != len(self.properties):
            raise DimensionMismatch(
                f"{owner} has {len(values)} values, expected {len(self.properties)}"
            )
        for prop, value in zip(self.properties, values, strict=True):
            if not math.isfinite(value):
                raise InvalidQoSValue(f"{owner}: {prop.name} is {value}")
            if prop.category is Category.MULTIPLICATIVE and not 0.0 <= value <= 1.0:
                raise InvalidQoSValue(
                    f"{owner}: multiplicative {prop.name} = {value} not in [0, 1]"
                )

    @classmethod
    def from_descriptor(cls, entries: list[dict[str, Any]]) -> PropertySet:
        """Build a property set from descriptor entries.

        Each entry is ``{"name", "direction", "category"}`` with optional
        ``"column"`` and ``"scale"`` used by dataset loading.
        """
        try:
            return cls(
                tuple(
                    QoSProperty(
                        id=index,
                        name=str(entry["name"]),
                        direction=Direction(entry["direction"]),
                        category=Category(entry["category"]),
                        column=entry.get("column"),
                        scale=float(entry.get("scale", 1.0)),
                    )
                    for index, entry in enumerate(entries)
                )
            )
        except (KeyError, ValueError, TypeError) as e:
            raise InvalidPropertySet(f"Invalid property descriptor: {e}") from e

    def to_descriptor(self) -> list[dict[str, Any]]:
        entries = []
        for prop in self.properties:
            entry: dict[str, Any] = {
                "name": prop.name,
                "direction": prop.direction.value,
                "category": prop.category.value,
            }
            if prop.column is not None:
                entry["column"] = prop.column
            if prop.scale != 1.0:
                entry["scale"] = prop.scale
            entries.append(entry)
        return entries

    @classmethod
    def load(cls, path: str | Path) -> PropertySet:
        """Load a property-set descriptor JSON file."""
        try:
            entries = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise InvalidPropertySet(f"{path}: {e}") from e
        if not isinstance(entries, list):
            raise InvalidPropertySet(f"{path}: descriptor must be a JSON array")
        return cls.from_descriptor(entries)


# =============================================================================
# Vectors and services
# =============================================================================


@dataclass(frozen=True)
class QoSVector:
    """QoS values of a service or composition, index-aligned with a property set."""

    values: tuple[float, ...]

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.values):
            raise InvalidQoSValue(f"QoS vector {self.values} has non-finite values")

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, index: int) -> float:
        return self.values[index]

    def __iter__(self) -> Iterator[float]:
        return iter(self.values)

    @classmethod
    def of(cls, *values: float) -> QoSVector:
        return cls(tuple(float(v) for v in values))


@dataclass(frozen=True)
class Constituent:
    """A concrete service bound to an activity, as part of a fictive service."""

    activity: str
    service: str


@dataclass(frozen=True)
class ServiceCandidate:
    """A concrete (or fictive) service able to realise an activity.

    Fictive services stand for two or more services merged during dependency
    pre-processing; `constituents` names them and `link` the pattern their QoS
    was aggregated with.
    """

    id: str
    qos: QoSVector
    fictive: bool = False
    constituents: tuple[Constituent, ...] = ()
    link: LinkPattern | None = None

    def __post_init__(self):
        if self.fictive != bool(self.constituents):
            raise ValidationError(
                f"Service {self.id!r}: fictive services need constituents "
                "and concrete services must have none"
            )


Binding = Mapping[str, ServiceCandidate]
CandidateMap = Mapping[str, tuple[ServiceCandidate, ...]]


# =============================================================================
# Task graph
# =============================================================================


@dataclass(frozen=True)
class ActivityNode:
    """Leaf of the task graph: one abstract activity."""

    id: str


@dataclass(frozen=True)
class SequenceNode:
    """Children executed one after the other."""

    children: tuple[PatternNode, ...]


@dataclass(frozen=True)
class ParallelNode:
    """Children executed concurrently; all branches run."""

    children: tuple[PatternNode, ...]


@dataclass(frozen=True)
class LoopNode:
    """Child executed repeatedly, between min_iter and max_iter times."""

    child: PatternNode
    min_iter: int
    mean_iter: float
    max_iter: int

    @property
    def bounds_valid(self) -> bool:
        return 1 <= self.min_iter <= self.mean_iter <= self.max_iter


PatternNode = ActivityNode | SequenceNode | ParallelNode | LoopNode


def iter_nodes(node: PatternNode) -> Iterator[PatternNode]:
    """Yield the nodes of a pattern tree in depth-first, left-to-right order."""
    yield node
    if isinstance(node, SequenceNode | ParallelNode):
        for child in node.children:
            yield from iter_nodes(child)
    elif isinstance(node, LoopNode):
        yield from iter_nodes(node.child)


@dataclass(frozen=True)
class TaskGraph:
    """A user task: activities coordinated by execution patterns.

    Activities are listed in graph order (depth-first, left to right).
    """

    root: PatternNode
    activities: tuple[str, ...] = field(init=False, compare=False)

    def __post_init__(self):
        activities: list[str] = []
        seen: set[str] = set()
        for node in iter_nodes(self.root):
            if isinstance(node, ActivityNode):
                if node.id in seen:
                    raise InvalidTaskGraph(f"Activity {node.id!r} appears twice")
                seen.add(node.id)
                activities.append(node.id)
            elif isinstance(node, SequenceNode | ParallelNode) and not node.children:
                raise InvalidTaskGraph(f"{type(node).__name__} has no children")
        object.__setattr__(self, "activities", tuple(activities))

    @property
    def activity_count(self) -> int:
        return len(self.activities)

    def check_loop_bounds(self) -> None:
        """Raise InvalidLoopBounds for the first loop with invalid bounds."""
        for node in iter_nodes(self.root):
            if isinstance(node, LoopNode) and not node.bounds_valid:
                inner = iter_nodes(node.child)
                first = next(
                    (n.id for n in inner if isinstance(n, ActivityNode)), None
                )
                raise InvalidLoopBounds(
                    f"Loop over {first!r} has bounds min={node.min_iter} "
                    f"mean={node.mean_iter} max={node.max_iter}; "
                    "need 1 <= min <= mean <= max",
                    activity=first,
                )

    @classmethod
    def sequence(cls, *activities: str) -> TaskGraph:
        """Build a flat sequence of activities."""
        return cls(SequenceNode(tuple(ActivityNode(a) for a in activities)))


# =============================================================================
# Requests and instances
# =============================================================================


@dataclass(frozen=True)
class UserRequest:
    """A task with global QoS constraints U and property weights W."""

    task: TaskGraph
    weights: tuple[float, ...]
    constraints: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Dependency:
    """Base class of service dependencies."""

    activities: tuple[str, ...]


@dataclass(frozen=True)
class IntraDependency(Dependency):
    """The named activities must be fulfilled by the same service."""

    def __post_init__(self):
        if len(set(self.activities)) < 2:
            raise ValidationError("An intra-dependency needs two distinct activities")


@dataclass(frozen=True)
class InterDependency(Dependency):
    """Concrete services of distinct activities that must co-occur.

    Each link names one service per activity, in the order of `activities`.
    """

    links: tuple[tuple[str, ...], ...] = ()
    pattern: LinkPattern = LinkPattern.SEQUENCE

    def __post_init__(self):
        if len(set(self.activities)) != len(self.activities) or len(
            self.activities
        ) < 2:
            raise ValidationError(
                "An inter-dependency needs two or more distinct activities"
            )
        for link in self.links:
            if len(link) != len(self.activities):
                raise ValidationError(
                    f"Link {link} must name one service per activity "
                    f"{self.activities}"
                )


@dataclass(frozen=True)
class Instance:
    """A service selection problem: properties, request and candidates."""

    properties: PropertySet
    request: UserRequest
    candidates: CandidateMap
    dependencies: tuple[Dependency, ...] = ()

    @property
    def task(self) -> TaskGraph:
        return self.request.task

    @property
    def weights(self) -> tuple[float, ...]:
        return self.request.weights

    @property
    def constraints(self) -> tuple[float, ...]:
        if self.request.constraints is None:
            raise ValidationError("The request has no global QoS constraints")
        return self.request.constraints

    @property
    def binding_space(self) -> int:
        """Number of distinct bindings (product of candidate counts)."""
        return math.prod(len(self.candidates[a]) for a in self.task.activities)

    @property
    def total_candidates(self) -> int:
        return sum(len(self.candidates[a]) for a in self.task.activities)

    def candidate(self, activity: str, service: str) -> ServiceCandidate:
        for candidate in self.candidates[activity]:
            if candidate.id == service:
                return candidate
        raise KeyError(f"No service {service!r} for activity {activity!r}")

    def with_constraints(self, constraints: tuple[float, ...]) -> Instance:
        request = replace(self.request, constraints=tuple(constraints))
        return replace(self, request=request)


@dataclass(frozen=True)
class ValidatedInstance(Instance):
    """An instance whose type invariants have all been checked."""

    warnings: tuple[str, ...] = ()


def validate_request(
    request: UserRequest,
    candidates: CandidateMap,
    properties: PropertySet,
    dependencies: tuple[Dependency, ...] = (),
) -> ValidatedInstance:
    """Check every type invariant and return the validated instance.

    Checks run in a fixed order (weights, dimensions, candidates, loop bounds)
    so the first violated invariant is always the one reported.

    Raises:
        WeightSumViolation: Weights negative, wrong count or not summing to 1
        DimensionMismatch: Constraint or QoS vector of the wrong length
        InvalidQoSValue: Non-finite or out-of-range QoS value
        EmptyCandidateList: An activity without candidates
        UnknownActivity: Candidates for an activity not in the task
        InvalidLoopBounds: Loop bounds violating 1 <= min <= mean <= max
    """
    n = len(properties)
    task = request.task

    # weights
    if len(request.weights) != n:
        raise WeightSumViolation(
            f"Got {len(request.weights)} weights for {n} properties"
        )
    if any(not math.isfinite(w) or w < 0 for w in request.weights):
        raise WeightSumViolation(f"Weights must be non-negative: {request.weights}")
    total = math.fsum(request.weights)
    if abs(total - 1.0) > WEIGHT_TOLERANCE:
        raise WeightSumViolation(f"Weights sum to {total}, expected 1")

    # dimensions
    if request.constraints is not None:
        if len(request.constraints) != n:
            raise DimensionMismatch(
                f"Got {len(request.constraints)} constraints for {n} properties"
            )
        if not all(math.isfinite(u) for u in request.constraints):
            raise InvalidQoSValue(f"Non-finite constraint in {request.constraints}")
    for activity, services in candidates.items():
        for candidate in services:
            properties.check_vector(
                candidate.qos.values, owner=f"service {candidate.id!r} of {activity!r}"
            )

    # candidates
    for activity in task.activities:
        if not candidates.get(activity):
            raise EmptyCandidateList(activity)
    for activity, services in candidates.items():
        if activity not in task.activities:
            raise UnknownActivity(activity)
        ids = [c.id for c in services]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"Activity {activity!r} lists a service twice")

    # loop bounds
    task.check_loop_bounds()

    frozen = {a: tuple(candidates[a]) for a in task.activities}
    return ValidatedInstance(
        properties=properties,
        request=request,
        candidates=frozen,
        dependencies=tuple(dependencies),
    )


def validate_instance(instance: Instance) -> ValidatedInstance:
    """Validate an instance's request, candidates and properties."""
    return validate_request(
        instance.request,
        instance.candidates,
        instance.properties,
        instance.dependencies,
    )


# =============================================================================
# JSON format
# =============================================================================


def node_to_dict(node: PatternNode) -> dict[str, Any]:
    if isinstance(node, ActivityNode):
        return {"activity": node.id}
    if isinstance(node, SequenceNode):
        return {"sequence": [node_to_dict(c) for c in node.children]}
    if isinstance(node, ParallelNode):
        return {"parallel": [node_to_dict(c) for c in node.children]}
    return {
        "loop": node_to_dict(node.child),
        "min": node.min_iter,
        "mean": node.mean_iter,
        "max": node.max_iter,
    }


def node_from_dict(data: dict[str, Any]) -> PatternNode:
    if not isinstance(data, dict):
        raise InstanceFormatError(f"Task node must be an object, got {data!r}")
    if "activity" in data:
        return ActivityNode(str(data["activity"]))
    if "sequence" in data:
        return SequenceNode(tuple(node_from_dict(c) for c in data["sequence"]))
    if "parallel" in data:
        return ParallelNode(tuple(node_from_dict(c) for c in data["parallel"]))
    if "loop" in data:
        try:
            return LoopNode(
                node_from_dict(data["loop"]),
                min_iter=int(data["min"]),
                mean_iter=float(data["mean"]),
                max_iter=int(data["max"]),
            )
        except KeyError as e:
            raise InstanceFormatError(f"Loop node is missing {e}") from e
    raise InstanceFormatError(f"Unknown task node {data!r}")


def _candidate_to_dict(candidate: ServiceCandidate) -> dict[str, Any]:
    entry: dict[str, Any] = {"id": candidate.id, "qos": list(candidate.qos.values)}
    if candidate.fictive:
        entry["constituents"] = [
            {"activity": c.activity, "service": c.service}
            for c in candidate.constituents
        ]
        if candidate.link is not None:
            entry["link"] = candidate.link.value
    return entry


def _candidate_from_dict(data: dict[str, Any]) -> ServiceCandidate:
    constituents = tuple(
        Constituent(str(c["activity"]), str(c["service"]))
        for c in data.get("constituents", ())
    )
    link = data.get("link")
    return ServiceCandidate(
        id=str(data["id"]),
        qos=QoSVector(tuple(float(v) for v in data["qos"])),
        fictive=bool(constituents),
        constituents=constituents,
        link=LinkPattern(link) if link is not None else None,
    )


def dependency_to_dict(dependency: Dependency) -> dict[str, Any]:
    if isinstance(dependency, InterDependency):
        return {
            "kind": "inter",
            "activities": list(dependency.activities),
            "links": [list(link) for link in dependency.links],
            "pattern": dependency.pattern.value,
        }
    return {"kind": "intra", "activities": list(dependency.activities)}


def dependency_from_dict(data: dict[str, Any]) -> Dependency:
    kind = data.get("kind")
    activities = tuple(str(a) for a in data.get("activities", ()))
    if kind == "intra":
        return IntraDependency(activities)
    if kind == "inter":
        return InterDependency(
            activities,
            links=tuple(tuple(str(s) for s in link) for link in data.get("links", ())),
            pattern=LinkPattern(data.get("pattern", LinkPattern.SEQUENCE.value)),
        )
    raise InstanceFormatError(f"Unknown dependency kind {kind!r}")


def instance_to_dict(instance: Instance) -> dict[str, Any]:
    request: dict[str, Any] = {"weights": list(instance.request.weights)}
    if instance.request.constraints is not None:
        request["constraints"] = list(instance.request.constraints)
    data: dict[str, Any] = {
        "properties": instance.properties.to_descriptor(),
        "task": node_to_dict(instance.task.root),
        "candidates": {
            activity: [_candidate_to_dict(c) for c in instance.candidates[activity]]
            for activity in instance.task.activities
        },
        "request": request,
    }
    if instance.dependencies:
        data["dependencies"] = [dependency_to_dict(d) for d in instance.dependencies]
    return data


def instance_from_dict(data: dict[str, Any]) -> Instance:
    try:
        properties = PropertySet.from_descriptor(data["properties"])
        task = TaskGraph(node_from_dict(data["task"]))
        request_data = data["request"]
        constraints = request_data.get("constraints")
        request = UserRequest(
            task=task,
            weights=tuple(float(w) for w in request_data["weights"]),
            constraints=(
                tuple(float(u) for u in constraints)
                if constraints is not None
                else None
            ),
        )
        candidates = {
            str(activity): tuple(_candidate_from_dict(c) for c in services)
            for activity, services in data["candidates"].items()
        }
        dependencies = tuple(
            dependency_from_dict(d) for d in data.get("dependencies", ())
        )
    except (KeyError, TypeError, ValueError) as e:
        raise InstanceFormatError(f"Invalid instance: {e!r}") from e
    return Instance(properties, request, candidates, dependencies)


def load_instance(path: str | Path) -> Instance:
    """Read an instance JSON file."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InstanceFormatError(f"{path}: {e}") from e
    instance = instance_from_dict(data)
    logger.debug(
        f"Loaded instance {path}: {instance.task.activity_count} activities, "
        f"{len(instance.properties)} properties"
    )
    return instance


def dump_instance(instance: Instance, path: str | Path) -> None:
    """Write an instance JSON file (deterministic byte output)."""
    text = json.dumps(instance_to_dict(instance), indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")
