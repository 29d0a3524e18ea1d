"""Service dependency pre-processing and expansion of fictive services.

Intra-dependencies (activities that must use the same service) are merged
first: the coarse activity keeps the services common to all merged activities.
Inter-dependencies (concrete services of different activities that must
co-occur) are merged next: the coarse activity's only candidates are fictive
services, one per link, whose QoS is the fold of the linked services' QoS.

The coarse activity takes the graph position of the first merged activity.
After selection, :func:`expand_fictive` maps every coarse binding back onto
the original activities.
"""

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

from .aggregation import link_fold
from .errors import (
    ConflictingDependencies,
    EmptyIntersection,
    NoLinks,
    UnknownActivity,
    UnknownFictiveId,
    UnknownService,
)
from .global_selection import CompositionSolution
from .model import (
    ActivityNode,
    CandidateMap,
    Constituent,
    InterDependency,
    IntraDependency,
    LinkPattern,
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

INTRA_SEPARATOR = "+"
INTER_SEPARATOR = "*"

Path = tuple[int, ...]


# =============================================================================
# Task graph surgery
# =============================================================================


def activity_paths(node: PatternNode, prefix: Path = ()) -> dict[str, Path]:
    """Child-index path from the root to every activity."""
    if isinstance(node, ActivityNode):
        return {node.id: prefix}
    paths: dict[str, Path] = {}
    if isinstance(node, LoopNode):
        paths.update(activity_paths(node.child, prefix + (0,)))
    else:
        for index, child in enumerate(node.children):
            paths.update(activity_paths(child, prefix + (index,)))
    return paths


def node_at(root: PatternNode, path: Path) -> PatternNode:
    node = root
    for index in path:
        if isinstance(node, LoopNode):
            node = node.child
        elif isinstance(node, SequenceNode | ParallelNode):
            node = node.children[index]
        else:
            raise KeyError(f"No node at path {path}")
    return node


def _common_prefix(paths: Sequence[Path]) -> Path:
    prefix: list[int] = []
    for parts in zip(*paths, strict=False):
        if len(set(parts)) != 1:
            break
        prefix.append(parts[0])
    return tuple(prefix)


def enclosing_pattern(root: PatternNode, activities: Sequence[str]) -> LinkPattern:
    """Pattern of the lowest node enclosing all `activities`."""
    paths = activity_paths(root)
    common = node_at(root, _common_prefix([paths[a] for a in activities]))
    if isinstance(common, ParallelNode):
        return LinkPattern.PARALLEL
    return LinkPattern.SEQUENCE


def are_adjacent(root: PatternNode, activities: Sequence[str]) -> bool:
    """True if the activities are consecutive direct children of one node."""
    paths = activity_paths(root)
    members = [paths[a] for a in activities]
    common = _common_prefix(members)
    if any(len(p) != len(common) + 1 for p in members):
        return False
    indexes = sorted(p[-1] for p in members)
    return indexes == list(range(indexes[0], indexes[0] + len(indexes)))


def replace_activities(
    node: PatternNode, members: set[str], first: str, coarse: str
) -> PatternNode | None:
    """Put `coarse` where `first` was and drop the other members.

    Emptied containers are removed and single-child containers collapse.
    """
    if isinstance(node, ActivityNode):
        if node.id == first:
            return ActivityNode(coarse)
        return None if node.id in members else node
    if isinstance(node, LoopNode):
        child = replace_activities(node.child, members, first, coarse)
        if child is None:
            return None
        return LoopNode(child, node.min_iter, node.mean_iter, node.max_iter)
    children = [
        new
        for child in node.children
        if (new := replace_activities(child, members, first, coarse)) is not None
    ]
    if not children:
        return None
    if len(children) == 1:
        return children[0]
    return type(node)(tuple(children))


# =============================================================================
# Merges
# =============================================================================


def merge_intra(
    activities: Sequence[str],
    candidates: CandidateMap,
    properties: PropertySet,
    pattern: LinkPattern = LinkPattern.SEQUENCE,
) -> tuple[str, tuple[ServiceCandidate, ...]]:
    """Merge intra-dependent activities into one coarse activity.

    The coarse activity's candidates are the services (by id) common to every
    merged activity, in the first activity's candidate order. Each keeps the
    fold of its per-activity QoS vectors under `pattern`.

    Raises:
        EmptyIntersection: If no service is common to all activities
    """
    coarse = INTRA_SEPARATOR.join(activities)
    by_id = [{c.id: c for c in candidates[a]} for a in activities]
    merged = []
    for service in candidates[activities[0]]:
        if not all(service.id in lookup for lookup in by_id[1:]):
            continue
        parts = [lookup[service.id] for lookup in by_id]
        merged.append(
            ServiceCandidate(
                id=service.id,
                qos=QoSVector(
                    link_fold([p.qos.values for p in parts], properties, pattern)
                ),
                fictive=True,
                constituents=tuple(
                    Constituent(a, service.id) for a in activities
                ),
                link=pattern,
            )
        )
    if not merged:
        raise EmptyIntersection(tuple(activities))
    logger.debug(f"Merged {activities} into {coarse!r}: {len(merged)} common services")
    return coarse, tuple(merged)


def merge_inter(
    activities: Sequence[str],
    links: Sequence[Sequence[str]],
    candidates: CandidateMap,
    properties: PropertySet,
    pattern: LinkPattern = LinkPattern.SEQUENCE,
) -> tuple[str, tuple[ServiceCandidate, ...]]:
    """Merge inter-dependent activities into one coarse activity of fictive services.

    Each distinct link becomes one fictive service whose QoS is the left fold of
    the linked services' QoS under `pattern` (pairwise, activity by activity).

    Raises:
        NoLinks: If there is no link
        UnknownService: If a link names a service that is not a candidate
    """
    if not links:
        raise NoLinks(f"Inter-dependency between {list(activities)} has no links")
    coarse = INTER_SEPARATOR.join(activities)
    by_id = [{c.id: c for c in candidates[a]} for a in activities]
    fictive: dict[str, ServiceCandidate] = {}
    for link in links:
        parts = []
        for activity, service, lookup in zip(activities, link, by_id, strict=True):
            if service not in lookup:
                raise UnknownService(
                    f"Service {service!r} is not a candidate of {activity!r}"
                )
            parts.append(lookup[service])
        service_id = INTER_SEPARATOR.join(link)
        if service_id in fictive:
            continue
        fictive[service_id] = ServiceCandidate(
            id=service_id,
            qos=QoSVector(
                link_fold([p.qos.values for p in parts], properties, pattern)
            ),
            fictive=True,
            constituents=tuple(
                Constituent(a, s) for a, s in zip(activities, link, strict=True)
            ),
            link=pattern,
        )
    logger.debug(f"Merged {list(activities)} into {coarse!r}: {len(fictive)} fictive")
    return coarse, tuple(fictive.values())


# =============================================================================
# Pre-processing
# =============================================================================


@dataclass(frozen=True)
class ExpansionTable:
    """Maps coarse bindings back to the original activities.

    Attributes:
        entries: (coarse activity, fictive id) -> constituents, one level deep
        originals: The candidate map of the instance before pre-processing
        original_task: The task graph before pre-processing
        coarse_of: Original activity -> the activity that replaced it
    """

    entries: Mapping[tuple[str, str], tuple[Constituent, ...]]
    originals: CandidateMap
    original_task: TaskGraph
    coarse_of: Mapping[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def expand_service(
        self, activity: str, service: ServiceCandidate
    ) -> dict[str, ServiceCandidate]:
        """Concrete services bound to original activities for one coarse binding.

        Raises:
            UnknownFictiveId: If a fictive service has no table entry
        """
        if not service.fictive:
            return {activity: service}
        return self._expand(activity, service.id)

    def _expand(self, activity: str, service: str) -> dict[str, ServiceCandidate]:
        key = (activity, service)
        if key not in self.entries:
            if activity in self.originals:
                for candidate in self.originals[activity]:
                    if candidate.id == service:
                        return {activity: candidate}
            raise UnknownFictiveId(service, activity)
        expanded: dict[str, ServiceCandidate] = {}
        for constituent in self.entries[key]:
            expanded.update(self._expand(constituent.activity, constituent.service))
        return expanded


@dataclass(frozen=True)
class PreprocessResult:
    instance: ValidatedInstance
    expansion: ExpansionTable
    warnings: tuple[str, ...] = ()


def _intra_groups(
    dependencies: Sequence[IntraDependency], order: Sequence[str]
) -> list[list[str]]:
    """Union overlapping intra groups; each group sorted in graph order."""
    groups: list[set[str]] = []
    for dependency in dependencies:
        group = set(dependency.activities)
        overlapping = [g for g in groups if g & group]
        for g in overlapping:
            group |= g
            groups.remove(g)
        groups.append(group)
    position = {a: i for i, a in enumerate(order)}
    ordered = [sorted(g, key=position.__getitem__) for g in groups]
    ordered.sort(key=lambda g: position[g[0]])
    return ordered


def preprocess(instance: ValidatedInstance) -> PreprocessResult:
    """Apply every intra merge, then every inter merge, in that order.

    Returns the reduced instance and the table mapping coarse bindings back to
    the original activities. Without dependencies the instance is unchanged.

    Raises:
        UnknownActivity: If a dependency names an activity not in the task
        EmptyIntersection: If intra-dependent activities share no service
        NoLinks: If an inter-dependency has no surviving link
        UnknownService: If a link names a service that is not a candidate
        ConflictingDependencies: If inter-dependencies overlap, or their
            activities were merged together by intra-dependencies
    """
    task = instance.task
    properties = instance.properties
    warnings: list[str] = []
    table = ExpansionTable({}, instance.candidates, task)
    if not instance.dependencies:
        return PreprocessResult(instance, table)

    for dependency in instance.dependencies:
        for activity in dependency.activities:
            if activity not in task.activities:
                raise UnknownActivity(activity)

    intra = [d for d in instance.dependencies if isinstance(d, IntraDependency)]
    inter = [d for d in instance.dependencies if isinstance(d, InterDependency)]
    for dependency in inter:
        for link in dependency.links:
            for activity, service in zip(dependency.activities, link, strict=True):
                if not any(c.id == service for c in instance.candidates[activity]):
                    raise UnknownService(
                        f"Service {service!r} is not a candidate of {activity!r}"
                    )
    claimed: set[str] = set()
    for dependency in inter:
        if claimed & set(dependency.activities):
            raise ConflictingDependencies(
                f"Activities {sorted(claimed & set(dependency.activities))} "
                "belong to two inter-dependencies"
            )
        claimed |= set(dependency.activities)

    root: PatternNode = task.root
    candidates: dict[str, tuple[ServiceCandidate, ...]] = dict(instance.candidates)
    entries: dict[tuple[str, str], tuple[Constituent, ...]] = {}
    coarse_of = {a: a for a in task.activities}

    def apply(members: list[str], coarse: str, merged: tuple[ServiceCandidate, ...]):
        nonlocal root
        if not are_adjacent(root, members):
            message = (
                f"Merged activities {members} are not adjacent; "
                f"{coarse!r} takes the position of {members[0]!r}"
            )
            logger.warning(message)
            warnings.append(message)
        new_root = replace_activities(root, set(members), members[0], coarse)
        assert new_root is not None
        root = new_root
        for member in members:
            del candidates[member]
        candidates[coarse] = merged
        for service in merged:
            entries[(coarse, service.id)] = service.constituents
        for original, current in coarse_of.items():
            if current in members:
                coarse_of[original] = coarse

    for members in _intra_groups(intra, task.activities):
        pattern = enclosing_pattern(root, members)
        coarse, merged = merge_intra(members, candidates, properties, pattern)
        apply(members, coarse, merged)

    for dependency in inter:
        endpoints = [coarse_of[a] for a in dependency.activities]
        if len(set(endpoints)) != len(endpoints):
            raise ConflictingDependencies(
                f"Inter-dependency {list(dependency.activities)} spans activities "
                "merged by an intra-dependency"
            )
        available = [{c.id for c in candidates[e]} for e in endpoints]
        surviving = [
            tuple(link)
            for link in dependency.links
            if all(s in ids for s, ids in zip(link, available, strict=True))
        ]
        if len(surviving) < len(dependency.links):
            logger.debug(
                f"Dropped {len(dependency.links) - len(surviving)} links of "
                f"{list(dependency.activities)}: services did not survive merging"
            )
        if not surviving:
            raise NoLinks(
                f"No link of the inter-dependency {list(dependency.activities)} "
                "survives pre-processing"
            )
        position = activity_paths(root)
        order = sorted(range(len(endpoints)), key=lambda i: position[endpoints[i]])
        members = [endpoints[i] for i in order]
        links = [tuple(link[i] for i in order) for link in surviving]
        coarse, merged = merge_inter(
            members, links, candidates, properties, dependency.pattern
        )
        apply(members, coarse, merged)

    reduced_task = TaskGraph(root)
    request = UserRequest(
        task=reduced_task,
        weights=instance.request.weights,
        constraints=instance.request.constraints,
    )
    reduced = validate_request(request, candidates, properties)
    reduced = ValidatedInstance(
        properties=reduced.properties,
        request=reduced.request,
        candidates=reduced.candidates,
        dependencies=(),
        warnings=tuple(warnings),
    )
    logger.info(
        f"Pre-processing reduced {task.activity_count} activities to "
        f"{reduced_task.activity_count}"
    )
    expansion = ExpansionTable(entries, instance.candidates, task, coarse_of)
    return PreprocessResult(reduced, expansion, tuple(warnings))


def expand_fictive(
    composition: CompositionSolution, expansion: ExpansionTable
) -> CompositionSolution:
    """Replace every coarse binding by the concrete services it stands for.

    The aggregated QoS and utility are carried over unchanged; the binding is
    keyed by the original activities, in original graph order.

    Raises:
        UnknownFictiveId: If a fictive service has no table entry
    """
    if not any(s.fictive for s in composition.binding.values()):
        return composition
    expanded: dict[str, ServiceCandidate] = {}
    for activity, service in composition.binding.items():
        expanded.update(expansion.expand_service(activity, service))
    ordered = {
        a: expanded[a] for a in expansion.original_task.activities if a in expanded
    }
    return CompositionSolution(ordered, composition.qos, composition.utility)


def relative_close(a: QoSVector, b: QoSVector, tolerance: float = 1e-9) -> bool:
    """Compare QoS vectors with a relative tolerance (merges regroup float folds)."""
    return all(
        math.isclose(x, y, rel_tol=tolerance, abs_tol=tolerance)
        for x, y in zip(a.values, b.values, strict=True)
    )
