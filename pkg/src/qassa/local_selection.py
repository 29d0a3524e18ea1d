"""Local selection: QoS levels, QoS classes and the quality indicator.

For one activity, every QoS property is clustered separately and the clusters
are ranked. The rank-l clusters of all properties form QoS level l; the
services shared by ε of those clusters form a QoS class. Classes are scored with
the quality indicator ``l * ε * sum(w_j for covered j)`` and the best class (or
the best few) become the activity's candidate pool for the global phase.
"""

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from itertools import combinations

from .clustering import Cluster, derive_seed, kmeans_1d
from .errors import NoNonEmptyClass
from .model import PropertySet, ServiceCandidate

logger = logging.getLogger(__name__)

DEFAULT_TOP_K = 3


@dataclass(frozen=True)
class QoSLevel:
    """Rank-l clusters of one activity, one slot per property.

    A slot is None when that property has fewer clusters than the top level
    and so no cluster of rank l.
    """

    level: int
    clusters: tuple[Cluster | None, ...]


@dataclass(frozen=True)
class QoSClass:
    """Services sharing QoS level `level` on every covered property."""

    activity: str
    level: int
    covered: tuple[int, ...]
    services: tuple[str, ...]
    score: float

    @property
    def epsilon(self) -> int:
        return len(self.covered)

    @property
    def sort_key(self) -> tuple[float, int, int, tuple[int, ...], int]:
        return (
            -self.score,
            -self.level,
            -self.epsilon,
            self.covered,
            -len(self.services),
        )


@dataclass(frozen=True)
class ActivityClustering:
    """Ranked clusters of every property for one activity."""

    activity: str
    per_property: tuple[tuple[Cluster, ...], ...]
    top_level: int

    def rank_of(self) -> list[dict[str, int]]:
        """Per property, the rank of each service's cluster."""
        ranks: list[dict[str, int]] = []
        for clusters in self.per_property:
            lookup: dict[str, int] = {}
            for cluster in clusters:
                for member in cluster.members:
                    lookup[member] = cluster.rank
            ranks.append(lookup)
        return ranks

    def level(self, level: int) -> QoSLevel:
        slots = []
        for clusters in self.per_property:
            slots.append(next((c for c in clusters if c.rank == level), None))
        return QoSLevel(level, tuple(slots))


def quality_indicator(
    level: int, covered: Sequence[int], weights: Sequence[float]
) -> float:
    """Score of a QoS class: level x coverage x covered weight.

    >>> quality_indicator(3, [0, 1, 2, 3], [0.25] * 4)
    12.0
    >>> quality_indicator(2, [0], [0.5, 0.5])
    1.0
    """
    if level < 1 or not covered:
        raise ValueError("Quality indicator needs level >= 1 and a covered property")
    return level * len(covered) * math.fsum(sorted(weights[j] for j in covered))


def cluster_activity(
    activity: str,
    candidates: Sequence[ServiceCandidate],
    properties: PropertySet,
    g: int | Sequence[int],
    seed: int,
) -> ActivityClustering:
    """Cluster every property of an activity's candidates, ranks aligned at the top.

    `g` is one cluster count for all properties or one per property. Each
    property is clustered with its own derived seed.
    """
    counts = [g] * len(properties) if isinstance(g, int) else list(g)
    if len(counts) != len(properties):
        raise ValueError(
            f"Got {len(counts)} cluster counts for {len(properties)} properties"
        )
    per_property = []
    for prop in properties:
        pairs = [(c.id, c.qos.values[prop.id]) for c in candidates]
        distinct = len({value for _, value in pairs})
        wanted = min(counts[prop.id], len(pairs))
        per_property.append(
            kmeans_1d(pairs, wanted, derive_seed(seed, prop.id), prop.direction)
        )
        if distinct < wanted:
            logger.debug(
                f"{activity}/{prop.name}: {distinct} distinct values, "
                f"using {len(per_property[-1])} clusters instead of {wanted}"
            )
    top = max(len(clusters) for clusters in per_property)
    aligned = []
    for clusters in per_property:
        shift = top - len(clusters)
        aligned.append(
            tuple(
                Cluster(c.members, c.values, c.centroid, c.rank + shift)
                for c in clusters
            )
        )
    return ActivityClustering(activity, tuple(aligned), top)


def enumerate_classes(
    clustering: ActivityClustering,
    candidates: Sequence[ServiceCandidate],
    weights: Sequence[float],
    top_k: int | None = None,
) -> list[QoSClass]:
    """List non-empty QoS classes, best first.

    Levels run from the top down and coverage from all properties down.
    Ordering is by score, then level, then coverage, then smallest covered
    property ids, then larger service set. With ``top_k == 1`` the search
    stops at the first class that covers every property at the top level,
    since no class can score higher.
    """
    n = len(clustering.per_property)
    ranks = clustering.rank_of()
    found: list[QoSClass] = []
    for level in range(clustering.top_level, 0, -1):
        at_level = [
            {s for s, r in ranks[j].items() if r == level} for j in range(n)
        ]
        for epsilon in range(n, 0, -1):
            for covered in combinations(range(n), epsilon):
                shared = set.intersection(*(at_level[j] for j in covered))
                if not shared:
                    continue
                qos_class = QoSClass(
                    activity=clustering.activity,
                    level=level,
                    covered=covered,
                    services=tuple(c.id for c in candidates if c.id in shared),
                    score=quality_indicator(level, covered, weights),
                )
                if top_k == 1 and level == clustering.top_level and epsilon == n:
                    return [qos_class]
                found.append(qos_class)
    found.sort(key=lambda c: c.sort_key)
    return found if top_k is None else found[:top_k]


def select_qos_class(
    activity: str,
    candidates: Sequence[ServiceCandidate],
    weights: Sequence[float],
    g: int | Sequence[int],
    seed: int,
    properties: PropertySet,
) -> QoSClass:
    """Return the QoS class with the highest quality indicator.

    Raises:
        NoNonEmptyClass: If every class is empty
    """
    clustering = cluster_activity(activity, candidates, properties, g, seed)
    classes = enumerate_classes(clustering, candidates, weights, top_k=1)
    if not classes:
        raise NoNonEmptyClass(f"Activity {activity!r} has no non-empty QoS class")
    return classes[0]


def select_classes(
    activity: str,
    candidates: Sequence[ServiceCandidate],
    weights: Sequence[float],
    g: int | Sequence[int],
    seed: int,
    properties: PropertySet,
    top_k: int = DEFAULT_TOP_K,
) -> list[QoSClass]:
    """Return the `top_k` best QoS classes of one activity."""
    if top_k < 1:
        raise ValueError(f"top_k must be at least 1, got {top_k}")
    clustering = cluster_activity(activity, candidates, properties, g, seed)
    classes = enumerate_classes(clustering, candidates, weights, top_k=top_k)
    if not classes:
        raise NoNonEmptyClass(f"Activity {activity!r} has no non-empty QoS class")
    logger.debug(
        f"{activity}: best class level={classes[0].level} "
        f"covered={classes[0].covered} size={len(classes[0].services)}"
    )
    return classes


def pool_from_classes(
    candidates: Sequence[ServiceCandidate], classes: Sequence[QoSClass]
) -> tuple[ServiceCandidate, ...]:
    """Union of the classes' services, in candidate-list order."""
    chosen = {service for qos_class in classes for service in qos_class.services}
    return tuple(c for c in candidates if c.id in chosen)


def local_select_all(
    candidates: Mapping[str, Sequence[ServiceCandidate]],
    activities: Sequence[str],
    weights: Sequence[float],
    properties: PropertySet,
    g: Mapping[str, int | Sequence[int]],
    seed: int,
    top_k: int = DEFAULT_TOP_K,
) -> dict[str, list[QoSClass]]:
    """Run local selection for every activity, each with its own derived seed.

    Activity i (in `activities` order) uses ``derive_seed(seed, i)``, so the
    outcome for one activity does not depend on the others.
    """
    return {
        activity: select_classes(
            activity,
            candidates[activity],
            weights,
            g[activity],
            derive_seed(seed, index),
            properties,
            top_k,
        )
        for index, activity in enumerate(activities)
    }
