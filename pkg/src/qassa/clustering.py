"""One-dimensional K-means++ clustering of QoS values and cluster-count choice.

Each QoS property of an activity's candidates is clustered separately. Clusters
are ranked so that the best cluster (smallest centroid for negative properties,
largest for positive ones) carries the highest rank.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .errors import CoincidentCentroids, SingleCluster, TooFewValues
from .model import Direction

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 100
RESTARTS = 3
DEFAULT_G_RANGE = (2, 5)


def derive_seed(seed: int, *keys: int) -> int:
    """Derive an independent sub-seed from a user seed and a purpose key path.

    >>> derive_seed(7, 1, 2) == derive_seed(7, 1, 2)
    True
    >>> derive_seed(7, 1, 2) == derive_seed(7, 2, 1)
    False
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=keys)
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class Cluster:
    """A group of services whose values of one property are close together."""

    members: tuple[str, ...]
    values: tuple[float, ...]
    centroid: float
    rank: int

    def __post_init__(self):
        if not self.members:
            raise ValueError("A cluster must have at least one member")


@dataclass(frozen=True)
class LloydResult:
    centers: npt.NDArray[np.float64]
    labels: npt.NDArray[np.intp]
    inertia_history: tuple[float, ...]
    iterations: int

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def kmeans_plusplus_1d(
    x: npt.NDArray[np.float64], g: int, rng: np.random.Generator
) -> npt.NDArray[np.float64]:
    """K-means++ seeding: each next center drawn with probability ~ D(x)^2."""
    centers = np.empty(g)
    centers[0] = x[rng.integers(0, x.size)]
    for i in range(1, g):
        dist_sq = np.min((x[:, None] - centers[None, :i]) ** 2, axis=1)
        probs = dist_sq / dist_sq.sum()
        centers[i] = x[rng.choice(x.size, p=probs)]
    return centers


def _inertia(
    x: npt.NDArray[np.float64],
    centers: npt.NDArray[np.float64],
    labels: npt.NDArray[np.intp],
) -> float:
    return float(np.sum((x - centers[labels]) ** 2))


def lloyd_1d(
    x: npt.NDArray[np.float64],
    centers: npt.NDArray[np.float64],
    max_iterations: int = MAX_ITERATIONS,
) -> LloydResult:
    """Lloyd iterations until no assignment changes or the iteration cap.

    An emptied cluster is moved onto the point farthest from its own center.
    """
    centers = centers.copy()
    labels = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
    history: list[float] = []
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        for k in range(centers.size):
            mask = labels == k
            if np.any(mask):
                centers[k] = x[mask].mean()
            else:
                far = int(np.argmax(np.abs(x - centers[labels])))
                centers[k] = x[far]
                logger.debug(f"Relocated empty cluster {k} to value {x[far]}")
        history.append(_inertia(x, centers, labels))
        new_labels = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    else:
        history.append(_inertia(x, centers, labels))
    return LloydResult(centers, labels, tuple(history), iterations)


def _rank_clusters(
    ids: Sequence[str],
    x: npt.NDArray[np.float64],
    result: LloydResult,
    direction: Direction,
    top_rank: int,
) -> list[Cluster]:
    used = [k for k in range(result.centers.size) if np.any(result.labels == k)]
    # ascending centroid order; best cluster last for positive, first for negative
    used.sort(key=lambda k: result.centers[k])
    if direction is Direction.POSITIVE:
        used.reverse()
    clusters = []
    for position, k in enumerate(used):
        members = np.flatnonzero(result.labels == k)
        clusters.append(
            Cluster(
                members=tuple(ids[i] for i in members),
                values=tuple(float(x[i]) for i in members),
                centroid=float(x[members].mean()),
                rank=top_rank - position,
            )
        )
    return clusters


def kmeans_1d(
    values: Sequence[tuple[str, float]],
    g: int,
    seed: int,
    direction: Direction = Direction.NEGATIVE,
    top_rank: int | None = None,
) -> list[Cluster]:
    """Cluster (service id, value) pairs into g ranked clusters, best first.

    If fewer than g distinct values exist, g is reduced to the distinct count.
    Ranks run from `top_rank` (default: the effective g) downwards.

    >>> pairs = [("a", 1.0), ("b", 2.0), ("c", 100.0), ("d", 101.0)]
    >>> [c.members for c in kmeans_1d(pairs, 2, seed=0)]
    [('a', 'b'), ('c', 'd')]

    Raises:
        TooFewValues: If fewer than g values are supplied
    """
    if g < 1:
        raise ValueError(f"Cluster count must be at least 1, got {g}")
    if len(values) < g:
        raise TooFewValues(f"Cannot make {g} clusters from {len(values)} values")
    ids = [service for service, _ in values]
    x = np.asarray([value for _, value in values], dtype=np.float64)
    distinct = int(np.unique(x).size)
    if distinct < g:
        logger.debug(f"Reduced cluster count from {g} to {distinct} distinct values")
        g = distinct

    best: LloydResult | None = None
    for child in np.random.SeedSequence(seed).spawn(RESTARTS):
        rng = np.random.default_rng(child)
        result = lloyd_1d(x, kmeans_plusplus_1d(x, g, rng))
        if best is None or result.inertia < best.inertia:
            best = result
    assert best is not None
    return _rank_clusters(ids, x, best, direction, g if top_rank is None else top_rank)


def davies_bouldin(clusters: Sequence[Cluster]) -> float:
    """Davies-Bouldin index with mean absolute deviation as cluster scatter.

    >>> a = Cluster(("a", "b"), (0.0, 1.0), 0.5, 2)
    >>> b = Cluster(("c", "d"), (10.0, 11.0), 10.5, 1)
    >>> round(davies_bouldin([a, b]), 12)
    0.1

    Raises:
        SingleCluster: With fewer than two clusters
        CoincidentCentroids: If two clusters share a centroid
    """
    if len(clusters) < 2:
        raise SingleCluster("Davies-Bouldin needs at least two clusters")
    scatter = [
        float(np.mean(np.abs(np.asarray(c.values) - c.centroid))) for c in clusters
    ]
    total = 0.0
    for i, ci in enumerate(clusters):
        worst = 0.0
        for j, cj in enumerate(clusters):
            if i == j:
                continue
            distance = abs(ci.centroid - cj.centroid)
            if distance == 0.0:
                raise CoincidentCentroids(
                    f"Clusters {i} and {j} share centroid {ci.centroid}"
                )
            worst = max(worst, (scatter[i] + scatter[j]) / distance)
        total += worst
    return total / len(clusters)


def choose_g(
    values: Sequence[tuple[str, float]],
    g_range: tuple[int, int],
    seed: int,
) -> int:
    """Return the cluster count in g_range with the lowest Davies-Bouldin index.

    Ties go to the smaller g. Undefined indexes count as infinity.
    """
    g_lo, g_hi = g_range
    if not 2 <= g_lo <= g_hi:
        raise ValueError(f"Invalid cluster-count range {g_range}")
    if g_hi > len(values):
        raise TooFewValues(f"Cannot make {g_hi} clusters from {len(values)} values")
    best_g = g_lo
    best_score = math.inf
    for g in range(g_lo, g_hi + 1):
        try:
            score = davies_bouldin(kmeans_1d(values, g, seed))
        except (SingleCluster, CoincidentCentroids):
            score = math.inf
        logger.debug(f"Davies-Bouldin index for g={g}: {score}")
        if score < best_score:
            best_g, best_score = g, score
    return best_g


def cluster_count(
    values: Sequence[tuple[str, float]],
    g_range: tuple[int, int],
    seed: int,
) -> int:
    """Choose g for one property, clamping the range to the distinct values.

    Returns 1 when fewer than two distinct values exist.
    """
    distinct = len({value for _, value in values})
    if distinct < 2:
        return 1
    g_lo, g_hi = g_range
    g_hi = min(g_hi, distinct)
    g_lo = min(g_lo, g_hi)
    return choose_g(values, (max(2, g_lo), g_hi), seed)
