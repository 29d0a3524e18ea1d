"""Discrete-event simulator of distributed selection across devices.

A requester broadcasts a help message, splits the request into one elementary
request per activity, and dispatches them to the helpers that replied. Each
helper runs the local selection on the elementary requests it receives, one
after the other, and returns the resulting QoS classes. Requests that are
dropped or whose results miss the session timeout are re-dispatched to the
remaining helpers, and after ``max_retries`` attempts the requester runs them
itself. Pools are built only from delivered results and the requester's own
fallback selections, then the requester runs the global phase on them.

Processing costs are charged to a virtual clock (milliseconds). Events are
committed in (time, node id, sequence) order, so a run is deterministic for a
given scenario seed and cost model.
"""

import asyncio
import heapq
import json
import logging
import random
import time
from collections import Counter
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import InstanceFormatError, NoHelpers
from .global_selection import CompositionSolution, SolutionArchive
from .local_selection import DEFAULT_TOP_K, QoSClass, select_classes
from .model import Instance, PropertySet, ServiceCandidate
from .pipeline import (
    PreparedInstance,
    SelectionConfig,
    activity_seed,
    expand_archive,
    pools_from,
    prepare,
    run_global,
)

logger = logging.getLogger(__name__)


class NodeRole(Enum):
    REQUESTER = "requester"
    HELPER = "helper"


class MessageKind(Enum):
    HELP = "help"
    HELP_REPLY = "help-reply"
    ELEMENTARY_REQUEST = "elementary-request"
    ELEMENTARY_RESULT = "elementary-result"
    SESSION_TIMEOUT = "session-timeout"


class CostModel(Enum):
    """How local-selection processing time is charged to the virtual clock.

    - MEASURED: measured wall time x compute factor
    - LINEAR: linear_cost_ms per candidate and property x compute factor
    """

    MEASURED = "measured"
    LINEAR = "linear"


@dataclass(frozen=True)
class SimNode:
    """A simulated device.

    Attributes:
        id: Node identifier
        role: Requester or helper
        compute_factor: Multiplier of simulated processing time
        down: (start, end) intervals in ms during which the node is down
    """

    id: str
    role: NodeRole = NodeRole.HELPER
    compute_factor: float = 1.0
    down: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.compute_factor < 0:
            raise ValueError(f"Node {self.id!r} has a negative compute factor")

    def alive(self, at: float) -> bool:
        return not any(start <= at < end for start, end in self.down)


@dataclass(frozen=True)
class SimMessage:
    kind: MessageKind
    source: str
    target: str
    payload: Any
    send_time: float
    latency: float

    @property
    def deliver_time(self) -> float:
        return self.send_time + self.latency


@dataclass(frozen=True)
class ElementaryRequest:
    """Everything a helper needs to run the local selection of one activity.

    Attributes:
        activity: Activity id
        index: Graph-order index of the activity
        candidates: The activity's candidate services
        constraints: Global QoS constraints of the request
        weights: User weights, one per property
        properties: Property definitions of the instance
        cluster_counts: Cluster count per property
        seed: Seed of the activity's clustering
        top_k: Number of classes to return
    """

    activity: str
    index: int
    candidates: tuple[ServiceCandidate, ...]
    constraints: tuple[float, ...]
    weights: tuple[float, ...]
    properties: PropertySet
    cluster_counts: tuple[int, ...]
    seed: int
    top_k: int = DEFAULT_TOP_K

    def select(self) -> list[QoSClass]:
        return select_classes(
            self.activity,
            self.candidates,
            self.weights,
            self.cluster_counts,
            self.seed,
            self.properties,
            self.top_k,
        )


@dataclass(frozen=True)
class ElementaryResult:
    """The QoS classes a node selected for one activity."""

    activity: str
    node: str
    classes: tuple[QoSClass, ...]


@dataclass(frozen=True)
class Scenario:
    """Devices and network conditions of a simulation run.

    Attributes:
        nodes: Exactly one requester and any number of helpers
        latency_ms: Fixed one-way message latency
        latency_jitter_ms: Upper bound of a seeded uniform extra latency
        failure_prob: Probability that a helper drops an elementary request
        timeout_ms: Session timeout of one dispatch round
        seed: Seed of latency and failure draws
        max_retries: Re-dispatches of an elementary request before the
            requester runs it itself
        cost_model: How processing time is charged
        linear_cost_ms: Cost per candidate and property for the linear model
    """

    nodes: tuple[SimNode, ...]
    latency_ms: float = 0.0
    latency_jitter_ms: float = 0.0
    failure_prob: float = 0.0
    timeout_ms: float = 1000.0
    seed: int = 0
    max_retries: int = 2
    cost_model: CostModel = CostModel.MEASURED
    linear_cost_ms: float = 0.01

    def __post_init__(self):
        requesters = [n for n in self.nodes if n.role is NodeRole.REQUESTER]
        if len(requesters) != 1:
            raise ValueError(f"Need exactly one requester, got {len(requesters)}")
        if len({n.id for n in self.nodes}) != len(self.nodes):
            raise ValueError("Node ids must be unique")
        if self.timeout_ms <= 0:
            raise ValueError(f"Session timeout must be positive, got {self.timeout_ms}")
        if not 0.0 <= self.failure_prob <= 1.0:
            raise ValueError(f"Failure probability {self.failure_prob} not in [0, 1]")
        if self.latency_ms < 0 or self.latency_jitter_ms < 0 or self.max_retries < 0:
            raise ValueError("Latency, jitter and retry bound must be non-negative")

    @property
    def requester(self) -> SimNode:
        return next(n for n in self.nodes if n.role is NodeRole.REQUESTER)

    @property
    def helpers(self) -> list[SimNode]:
        return sorted(
            (n for n in self.nodes if n.role is NodeRole.HELPER), key=lambda n: n.id
        )

    @classmethod
    def perfect(cls, helpers: int, seed: int = 0, **kwargs: Any) -> "Scenario":
        """Zero latency, no failures, `helpers` equal helpers."""
        nodes = [SimNode("requester", NodeRole.REQUESTER)]
        nodes += [SimNode(f"h{i + 1:02d}") for i in range(helpers)]
        return cls(tuple(nodes), seed=seed, **kwargs)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Scenario":
        try:
            nodes = tuple(
                SimNode(
                    id=str(n["id"]),
                    role=NodeRole(n.get("role", NodeRole.HELPER.value)),
                    compute_factor=float(n.get("compute_factor", 1.0)),
                    down=tuple(
                        (float(start), float(end)) for start, end in n.get("down", ())
                    ),
                )
                for n in data["nodes"]
            )
            latency = data.get("latency", 0.0)
            if isinstance(latency, Mapping):
                base = float(latency.get("min", 0.0))
                jitter = float(latency.get("max", base)) - base
            else:
                base, jitter = float(latency), 0.0
            return cls(
                nodes=nodes,
                latency_ms=base,
                latency_jitter_ms=jitter,
                failure_prob=float(data.get("failure_prob", 0.0)),
                timeout_ms=float(data.get("timeout_ms", 1000.0)),
                seed=int(data.get("seed", 0)),
                max_retries=int(data.get("max_retries", 2)),
                cost_model=CostModel(data.get("cost_model", CostModel.MEASURED.value)),
                linear_cost_ms=float(data.get("linear_cost_ms", 0.01)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InstanceFormatError(f"Invalid scenario: {e!r}") from e

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise InstanceFormatError(f"{path}: {e}") from e
        return cls.from_dict(data)


@dataclass
class SimMetrics:
    """Counters and simulated times of one run (times in ms)."""

    makespan_ms: float = 0.0
    local_makespan_ms: float = 0.0
    global_ms: float = 0.0
    messages: Counter[str] = field(default_factory=Counter)
    helpers: int = 0
    rounds: int = 0
    retries: int = 0
    dropped: int = 0
    late: int = 0
    fallbacks: int = 0
    no_helpers: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "makespan_ms": self.makespan_ms,
            "local_makespan_ms": self.local_makespan_ms,
            "global_ms": self.global_ms,
            "messages": dict(sorted(self.messages.items())),
            "message_total": sum(self.messages.values()),
            "helpers": self.helpers,
            "rounds": self.rounds,
            "retries": self.retries,
            "dropped": self.dropped,
            "late": self.late,
            "fallbacks": self.fallbacks,
            "no_helpers": self.no_helpers,
        }


@dataclass(frozen=True)
class DistributedResult:
    archive: SolutionArchive
    ranked: list[CompositionSolution]
    pools: Mapping[str, tuple[ServiceCandidate, ...]]
    metrics: SimMetrics

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": "feasible" if self.ranked else "infeasible",
            "metrics": self.metrics.to_dict(),
            "solutions": [
                {
                    "rank": position + 1,
                    "utility": solution.utility,
                    "qos": list(solution.qos.values),
                    "binding": solution.service_ids(),
                }
                for position, solution in enumerate(self.ranked)
            ],
        }


def elementary_requests(
    prepared: PreparedInstance, config: SelectionConfig
) -> list[ElementaryRequest]:
    """One elementary request per activity of the reduced instance, in graph
    order, with the same cluster counts and seeds as a centralized run."""
    instance = prepared.instance
    return [
        ElementaryRequest(
            activity,
            index,
            tuple(instance.candidates[activity]),
            instance.constraints,
            instance.weights,
            instance.properties,
            tuple(prepared.cluster_counts[activity]),
            activity_seed(config, index),
            config.top_k,
        )
        for index, activity in enumerate(instance.task.activities)
    ]


def split_request(
    prepared: PreparedInstance,
    helpers: Sequence[SimNode],
    config: SelectionConfig | None = None,
) -> list[tuple[ElementaryRequest, str]]:
    """One elementary request per activity, balanced over the helpers.

    Each activity goes, in graph order, to the helper whose load would be
    lowest after taking it: ``(assigned + 1) * compute_factor``, ties by id.

    Raises:
        NoHelpers: If there is no helper
    """
    if not helpers:
        raise NoHelpers("No helper answered the help broadcast")
    requests = elementary_requests(prepared, config or SelectionConfig())
    by_activity = {r.activity: r for r in requests}
    return [
        (by_activity[activity], helper)
        for activity, helper in balance(list(by_activity), helpers)
    ]


def balance(
    activities: Sequence[str], helpers: Sequence[SimNode]
) -> list[tuple[str, str]]:
    """Assign each activity in turn to the helper with the lowest resulting load.

    >>> fast = SimNode("fast", compute_factor=1)
    >>> slow = SimNode("slow", compute_factor=3)
    >>> [h for _, h in balance(["A", "B", "C", "D"], [slow, fast])]
    ['fast', 'fast', 'fast', 'slow']
    """
    ordered = sorted(helpers, key=lambda h: h.id)
    assigned = dict.fromkeys((h.id for h in ordered), 0)
    result = []
    for activity in activities:
        helper = min(
            ordered, key=lambda h: ((assigned[h.id] + 1) * h.compute_factor, h.id)
        )
        assigned[helper.id] += 1
        result.append((activity, helper.id))
    return result


class DistributedSimulator:
    """Event-driven simulation of the requester/helper protocol."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.clock = 0.0
        self.metrics = SimMetrics()
        self._rng = random.Random(scenario.seed)
        self._events: list[tuple[float, str, int, SimMessage]] = []
        self._sequence = 0
        self._nodes = {n.id: n for n in scenario.nodes}
        self._callbacks: list[Callable[[SimMessage], None]] = []

    def on_message(
        self, callback: Callable[[SimMessage], None]
    ) -> Callable[[SimMessage], None]:
        """Register a callback invoked with every delivered message.

        Returns:
            The callback (for use as decorator)
        """
        self._callbacks.append(callback)
        return callback

    def _latency(self) -> float:
        jitter = self.scenario.latency_jitter_ms
        extra = self._rng.uniform(0.0, jitter) if jitter > 0 else 0.0
        return self.scenario.latency_ms + extra

    def _push(self, message: SimMessage) -> None:
        heapq.heappush(
            self._events,
            (message.deliver_time, message.target, self._sequence, message),
        )
        self._sequence += 1

    def _send(
        self, kind: MessageKind, source: str, target: str, payload: Any, at: float
    ) -> None:
        self.metrics.messages[kind.value] += 1
        self._push(SimMessage(kind, source, target, payload, at, self._latency()))

    def _deliver(self) -> SimMessage:
        at, _, _, message = heapq.heappop(self._events)
        self.clock = at
        for callback in self._callbacks:
            callback(message)
        return message

    def _broadcast(self) -> list[SimNode]:
        """Send help to every helper; return the helpers whose reply arrives
        within one session timeout."""
        requester = self.scenario.requester
        helpers = self.scenario.helpers
        for helper in helpers:
            self._send(MessageKind.HELP, requester.id, helper.id, None, self.clock)
        window = self.clock + self.scenario.timeout_ms
        replied: list[SimNode] = []
        while self._events and self._events[0][0] <= window:
            message = self._deliver()
            if message.kind is MessageKind.HELP:
                helper = self._nodes[message.target]
                if helper.alive(self.clock):
                    self._send(
                        MessageKind.HELP_REPLY,
                        helper.id,
                        requester.id,
                        None,
                        self.clock,
                    )
            elif message.kind is MessageKind.HELP_REPLY:
                replied.append(self._nodes[message.source])
                if len(replied) == len(helpers):
                    break
        if len(replied) < len(helpers):
            self.clock = max(self.clock, window)
        self._events.clear()
        return sorted(replied, key=lambda h: h.id)

    def _run(
        self, node: SimNode, request: ElementaryRequest
    ) -> tuple[ElementaryResult, float]:
        """Local selection of one request on `node`; return it with its cost."""
        start = time.perf_counter_ns()
        classes = request.select()
        if self.scenario.cost_model is CostModel.LINEAR:
            cost = (
                self.scenario.linear_cost_ms
                * len(request.candidates)
                * len(request.properties)
            )
        else:
            cost = (time.perf_counter_ns() - start) / 1e6
        result = ElementaryResult(request.activity, node.id, tuple(classes))
        return result, cost * node.compute_factor

    def _round(
        self, assignments: Sequence[tuple[ElementaryRequest, str]]
    ) -> tuple[dict[str, ElementaryResult], set[str]]:
        """Dispatch one round; return (delivered results, failed helpers)."""
        requester = self.scenario.requester.id
        start = self.clock
        self.metrics.rounds += 1
        failing: set[tuple[str, str]] = set()
        for request, helper in assignments:
            if self._rng.random() < self.scenario.failure_prob:
                failing.add((helper, request.activity))
            self._send(
                MessageKind.ELEMENTARY_REQUEST, requester, helper, request, start
            )
        deadline = start + self.scenario.timeout_ms
        self.metrics.messages[MessageKind.SESSION_TIMEOUT.value] += 1
        self._push(
            SimMessage(
                MessageKind.SESSION_TIMEOUT,
                requester,
                requester,
                None,
                start,
                self.scenario.timeout_ms,
            )
        )
        busy = dict.fromkeys((h for _, h in assignments), start)
        returned: dict[str, ElementaryResult] = {}
        failed: set[str] = set()
        while self._events:
            message = self._deliver()
            if message.kind is MessageKind.SESSION_TIMEOUT:
                break
            if message.kind is MessageKind.ELEMENTARY_REQUEST:
                request: ElementaryRequest = message.payload
                node = self._nodes[message.target]
                if (node.id, request.activity) in failing or not node.alive(self.clock):
                    logger.debug(
                        f"{node.id} dropped {request.activity} at {self.clock}"
                    )
                    self.metrics.dropped += 1
                    failed.add(node.id)
                    continue
                result, cost = self._run(node, request)
                done = max(self.clock, busy[node.id]) + cost
                busy[node.id] = done
                if not node.alive(done):
                    logger.debug(f"{node.id} went down selecting {result.activity}")
                    self.metrics.dropped += 1
                    failed.add(node.id)
                    continue
                self._send(
                    MessageKind.ELEMENTARY_RESULT, node.id, requester, result, done
                )
            elif message.kind is MessageKind.ELEMENTARY_RESULT:
                result = message.payload
                returned[result.activity] = result
                if len(returned) == len(assignments):
                    break
        for _, _, _, message in self._events:
            if message.kind is MessageKind.ELEMENTARY_RESULT:
                self.metrics.late += 1
                failed.add(message.source)
        if len(returned) < len(assignments):
            self.clock = max(self.clock, deadline)
        self._events.clear()
        return returned, failed

    def collect(
        self, prepared: PreparedInstance, config: SelectionConfig | None = None
    ) -> dict[str, list[QoSClass]]:
        """Run broadcast and dispatch rounds until every activity is covered.

        Returns:
            The QoS classes of every activity: those delivered by helpers,
            and those the requester selected itself for the rest
        """
        config = config or SelectionConfig()
        requests = {r.activity: r for r in elementary_requests(prepared, config)}
        requester = self.scenario.requester
        helpers = self._broadcast()
        self.metrics.helpers = len(helpers)
        try:
            pending = split_request(prepared, helpers, config)
        except NoHelpers:
            logger.warning("No helper replied; selecting locally on the requester")
            self.metrics.no_helpers = True
            pending = []
            local = list(requests)
        else:
            local = []
        delivered: dict[str, ElementaryResult] = {}
        attempts = dict.fromkeys(requests, 0)
        available = list(helpers)
        while pending:
            returned, failed = self._round(pending)
            delivered.update(returned)
            available = [h for h in available if h.id not in failed]
            retry: dict[str, ElementaryRequest] = {}
            for request, _ in pending:
                if request.activity in returned:
                    continue
                attempts[request.activity] += 1
                exhausted = attempts[request.activity] > self.scenario.max_retries
                if exhausted or not available:
                    local.append(request.activity)
                else:
                    retry[request.activity] = request
            self.metrics.retries += len(retry)
            pending = [
                (retry[activity], helper)
                for activity, helper in balance(list(retry), available)
            ]
        for activity in local:
            result, cost = self._run(requester, requests[activity])
            self.clock += cost
            delivered[activity] = result
            logger.debug(f"Requester selected {activity} itself")
        self.metrics.fallbacks = len(local)
        self.metrics.local_makespan_ms = self.clock
        return {a: list(delivered[a].classes) for a in requests}


async def run_distributed_async(
    instance: Instance, scenario: Scenario, config: SelectionConfig
) -> DistributedResult:
    """Simulate distributed selection; the protocol runs in a worker thread."""
    prepared = prepare(instance, config)
    simulator = DistributedSimulator(scenario)
    classes = await asyncio.to_thread(simulator.collect, prepared, config)
    pools = pools_from(prepared, classes)

    start = time.perf_counter_ns()
    archive = run_global(prepared, pools, config)
    elapsed_ms = (time.perf_counter_ns() - start) / 1e6
    metrics = simulator.metrics
    requester = scenario.requester
    if scenario.cost_model is CostModel.LINEAR:
        total = sum(len(p) for p in pools.values())
        n = len(prepared.instance.properties)
        metrics.global_ms = (
            scenario.linear_cost_ms * total * n * requester.compute_factor
        )
    else:
        metrics.global_ms = elapsed_ms * requester.compute_factor
    metrics.makespan_ms = metrics.local_makespan_ms + metrics.global_ms
    logger.info(
        f"Distributed run: {metrics.helpers} helpers, {metrics.rounds} rounds, "
        f"{metrics.fallbacks} fallbacks, makespan {metrics.makespan_ms:.3f} ms"
    )
    return DistributedResult(archive, expand_archive(prepared, archive), pools, metrics)


def run_distributed(
    instance: Instance, scenario: Scenario, config: SelectionConfig
) -> DistributedResult:
    """Blocking wrapper of :func:`run_distributed_async`."""
    return asyncio.run(run_distributed_async(instance, scenario, config))
