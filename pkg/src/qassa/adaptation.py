"""Run-time adaptation of a running composition after a service fault.

Two strategies are tried in order: substituting the faulty service by another
service of its pool, then substituting the whole not-yet-executed part by the
matching part of an archived alternative composition. When neither keeps the
composition feasible, the user is asked to relax the constraints that blocked
every option.

Executed activities are never rebound; their observed QoS replaces the
advertised one in every feasibility check.
"""

import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .aggregation import (
    AggregationApproach,
    UtilityBounds,
    aggregate,
    compute_bounds,
    utility,
    violated,
)
from .dependency_prep import ExpansionTable, expand_fictive
from .errors import (
    InstanceFormatError,
    InvalidFault,
    NoFeasibleSubcomposition,
    NoFeasibleSubstitute,
)
from .global_selection import CompositionSolution
from .model import Instance, QoSVector, ServiceCandidate

logger = logging.getLogger(__name__)


class Strategy(Enum):
    SINGLE = "single-substitution"
    SUBCOMPOSITION = "sub-composition-substitution"


@dataclass(frozen=True)
class ExecutionState:
    """Snapshot of a running composition.

    Attributes:
        composition: The composition being executed
        executed: Activities already executed
        actual_qos: Observed QoS of every executed activity
    """

    composition: CompositionSolution
    executed: frozenset[str] = frozenset()
    actual_qos: Mapping[str, QoSVector] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.actual_qos) != set(self.executed):
            raise ValueError("Observed QoS must be given for exactly the executed set")
        unknown = self.executed - set(self.composition.binding)
        if unknown:
            raise InvalidFault(f"Executed activities {sorted(unknown)} are not bound")


@dataclass(frozen=True)
class Fault:
    """A fault of the service bound to `faulty_activity`.

    `observed_qos`, when given, is the measured QoS of `after_activity`, the
    activity that has just executed.
    """

    faulty_activity: str
    after_activity: str | None = None
    observed_qos: QoSVector | None = None

    def __post_init__(self):
        if self.observed_qos is not None and self.after_activity is None:
            raise InvalidFault("Observed QoS needs the activity it was observed on")


@dataclass(frozen=True)
class NewComposition:
    composition: CompositionSolution
    strategy: Strategy


@dataclass(frozen=True)
class RelaxationNeeded:
    """No feasible option remains; these constraints should be relaxed."""

    properties: tuple[str, ...]


AdaptationOutcome = NewComposition | RelaxationNeeded


def _hybrid(
    instance: Instance,
    binding: Mapping[str, ServiceCandidate],
    state: ExecutionState,
    approach: AggregationApproach,
    bounds: UtilityBounds,
) -> CompositionSolution:
    """Score a binding with observed QoS in place of executed services' QoS."""
    effective = {
        activity: (
            ServiceCandidate(service.id, state.actual_qos[activity])
            if activity in state.executed
            else service
        )
        for activity, service in binding.items()
    }
    qos = aggregate(instance.task, effective, instance.properties, approach)
    return CompositionSolution(
        dict(binding),
        qos,
        utility(qos, instance.weights, bounds, instance.properties),
    )


def _check_faulty(state: ExecutionState, faulty_activity: str) -> None:
    if faulty_activity not in state.composition.binding:
        raise InvalidFault(f"Unknown activity {faulty_activity!r}")
    if faulty_activity in state.executed:
        raise InvalidFault(f"Activity {faulty_activity!r} has already executed")


def _substitutes(
    state: ExecutionState,
    faulty_activity: str,
    pools: Mapping[str, Sequence[ServiceCandidate]],
    instance: Instance,
    approach: AggregationApproach,
    bounds: UtilityBounds,
) -> list[CompositionSolution]:
    current = state.composition.binding[faulty_activity].id
    options = []
    for alternative in pools.get(faulty_activity, ()):
        if alternative.id == current:
            continue
        binding = dict(state.composition.binding)
        binding[faulty_activity] = alternative
        options.append(_hybrid(instance, binding, state, approach, bounds))
    return options


def _subcompositions(
    state: ExecutionState,
    faulty_activity: str,
    archive: Sequence[CompositionSolution],
    instance: Instance,
    approach: AggregationApproach,
    bounds: UtilityBounds,
) -> list[CompositionSolution]:
    faulty = state.composition.binding[faulty_activity].id
    options = []
    for alternative in archive:
        if alternative.binding[faulty_activity].id == faulty:
            continue
        binding = {
            activity: (
                state.composition.binding[activity]
                if activity in state.executed
                else alternative.binding[activity]
            )
            for activity in instance.task.activities
        }
        options.append(_hybrid(instance, binding, state, approach, bounds))
    return options


def _best_feasible(
    options: Sequence[CompositionSolution], instance: Instance
) -> CompositionSolution | None:
    best = None
    for option in options:
        if violated(option.qos, instance.constraints, instance.properties):
            continue
        if best is None or option.utility > best.utility:
            best = option
    return best


def substitute_single(
    state: ExecutionState,
    faulty_activity: str,
    pools: Mapping[str, Sequence[ServiceCandidate]],
    instance: Instance,
    approach: AggregationApproach,
    bounds: UtilityBounds | None = None,
) -> CompositionSolution:
    """Replace the faulty service by the best feasible alternative of its pool.

    Raises:
        InvalidFault: If the activity is unknown or already executed
        NoFeasibleSubstitute: If no alternative keeps the composition feasible
    """
    _check_faulty(state, faulty_activity)
    if bounds is None:
        bounds = compute_bounds(
            instance.task, instance.candidates, instance.properties, approach
        )
    options = _substitutes(state, faulty_activity, pools, instance, approach, bounds)
    best = _best_feasible(options, instance)
    if best is None:
        raise NoFeasibleSubstitute(
            f"None of {len(options)} alternatives for {faulty_activity!r} is feasible"
        )
    return best


def substitute_subcomposition(
    state: ExecutionState,
    faulty_activity: str,
    archive: Sequence[CompositionSolution],
    instance: Instance,
    approach: AggregationApproach,
    bounds: UtilityBounds | None = None,
) -> CompositionSolution:
    """Take the remaining part of the best archived alternative that stays feasible.

    Each candidate keeps the executed prefix and takes every other binding from
    a single archived composition. Archived compositions that use the faulty
    service are disqualified.

    Raises:
        InvalidFault: If the activity is unknown or already executed
        NoFeasibleSubcomposition: If no archived alternative qualifies
    """
    _check_faulty(state, faulty_activity)
    if bounds is None:
        bounds = compute_bounds(
            instance.task, instance.candidates, instance.properties, approach
        )
    options = _subcompositions(
        state, faulty_activity, archive, instance, approach, bounds
    )
    best = _best_feasible(options, instance)
    if best is None:
        raise NoFeasibleSubcomposition(
            f"None of {len(options)} archived alternatives is feasible"
        )
    return best


def _apply_observation(state: ExecutionState, fault: Fault) -> ExecutionState:
    if fault.observed_qos is None or fault.after_activity is None:
        return state
    if fault.after_activity not in state.executed:
        raise InvalidFault(
            f"QoS observed on {fault.after_activity!r}, which has not executed"
        )
    actual = dict(state.actual_qos)
    actual[fault.after_activity] = fault.observed_qos
    return ExecutionState(state.composition, state.executed, actual)


def _map_fault(fault: Fault, expansion: ExpansionTable | None) -> Fault:
    if expansion is None:
        return fault
    coarse = expansion.coarse_of
    after = fault.after_activity
    return Fault(
        faulty_activity=coarse.get(fault.faulty_activity, fault.faulty_activity),
        after_activity=coarse.get(after, after) if after is not None else None,
        observed_qos=fault.observed_qos,
    )


def adapt(
    state: ExecutionState,
    fault: Fault,
    pools: Mapping[str, Sequence[ServiceCandidate]],
    archive: Sequence[CompositionSolution],
    instance: Instance,
    approach: AggregationApproach,
    expansion: ExpansionTable | None = None,
) -> AdaptationOutcome:
    """React to a fault: single substitution, then sub-composition, then relaxation.

    A fault naming an original activity that was merged during pre-processing
    is applied to its coarse activity when `expansion` is given.

    Raises:
        InvalidFault: If the fault names an unknown or executed activity
    """
    fault = _map_fault(fault, expansion)
    state = _apply_observation(state, fault)
    _check_faulty(state, fault.faulty_activity)
    bounds = compute_bounds(
        instance.task, instance.candidates, instance.properties, approach
    )
    singles = _substitutes(
        state, fault.faulty_activity, pools, instance, approach, bounds
    )
    best = _best_feasible(singles, instance)
    if best is not None:
        logger.info(f"Replaced the service of {fault.faulty_activity!r}")
        return NewComposition(best, Strategy.SINGLE)
    hybrids = _subcompositions(
        state, fault.faulty_activity, archive, instance, approach, bounds
    )
    best = _best_feasible(hybrids, instance)
    if best is not None:
        logger.info(f"Took an archived sub-composition at {fault.faulty_activity!r}")
        return NewComposition(best, Strategy.SUBCOMPOSITION)

    options = singles + hybrids
    blocked = [
        set(violated(o.qos, instance.constraints, instance.properties))
        for o in options
    ]
    common = set.intersection(*blocked) if blocked else set()
    if not common:
        common = set().union(*blocked) if blocked else set()
    if not common:
        current = _hybrid(instance, state.composition.binding, state, approach, bounds)
        common = set(violated(current.qos, instance.constraints, instance.properties))
    if not common:
        common = set(instance.properties.names)
    names = tuple(p.name for p in instance.properties if p.name in common)
    logger.warning(f"No feasible adaptation; constraints to relax: {', '.join(names)}")
    return RelaxationNeeded(names)


# =============================================================================
# Execution driver
# =============================================================================


@dataclass(frozen=True)
class TraceEntry:
    step: int
    fault: Fault
    outcome: str
    properties: tuple[str, ...] = ()
    binding: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class AdaptationTrace:
    """What happened while executing a composition against a fault script."""

    entries: tuple[TraceEntry, ...]
    final: CompositionSolution | None
    feasible: bool
    status: str

    @property
    def adaptations(self) -> int:
        return sum(1 for e in self.entries if e.outcome != "relaxation-needed")

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "feasible": self.feasible,
            "adaptations": self.adaptations,
            "entries": [
                {
                    "step": e.step,
                    "after_activity": e.fault.after_activity,
                    "faulty_activity": e.fault.faulty_activity,
                    "outcome": e.outcome,
                    "properties": list(e.properties),
                    "binding": dict(e.binding),
                }
                for e in self.entries
            ],
            "final": (
                {
                    "binding": self.final.service_ids(),
                    "qos": list(self.final.qos.values),
                    "utility": self.final.utility,
                }
                if self.final is not None
                else None
            ),
        }


def execute_with_faults(
    composition: CompositionSolution,
    faults: Sequence[Fault],
    pools: Mapping[str, Sequence[ServiceCandidate]],
    archive: Sequence[CompositionSolution],
    instance: Instance,
    approach: AggregationApproach,
    expansion: ExpansionTable | None = None,
) -> AdaptationTrace:
    """Execute activities in graph order, adapting at each scripted fault.

    Faults with no `after_activity` fire before the first activity. Execution
    stops at the first fault that needs relaxation. With an `expansion`, the
    faults name original activities and every reported binding is expanded
    back onto them.
    """

    def concrete(solution: CompositionSolution) -> CompositionSolution:
        if expansion is None:
            return solution
        return expand_fictive(solution, expansion)

    mapped = [(f, _map_fault(f, expansion)) for f in faults]
    activities = instance.task.activities
    for _, fault in mapped:
        if fault.after_activity is not None and fault.after_activity not in activities:
            raise InvalidFault(f"Unknown activity {fault.after_activity!r}")
    bounds = compute_bounds(
        instance.task, instance.candidates, instance.properties, approach
    )
    state = ExecutionState(composition)
    entries: list[TraceEntry] = []
    last: str | None = None
    step = 0
    for position in range(len(activities) + 1):
        for original, fault in ((o, f) for o, f in mapped if f.after_activity == last):
            outcome = adapt(state, fault, pools, archive, instance, approach)
            state = _apply_observation(state, fault)
            if isinstance(outcome, RelaxationNeeded):
                entries.append(
                    TraceEntry(step, original, "relaxation-needed", outcome.properties)
                )
                return AdaptationTrace(
                    tuple(entries), None, False, "relaxation-needed"
                )
            state = ExecutionState(
                outcome.composition, state.executed, state.actual_qos
            )
            entries.append(
                TraceEntry(
                    step,
                    original,
                    outcome.strategy.value,
                    binding=concrete(outcome.composition).service_ids(),
                )
            )
            step += 1
        if position == len(activities):
            break
        last = activities[position]
        executed = state.executed | {last}
        actual = dict(state.actual_qos)
        actual[last] = state.composition.binding[last].qos
        state = ExecutionState(state.composition, executed, actual)

    final = _hybrid(instance, state.composition.binding, state, approach, bounds)
    ok = not violated(final.qos, instance.constraints, instance.properties)
    return AdaptationTrace(tuple(entries), concrete(final), ok, "completed")


def load_faults(path: str | Path) -> list[Fault]:
    """Read a fault script: a JSON list of {after_activity, faulty_activity,
    observed_qos?} objects."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        faults = []
        for entry in data:
            observed = entry.get("observed_qos")
            faults.append(
                Fault(
                    faulty_activity=str(entry["faulty_activity"]),
                    after_activity=entry.get("after_activity"),
                    observed_qos=(
                        QoSVector(tuple(float(v) for v in observed))
                        if observed is not None
                        else None
                    ),
                )
            )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise InstanceFormatError(f"Invalid fault script {path}: {e!r}") from e
    return faults
