"""Tests for run-time adaptation after service faults."""

import json

import pytest
from conftest import candidate, make_instance, random_instance, runs

from qassa.adaptation import (
    ExecutionState,
    Fault,
    NewComposition,
    RelaxationNeeded,
    Strategy,
    adapt,
    execute_with_faults,
    load_faults,
    substitute_single,
    substitute_subcomposition,
)
from qassa.aggregation import AggregationApproach, aggregate, compute_bounds, feasible
from qassa.dependency_prep import expand_fictive
from qassa.errors import (
    InstanceFormatError,
    InvalidFault,
    NoFeasibleSubcomposition,
    NoFeasibleSubstitute,
)
from qassa.global_selection import evaluate, rank
from qassa.model import InterDependency, QoSVector, TaskGraph
from qassa.pipeline import SelectionConfig, prepare, select
from qassa.workload import bundled_file

WORST = AggregationApproach.WORST


@pytest.fixture
def instance(two_props):
    return make_instance(
        two_props,
        TaskGraph.sequence("A", "B", "C"),
        {
            "A": [candidate("a1", 10, 0.9), candidate("a2", 20, 0.9)],
            "B": [
                candidate("b1", 10, 0.9),
                candidate("b2", 30, 0.9),
                candidate("b3", 80, 0.9),
            ],
            "C": [candidate("c1", 10, 0.9), candidate("c2", 40, 0.9)],
        },
        (100.0, 0.5),
    )


def compose(instance, **services):
    bounds = compute_bounds(
        instance.task, instance.candidates, instance.properties, WORST
    )
    binding = {a: instance.candidate(a, s) for a, s in services.items()}
    return evaluate(instance, binding, WORST, bounds)


def executed_a(instance, observed=None):
    composition = compose(instance, A="a1", B="b1", C="c1")
    qos = observed or composition.binding["A"].qos
    return ExecutionState(composition, frozenset({"A"}), {"A": qos})


class TestStrategies:
    """Tests for the individual substitution strategies."""

    def test_single_substitution(self, instance):
        """Test that the best feasible pool alternative replaces the faulty one."""
        state = executed_a(instance)
        best = substitute_single(state, "B", instance.candidates, instance, WORST)
        assert best.service_ids() == {"A": "a1", "B": "b2", "C": "c1"}
        assert best.qos.values == pytest.approx((50.0, 0.729))

    def test_single_no_alternative(self, instance):
        """Test that a pool with only the faulty service has no substitute."""
        state = executed_a(instance)
        pools = {"B": (instance.candidate("B", "b1"),)}
        with pytest.raises(NoFeasibleSubstitute):
            substitute_single(state, "B", pools, instance, WORST)

    def test_subcomposition_keeps_executed(self, instance):
        """Test that the executed prefix is kept and the rest comes from the archive."""
        state = executed_a(instance)
        archive = [compose(instance, A="a2", B="b2", C="c2")]
        best = substitute_subcomposition(state, "B", archive, instance, WORST)
        assert best.service_ids() == {"A": "a1", "B": "b2", "C": "c2"}
        assert best.qos.values[0] == pytest.approx(80.0)

    def test_subcomposition_skips_faulty_service(self, instance):
        """Test that archived compositions using the faulty service are skipped."""
        state = executed_a(instance)
        archive = [compose(instance, A="a2", B="b1", C="c2")]
        with pytest.raises(NoFeasibleSubcomposition):
            substitute_subcomposition(state, "B", archive, instance, WORST)

    def test_executed_activity_cannot_fail(self, instance):
        """Test that an executed activity is never rebound."""
        with pytest.raises(InvalidFault):
            substitute_single(
                executed_a(instance), "A", instance.candidates, instance, WORST
            )

    def test_observed_needs_activity(self):
        """Test that observed QoS must name the activity it was measured on."""
        with pytest.raises(InvalidFault):
            Fault("B", observed_qos=QoSVector.of(1, 1))


class TestAdapt:
    """Tests for the adaptation decision."""

    def test_prefers_single(self, instance):
        """Test that single substitution is tried first."""
        archive = [compose(instance, A="a2", B="b2", C="c2")]
        outcome = adapt(
            executed_a(instance),
            Fault("B", "A"),
            instance.candidates,
            archive,
            instance,
            WORST,
        )
        assert isinstance(outcome, NewComposition)
        assert outcome.strategy is Strategy.SINGLE

    def test_falls_back_to_subcomposition(self, instance):
        """Test that the archive is used when the pool has no alternative."""
        archive = [compose(instance, A="a2", B="b2", C="c2")]
        outcome = adapt(
            executed_a(instance),
            Fault("B", "A"),
            {"B": (instance.candidate("B", "b1"),)},
            archive,
            instance,
            WORST,
        )
        assert isinstance(outcome, NewComposition)
        assert outcome.strategy is Strategy.SUBCOMPOSITION

    def test_relaxation(self, instance):
        """Test that a slow executed prefix leaves only relaxation."""
        archive = [compose(instance, A="a2", B="b2", C="c2")]
        outcome = adapt(
            executed_a(instance),
            Fault("B", "A", QoSVector.of(70, 0.9)),
            instance.candidates,
            archive,
            instance,
            WORST,
        )
        assert outcome == RelaxationNeeded(("response_time",))


class TestExecution:
    """Tests for executing a composition against a fault script."""

    def test_no_faults(self, instance):
        """Test that an empty script completes without adaptations."""
        composition = compose(instance, A="a1", B="b1", C="c1")
        trace = execute_with_faults(
            composition, [], instance.candidates, [], instance, WORST
        )
        assert trace.status == "completed"
        assert trace.feasible
        assert trace.adaptations == 0
        assert trace.final.service_ids() == composition.service_ids()

    def test_single_fault(self, instance):
        """Test that a recoverable fault shows up as a single substitution."""
        composition = compose(instance, A="a1", B="b1", C="c1")
        trace = execute_with_faults(
            composition,
            [Fault("B", "A")],
            instance.candidates,
            [],
            instance,
            WORST,
        )
        assert trace.adaptations == 1
        assert trace.entries[0].outcome == "single-substitution"
        assert trace.final.service_ids()["B"] == "b2"
        assert trace.to_dict()["entries"][0]["binding"]["B"] == "b2"

    def test_fault_before_start(self, instance):
        """Test that a fault with no predecessor fires before execution."""
        composition = compose(instance, A="a1", B="b1", C="c1")
        trace = execute_with_faults(
            composition, [Fault("A")], instance.candidates, [], instance, WORST
        )
        assert trace.final.service_ids()["A"] == "a2"

    def test_unrecoverable(self, instance):
        """Test that the trace stops with relaxation-needed."""
        composition = compose(instance, A="a1", B="b1", C="c1")
        trace = execute_with_faults(
            composition,
            [Fault("B", "A", QoSVector.of(95, 0.9))],
            instance.candidates,
            [],
            instance,
            WORST,
        )
        assert trace.status == "relaxation-needed"
        assert trace.final is None
        assert trace.entries[-1].properties == ("response_time",)

    def test_linked_services_reported_concretely(self, two_props):
        """Test that a merged pair is reported as its original services and is
        replaced together when one of them fails."""
        linked = make_instance(
            two_props,
            TaskGraph.sequence("A", "B", "C"),
            {
                "A": [candidate("a1", 10, 0.9), candidate("a2", 20, 0.9)],
                "B": [candidate("b1", 10, 0.9), candidate("b2", 30, 0.9)],
                "C": [candidate("c1", 10, 0.9)],
            },
            (100.0, 0.5),
            dependencies=[InterDependency(("A", "B"), (("a1", "b1"), ("a2", "b2")))],
        )
        prepared = prepare(linked, SelectionConfig())
        reduced = prepared.instance
        coarse = prepared.expansion.coarse_of["B"]
        assert prepared.expansion.coarse_of["A"] == coarse
        bounds = compute_bounds(
            reduced.task, reduced.candidates, reduced.properties, WORST
        )
        binding = {a: reduced.candidates[a][0] for a in reduced.task.activities}
        composition = evaluate(reduced, binding, WORST, bounds)
        before = expand_fictive(composition, prepared.expansion).service_ids()

        trace = execute_with_faults(
            composition,
            [Fault("B")],
            reduced.candidates,
            [],
            reduced,
            WORST,
            prepared.expansion,
        )
        assert trace.status == "completed"
        after = trace.final.service_ids()
        assert list(after) == ["A", "B", "C"]
        assert (after["A"], after["B"]) in {("a1", "b1"), ("a2", "b2")}
        assert after["A"] != before["A"]
        assert after["B"] != before["B"]
        (entry,) = trace.to_dict()["entries"]
        assert entry["faulty_activity"] == "B"
        assert entry["binding"] == after
        assert coarse not in after

    def test_unknown_after_activity(self, instance):
        """Test that a fault after an unknown activity is rejected."""
        composition = compose(instance, A="a1", B="b1", C="c1")
        with pytest.raises(InvalidFault):
            execute_with_faults(
                composition, [Fault("B", "Z")], instance.candidates, [], instance, WORST
            )


class TestFaultScript:
    """Tests for reading fault scripts."""

    def test_bundled(self):
        """Test the bundled fault script."""
        assert load_faults(bundled_file("faults.json")) == [Fault("A2", "A1")]

    def test_observed(self, tmp_path):
        """Test that observed QoS is read as a vector."""
        path = tmp_path / "faults.json"
        path.write_text(
            json.dumps(
                [
                    {
                        "after_activity": "A",
                        "faulty_activity": "B",
                        "observed_qos": [1, 2],
                    }
                ]
            )
        )
        assert load_faults(path)[0].observed_qos == QoSVector.of(1, 2)

    def test_invalid(self, tmp_path):
        """Test that a script entry without a faulty activity is rejected."""
        path = tmp_path / "faults.json"
        path.write_text(json.dumps([{"after_activity": "A"}]))
        with pytest.raises(InstanceFormatError):
            load_faults(path)


class TestCompleteness:
    """Adaptation finds a feasible option whenever one exists."""

    def test_every_injection_point(self, request, four_props):
        """Test against brute force over pool alternatives and archive hybrids."""
        for seed in range(runs(request, 15, 200)):
            inst = random_instance(seed, four_props, activities=4, services=5)
            result = select(inst, SelectionConfig(g=2, seed=seed, archive_size=5))
            if not result.feasible:
                continue
            pools = result.local.pools
            archive = rank(result.archive)
            composition = archive[0]
            activities = inst.task.activities
            constraints = inst.constraints
            for done in range(len(activities)):
                executed = activities[:done]
                state = ExecutionState(
                    composition,
                    frozenset(executed),
                    {a: composition.binding[a].qos for a in executed},
                )
                for faulty in activities[done:]:
                    current = composition.binding[faulty].id
                    options = []
                    for service in pools[faulty]:
                        if service.id != current:
                            options.append({**composition.binding, faulty: service})
                    for alternative in archive:
                        if alternative.binding[faulty].id == current:
                            continue
                        options.append(
                            {
                                a: composition.binding[a]
                                if a in executed
                                else alternative.binding[a]
                                for a in activities
                            }
                        )
                    exists = any(
                        feasible(
                            aggregate(inst.task, b, four_props, WORST),
                            constraints,
                            four_props,
                        )
                        for b in options
                    )
                    outcome = adapt(
                        state, Fault(faulty), pools, archive, inst, WORST
                    )
                    assert isinstance(outcome, NewComposition) == exists
                    if exists:
                        qos = outcome.composition.qos
                        assert feasible(qos, constraints, four_props)
