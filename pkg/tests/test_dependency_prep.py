"""Tests for dependency pre-processing and expansion of fictive services."""

import random

import pytest
from conftest import candidate, make_instance, runs

from qassa.aggregation import AggregationApproach, aggregate
from qassa.dependency_prep import (
    are_adjacent,
    enclosing_pattern,
    expand_fictive,
    merge_inter,
    merge_intra,
    preprocess,
    relative_close,
)
from qassa.errors import (
    ConflictingDependencies,
    EmptyIntersection,
    NoLinks,
    UnknownActivity,
    UnknownFictiveId,
    UnknownService,
)
from qassa.global_selection import CompositionSolution
from qassa.model import (
    ActivityNode,
    Constituent,
    InterDependency,
    IntraDependency,
    LinkPattern,
    ParallelNode,
    QoSVector,
    SequenceNode,
    ServiceCandidate,
    TaskGraph,
    validate_instance,
)
from qassa.pipeline import SelectionConfig, select


def shared_candidates():
    return {
        "A": (candidate("s1", 10, 0.9), candidate("s2", 20, 0.8)),
        "B": (candidate("s2", 5, 0.5), candidate("s3", 7, 0.9)),
        "C": (candidate("c1", 1, 0.99), candidate("c2", 2, 0.95)),
    }


def prepared(two_props, task, dependencies, candidates=None):
    instance = make_instance(
        two_props,
        task,
        candidates or shared_candidates(),
        (1000.0, 0.0),
        dependencies=dependencies,
    )
    return preprocess(validate_instance(instance))


# =============================================================================
# Graph helpers
# =============================================================================


class TestGraphHelpers:
    """Tests for locating activities in the task tree."""

    def test_enclosing_pattern(self):
        """Test that the lowest common container decides the link pattern."""
        root = SequenceNode(
            (ActivityNode("A"), ParallelNode((ActivityNode("B"), ActivityNode("C"))))
        )
        assert enclosing_pattern(root, ["B", "C"]) is LinkPattern.PARALLEL
        assert enclosing_pattern(root, ["A", "C"]) is LinkPattern.SEQUENCE

    def test_adjacent(self):
        """Test that only consecutive siblings count as adjacent."""
        root = TaskGraph.sequence("A", "B", "C").root
        assert are_adjacent(root, ["A", "B"])
        assert not are_adjacent(root, ["A", "C"])


# =============================================================================
# Merges
# =============================================================================


class TestMerges:
    """Tests for building coarse activities."""

    def test_intra_keeps_common_services(self, two_props):
        """Test that an intra merge keeps shared services with folded QoS."""
        coarse, merged = merge_intra(["A", "B"], shared_candidates(), two_props)
        assert coarse == "A+B"
        assert [s.id for s in merged] == ["s2"]
        assert merged[0].qos.values == pytest.approx((25.0, 0.4))
        assert merged[0].fictive
        assert merged[0].constituents == (
            Constituent("A", "s2"),
            Constituent("B", "s2"),
        )

    def test_intra_empty_intersection(self, two_props):
        """Test that activities without a common service cannot be merged."""
        with pytest.raises(EmptyIntersection) as info:
            merge_intra(["A", "C"], shared_candidates(), two_props)
        assert info.value.activities == ("A", "C")

    def test_inter_parallel_link(self, two_props):
        """Test a fictive service per link, folded in parallel."""
        coarse, merged = merge_inter(
            ["A", "C"],
            [("s1", "c2"), ("s2", "c1"), ("s1", "c2")],
            shared_candidates(),
            two_props,
            LinkPattern.PARALLEL,
        )
        assert coarse == "A*C"
        assert [s.id for s in merged] == ["s1*c2", "s2*c1"]
        assert merged[0].qos.values == pytest.approx((10.0, 0.9 * 0.95))
        assert merged[0].link is LinkPattern.PARALLEL

    def test_inter_errors(self, two_props):
        """Test that links are required and must name candidates."""
        with pytest.raises(NoLinks):
            merge_inter(["A", "C"], [], shared_candidates(), two_props)
        with pytest.raises(UnknownService):
            merge_inter(["A", "C"], [("s1", "c9")], shared_candidates(), two_props)


# =============================================================================
# Pre-processing
# =============================================================================


class TestPreprocess:
    """Tests for whole-instance pre-processing."""

    def test_no_dependencies(self, two_props):
        """Test that an instance without dependencies passes through."""
        result = prepared(two_props, TaskGraph.sequence("A", "B", "C"), ())
        assert result.instance.task.activities == ("A", "B", "C")
        assert len(result.expansion) == 0

    def test_intra_non_adjacent_warns(self, two_props):
        """Test that merging non-adjacent activities is reported."""
        result = prepared(
            two_props,
            TaskGraph.sequence("A", "C", "B"),
            [IntraDependency(("A", "B"))],
        )
        assert result.instance.task.activities == ("A+B", "C")
        assert len(result.warnings) == 1
        assert "not adjacent" in result.warnings[0]

    def test_unknown_activity(self, two_props):
        """Test that a dependency must name task activities."""
        with pytest.raises(UnknownActivity):
            prepared(
                two_props,
                TaskGraph.sequence("A", "B", "C"),
                [IntraDependency(("A", "D"))],
            )

    def test_overlapping_inter(self, two_props):
        """Test that an activity may belong to one inter-dependency only."""
        with pytest.raises(ConflictingDependencies):
            prepared(
                two_props,
                TaskGraph.sequence("A", "B", "C"),
                [
                    InterDependency(("A", "B"), (("s1", "s2"),)),
                    InterDependency(("B", "C"), (("s2", "c1"),)),
                ],
            )

    def test_inter_within_intra_group(self, two_props):
        """Test that an inter-dependency inside one intra group conflicts."""
        with pytest.raises(ConflictingDependencies):
            prepared(
                two_props,
                TaskGraph.sequence("A", "B", "C"),
                [
                    IntraDependency(("A", "B")),
                    InterDependency(("A", "B"), (("s2", "s2"),)),
                ],
            )

    def test_links_lost_to_intra_merge(self, two_props):
        """Test that an inter-dependency with no surviving link fails."""
        with pytest.raises(NoLinks):
            prepared(
                two_props,
                TaskGraph.sequence("A", "B", "C"),
                [
                    IntraDependency(("A", "B")),
                    InterDependency(("A", "C"), (("s1", "c1"),)),
                ],
            )

    def test_nested_expansion(self, two_props):
        """Test that an inter merge over an intra merge expands to originals."""
        result = prepared(
            two_props,
            TaskGraph.sequence("A", "B", "C"),
            [
                IntraDependency(("A", "B")),
                InterDependency(("C", "A"), (("c2", "s2"),)),
            ],
        )
        assert result.instance.task.activities == ("A+B*C",)
        (fictive,) = result.instance.candidates["A+B*C"]
        assert fictive.id == "s2*c2"
        assert fictive.qos.values == pytest.approx((27.0, 0.8 * 0.5 * 0.95))
        solution = CompositionSolution({"A+B*C": fictive}, fictive.qos, 1.0)
        expanded = expand_fictive(solution, result.expansion)
        assert expanded.service_ids() == {"A": "s2", "B": "s2", "C": "c2"}
        assert list(expanded.binding) == ["A", "B", "C"]
        assert expanded.binding["C"] == shared_candidates()["C"][1]
        assert expanded.qos == fictive.qos

    def test_unknown_fictive(self, two_props):
        """Test that a fictive service missing from the table is an error."""
        result = prepared(
            two_props, TaskGraph.sequence("A", "B"), [IntraDependency(("A", "B"))]
        )
        ghost = ServiceCandidate(
            "ghost",
            QoSVector.of(1, 1),
            fictive=True,
            constituents=(Constituent("A", "ghost"),),
        )
        solution = CompositionSolution({"A+B": ghost}, ghost.qos, 0.0)
        with pytest.raises(UnknownFictiveId):
            expand_fictive(solution, result.expansion)


class TestRoundTrip:
    """Tests that selection over a reduced instance expands faithfully."""

    def test_select_expand_reaggregate(self, four_props, request):
        """Test that expanded compositions re-aggregate to the reduced QoS."""
        for seed in range(runs(request, 40, 1000)):
            rng = random.Random(seed)
            activities = ["A1", "A2", "A3", "A4", "A5"]
            services = [f"s{j}" for j in range(6)]
            candidates = {
                a: [
                    candidate(
                        s,
                        rng.randint(10, 100),
                        rng.randint(1, 20),
                        rng.uniform(0.9, 1.0),
                        rng.randint(1, 50),
                    )
                    for s in rng.sample(services, 4)
                ]
                for a in activities
            }
            common = {c.id for c in candidates["A1"]} & {c.id for c in candidates["A2"]}
            if not common:
                continue
            task = TaskGraph(
                SequenceNode(
                    (
                        ActivityNode("A1"),
                        ActivityNode("A2"),
                        ParallelNode((ActivityNode("A3"), ActivityNode("A4"))),
                        ActivityNode("A5"),
                    )
                )
            )
            links = tuple(
                (rng.choice(candidates["A3"]).id, rng.choice(candidates["A4"]).id)
                for _ in range(3)
            )
            instance = make_instance(
                four_props,
                task,
                candidates,
                (10_000.0, 10_000.0, 0.0, 0.0),
                dependencies=[
                    IntraDependency(("A1", "A2")),
                    InterDependency(("A3", "A4"), links, LinkPattern.PARALLEL),
                ],
            )
            config = SelectionConfig(g=2, seed=seed)
            result = select(instance, config)
            assert result.feasible
            for solution in result.ranked:
                assert list(solution.binding) == activities
                ids = solution.service_ids()
                assert ids["A1"] == ids["A2"] in common
                assert (ids["A3"], ids["A4"]) in links
                again = aggregate(
                    task, solution.binding, four_props, AggregationApproach.WORST
                )
                assert relative_close(again, solution.qos)
