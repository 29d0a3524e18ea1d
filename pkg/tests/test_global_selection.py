"""Tests for controlled random search and the solution archive."""

import pytest
from conftest import candidate, make_instance, random_instance, runs

from qassa.aggregation import AggregationApproach, aggregate, feasible
from qassa.global_selection import (
    CompositionSolution,
    SolutionArchive,
    crs_search,
    crs_select,
    multi_start,
    rank,
)
from qassa.model import QoSVector, TaskGraph
from qassa.oracle import exhaustive_optimal, optimality

WORST = AggregationApproach.WORST


def solution(utility: float, *services: str) -> CompositionSolution:
    binding = {f"A{i + 1}": candidate(s, 1, 1) for i, s in enumerate(services)}
    return CompositionSolution(binding, QoSVector.of(1, 1), utility)


# =============================================================================
# Archive
# =============================================================================


class TestRank:
    """Tests for ranking compositions."""

    def test_descending_utility(self):
        """Test that higher utilities come first."""
        ranked = rank([solution(0.7, "a"), solution(0.9, "b"), solution(0.8, "c")])
        assert [s.utility for s in ranked] == [0.9, 0.8, 0.7]

    def test_ties_by_binding(self):
        """Test that equal utilities are ordered by service ids."""
        ranked = rank([solution(0.5, "b"), solution(0.5, "a")])
        assert [s.service_ids()["A1"] for s in ranked] == ["a", "b"]


class TestArchive:
    """Tests for the bounded archive."""

    def test_no_duplicates(self):
        """Test that a binding is archived once."""
        archive = SolutionArchive(3)
        assert archive.add(solution(0.5, "a"))
        assert not archive.add(solution(0.5, "a"))
        assert len(archive) == 1

    def test_eviction(self):
        """Test that the worst composition leaves a full archive."""
        archive = SolutionArchive(2)
        archive.add(solution(0.5, "a"))
        archive.add(solution(0.9, "b"))
        assert archive.add(solution(0.7, "c"))
        assert [s.utility for s in archive] == [0.9, 0.7]
        assert not archive.add(solution(0.1, "d"))
        assert archive.add(solution(0.8, "a"))
        assert [s.utility for s in archive] == [0.9, 0.8]

    def test_capacity(self):
        """Test that the capacity must be positive."""
        with pytest.raises(ValueError):
            SolutionArchive(0)

    def test_merge(self):
        """Test that merging keeps the best distinct compositions."""
        first = SolutionArchive(2)
        first.merge([solution(0.2, "a"), solution(0.4, "b")])
        second = SolutionArchive(2)
        second.merge([solution(0.4, "b"), solution(0.3, "c")])
        first.merge(second)
        assert [s.service_ids()["A1"] for s in first] == ["b", "c"]


# =============================================================================
# Search
# =============================================================================


class TestSearch:
    """Tests for controlled random search."""

    def test_single_candidate(self, two_props):
        """Test that with one candidate per activity the archive holds it."""
        instance = make_instance(
            two_props,
            TaskGraph.sequence("A", "B"),
            {"A": [candidate("a", 1, 0.9)], "B": [candidate("b", 2, 0.9)]},
            (10.0, 0.5),
        )
        archive = crs_select(instance, instance.candidates, WORST, seed=0)
        assert len(archive) == 1
        assert archive.best.service_ids() == {"A": "a", "B": "b"}

    def test_unsatisfiable(self, four_props):
        """Test that impossible constraints give an empty archive."""
        instance = random_instance(
            0, four_props, activities=4, services=5, constraints=(0.0, 0.0, 0.0, 0.0)
        )
        assert len(crs_select(instance, instance.candidates, WORST, seed=0)) == 0

    @pytest.mark.parametrize("services", [1, 2, 5, 9])
    def test_budget(self, four_props, services):
        """Test that exactly T - Z + 1 mutation iterations run."""
        instance = random_instance(1, four_props, activities=6, services=services)
        pools = {
            a: c[: max(1, len(c) - i % 3)]
            for i, (a, c) in enumerate(instance.candidates.items())
        }
        total = sum(len(p) for p in pools.values())
        result = crs_search(instance, pools, WORST, seed=3)
        assert result.stats.iterations == total - 6 + 1
        assert len(result.stats.trace) == result.stats.iterations

    def test_empty_pool(self, four_props):
        """Test that every activity needs a pooled service."""
        instance = random_instance(1, four_props, activities=2, services=2)
        with pytest.raises(ValueError):
            crs_select(instance, {"A1": instance.candidates["A1"]}, WORST, seed=0)

    def test_archive_sound(self, request, four_props):
        """Test that archived compositions are feasible and re-aggregate exactly."""
        for seed in range(runs(request, 200, 10_000)):
            instance = random_instance(seed, four_props, activities=5, services=6)
            approach = list(AggregationApproach)[seed % 3]
            archive = crs_select(instance, instance.candidates, approach, seed=seed)
            assert len(archive) <= 10
            assert list(archive) == rank(archive)
            for s in archive:
                again = aggregate(instance.task, s.binding, four_props, approach)
                assert again == s.qos
                assert feasible(again, instance.constraints, four_props)

    def test_deterministic(self, four_props):
        """Test that a fixed seed gives the same archive."""
        instance = random_instance(5, four_props, activities=6, services=8)
        first = crs_select(instance, instance.candidates, WORST, seed=11)
        second = crs_select(instance, instance.candidates, WORST, seed=11)
        assert first.solutions == second.solutions

    def test_hill_climb(self, four_props):
        """Test that the working utility never decreases."""
        instance = random_instance(6, four_props, activities=8, services=10)
        result = crs_search(instance, instance.candidates, WORST, seed=2)
        trace = result.stats.trace
        assert all(b >= a for a, b in zip(trace, trace[1:], strict=False))
        assert result.stats.accepted <= result.stats.iterations

    def test_multi_start(self, four_props):
        """Test that merged starts are at least as good as each start."""
        instance = random_instance(7, four_props, activities=5, services=8)
        merged = multi_start(instance, instance.candidates, WORST, [1, 2, 3])
        for seed in (1, 2, 3):
            single = crs_select(instance, instance.candidates, WORST, seed=seed)
            if single.best is not None:
                assert merged.best.utility >= single.best.utility

    def test_below_optimum(self, four_props):
        """Test that no archived composition beats the exhaustive optimum."""
        for seed in range(20):
            instance = random_instance(seed, four_props, activities=4, services=5)
            oracle = exhaustive_optimal(instance, WORST)
            archive = crs_select(instance, instance.candidates, WORST, seed=seed)
            if archive.best is not None:
                assert archive.best.utility <= oracle.f_opt + 1e-12

    @pytest.mark.slow
    def test_near_optimal(self, four_props):
        """Test that every seed's best archived utility reaches 90% of the optimum."""
        for seed in range(20):
            instance = random_instance(seed, four_props, activities=4, services=5)
            oracle = exhaustive_optimal(instance, WORST)
            if not oracle.f_opt:
                continue
            starts = [seed * 10 + start for start in range(5)]
            archive = multi_start(instance, instance.candidates, WORST, starts)
            assert archive.best is not None
            assert optimality(archive.best.utility, oracle.f_opt) >= 0.9
