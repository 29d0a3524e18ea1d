"""Tests for benchmark sweeps and their report files."""

import json
import logging

import pytest

from qassa.aggregation import AggregationApproach
from qassa.bench import (
    ROW_COLUMNS,
    BenchConfig,
    BenchReport,
    read_report,
    report_paths,
    run_bench,
    run_cell,
    write_report,
)
from qassa.errors import InstanceFormatError
from qassa.model import PropertySet
from qassa.workload import (
    PROPERTIES_DESCRIPTOR,
    ConstraintMode,
    bundled_file,
    load_source,
)

WORST = AggregationApproach.WORST
MEAN = ConstraintMode.MEAN


@pytest.fixture
def source(qws_props):
    return load_source(None, qws_props, synthetic=True)


@pytest.fixture
def small():
    return BenchConfig(activities=(3,), services=(4,), properties=(2,), repeats=2)


class TestConfig:
    """Tests for sweep configuration."""

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"activities": ()},
            {"services": (0,)},
            {"approaches": ()},
            {"repeats": 0},
            {"oracle_max": -1},
            {"helpers": 0},
        ],
    )
    def test_invalid(self, kwargs):
        """Test that empty sweeps and bad counts are rejected."""
        with pytest.raises(ValueError):
            BenchConfig(**kwargs)

    def test_cells(self):
        """Test the number of swept combinations."""
        config = BenchConfig(
            activities=(2, 3),
            services=(4, 5, 6),
            approaches=tuple(AggregationApproach),
        )
        assert config.cells == 18

    def test_dict(self):
        """Test that a configuration survives its JSON form."""
        config = BenchConfig(
            approaches=(AggregationApproach.MEAN,),
            constraint_modes=(ConstraintMode.MEAN_SIGMA,),
            distributed=True,
        )
        document = json.loads(json.dumps(config.to_dict()))
        assert BenchConfig.from_dict(document) == config


class TestRun:
    """Tests for running benchmark cells."""

    def test_rows(self, small, source, qws_props):
        """Test that each repeat gives one complete row with its own seed."""
        report = run_bench(small, source, qws_props)
        assert len(report.rows) == 2
        assert [r["seed"] for r in report.rows] == [0, 1]
        for row in report.rows:
            assert set(row) == set(ROW_COLUMNS)
            assert row["oracle_ran"]
            assert row["total_ns"] >= row["local_ns"] + row["global_ns"]
            if row["optimality"] is not None:
                assert 0.0 <= row["optimality"] <= 1.0 + 1e-12

    def test_oracle_skipped(self, source, qws_props, caplog):
        """Test that a space above the oracle limit leaves optimality empty."""
        config = BenchConfig(
            activities=(3,), services=(4,), properties=(2,), oracle_max=10
        )
        with caplog.at_level(logging.WARNING, logger="qassa.bench"):
            row = run_cell(config, source, qws_props, 3, 4, 2, WORST, MEAN, 0)
        assert not row["oracle_ran"]
        assert row["optimality"] is None
        assert "Oracle skipped" in caplog.text

    def test_distributed(self, source, qws_props):
        """Test that the simulator columns are filled when requested."""
        config = BenchConfig(
            activities=(3,), services=(4,), properties=(2,), distributed=True
        )
        row = run_cell(config, source, qws_props, 3, 4, 2, WORST, MEAN, 0)
        assert row["dist_messages"] > 0
        assert row["dist_makespan_ms"] >= row["dist_local_makespan_ms"]

    def test_too_many_properties(self, source, qws_props):
        """Test that a sweep cannot ask for more properties than exist."""
        config = BenchConfig(properties=(len(qws_props) + 1,))
        with pytest.raises(ValueError):
            run_bench(config, source, qws_props)

    def test_summary(self, small, source, qws_props):
        """Test that the summary groups repeats and keeps raw samples."""
        report = run_bench(small, source, qws_props)
        (cell,) = report.summary()
        assert cell["repeats"] == 2
        assert cell["a"] == 3
        assert cell["approach"] == "worst"
        assert len(cell["samples"]["total_ns"]) == 2
        assert cell["total_ns_mean"] == pytest.approx(
            sum(r["total_ns"] for r in report.rows) / 2
        )

    def test_empty_summary(self, small):
        """Test that a report without rows has no summary."""
        assert BenchReport(small).summary() == []

    @pytest.mark.slow
    def test_optimality(self, source, qws_props):
        """Test the mean optimality across a small sweep."""
        config = BenchConfig(
            activities=(4, 5),
            services=(5,),
            properties=(3, 5),
            approaches=tuple(AggregationApproach),
            repeats=10,
        )
        report = run_bench(config, source, qws_props)
        for cell in report.summary():
            if cell["optimality_mean"] is not None:
                assert cell["optimality_mean"] >= 0.9


class TestReport:
    """Tests for writing and reading report files."""

    def test_paths(self, tmp_path):
        """Test the three files derived from a stem."""
        names = [p.name for p in report_paths(tmp_path / "run")]
        assert names == ["run.csv", "run-summary.csv", "run.json"]

    def test_round_trip(self, small, source, qws_props, tmp_path):
        """Test that written rows read back identically."""
        report = run_bench(small, source, qws_props)
        rows_csv, summary_csv, json_path = write_report(report, tmp_path / "run")
        assert summary_csv.read_text().startswith("a,k,n,approach,constraint_mode")
        again = read_report(tmp_path / "run")
        assert again.rows == report.rows
        assert again.config == small
        assert json.loads(json_path.read_text())["summary"] == report.summary()

    def test_disagreement(self, small, source, qws_props, tmp_path):
        """Test that an edited CSV no longer matches its JSON copy."""
        report = run_bench(small, source, qws_props)
        rows_csv, _, _ = write_report(report, tmp_path / "run")
        lines = rows_csv.read_text().splitlines()
        rows_csv.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(InstanceFormatError):
            read_report(tmp_path / "run")

    def test_missing_columns(self, small, source, qws_props, tmp_path):
        """Test that a rows file without the report columns is rejected."""
        report = run_bench(small, source, qws_props)
        rows_csv, _, _ = write_report(report, tmp_path / "run")
        rows_csv.write_text("a,k\n1,2\n")
        with pytest.raises(InstanceFormatError):
            read_report(tmp_path / "run")


def grid_config(**kwargs) -> BenchConfig:
    return BenchConfig(
        activities=(4, 5, 6),
        services=(6, 8, 10),
        properties=(2, 3, 4, 5),
        repeats=20,
        **kwargs,
    )


def grid_source():
    props = PropertySet.load(bundled_file(PROPERTIES_DESCRIPTOR))
    return load_source(None, props, synthetic=True), props


def mean_optimality(report, **match):
    """Mean optimality over the rows whose columns equal `match`."""
    frame = report.frame
    for column, value in match.items():
        frame = frame[frame[column] == value]
    return float(frame["optimality"].dropna().mean())


@pytest.fixture(scope="module")
def mode_grid():
    """Worst-case aggregation under both constraint modes."""
    source, props = grid_source()
    config = grid_config(constraint_modes=(MEAN, ConstraintMode.MEAN_SIGMA))
    return run_bench(config, source, props)


@pytest.fixture(scope="module")
def approach_grid():
    """Every aggregation approach under mean constraints."""
    source, props = grid_source()
    config = grid_config(approaches=tuple(AggregationApproach))
    return run_bench(config, source, props)


def total_medians(report, column):
    return {cell[column]: cell["total_ns_median"] for cell in report.summary()}


@pytest.mark.slow
class TestAcceptance:
    """Tests of optimality and timing trends at benchmark scale."""

    def test_grid_optimality(self, mode_grid):
        """Test that mean-constrained runs average 85% of the optimum and reach
        it exactly in some cell."""
        assert mean_optimality(mode_grid, constraint_mode=MEAN.value) >= 0.85
        cells = [c for c in mode_grid.summary() if c["constraint_mode"] == "mean"]
        assert any(
            c["optimality_max"] == pytest.approx(1.0)
            for c in cells
            if c["optimality_max"] is not None
        )

    def test_looser_constraints_not_more_optimal(self, mode_grid):
        """Test that mean-plus-sigma constraints do not raise mean optimality."""
        loose = mean_optimality(mode_grid, constraint_mode="mean-sigma")
        assert loose <= mean_optimality(mode_grid, constraint_mode=MEAN.value)

    def test_approach_order(self, approach_grid):
        """Test that worst-case >= mean-value >= best-case, within two points."""
        worst, mean, best = (
            mean_optimality(approach_grid, approach=approach.value)
            for approach in (WORST, AggregationApproach.MEAN, AggregationApproach.BEST)
        )
        assert worst >= mean - 0.02
        assert mean >= best - 0.02

    def test_large_selection_time(self, source, qws_props):
        """Test that selecting 50 activities of 200 services takes under 500 ms."""
        config = BenchConfig(
            activities=(50,), services=(200,), properties=(5,), repeats=5, oracle_max=0
        )
        (cell,) = run_bench(config, source, qws_props).summary()
        assert cell["total_ns_median"] < 500e6

    def test_time_grows_with_size(self, source, qws_props):
        """Test that the mean selection time does not drop as k or n grows."""
        by_k = BenchConfig(
            activities=(50,),
            services=(50, 100, 200),
            properties=(5,),
            repeats=20,
            oracle_max=0,
        )
        by_n = BenchConfig(
            activities=(50,),
            services=(100,),
            properties=(2, 3, 5),
            repeats=20,
            oracle_max=0,
        )
        for config, column in ((by_k, "k"), (by_n, "n")):
            cells = run_bench(config, source, qws_props).summary()
            means = [c["total_ns_mean"] for c in sorted(cells, key=lambda c: c[column])]
            assert means == sorted(means)

    def test_constraint_mode_time(self, source, qws_props):
        """Test that median time differs by under 25% between constraint modes."""
        config = BenchConfig(
            activities=(30,),
            services=(100,),
            properties=(5,),
            constraint_modes=(MEAN, ConstraintMode.MEAN_SIGMA),
            repeats=20,
            oracle_max=0,
        )
        medians = total_medians(run_bench(config, source, qws_props), "constraint_mode")
        low, high = sorted(medians.values())
        assert high < 1.25 * low
