"""Benchmark sweeps: execution time and optimality over generated instances.

Each cell of the sweep is one (activities, services, properties, approach,
constraint mode) combination, run ``repeats`` times with seeds ``seed``,
``seed + 1``, ... The report keeps one row per run plus a per-cell summary
with means, medians and the raw samples.

Report files:

- ``<stem>.csv``: one row per run, columns as in :data:`ROW_COLUMNS`
- ``<stem>-summary.csv``: one row per cell, plot-ready
- ``<stem>.json``: the configuration, every row, and the summary including
  raw timing samples
"""

import json
import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Any

import pandas as pd

from .aggregation import AggregationApproach
from .clustering import DEFAULT_G_RANGE
from .errors import InstanceFormatError, UndefinedOptimality
from .global_selection import DEFAULT_ARCHIVE_SIZE
from .local_selection import DEFAULT_TOP_K
from .model import PropertySet, QoSVector
from .oracle import exhaustive_optimal, optimality
from .pipeline import SelectionConfig, select
from .simulator import Scenario, run_distributed
from .workload import ConstraintMode, GeneratorConfig, generate

logger = logging.getLogger(__name__)

DEFAULT_ORACLE_MAX = 10**6

CELL_COLUMNS = ("a", "k", "n", "approach", "constraint_mode")

# column -> type, in CSV order
ROW_COLUMNS: dict[str, type] = {
    "a": int,
    "k": int,
    "n": int,
    "approach": str,
    "constraint_mode": str,
    "repeat": int,
    "seed": int,
    "mix": str,
    "prepare_ns": int,
    "local_ns": int,
    "global_ns": int,
    "expand_ns": int,
    "total_ns": int,
    "pool_size": int,
    "archive_size": int,
    "feasible": bool,
    "best_utility": float,
    "oracle_ran": bool,
    "oracle_feasible": int,
    "f_opt": float,
    "optimality": float,
    "optimality_undefined": bool,
    "dist_local_makespan_ms": float,
    "dist_makespan_ms": float,
    "dist_messages": int,
}

TIMING_COLUMNS = ("total_ns", "local_ns", "global_ns")


@dataclass(frozen=True)
class BenchConfig:
    """A benchmark sweep.

    Attributes:
        activities: Values of a to sweep
        services: Values of k to sweep
        properties: Values of n to sweep (prefixes of the property set)
        approaches: Aggregation approaches to sweep
        constraint_modes: Constraint derivations to sweep
        repeats: Runs per cell
        seed: Seed of the first repeat
        oracle_max: Largest binding space the oracle is run on
        mix: Pattern mix of generated tasks (sequence, parallel, loop)
        g_range: Cluster-count search range
        top_k: QoS classes kept per activity
        archive_size: Solution archive capacity
        distributed: Also run the distributed simulator on every instance
        helpers: Helpers of the perfect scenario used by the simulator
    """

    activities: tuple[int, ...] = (5,)
    services: tuple[int, ...] = (10,)
    properties: tuple[int, ...] = (5,)
    approaches: tuple[AggregationApproach, ...] = (AggregationApproach.WORST,)
    constraint_modes: tuple[ConstraintMode, ...] = (ConstraintMode.MEAN,)
    repeats: int = 1
    seed: int = 0
    oracle_max: int = DEFAULT_ORACLE_MAX
    mix: tuple[float, float, float] = (1.0, 1.0, 1.0)
    g_range: tuple[int, int] = DEFAULT_G_RANGE
    top_k: int = DEFAULT_TOP_K
    archive_size: int = DEFAULT_ARCHIVE_SIZE
    distributed: bool = False
    helpers: int = 4

    def __post_init__(self):
        for name in ("activities", "services", "properties"):
            values = getattr(self, name)
            if not values or any(v < 1 for v in values):
                raise ValueError(f"{name} must be a non-empty list of positive counts")
        if not self.approaches or not self.constraint_modes:
            raise ValueError("Need at least one approach and one constraint mode")
        if self.repeats < 1:
            raise ValueError(f"repeats must be at least 1, got {self.repeats}")
        if self.oracle_max < 0 or self.helpers < 1:
            raise ValueError("oracle_max must be >= 0 and helpers >= 1")

    @property
    def cells(self) -> int:
        return (
            len(self.activities)
            * len(self.services)
            * len(self.properties)
            * len(self.approaches)
            * len(self.constraint_modes)
        )

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["approaches"] = [a.value for a in self.approaches]
        data["constraint_modes"] = [m.value for m in self.constraint_modes]
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BenchConfig":
        return cls(
            activities=tuple(data["activities"]),
            services=tuple(data["services"]),
            properties=tuple(data["properties"]),
            approaches=tuple(AggregationApproach(a) for a in data["approaches"]),
            constraint_modes=tuple(
                ConstraintMode(m) for m in data["constraint_modes"]
            ),
            repeats=data["repeats"],
            seed=data["seed"],
            oracle_max=data["oracle_max"],
            mix=tuple(data["mix"]),
            g_range=tuple(data["g_range"]),
            top_k=data["top_k"],
            archive_size=data["archive_size"],
            distributed=data["distributed"],
            helpers=data["helpers"],
        )


@dataclass
class BenchReport:
    config: BenchConfig
    rows: list[dict[str, Any]] = field(default_factory=list)

    @property
    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(ROW_COLUMNS))

    def summary(self) -> list[dict[str, Any]]:
        """Per-cell statistics, in sweep order, with raw timing samples."""
        if not self.rows:
            return []
        frame = self.frame
        cells = []
        for keys, group in frame.groupby(list(CELL_COLUMNS), sort=False):
            cell: dict[str, Any] = dict(zip(CELL_COLUMNS, keys, strict=True))
            cell["repeats"] = len(group)
            cell["feasible_rate"] = float(group["feasible"].mean())
            for column in TIMING_COLUMNS:
                cell[f"{column}_mean"] = float(group[column].mean())
                cell[f"{column}_median"] = float(group[column].median())
            utilities = group["best_utility"].dropna()
            cell["best_utility_mean"] = (
                float(utilities.mean()) if len(utilities) else None
            )
            ratios = group["optimality"].dropna()
            cell["optimality_mean"] = float(ratios.mean()) if len(ratios) else None
            cell["optimality_min"] = float(ratios.min()) if len(ratios) else None
            cell["optimality_max"] = float(ratios.max()) if len(ratios) else None
            cell["optimality_undefined"] = int(group["optimality_undefined"].sum())
            cell["samples"] = {
                column: [int(v) for v in group[column]] for column in TIMING_COLUMNS
            }
            cells.append(
                {
                    k: (v.item() if hasattr(v, "item") else v)
                    for k, v in cell.items()
                }
            )
        return cells


def _cells(config: BenchConfig):
    return product(
        config.activities,
        config.services,
        config.properties,
        config.approaches,
        config.constraint_modes,
    )


def run_cell(
    config: BenchConfig,
    source: Sequence[QoSVector],
    properties: PropertySet,
    a: int,
    k: int,
    n: int,
    approach: AggregationApproach,
    mode: ConstraintMode,
    repeat: int,
) -> dict[str, Any]:
    """One benchmark run: generate, select, and optionally oracle and simulate."""
    seed = config.seed + repeat
    props = properties.subset(n)
    instance = generate(
        GeneratorConfig(a, k, mix=config.mix, seed=seed),
        source,
        props,
        mode=mode,
        approach=approach,
    )
    selection = SelectionConfig(
        approach=approach,
        g_range=config.g_range,
        top_k=config.top_k,
        archive_size=config.archive_size,
        seed=seed,
    )
    result = select(instance, selection)
    best = result.archive.best
    row: dict[str, Any] = {
        "a": a,
        "k": k,
        "n": n,
        "approach": approach.value,
        "constraint_mode": mode.value,
        "repeat": repeat,
        "seed": seed,
        "mix": ":".join(f"{w:g}" for w in config.mix),
        **{f"{phase}_ns": ns for phase, ns in result.timings.items()},
        "pool_size": result.local.pool_size,
        "archive_size": len(result.archive),
        "feasible": best is not None,
        "best_utility": best.utility if best is not None else None,
        "oracle_ran": False,
        "oracle_feasible": None,
        "f_opt": None,
        "optimality": None,
        "optimality_undefined": False,
        "dist_local_makespan_ms": None,
        "dist_makespan_ms": None,
        "dist_messages": None,
    }

    space = instance.binding_space
    if space <= config.oracle_max:
        oracle = exhaustive_optimal(instance, approach, budget=config.oracle_max)
        row["oracle_ran"] = True
        row["oracle_feasible"] = oracle.feasible_count
        row["f_opt"] = oracle.f_opt
        try:
            row["optimality"] = optimality(
                best.utility if best is not None else 0.0, oracle.f_opt
            )
        except UndefinedOptimality:
            row["optimality_undefined"] = True
    else:
        logger.warning(
            f"Oracle skipped for a={a} k={k} n={n}: {space} bindings > "
            f"{config.oracle_max}"
        )

    if config.distributed:
        scenario = Scenario.perfect(config.helpers, seed=seed)
        distributed = run_distributed(instance, scenario, selection)
        metrics = distributed.metrics
        row["dist_local_makespan_ms"] = metrics.local_makespan_ms
        row["dist_makespan_ms"] = metrics.makespan_ms
        row["dist_messages"] = sum(metrics.messages.values())
    return row


def run_bench(
    config: BenchConfig, source: Sequence[QoSVector], properties: PropertySet
) -> BenchReport:
    """Run every cell of the sweep `repeats` times, sequentially."""
    if max(config.properties) > len(properties):
        raise ValueError(
            f"Sweep needs {max(config.properties)} properties, "
            f"the property set has {len(properties)}"
        )
    report = BenchReport(config)
    for a, k, n, approach, mode in _cells(config):
        for repeat in range(config.repeats):
            report.rows.append(
                run_cell(config, source, properties, a, k, n, approach, mode, repeat)
            )
        logger.info(
            f"Cell a={a} k={k} n={n} {approach.value}/{mode.value}: "
            f"{config.repeats} runs"
        )
    return report


# =============================================================================
# Report files
# =============================================================================


def report_paths(stem: str | Path) -> tuple[Path, Path, Path]:
    """(rows CSV, summary CSV, JSON) paths of a report stem."""
    stem = Path(stem)
    return (
        stem.with_name(f"{stem.name}.csv"),
        stem.with_name(f"{stem.name}-summary.csv"),
        stem.with_name(f"{stem.name}.json"),
    )


def write_report(report: BenchReport, stem: str | Path) -> tuple[Path, Path, Path]:
    rows_csv, summary_csv, json_path = report_paths(stem)
    report.frame.to_csv(rows_csv, index=False)
    summary = report.summary()
    flat = [{k: v for k, v in cell.items() if k != "samples"} for cell in summary]
    pd.DataFrame(flat).to_csv(summary_csv, index=False)
    document = {
        "config": report.config.to_dict(),
        "rows": report.rows,
        "summary": summary,
    }
    json_path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(report.rows)} rows to {rows_csv} and {json_path}")
    return rows_csv, summary_csv, json_path


def _cell_value(value: Any, kind: type) -> Any:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    if kind is bool:
        if isinstance(value, str):
            return value == "True"
        return bool(value)
    return kind(value)


def read_rows(path: str | Path) -> list[dict[str, Any]]:
    """Parse a rows CSV back into typed rows (empty cells become None)."""
    frame = pd.read_csv(
        path,
        dtype={"approach": str, "constraint_mode": str, "mix": str},
        float_precision="round_trip",
    )
    missing = set(ROW_COLUMNS) - set(frame.columns)
    if missing:
        raise InstanceFormatError(f"{path}: missing report columns {sorted(missing)}")
    return [
        {name: _cell_value(record[name], kind) for name, kind in ROW_COLUMNS.items()}
        for record in frame.to_dict(orient="records")
    ]


def read_report(stem: str | Path) -> BenchReport:
    """Read the report written by :func:`write_report` under `stem`.

    Rows come from the CSV and must agree with the JSON copy.
    """
    rows_csv, _, json_path = report_paths(stem)
    try:
        document = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InstanceFormatError(f"{json_path}: {e}") from e
    rows = read_rows(rows_csv)
    if rows != document["rows"]:
        raise InstanceFormatError(f"{rows_csv} and {json_path} disagree")
    return BenchReport(BenchConfig.from_dict(document["config"]), rows)
