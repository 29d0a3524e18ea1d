"""Command-line interface: instance generation, selection, benchmarks,
distributed simulation and adaptation runs.

Exit codes: 0 when a command ran (also when no feasible composition exists),
2 for bad input, 3 for an internal invariant violation.
"""

import json
import logging
import sys
from argparse import ArgumentParser, Namespace
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

from . import __version__
from .adaptation import execute_with_faults, load_faults
from .aggregation import AggregationApproach
from .bench import DEFAULT_ORACLE_MAX, BenchConfig, run_bench, write_report
from .clustering import DEFAULT_G_RANGE
from .errors import InputError, InvariantViolation, QassaError
from .global_selection import DEFAULT_ARCHIVE_SIZE, rank
from .local_selection import DEFAULT_TOP_K
from .model import PropertySet, dump_instance, instance_to_dict, load_instance
from .pipeline import SelectionConfig, select
from .simulator import Scenario, run_distributed
from .workload import (
    DATASET_ENV,
    PROPERTIES_DESCRIPTOR,
    ConstraintMode,
    GeneratorConfig,
    bundled_file,
    default_dataset,
    generate,
    load_source,
)

__all__ = ["main"]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 3

CONSTRAINT_FILE = "file"


def parse_counts(text: str) -> tuple[int, ...]:
    """Parse ``"4,5,6"`` or an inclusive range ``"10:50:10"``.

    >>> parse_counts("10:50:10")
    (10, 20, 30, 40, 50)
    >>> parse_counts("4,6")
    (4, 6)
    """
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) not in (2, 3):
            raise ValueError(f"Range {text!r} must be start:stop[:step]")
        step = parts[2] if len(parts) == 3 else 1
        if step < 1:
            raise ValueError(f"Range step must be positive in {text!r}")
        return tuple(range(parts[0], parts[1] + 1, step))
    return tuple(int(p) for p in text.split(","))


def _properties(args: Namespace) -> PropertySet:
    path = args.property_set or bundled_file(PROPERTIES_DESCRIPTOR)
    return PropertySet.load(path)


def _constraint_mode(value: str) -> ConstraintMode | None:
    return None if value == CONSTRAINT_FILE else ConstraintMode(value)


def _selection_config(args: Namespace) -> SelectionConfig:
    return SelectionConfig(
        approach=AggregationApproach(args.approach),
        g_range=tuple(args.g_range),
        g=args.g,
        top_k=args.top_k,
        archive_size=args.archive,
        seed=args.seed,
        starts=args.starts,
        constraint_mode=_constraint_mode(args.constraints),
    )


def _emit(document: dict[str, Any], out: str | None) -> None:
    text = json.dumps(document, indent=2) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")
        logger.info(f"Wrote {out}")


def _require_dataset(parser: ArgumentParser, args: Namespace) -> None:
    if args.dataset is None and not args.synthetic and default_dataset() is None:
        parser.error(f"no dataset: pass --dataset, --synthetic or set {DATASET_ENV}")


# =============================================================================
# Commands
# =============================================================================


def cmd_generate(args: Namespace) -> int:
    properties = _properties(args).subset(args.properties)
    source = load_source(args.dataset, properties, args.synthetic)
    config = GeneratorConfig(
        activities=args.activities,
        services=args.services,
        mix=tuple(float(w) for w in args.mix.split(",")),
        max_depth=args.max_depth,
        seed=args.seed,
        replacement=not args.no_replacement,
    )
    instance = generate(
        config,
        source,
        properties,
        mode=ConstraintMode(args.constraints),
        approach=AggregationApproach(args.approach),
    )
    if args.out == "-":
        _emit(instance_to_dict(instance), None)
    else:
        dump_instance(instance, args.out)
        logger.info(f"Wrote {args.out}")
    return EXIT_OK


def cmd_select(args: Namespace) -> int:
    instance = load_instance(args.instance)
    result = select(instance, _selection_config(args))
    if args.json:
        _emit(result.to_dict(), args.out)
        return EXIT_OK
    if not result.feasible:
        print("infeasible: no composition satisfies the global constraints")
    for position, solution in enumerate(result.ranked):
        services = " ".join(f"{a}={s}" for a, s in solution.service_ids().items())
        print(f"{position + 1:>3} {solution.utility:.6f} {services}")
    timings = " ".join(f"{k}={v / 1e6:.3f}ms" for k, v in result.timings.items())
    print(f"timings: {timings}")
    return EXIT_OK


def cmd_bench(args: Namespace) -> int:
    config = BenchConfig(
        activities=parse_counts(args.activities),
        services=parse_counts(args.services),
        properties=parse_counts(args.properties),
        approaches=tuple(AggregationApproach(a) for a in args.approaches.split(",")),
        constraint_modes=tuple(
            ConstraintMode(m) for m in args.constraint_modes.split(",")
        ),
        repeats=args.repeats,
        seed=args.seed,
        oracle_max=args.oracle_max,
        mix=tuple(float(w) for w in args.mix.split(",")),
        distributed=args.distributed,
        helpers=args.helpers,
    )
    properties = _properties(args)
    source = load_source(args.dataset, properties, args.synthetic)
    report = run_bench(config, source, properties)
    paths = write_report(report, args.out)
    print("\n".join(str(p) for p in paths))
    return EXIT_OK


def cmd_distsim(args: Namespace) -> int:
    instance = load_instance(args.instance)
    scenario = Scenario.load(args.scenario or bundled_file("scenario.json"))
    result = run_distributed(instance, scenario, _selection_config(args))
    _emit(result.to_dict(), args.out)
    return EXIT_OK


def cmd_adapt(args: Namespace) -> int:
    instance = load_instance(args.instance)
    faults = load_faults(args.faults)
    result = select(instance, _selection_config(args))
    best = result.archive.best
    if best is None:
        _emit({"status": "infeasible", "adaptations": 0, "entries": []}, args.out)
        return EXIT_OK
    prepared = result.prepared
    trace = execute_with_faults(
        best,
        faults,
        result.local.pools,
        rank(result.archive),
        prepared.instance,
        AggregationApproach(args.approach),
        prepared.expansion,
    )
    _emit(trace.to_dict(), args.out)
    return EXIT_OK


# =============================================================================
# Parser
# =============================================================================


def _add_selection_options(parser: ArgumentParser, constraints: str) -> None:
    parser.add_argument("--instance", required=True, help="Instance JSON file")
    parser.add_argument(
        "--approach",
        choices=[a.value for a in AggregationApproach],
        default=AggregationApproach.WORST.value,
        help="QoS aggregation approach (default: worst)",
    )
    parser.add_argument(
        "--constraints",
        choices=[m.value for m in ConstraintMode] + [CONSTRAINT_FILE],
        default=constraints,
        help=f"Global constraints: derived, or from the file (default: {constraints})",
    )
    parser.add_argument("--seed", type=int, default=0, help="Random seed")
    parser.add_argument(
        "--top-k", type=int, default=DEFAULT_TOP_K, help="QoS classes per activity"
    )
    parser.add_argument(
        "--archive",
        type=int,
        default=DEFAULT_ARCHIVE_SIZE,
        help="Number of alternative compositions kept",
    )
    parser.add_argument(
        "--g", type=int, default=None, help="Fixed cluster count per property"
    )
    parser.add_argument(
        "--g-range",
        type=int,
        nargs=2,
        default=list(DEFAULT_G_RANGE),
        metavar=("LO", "HI"),
        help="Cluster counts searched with the Davies-Bouldin index",
    )
    parser.add_argument(
        "--starts", type=int, default=1, help="Independent CRS runs to merge"
    )
    parser.add_argument("--out", default=None, help="Output file (default: stdout)")


def _add_dataset_options(parser: ArgumentParser) -> None:
    parser.add_argument(
        "--dataset", default=None, help=f"QoS dataset CSV (default: ${DATASET_ENV})"
    )
    parser.add_argument(
        "--synthetic",
        action="store_true",
        help="Use the bundled synthetic QWS-like dataset",
    )
    parser.add_argument(
        "--property-set", default=None, help="Property-set descriptor JSON"
    )
    parser.add_argument(
        "--mix",
        default="1,1,1",
        help="Sequence,parallel,loop pattern weights (default: 1,1,1)",
    )


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="qassa", description="QoS-aware service selection solver and bench"
    )
    parser.add_argument("-v", "--version", action="version", version=__version__)
    parser.add_argument(
        "--log-level",
        type=str,
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Logging level (default: WARNING)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    generate_parser = commands.add_parser("generate", help="Generate an instance")
    generate_parser.add_argument("--activities", type=int, default=10)
    generate_parser.add_argument("--services", type=int, default=50)
    generate_parser.add_argument(
        "--properties", type=int, default=5, help="Number of QoS properties"
    )
    generate_parser.add_argument("--seed", type=int, default=0)
    generate_parser.add_argument(
        "--constraints",
        choices=[m.value for m in ConstraintMode],
        default=ConstraintMode.MEAN.value,
    )
    generate_parser.add_argument(
        "--approach",
        choices=[a.value for a in AggregationApproach],
        default=AggregationApproach.WORST.value,
    )
    generate_parser.add_argument("--max-depth", type=int, default=3)
    generate_parser.add_argument(
        "--no-replacement",
        action="store_true",
        help="Draw every QoS vector at most once",
    )
    generate_parser.add_argument(
        "--out", required=True, help="Instance JSON file, or - for stdout"
    )
    _add_dataset_options(generate_parser)
    generate_parser.set_defaults(handler=cmd_generate, needs_dataset=True)

    select_parser = commands.add_parser("select", help="Select compositions")
    _add_selection_options(select_parser, CONSTRAINT_FILE)
    select_parser.add_argument("--json", action="store_true", help="Emit JSON")
    select_parser.set_defaults(handler=cmd_select, needs_dataset=False)

    bench_parser = commands.add_parser("bench", help="Run a benchmark sweep")
    bench_parser.add_argument("--activities", default="5", help="e.g. 10:50:10")
    bench_parser.add_argument("--services", default="10", help="e.g. 50:200:50")
    bench_parser.add_argument("--properties", default="5", help="e.g. 2,3,4,5")
    bench_parser.add_argument(
        "--approaches", default=AggregationApproach.WORST.value, help="e.g. worst,mean"
    )
    bench_parser.add_argument(
        "--constraint-modes", default=ConstraintMode.MEAN.value, help="e.g. mean"
    )
    bench_parser.add_argument("--repeats", type=int, default=1)
    bench_parser.add_argument("--seed", type=int, default=0)
    bench_parser.add_argument(
        "--oracle-max",
        type=int,
        default=DEFAULT_ORACLE_MAX,
        help="Largest binding space solved exactly",
    )
    bench_parser.add_argument(
        "--distributed",
        action="store_true",
        help="Also record distributed-simulation metrics",
    )
    bench_parser.add_argument("--helpers", type=int, default=4)
    bench_parser.add_argument(
        "--out", default="qassa-bench", help="Report file stem (default: qassa-bench)"
    )
    _add_dataset_options(bench_parser)
    bench_parser.set_defaults(handler=cmd_bench, needs_dataset=True)

    distsim_parser = commands.add_parser(
        "distsim", help="Simulate distributed selection"
    )
    _add_selection_options(distsim_parser, CONSTRAINT_FILE)
    distsim_parser.add_argument(
        "--scenario", default=None, help="Scenario JSON (default: bundled example)"
    )
    distsim_parser.set_defaults(handler=cmd_distsim, needs_dataset=False)

    adapt_parser = commands.add_parser("adapt", help="Execute against a fault script")
    _add_selection_options(adapt_parser, CONSTRAINT_FILE)
    adapt_parser.add_argument("--faults", required=True, help="Fault script JSON")
    adapt_parser.set_defaults(handler=cmd_adapt, needs_dataset=False)
    return parser


def main(args: Sequence[str] | None = None) -> int:
    """Run a qassa command and return its exit code."""
    parser = build_parser()
    parsed_args = parser.parse_args(args)

    logging.basicConfig(
        level=getattr(logging, parsed_args.log_level),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    if parsed_args.needs_dataset:
        _require_dataset(parser, parsed_args)

    handler: Callable[[Namespace], int] = parsed_args.handler
    try:
        return handler(parsed_args)
    except (InvariantViolation, AssertionError) as e:
        logger.error(f"Internal error: {e}")
        return EXIT_INTERNAL
    except (InputError, OSError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_INPUT
    except QassaError as e:
        logger.error(f"Internal error: {type(e).__name__}: {e}")
        return EXIT_INTERNAL
