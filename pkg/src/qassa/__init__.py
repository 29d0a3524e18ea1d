"""Top level API.

qassa selects concrete services for the activities of an abstract task so
that the composition meets global QoS constraints and maximises a weighted
utility. Selection runs in two phases:

- Local: per activity, cluster the candidates' QoS values and keep the
  services of the best QoS classes
- Global: controlled random search over the kept services, ranking feasible
  compositions into an archive of alternatives

Around the two phases sit dependency pre-processing, runtime adaptation, a
discrete-event simulator of distributed selection, an exhaustive oracle and a
benchmark harness.

Example usage::

    from qassa import SelectionConfig, load_instance, select

    result = select(load_instance("instance.json"), SelectionConfig(seed=1))
    for solution in result.ranked:
        print(solution.utility, solution.service_ids())

.. data:: __version__
    :type: str

    Version number as calculated by https://github.com/pypa/setuptools_scm
"""

from ._version import __version__
from .adaptation import (
    AdaptationTrace,
    ExecutionState,
    Fault,
    NewComposition,
    RelaxationNeeded,
    Strategy,
    adapt,
    execute_with_faults,
    substitute_single,
    substitute_subcomposition,
)
from .aggregation import (
    AggregationApproach,
    UtilityBounds,
    aggregate,
    compute_bounds,
    feasible,
    utility,
)
from .bench import BenchConfig, BenchReport, read_report, run_bench, write_report
from .clustering import choose_g, davies_bouldin, kmeans_1d
from .dependency_prep import expand_fictive, merge_inter, merge_intra, preprocess
from .errors import InputError, InvariantViolation, QassaError
from .global_selection import CompositionSolution, SolutionArchive, crs_select
from .local_selection import QoSClass, quality_indicator, select_qos_class
from .model import (
    Category,
    Direction,
    Instance,
    PropertySet,
    QoSProperty,
    QoSVector,
    ServiceCandidate,
    TaskGraph,
    UserRequest,
    load_instance,
    validate_instance,
    validate_request,
)
from .oracle import OracleResult, exhaustive_optimal, optimality
from .pipeline import SelectionConfig, SelectionResult, select
from .simulator import Scenario, SimMetrics, run_distributed, split_request
from .workload import (
    ConstraintMode,
    GeneratorConfig,
    derive_constraints,
    generate,
    load_dataset,
)

__all__ = [
    "__version__",
    # Model
    "Category",
    "Direction",
    "Instance",
    "PropertySet",
    "QoSProperty",
    "QoSVector",
    "ServiceCandidate",
    "TaskGraph",
    "UserRequest",
    "load_instance",
    "validate_instance",
    "validate_request",
    # Errors
    "QassaError",
    "InputError",
    "InvariantViolation",
    # Aggregation
    "AggregationApproach",
    "UtilityBounds",
    "aggregate",
    "compute_bounds",
    "feasible",
    "utility",
    # Local phase
    "choose_g",
    "davies_bouldin",
    "kmeans_1d",
    "QoSClass",
    "quality_indicator",
    "select_qos_class",
    # Global phase
    "CompositionSolution",
    "SolutionArchive",
    "crs_select",
    # Dependencies
    "expand_fictive",
    "merge_inter",
    "merge_intra",
    "preprocess",
    # Adaptation
    "AdaptationTrace",
    "ExecutionState",
    "Fault",
    "NewComposition",
    "RelaxationNeeded",
    "Strategy",
    "adapt",
    "execute_with_faults",
    "substitute_single",
    "substitute_subcomposition",
    # Pipeline
    "SelectionConfig",
    "SelectionResult",
    "select",
    # Oracle
    "OracleResult",
    "exhaustive_optimal",
    "optimality",
    # Workload
    "ConstraintMode",
    "GeneratorConfig",
    "derive_constraints",
    "generate",
    "load_dataset",
    # Distributed simulation
    "Scenario",
    "SimMetrics",
    "run_distributed",
    "split_request",
    # Bench
    "BenchConfig",
    "BenchReport",
    "read_report",
    "run_bench",
    "write_report",
]
