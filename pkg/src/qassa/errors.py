"""Exception hierarchy for qassa.

Every error raised by the library derives from :class:`QassaError`. Errors that
are caused by bad user input additionally derive from :class:`InputError`, which
the command line maps to exit code 2. :class:`InvariantViolation` signals an
internal bug and maps to exit code 3.
"""


class QassaError(Exception):
    """Base exception for all qassa errors."""

    pass


class InputError(QassaError):
    """Base class for errors caused by invalid user input."""

    pass


class InvariantViolation(QassaError):
    """Raised when an internal invariant does not hold."""

    pass


# =============================================================================
# Validation
# =============================================================================


class ValidationError(InputError):
    """Raised when an instance, request or descriptor breaks a type invariant."""

    pass


class WeightSumViolation(ValidationError):
    """Raised when user weights are negative or do not sum to one."""

    pass


class DimensionMismatch(ValidationError):
    """Raised when a vector length does not match the property set."""

    pass


class InvalidQoSValue(ValidationError):
    """Raised when a QoS value is NaN, infinite, or outside its category range."""

    pass


class EmptyCandidateList(ValidationError):
    """Raised when an activity has no candidate services."""

    def __init__(self, activity: str):
        super().__init__(f"Activity {activity!r} has no candidate services")
        self.activity = activity


class UnknownActivity(ValidationError):
    """Raised when candidates or dependencies name an activity not in the task."""

    def __init__(self, activity: str):
        super().__init__(f"Unknown activity {activity!r}")
        self.activity = activity


class InvalidLoopBounds(ValidationError):
    """Raised when loop iteration bounds break 1 <= min <= mean <= max."""

    def __init__(self, message: str, activity: str | None = None):
        super().__init__(message)
        self.activity = activity


class InvalidTaskGraph(ValidationError):
    """Raised when a task graph is structurally invalid."""

    pass


class InvalidPropertySet(ValidationError):
    """Raised when a property-set descriptor is inconsistent."""

    pass


class InstanceFormatError(ValidationError):
    """Raised when an instance, scenario or fault file cannot be parsed."""

    pass


# =============================================================================
# Aggregation, clustering and selection
# =============================================================================


class AggregationError(QassaError):
    """Base class for QoS aggregation errors."""

    pass


class UnboundActivity(AggregationError):
    """Raised when a binding does not cover an activity of the task graph."""

    def __init__(self, activity: str):
        super().__init__(f"Activity {activity!r} is not bound to a service")
        self.activity = activity


class ClusteringError(QassaError):
    """Base class for clustering errors."""

    pass


class TooFewValues(ClusteringError):
    """Raised when fewer values than clusters are supplied."""

    pass


class SingleCluster(ClusteringError):
    """Raised when a cluster validity index needs at least two clusters."""

    pass


class CoincidentCentroids(ClusteringError):
    """Raised when two clusters share a centroid (Davies-Bouldin undefined)."""

    pass


class SelectionError(QassaError):
    """Base class for local and global selection errors."""

    pass


class NoNonEmptyClass(SelectionError):
    """Raised when every QoS class of an activity is empty."""

    pass


# =============================================================================
# Dependencies
# =============================================================================


class DependencyError(InputError):
    """Base class for service dependency pre-processing errors."""

    pass


class EmptyIntersection(DependencyError):
    """Raised when intra-dependent activities share no candidate service."""

    def __init__(self, activities: tuple[str, ...]):
        super().__init__(
            f"No common service can fulfil activities {', '.join(activities)}"
        )
        self.activities = activities


class NoLinks(DependencyError):
    """Raised when an inter-dependency has no (surviving) service links."""

    pass


class ConflictingDependencies(DependencyError):
    """Raised when an activity is claimed by two unmergeable dependency groups."""

    pass


class UnknownService(DependencyError):
    """Raised when a dependency link names a service that is not a candidate."""

    pass


class UnknownFictiveId(DependencyError):
    """Raised when a fictive service has no entry in the expansion table."""

    def __init__(self, service: str, activity: str):
        super().__init__(
            f"Fictive service {service!r} of activity {activity!r} is unknown"
        )
        self.service = service
        self.activity = activity


# =============================================================================
# Adaptation, oracle, workload, simulation
# =============================================================================


class AdaptationError(QassaError):
    """Base class for run-time adaptation errors."""

    pass


class NoFeasibleSubstitute(AdaptationError):
    """Raised when no alternative service keeps the composition feasible."""

    pass


class NoFeasibleSubcomposition(AdaptationError):
    """Raised when no archived alternative sub-composition is feasible."""

    pass


class InvalidFault(AdaptationError, InputError):
    """Raised when a fault names an unknown or already executed activity."""

    pass


class OracleError(QassaError):
    """Base class for exhaustive oracle errors."""

    pass


class BudgetExceeded(OracleError, InputError):
    """Raised when exhaustive enumeration would exceed its binding budget."""

    pass


class UndefinedOptimality(OracleError):
    """Raised when optimality is requested without a positive optimum."""

    pass


class WorkloadError(InputError):
    """Base class for instance generation and dataset errors."""

    pass


class SourceExhausted(WorkloadError):
    """Raised when sampling without replacement runs out of QoS vectors."""

    pass


class MalformedRow(WorkloadError):
    """Raised when a dataset row has a missing or non-numeric mapped field."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnmappedProperty(WorkloadError):
    """Raised when a configured property has no dataset column."""

    def __init__(self, name: str):
        super().__init__(f"Property {name!r} is not mapped to a dataset column")
        self.name = name


class SimulationError(QassaError):
    """Base class for distributed simulation errors."""

    pass


class NoHelpers(SimulationError):
    """Raised when no helper answered the help broadcast."""

    pass
