"""Observability experiment engine for a simulated microservice mesh.

Inject faults and instrumentation changes into a deterministic simulation,
collect the resulting metrics and traces, quantify how visible each fault
is to a detection mechanism, and account the CPU cost of the observability
configuration.
"""

from .config import (
    ExperimentFormatError,
    ExperimentSpec,
    Violation,
    parse_experiment,
    parse_experiment_file,
    render_experiment,
    validate,
)
from .costs import CostReport, account, overhead
from .detection import (
    DetectionOutcome,
    InsufficientDataError,
    LabeledDataset,
    LogRegModel,
    build_dataset,
    evaluate_logreg,
    register_mechanism,
    train_logreg,
    zscore_fit_apply,
)
from .runner import ObservabilityReport, compare_docs, run_experiment
from .scoring import (
    Ratio,
    VisibilityMatrix,
    diff_scores,
    fault_coverage,
    overall_fault_observability,
    visibility,
)
from .simulator import SimState, init_sim
from .telemetry import FaultWindow, TelemetryBatch, materialize_response, sample_metrics, sample_traces
from .treatments import FaultSchedule, apply_instrumentation, compile_schedule
from .workload import drive

__version__ = "0.1.0"
