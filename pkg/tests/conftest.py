from __future__ import annotations

import time
from pathlib import Path

import pytest

from oxn.config import (
    CallEdge,
    ExperimentSpec,
    LognormalSpec,
    MetricPointSpec,
    ResponseVariableSpec,
    ServiceSpec,
    SueSpec,
    TraceConfigSpec,
    TreatmentSpec,
    WorkloadSpec,
    parse_experiment_file,
)
from oxn.runner import run_experiment

REPO_ROOT = Path(__file__).resolve().parent.parent
EXPERIMENTS_DIR = REPO_ROOT / "experiments"
CANONICAL_NAMES = ("baseline", "alternative_b", "alternative_c")


def experiment_path(name: str) -> Path:
    return EXPERIMENTS_DIR / f"{name}.yaml"


@pytest.fixture(scope="session")
def baseline_spec() -> ExperimentSpec:
    return parse_experiment_file(experiment_path("baseline"))


@pytest.fixture(scope="session")
def canonical_reports():
    """Run the canonical baseline and alternatives once per test session.

    Several acceptance criteria share these runs; elapsed wall-clock time is
    recorded so runtime bounds can be asserted.
    """
    reports = {}
    elapsed = {}
    for name in CANONICAL_NAMES:
        spec = parse_experiment_file(experiment_path(name))
        started = time.perf_counter()
        reports[name] = run_experiment(spec, parallel=2, frozen_clock=True)
        elapsed[name] = time.perf_counter() - started
    reports["elapsed"] = elapsed
    return reports


def tiny_service(
    service_id: str = "api",
    workers: int = 2,
    median_ms: float = 10.0,
    sigma: float = 0.0,
    cpu_ms: float = 5.0,
) -> ServiceSpec:
    return ServiceSpec(
        id=service_id,
        workers=workers,
        service_time=LognormalSpec(median_ms, sigma),
        cpu_per_request_ms=cpu_ms,
    )


def small_spec(**overrides) -> ExperimentSpec:
    """A fast two-service experiment for runner and CLI tests."""
    sue = SueSpec(
        services=(
            tiny_service("gateway", workers=4, median_ms=8, sigma=0.2, cpu_ms=4),
            tiny_service("backend", workers=2, median_ms=12, sigma=0.2, cpu_ms=6),
        ),
        edges=(CallEdge("gateway", "backend", 1.0, 2),),
        metric_points=(
            MetricPointSpec("system_cpu", "cpu_gauge", "system", 5000, 5000),
            MetricPointSpec("backend_rpm", "request_counter", "backend", 10000, 10000),
        ),
        trace_config=TraceConfigSpec("probabilistic", 0.5),
    )
    base = dict(
        name="small",
        seed=42,
        repetitions=2,
        sue=sue,
        workload=WorkloadSpec(
            users=5, duration_ms=120_000, think_time=LognormalSpec(500, 0.2), ramp_up_ms=1000
        ),
        treatments=(
            TreatmentSpec(
                name="pause_backend", kind="pause", target="backend", start_ms=40_000, end_ms=80_000
            ),
        ),
        responses=(
            ResponseVariableSpec("system_cpu", "metric", "system_cpu"),
            ResponseVariableSpec("backend_rpm", "metric", "backend_rpm"),
            ResponseVariableSpec("trace_duration_gateway", "trace_duration", "gateway"),
        ),
    )
    base.update(overrides)
    return ExperimentSpec(**base)
