"""Parse, validate and render the declarative experiment file.

An experiment file is a YAML document with top-level keys
``name, seed, repetitions, sue, workload, treatments, responses, detection``
plus an optional ``cost_model``. Durations are written in seconds (decimal),
point latencies and service times in milliseconds; everything is normalized
to integer milliseconds internally so runs are exactly reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

FAULT_KINDS = frozenset(
    {"pause", "kill", "network_delay", "packet_loss", "packet_corruption", "stress"}
)
INSTRUMENTATION_KINDS = frozenset(
    {"metric_sampling_interval", "tracing_sampling_rate", "tracing_sampling_strategy"}
)
TREATMENT_KINDS = FAULT_KINDS | INSTRUMENTATION_KINDS
METRIC_KINDS = frozenset({"cpu_gauge", "request_counter", "custom_gauge"})
TRACE_STRATEGIES = frozenset({"always_on", "probabilistic"})
RESPONSE_KINDS = frozenset({"metric", "trace_duration"})
DETECTION_MECHANISMS = frozenset({"logistic_regression", "threshold_alert"})

SYSTEM_TARGET = "system"


class ExperimentFormatError(ValueError):
    """Raised when the experiment file is structurally malformed."""


@dataclass(frozen=True)
class Violation:
    """One failed invariant, naming the offending field."""

    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


@dataclass(frozen=True)
class LognormalSpec:
    """Lognormal distribution given as (median ms, sigma); sigma=0 degenerates
    to a constant, which unit tests rely on."""

    median_ms: float
    sigma: float


@dataclass(frozen=True)
class ServiceSpec:
    id: str
    workers: int
    service_time: LognormalSpec
    cpu_per_request_ms: float
    error_response_time_ms: int = 300


@dataclass(frozen=True)
class CallEdge:
    caller: str
    callee: str
    calls_per_request: float
    latency_ms: int


@dataclass(frozen=True)
class MetricPointSpec:
    metric_name: str
    kind: str
    target: str
    sampling_interval_ms: int
    aggregation_interval_ms: int
    # How per-service readings combine when target is "system".
    system_aggregation: str = "sum"


@dataclass(frozen=True)
class TraceConfigSpec:
    strategy: str = "probabilistic"
    rate: float = 1.0


@dataclass(frozen=True)
class SueSpec:
    services: tuple[ServiceSpec, ...]
    edges: tuple[CallEdge, ...]
    metric_points: tuple[MetricPointSpec, ...]
    trace_config: TraceConfigSpec = TraceConfigSpec()

    def service_ids(self) -> frozenset[str]:
        return frozenset(s.id for s in self.services)

    def metric_names(self) -> frozenset[str]:
        return frozenset(p.metric_name for p in self.metric_points)

    def metric_point(self, name: str) -> MetricPointSpec:
        for point in self.metric_points:
            if point.metric_name == name:
                return point
        raise KeyError(name)


@dataclass(frozen=True)
class WorkloadSpec:
    users: int
    duration_ms: int
    think_time: LognormalSpec = LognormalSpec(1000.0, 0.25)
    ramp_up_ms: int = 0


@dataclass(frozen=True)
class ResponseVariableSpec:
    name: str
    kind: str
    source: str


@dataclass(frozen=True)
class DetectionSpec:
    mechanism: str = "logistic_regression"
    alpha: float = 0.7
    split_ratio: float = 0.7
    feature_window: int = 3
    l2: float = 1e-4
    tol: float = 1e-6
    alert_k: float = 3.0


@dataclass(frozen=True)
class CostModelSpec:
    """Linear CPU-cost coefficients, all in CPU-ms per counted unit."""

    per_metric_event_collector_ms: float = 1000.0
    per_metric_event_metrics_backend_ms: float = 300.0
    per_span_collector_ms: float = 2.0
    per_span_trace_backend_ms: float = 1.0
    per_instrumentation_call_ms: float = 0.02


@dataclass(frozen=True)
class TreatmentSpec:
    """A single treatment; which optional fields apply depends on ``kind``."""

    name: str
    kind: str
    target: str | None = None
    start_ms: int | None = None
    end_ms: int | None = None
    delay_min_ms: int | None = None
    delay_max_ms: int | None = None
    probability: float | None = None
    factor: float | None = None
    metric: str | None = None
    interval_ms: int | None = None
    rate: float | None = None
    strategy: str | None = None

    @property
    def is_fault(self) -> bool:
        return self.kind in FAULT_KINDS

    @property
    def is_instrumentation(self) -> bool:
        return self.kind in INSTRUMENTATION_KINDS


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    seed: int
    sue: SueSpec
    workload: WorkloadSpec
    treatments: tuple[TreatmentSpec, ...]
    responses: tuple[ResponseVariableSpec, ...]
    detection: DetectionSpec = DetectionSpec()
    cost_model: CostModelSpec = CostModelSpec()
    repetitions: int = 1

    def fault_treatments(self) -> tuple[TreatmentSpec, ...]:
        return tuple(t for t in self.treatments if t.is_fault)

    def instrumentation_treatments(self) -> tuple[TreatmentSpec, ...]:
        return tuple(t for t in self.treatments if t.is_instrumentation)


# ---------------------------------------------------------------------------
# Parsing


def _require(mapping: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in mapping:
        raise ExperimentFormatError(f"missing required field '{key}' in {where}")
    return mapping[key]


def _reject_unknown(mapping: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        name = sorted(unknown)[0]
        raise ExperimentFormatError(f"unknown field '{name}' in {where}")


def _as_mapping(value: Any, where: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        raise ExperimentFormatError(f"{where} must be a mapping")
    return value


def _as_list(value: Any, where: str) -> list:
    if not isinstance(value, list):
        raise ExperimentFormatError(f"{where} must be a list")
    return value


def _as_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ExperimentFormatError(f"{where} must be an integer")
    return value


def _as_number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ExperimentFormatError(f"{where} must be a number")
    return float(value)


def _as_str(value: Any, where: str) -> str:
    if not isinstance(value, str):
        raise ExperimentFormatError(f"{where} must be a string")
    return value


def _seconds_to_ms(value: Any, where: str) -> int:
    return int(round(_as_number(value, where) * 1000))


def _parse_lognormal(value: Any, where: str) -> LognormalSpec:
    m = _as_mapping(value, where)
    _reject_unknown(dict(m), {"median_ms", "sigma"}, where)
    return LognormalSpec(
        median_ms=_as_number(_require(m, "median_ms", where), f"{where}.median_ms"),
        sigma=_as_number(_require(m, "sigma", where), f"{where}.sigma"),
    )


def _parse_service(value: Any, where: str) -> ServiceSpec:
    m = _as_mapping(value, where)
    allowed = {"id", "workers", "service_time", "cpu_per_request_ms", "error_response_time_ms"}
    _reject_unknown(dict(m), allowed, where)
    spec = ServiceSpec(
        id=_as_str(_require(m, "id", where), f"{where}.id"),
        workers=_as_int(_require(m, "workers", where), f"{where}.workers"),
        service_time=_parse_lognormal(_require(m, "service_time", where), f"{where}.service_time"),
        cpu_per_request_ms=_as_number(
            _require(m, "cpu_per_request_ms", where), f"{where}.cpu_per_request_ms"
        ),
    )
    if "error_response_time_ms" in m:
        spec = replace(
            spec,
            error_response_time_ms=_as_int(
                m["error_response_time_ms"], f"{where}.error_response_time_ms"
            ),
        )
    return spec


def _parse_edge(value: Any, where: str) -> CallEdge:
    m = _as_mapping(value, where)
    _reject_unknown(dict(m), {"caller", "callee", "calls_per_request", "latency_ms"}, where)
    return CallEdge(
        caller=_as_str(_require(m, "caller", where), f"{where}.caller"),
        callee=_as_str(_require(m, "callee", where), f"{where}.callee"),
        calls_per_request=_as_number(
            _require(m, "calls_per_request", where), f"{where}.calls_per_request"
        ),
        latency_ms=_as_int(_require(m, "latency_ms", where), f"{where}.latency_ms"),
    )


def _parse_metric_point(value: Any, where: str) -> MetricPointSpec:
    m = _as_mapping(value, where)
    allowed = {
        "metric_name",
        "kind",
        "target",
        "sampling_interval_s",
        "aggregation_interval_s",
        "system_aggregation",
    }
    _reject_unknown(dict(m), allowed, where)
    sampling = _seconds_to_ms(_require(m, "sampling_interval_s", where), f"{where}.sampling_interval_s")
    if "aggregation_interval_s" in m:
        aggregation = _seconds_to_ms(m["aggregation_interval_s"], f"{where}.aggregation_interval_s")
    else:
        aggregation = sampling
    return MetricPointSpec(
        metric_name=_as_str(_require(m, "metric_name", where), f"{where}.metric_name"),
        kind=_as_str(_require(m, "kind", where), f"{where}.kind"),
        target=_as_str(_require(m, "target", where), f"{where}.target"),
        sampling_interval_ms=sampling,
        aggregation_interval_ms=aggregation,
        system_aggregation=_as_str(m.get("system_aggregation", "sum"), f"{where}.system_aggregation"),
    )


def _parse_trace_config(value: Any, where: str) -> TraceConfigSpec:
    m = _as_mapping(value, where)
    _reject_unknown(dict(m), {"strategy", "rate"}, where)
    strategy = _as_str(m.get("strategy", "probabilistic"), f"{where}.strategy")
    rate = _as_number(m.get("rate", 1.0), f"{where}.rate")
    return TraceConfigSpec(strategy=strategy, rate=rate)


def _parse_sue(value: Any, where: str) -> SueSpec:
    m = _as_mapping(value, where)
    _reject_unknown(dict(m), {"services", "edges", "metric_points", "trace_config"}, where)
    services = tuple(
        _parse_service(v, f"{where}.services[{i}]")
        for i, v in enumerate(_as_list(_require(m, "services", where), f"{where}.services"))
    )
    edges = tuple(
        _parse_edge(v, f"{where}.edges[{i}]")
        for i, v in enumerate(_as_list(m.get("edges", []), f"{where}.edges"))
    )
    points = tuple(
        _parse_metric_point(v, f"{where}.metric_points[{i}]")
        for i, v in enumerate(_as_list(m.get("metric_points", []), f"{where}.metric_points"))
    )
    if "trace_config" in m:
        trace = _parse_trace_config(m["trace_config"], f"{where}.trace_config")
    else:
        trace = TraceConfigSpec()
    return SueSpec(services=services, edges=edges, metric_points=points, trace_config=trace)


def _parse_workload(value: Any, where: str) -> WorkloadSpec:
    m = _as_mapping(value, where)
    _reject_unknown(dict(m), {"users", "duration_s", "think_time", "ramp_up_s"}, where)
    spec = WorkloadSpec(
        users=_as_int(_require(m, "users", where), f"{where}.users"),
        duration_ms=_seconds_to_ms(_require(m, "duration_s", where), f"{where}.duration_s"),
    )
    if "think_time" in m:
        spec = replace(spec, think_time=_parse_lognormal(m["think_time"], f"{where}.think_time"))
    if "ramp_up_s" in m:
        spec = replace(spec, ramp_up_ms=_seconds_to_ms(m["ramp_up_s"], f"{where}.ramp_up_s"))
    return spec


_TREATMENT_FIELDS: dict[str, set[str]] = {
    "pause": {"target", "start_s", "end_s"},
    "kill": {"target", "start_s", "end_s"},
    "network_delay": {"target", "start_s", "end_s", "delay_min_ms", "delay_max_ms"},
    "packet_loss": {"target", "start_s", "end_s", "probability"},
    "packet_corruption": {"target", "start_s", "end_s", "probability"},
    "stress": {"target", "start_s", "end_s", "factor"},
    "metric_sampling_interval": {"metric", "interval_s"},
    "tracing_sampling_rate": {"rate"},
    "tracing_sampling_strategy": {"strategy", "rate"},
}


def _parse_treatment(value: Any, where: str) -> TreatmentSpec:
    m = _as_mapping(value, where)
    name = _as_str(_require(m, "name", where), f"{where}.name")
    kind = _as_str(_require(m, "kind", where), f"{where}.kind")
    if kind not in TREATMENT_KINDS:
        raise ExperimentFormatError(f"unknown treatment kind '{kind}' in {where}")
    allowed = _TREATMENT_FIELDS[kind] | {"name", "kind"}
    _reject_unknown(dict(m), allowed, where)
    spec = TreatmentSpec(name=name, kind=kind)
    if kind in FAULT_KINDS:
        spec = replace(
            spec,
            target=_as_str(_require(m, "target", where), f"{where}.target"),
            start_ms=_seconds_to_ms(_require(m, "start_s", where), f"{where}.start_s"),
            end_ms=_seconds_to_ms(_require(m, "end_s", where), f"{where}.end_s"),
        )
    if kind == "network_delay":
        spec = replace(
            spec,
            delay_min_ms=_as_int(_require(m, "delay_min_ms", where), f"{where}.delay_min_ms"),
            delay_max_ms=_as_int(_require(m, "delay_max_ms", where), f"{where}.delay_max_ms"),
        )
    elif kind in ("packet_loss", "packet_corruption"):
        spec = replace(
            spec,
            probability=_as_number(_require(m, "probability", where), f"{where}.probability"),
        )
    elif kind == "stress":
        spec = replace(spec, factor=_as_number(_require(m, "factor", where), f"{where}.factor"))
    elif kind == "metric_sampling_interval":
        spec = replace(
            spec,
            metric=_as_str(_require(m, "metric", where), f"{where}.metric"),
            interval_ms=_seconds_to_ms(_require(m, "interval_s", where), f"{where}.interval_s"),
        )
    elif kind == "tracing_sampling_rate":
        spec = replace(spec, rate=_as_number(_require(m, "rate", where), f"{where}.rate"))
    elif kind == "tracing_sampling_strategy":
        spec = replace(spec, strategy=_as_str(_require(m, "strategy", where), f"{where}.strategy"))
        if "rate" in m:
            spec = replace(spec, rate=_as_number(m["rate"], f"{where}.rate"))
    return spec


def _parse_response(value: Any, where: str) -> ResponseVariableSpec:
    m = _as_mapping(value, where)
    _reject_unknown(dict(m), {"name", "kind", "source"}, where)
    return ResponseVariableSpec(
        name=_as_str(_require(m, "name", where), f"{where}.name"),
        kind=_as_str(_require(m, "kind", where), f"{where}.kind"),
        source=_as_str(_require(m, "source", where), f"{where}.source"),
    )


def _parse_detection(value: Any, where: str) -> DetectionSpec:
    m = _as_mapping(value, where)
    allowed = {"mechanism", "alpha", "split_ratio", "feature_window", "l2", "tol", "alert_k"}
    _reject_unknown(dict(m), allowed, where)
    spec = DetectionSpec()
    if "mechanism" in m:
        spec = replace(spec, mechanism=_as_str(m["mechanism"], f"{where}.mechanism"))
    for key in ("alpha", "split_ratio", "l2", "tol", "alert_k"):
        if key in m:
            spec = replace(spec, **{key: _as_number(m[key], f"{where}.{key}")})
    if "feature_window" in m:
        spec = replace(spec, feature_window=_as_int(m["feature_window"], f"{where}.feature_window"))
    return spec


def _parse_cost_model(value: Any, where: str) -> CostModelSpec:
    m = _as_mapping(value, where)
    defaults = CostModelSpec()
    allowed = set(defaults.__dataclass_fields__)
    _reject_unknown(dict(m), allowed, where)
    kwargs = {key: _as_number(m[key], f"{where}.{key}") for key in m}
    return replace(defaults, **kwargs)


def parse_experiment(text: str) -> ExperimentSpec:
    """Parse experiment-file contents into a fully resolved ExperimentSpec.

    Applies defaults (repetitions=1, alpha=0.7, probabilistic tracing) and
    raises ExperimentFormatError for syntax errors (position-annotated),
    unknown fields and missing required fields.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            raise ExperimentFormatError(
                f"syntax error at line {mark.line + 1}, column {mark.column + 1}: "
                f"{getattr(exc, 'problem', exc)}"
            ) from exc
        raise ExperimentFormatError(f"syntax error: {exc}") from exc
    if raw is None:
        raise ExperimentFormatError("experiment file is empty")
    top = _as_mapping(raw, "experiment")
    allowed = {
        "name",
        "seed",
        "repetitions",
        "sue",
        "workload",
        "treatments",
        "responses",
        "detection",
        "cost_model",
    }
    _reject_unknown(dict(top), allowed, "experiment")

    responses = tuple(
        _parse_response(v, f"responses[{i}]")
        for i, v in enumerate(_as_list(_require(top, "responses", "experiment"), "responses"))
    )
    if not responses:
        raise ExperimentFormatError("responses must be nonempty")

    spec = ExperimentSpec(
        name=_as_str(_require(top, "name", "experiment"), "name"),
        seed=_as_int(_require(top, "seed", "experiment"), "seed"),
        sue=_parse_sue(_require(top, "sue", "experiment"), "sue"),
        workload=_parse_workload(_require(top, "workload", "experiment"), "workload"),
        treatments=tuple(
            _parse_treatment(v, f"treatments[{i}]")
            for i, v in enumerate(_as_list(top.get("treatments", []), "treatments"))
        ),
        responses=responses,
    )
    if "repetitions" in top:
        spec = replace(spec, repetitions=_as_int(top["repetitions"], "repetitions"))
    if "detection" in top:
        spec = replace(spec, detection=_parse_detection(top["detection"], "detection"))
    if "cost_model" in top:
        spec = replace(spec, cost_model=_parse_cost_model(top["cost_model"], "cost_model"))
    return spec


def parse_experiment_file(path: str | Path) -> ExperimentSpec:
    return parse_experiment(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Validation


def _dag_violations(sue: SueSpec) -> list[Violation]:
    out: list[Violation] = []
    ids = sue.service_ids()
    indegree = {sid: 0 for sid in ids}
    adjacency: dict[str, list[str]] = {sid: [] for sid in ids}
    for i, edge in enumerate(sue.edges):
        for endpoint, label in ((edge.caller, "caller"), (edge.callee, "callee")):
            if endpoint not in ids:
                out.append(
                    Violation(f"sue.edges[{i}].{label}", f"unresolved service '{endpoint}'")
                )
        if edge.caller in ids and edge.callee in ids:
            adjacency[edge.caller].append(edge.callee)
            indegree[edge.callee] += 1
    if out:
        return out

    roots = sorted(sid for sid, deg in indegree.items() if deg == 0)
    if len(roots) != 1:
        out.append(
            Violation(
                "sue.edges",
                f"call graph must be rooted at exactly one entry service, found {roots or 'none'}",
            )
        )
        return out

    # Cycle check via Kahn's algorithm.
    pending = dict(indegree)
    queue = [roots[0]]
    seen = 0
    while queue:
        node = queue.pop()
        seen += 1
        for nxt in adjacency[node]:
            pending[nxt] -= 1
            if pending[nxt] == 0:
                queue.append(nxt)
    if seen != len(ids):
        unreached = sorted(sid for sid, deg in pending.items() if deg > 0)
        out.append(Violation("sue.edges", f"edges must form a DAG reaching every service; stuck at {unreached}"))
    return out


def validate(spec: ExperimentSpec) -> list[Violation]:
    """Check every ExperimentSpec invariant; returns an empty list iff valid."""
    v: list[Violation] = []
    ids = spec.sue.service_ids()
    metric_names = spec.sue.metric_names()

    if not spec.responses:
        v.append(Violation("responses", "responses must be nonempty"))
    if spec.repetitions < 1:
        v.append(Violation("repetitions", "repetitions must be >= 1"))
    if spec.seed < 0 or spec.seed >= 2**64:
        v.append(Violation("seed", "seed must fit in 64 unsigned bits"))

    for i, svc in enumerate(spec.sue.services):
        where = f"sue.services[{i}]"
        if svc.workers < 1:
            v.append(Violation(f"{where}.workers", "workers must be >= 1"))
        if svc.service_time.median_ms <= 0:
            v.append(Violation(f"{where}.service_time", "median must be > 0"))
        if svc.service_time.sigma < 0:
            v.append(Violation(f"{where}.service_time", "sigma must be >= 0"))
        if svc.cpu_per_request_ms < 0:
            v.append(Violation(f"{where}.cpu_per_request_ms", "must be >= 0"))
        if svc.error_response_time_ms < 0:
            v.append(Violation(f"{where}.error_response_time_ms", "must be >= 0"))
    if len(ids) != len(spec.sue.services):
        v.append(Violation("sue.services", "service ids must be unique"))
    if not spec.sue.services:
        v.append(Violation("sue.services", "at least one service is required"))
    else:
        v.extend(_dag_violations(spec.sue))

    for i, edge in enumerate(spec.sue.edges):
        where = f"sue.edges[{i}]"
        if edge.calls_per_request < 0:
            v.append(Violation(f"{where}.calls_per_request", "must be >= 0"))
        if edge.latency_ms < 0:
            v.append(Violation(f"{where}.latency_ms", "must be >= 0"))

    seen_metrics: set[str] = set()
    for i, point in enumerate(spec.sue.metric_points):
        where = f"sue.metric_points[{i}]"
        if point.kind not in METRIC_KINDS:
            v.append(Violation(f"{where}.kind", f"unknown metric kind '{point.kind}'"))
        if point.target != SYSTEM_TARGET and point.target not in ids:
            v.append(Violation(f"{where}.target", f"unresolved target '{point.target}'"))
        if point.sampling_interval_ms <= 0:
            v.append(Violation(f"{where}.sampling_interval_s", "must be > 0"))
        elif point.aggregation_interval_ms < point.sampling_interval_ms:
            v.append(
                Violation(
                    f"{where}.aggregation_interval_s",
                    "aggregation interval must be >= sampling interval",
                )
            )
        elif point.aggregation_interval_ms % point.sampling_interval_ms != 0:
            v.append(
                Violation(
                    f"{where}.aggregation_interval_s",
                    "sampling interval must divide aggregation interval",
                )
            )
        if point.system_aggregation not in ("sum", "mean"):
            v.append(Violation(f"{where}.system_aggregation", "must be 'sum' or 'mean'"))
        if point.metric_name in seen_metrics:
            v.append(Violation(f"{where}.metric_name", f"duplicate metric '{point.metric_name}'"))
        seen_metrics.add(point.metric_name)

    trace = spec.sue.trace_config
    if trace.strategy not in TRACE_STRATEGIES:
        v.append(Violation("sue.trace_config.strategy", f"unknown strategy '{trace.strategy}'"))
    if trace.strategy == "probabilistic" and not 0.0 <= trace.rate <= 1.0:
        v.append(Violation("sue.trace_config.rate", "rate must be within [0, 1]"))

    wl = spec.workload
    if wl.users < 1:
        v.append(Violation("workload.users", "users must be >= 1"))
    if wl.ramp_up_ms < 0:
        v.append(Violation("workload.ramp_up_s", "ramp_up must be >= 0"))
    if wl.duration_ms <= wl.ramp_up_ms:
        v.append(Violation("workload.duration_s", "duration must exceed ramp_up"))
    if wl.think_time.median_ms <= 0:
        v.append(Violation("workload.think_time", "median must be > 0"))
    if wl.think_time.sigma < 0:
        v.append(Violation("workload.think_time", "sigma must be >= 0"))

    seen_fault = False
    seen_treatments: set[str] = set()
    for i, t in enumerate(spec.treatments):
        where = f"treatments[{i}]"
        if t.name in seen_treatments:
            v.append(Violation(f"{where}.name", f"duplicate treatment '{t.name}'"))
        seen_treatments.add(t.name)
        if t.is_fault:
            seen_fault = True
            if t.target not in ids:
                v.append(Violation(f"{where}.target", f"unresolved target '{t.target}'"))
            if t.start_ms is None or t.end_ms is None or not 0 < t.start_ms < t.end_ms:
                v.append(Violation(f"{where}", "fault window must satisfy 0 < start < end"))
            elif t.end_ms >= wl.duration_ms:
                v.append(
                    Violation(
                        f"{where}",
                        "fault window exceeds workload duration (a nonempty normal "
                        "interval is required after the fault)",
                    )
                )
            if t.kind == "network_delay":
                if t.delay_min_ms is None or t.delay_max_ms is None or t.delay_min_ms < 0:
                    v.append(Violation(f"{where}", "delay bounds must be >= 0"))
                elif t.delay_min_ms > t.delay_max_ms:
                    v.append(Violation(f"{where}", "delay min must be <= max"))
            if t.kind in ("packet_loss", "packet_corruption"):
                if t.probability is None or not 0.0 <= t.probability <= 1.0:
                    v.append(Violation(f"{where}.probability", "must be within [0, 1]"))
            if t.kind == "stress" and (t.factor is None or t.factor <= 0):
                v.append(Violation(f"{where}.factor", "must be > 0"))
        else:
            if seen_fault:
                v.append(
                    Violation(
                        f"{where}",
                        "instrumentation treatments must precede fault treatments",
                    )
                )
            if t.kind == "metric_sampling_interval":
                if t.metric not in metric_names:
                    v.append(Violation(f"{where}.metric", f"unresolved metric '{t.metric}'"))
                if t.interval_ms is None or t.interval_ms <= 0:
                    v.append(Violation(f"{where}.interval_s", "must be > 0"))
            if t.kind == "tracing_sampling_rate":
                if t.rate is None or not 0.0 <= t.rate <= 1.0:
                    v.append(Violation(f"{where}.rate", "rate must be within [0, 1]"))
            if t.kind == "tracing_sampling_strategy":
                if t.strategy not in TRACE_STRATEGIES:
                    v.append(Violation(f"{where}.strategy", f"unknown strategy '{t.strategy}'"))
                if t.rate is not None and not 0.0 <= t.rate <= 1.0:
                    v.append(Violation(f"{where}.rate", "rate must be within [0, 1]"))

    seen_responses: set[str] = set()
    for i, resp in enumerate(spec.responses):
        where = f"responses[{i}]"
        if resp.name in seen_responses:
            v.append(Violation(f"{where}.name", f"duplicate response '{resp.name}'"))
        seen_responses.add(resp.name)
        if resp.kind not in RESPONSE_KINDS:
            v.append(Violation(f"{where}.kind", f"unknown response kind '{resp.kind}'"))
        elif resp.kind == "metric" and resp.source not in metric_names:
            v.append(Violation(f"{where}.source", f"unresolved metric '{resp.source}'"))
        elif resp.kind == "trace_duration" and resp.source not in ids:
            v.append(Violation(f"{where}.source", f"unresolved service '{resp.source}'"))

    det = spec.detection
    if det.mechanism not in DETECTION_MECHANISMS:
        v.append(Violation("detection.mechanism", f"unknown mechanism '{det.mechanism}'"))
    if not 0.0 < det.alpha < 1.0:
        v.append(Violation("detection.alpha", "alpha must be within (0, 1)"))
    if not 0.0 < det.split_ratio < 1.0:
        v.append(Violation("detection.split_ratio", "must be within (0, 1)"))
    if det.feature_window < 1:
        v.append(Violation("detection.feature_window", "must be >= 1"))
    if det.l2 < 0:
        v.append(Violation("detection.l2", "must be >= 0"))
    if det.tol <= 0:
        v.append(Violation("detection.tol", "must be > 0"))
    if det.alert_k <= 0:
        v.append(Violation("detection.alert_k", "must be > 0"))

    for key, value in spec.cost_model.__dict__.items():
        if value < 0:
            v.append(Violation(f"cost_model.{key}", "must be >= 0"))
    return v


# ---------------------------------------------------------------------------
# Canonical rendering (round-trips exactly through parse_experiment)


def _ms_to_s(ms: int) -> float | int:
    seconds = ms / 1000
    return int(seconds) if seconds == int(seconds) else seconds


def _lognormal_doc(spec: LognormalSpec) -> dict:
    return {"median_ms": spec.median_ms, "sigma": spec.sigma}


def _treatment_doc(t: TreatmentSpec) -> dict:
    doc: dict[str, Any] = {"name": t.name, "kind": t.kind}
    if t.is_fault:
        doc["target"] = t.target
        doc["start_s"] = _ms_to_s(t.start_ms or 0)
        doc["end_s"] = _ms_to_s(t.end_ms or 0)
    if t.kind == "network_delay":
        doc["delay_min_ms"] = t.delay_min_ms
        doc["delay_max_ms"] = t.delay_max_ms
    elif t.kind in ("packet_loss", "packet_corruption"):
        doc["probability"] = t.probability
    elif t.kind == "stress":
        doc["factor"] = t.factor
    elif t.kind == "metric_sampling_interval":
        doc["metric"] = t.metric
        doc["interval_s"] = _ms_to_s(t.interval_ms or 0)
    elif t.kind == "tracing_sampling_rate":
        doc["rate"] = t.rate
    elif t.kind == "tracing_sampling_strategy":
        doc["strategy"] = t.strategy
        if t.rate is not None:
            doc["rate"] = t.rate
    return doc


def render_experiment(spec: ExperimentSpec) -> str:
    """Serialize a spec to canonical YAML; parse(render(spec)) == spec."""
    doc = {
        "name": spec.name,
        "seed": spec.seed,
        "repetitions": spec.repetitions,
        "sue": {
            "services": [
                {
                    "id": s.id,
                    "workers": s.workers,
                    "service_time": _lognormal_doc(s.service_time),
                    "cpu_per_request_ms": s.cpu_per_request_ms,
                    "error_response_time_ms": s.error_response_time_ms,
                }
                for s in spec.sue.services
            ],
            "edges": [
                {
                    "caller": e.caller,
                    "callee": e.callee,
                    "calls_per_request": e.calls_per_request,
                    "latency_ms": e.latency_ms,
                }
                for e in spec.sue.edges
            ],
            "metric_points": [
                {
                    "metric_name": p.metric_name,
                    "kind": p.kind,
                    "target": p.target,
                    "sampling_interval_s": _ms_to_s(p.sampling_interval_ms),
                    "aggregation_interval_s": _ms_to_s(p.aggregation_interval_ms),
                    "system_aggregation": p.system_aggregation,
                }
                for p in spec.sue.metric_points
            ],
            "trace_config": {
                "strategy": spec.sue.trace_config.strategy,
                "rate": spec.sue.trace_config.rate,
            },
        },
        "workload": {
            "users": spec.workload.users,
            "duration_s": _ms_to_s(spec.workload.duration_ms),
            "think_time": _lognormal_doc(spec.workload.think_time),
            "ramp_up_s": _ms_to_s(spec.workload.ramp_up_ms),
        },
        "treatments": [_treatment_doc(t) for t in spec.treatments],
        "responses": [
            {"name": r.name, "kind": r.kind, "source": r.source} for r in spec.responses
        ],
        "detection": {
            "mechanism": spec.detection.mechanism,
            "alpha": spec.detection.alpha,
            "split_ratio": spec.detection.split_ratio,
            "feature_window": spec.detection.feature_window,
            "l2": spec.detection.l2,
            "tol": spec.detection.tol,
            "alert_k": spec.detection.alert_k,
        },
        "cost_model": dict(spec.cost_model.__dict__),
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)
