"""Deterministic discrete-event simulation of the microservice mesh.

Requests fan out along the call graph: a service queues an incoming call
(FIFO, ``workers`` parallel slots), processes it for a lognormal service
time, then issues its outgoing calls in parallel and completes once they
all return. Faults act as revertible modifiers on this loop: latency
add-ons and retransmit penalties on inbound edges, processing suspension
(pause), instant failure (kill) and service-time/CPU inflation (stress).

All timing is integer milliseconds and every random draw comes from a
named, seed-derived stream, so a (topology, seed) pair reproduces the same
event trace bit for bit on any platform.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .config import LognormalSpec, ServiceSpec, SueSpec
from .treatments import (
    FaultSchedule,
    KillEffect,
    NetworkDelayEffect,
    PacketCorruptionEffect,
    PacketLossEffect,
    PauseEffect,
    StressEffect,
)

CLIENT_TIMEOUT_MS = 10_000
# Retransmission storms are truncated so a probability of 1.0 cannot hang the loop.
MAX_RETRANSMITS = 100

_MASK64 = (1 << 64) - 1

# Heap event kinds
_EV_ARRIVAL = 0
_EV_PROC_DONE = 1
_EV_EDGE_RESULT = 2
_EV_FAULT_START = 3
_EV_FAULT_END = 4
_EV_TIMEOUT = 5
_EV_USER = 6


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator derived from (seed, label); stable across platforms."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & _MASK64, *words])))


def lognormal_draw_ms(rng: np.random.Generator, spec: LognormalSpec) -> int:
    """One duration draw; sigma=0 degenerates to the median exactly."""
    if spec.sigma == 0.0:
        return int(round(spec.median_ms))
    value = spec.median_ms * float(np.exp(spec.sigma * rng.standard_normal()))
    return max(0, int(round(value)))


class SpanOpen(NamedTuple):
    trace_id: int
    span_id: int
    parent_id: int  # -1 for root spans
    service: str
    t: int


class SpanClose(NamedTuple):
    span_id: int
    t: int
    outcome: str


class RequestRecord(NamedTuple):
    request_id: int
    user: int
    start_ms: int
    end_ms: int
    outcome: str  # ok | error | timeout
    hops: tuple[tuple[str, str, int], ...]


@dataclass
class RawEventLog:
    """Raw instrumentation events of one run, each list in timestamp order."""

    span_opens: list[SpanOpen] = field(default_factory=list)
    span_closes: list[SpanClose] = field(default_factory=list)
    counter_increments: list[tuple[str, int]] = field(default_factory=list)
    cpu_busy: list[tuple[str, int, float]] = field(default_factory=list)
    gauge_writes: list[tuple[str, str, int, float]] = field(default_factory=list)

    def span_count(self) -> int:
        return len(self.span_opens)


class _Request:
    __slots__ = ("index", "user", "start", "done", "end", "outcome", "hops", "on_done", "next_span")

    def __init__(self, index: int, user: int, start: int, on_done):
        self.index = index
        self.user = user
        self.start = start
        self.done = False
        self.end = -1
        self.outcome = "ok"
        self.hops: list[tuple[str, str, int]] = []
        self.on_done = on_done
        self.next_span = 0


class _Call:
    __slots__ = (
        "request",
        "service",
        "parent",
        "span_id",
        "dispatch_t",
        "pending",
        "failed",
        "cpu_ms",
        "inbound_cpu_ms",
    )

    def __init__(self, request: _Request, service: str, parent: "_Call | None", dispatch_t: int):
        self.request = request
        self.service = service
        self.parent = parent
        self.span_id = -1
        self.dispatch_t = dispatch_t
        self.pending = 0
        self.failed = False
        self.cpu_ms = 0.0
        self.inbound_cpu_ms = 0.0


class _ServiceState:
    __slots__ = (
        "spec",
        "busy",
        "queue",
        "paused",
        "killed",
        "stress_factor",
        "epoch",
        "frozen",
        "time_rng",
        "processing",
    )

    def __init__(self, spec: ServiceSpec, time_rng: np.random.Generator):
        self.spec = spec
        self.busy = 0
        self.queue: list[_Call] = []
        self.paused = False
        self.killed = False
        self.stress_factor = 1.0
        self.epoch = 0
        self.frozen: list[tuple[_Call, int, float]] = []  # (call, remaining_ms, cpu_ms)
        self.time_rng = time_rng
        self.processing: dict[int, tuple[_Call, int, float]] = {}  # id -> (call, end_t, cpu_ms)


class _EdgeState:
    __slots__ = ("callee", "calls_per_request", "latency_ms", "calls_rng", "delay_rng", "loss_rng", "corrupt_rng")

    def __init__(self, callee: str, calls_per_request: float, latency_ms: int, seed: int, label: str):
        self.callee = callee
        self.calls_per_request = calls_per_request
        self.latency_ms = latency_ms
        self.calls_rng = rng_stream(seed, f"{label}:calls")
        self.delay_rng = rng_stream(seed, f"{label}:delay")
        self.loss_rng = rng_stream(seed, f"{label}:loss")
        self.corrupt_rng = rng_stream(seed, f"{label}:corrupt")


class SimState:
    """Single-owner simulation state; see ``init_sim``."""

    def __init__(self, sue: SueSpec, seed: int):
        self.sue = sue
        self.seed = seed
        self.now = 0
        self._heap: list[tuple[int, int, int, object]] = []
        self._seq = 0
        self._token = 0
        self.log = RawEventLog()
        self.records: list[RequestRecord] = []
        self._request_count = 0
        self._streams: dict[str, np.random.Generator] = {}
        self.services: dict[str, _ServiceState] = {
            s.id: _ServiceState(s, rng_stream(seed, f"service:{s.id}")) for s in sue.services
        }
        self.edges: dict[str, list[_EdgeState]] = {s.id: [] for s in sue.services}
        for edge in sue.edges:
            self.edges[edge.caller].append(
                _EdgeState(
                    edge.callee,
                    edge.calls_per_request,
                    edge.latency_ms,
                    seed,
                    f"edge:{edge.caller}->{edge.callee}",
                )
            )
        callees = {e.callee for e in sue.edges}
        roots = [s.id for s in sue.services if s.id not in callees]
        if len(roots) != 1:
            raise ValueError(f"call graph must have exactly one entry service, found {roots}")
        self.entry = roots[0]
        self._schedule_installed = False
        # Fault effects active per service / per inbound-edge target.
        self._active: list[tuple[str, object]] = []

    # -- plumbing ----------------------------------------------------------

    def stream(self, label: str) -> np.random.Generator:
        """Memoized named RNG stream derived from the run seed."""
        if label not in self._streams:
            self._streams[label] = rng_stream(self.seed, label)
        return self._streams[label]

    def schedule(self, t: int, kind: int, payload: object) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, payload))

    def pending_events(self) -> int:
        return len(self._heap)

    # -- public operations --------------------------------------------------

    def issue_request(self, user: int, at: int, on_done: Callable[[RequestRecord], None] | None = None) -> int:
        """Schedule a user request entering the call graph at time ``at``.

        The request completes when its whole call tree completes; the caller
        is notified (via ``on_done``) at completion or at the client timeout,
        whichever comes first.
        """
        if at < self.now:
            raise ValueError(f"cannot issue a request in the past ({at} < {self.now})")
        request = _Request(self._request_count, user, at, on_done)
        self._request_count += 1
        call = _Call(request, self.entry, None, at)
        self.schedule(at, _EV_ARRIVAL, call)
        self.schedule(at + CLIENT_TIMEOUT_MS, _EV_TIMEOUT, request)
        return request.index

    def run_until(self, t: int | None, schedule: FaultSchedule | None = None) -> None:
        """Process all events up to and including time ``t`` (everything, if None).

        Fault effects from ``schedule`` are applied and reverted exactly at
        their window boundaries; boundary events sort ahead of same-timestamp
        simulation events.
        """
        if schedule is not None and not self._schedule_installed:
            self._schedule_installed = True
            # Negative sequence numbers make boundary events sort ahead of
            # simulation events carrying the same timestamp.
            for i, entry in enumerate(schedule.entries):
                heapq.heappush(self._heap, (entry.start_ms, -2_000_000 + 2 * i, _EV_FAULT_START, entry))
                heapq.heappush(self._heap, (entry.end_ms, -2_000_000 + 2 * i + 1, _EV_FAULT_END, entry))
        heap = self._heap
        while heap and (t is None or heap[0][0] <= t):
            when, _, kind, payload = heapq.heappop(heap)
            self.now = when
            if kind == _EV_ARRIVAL:
                self._on_arrival(payload, when)
            elif kind == _EV_PROC_DONE:
                self._on_proc_done(payload, when)
            elif kind == _EV_EDGE_RESULT:
                call, outcome = payload
                if call.inbound_cpu_ms > 0.0:
                    self.log.cpu_busy.append((call.service, when, call.inbound_cpu_ms))
                if call.parent is None:
                    # a root call failed in transit (entry service killed)
                    self._finish_request(call.request, outcome, when)
                else:
                    self._child_result(call, outcome, when)
            elif kind == _EV_TIMEOUT:
                self._on_timeout(payload, when)
            elif kind == _EV_USER:
                payload(when)
            elif kind == _EV_FAULT_START:
                self._fault_start(payload, when)
            elif kind == _EV_FAULT_END:
                self._fault_end(payload, when)
        if t is not None and t > self.now:
            self.now = t

    # -- event handlers ------------------------------------------------------

    def _on_arrival(self, call: _Call, t: int) -> None:
        svc = self.services[call.service]
        if svc.killed:
            # A dead process emits nothing; the caller observes a late error.
            call.inbound_cpu_ms = 0.0
            self.schedule(t + svc.spec.error_response_time_ms, _EV_EDGE_RESULT, (call, "error"))
            return
        if call.inbound_cpu_ms > 0.0:
            # Receiver-side network-stack work for retransmitted packets.
            self.log.cpu_busy.append((call.service, t, call.inbound_cpu_ms))
        call.span_id = self._open_span(call, t)
        svc.queue.append(call)
        self._dispatch(svc, t)

    def _open_span(self, call: _Call, t: int) -> int:
        request = call.request
        span_id = (request.index << 16) | request.next_span
        request.next_span += 1
        parent_id = call.parent.span_id if call.parent is not None else -1
        self.log.span_opens.append(SpanOpen(request.index, span_id, parent_id, call.service, t))
        return span_id

    def _dispatch(self, svc: _ServiceState, t: int) -> None:
        while svc.queue and svc.busy < svc.spec.workers and not svc.paused:
            call = svc.queue.pop(0)
            svc.busy += 1
            duration = lognormal_draw_ms(svc.time_rng, svc.spec.service_time)
            cpu = svc.spec.cpu_per_request_ms
            if svc.stress_factor != 1.0:
                duration = int(round(duration * svc.stress_factor))
                cpu = cpu * svc.stress_factor
            call.cpu_ms = cpu
            self._token += 1
            token = self._token
            svc.processing[token] = (call, t + duration, cpu)
            self.schedule(t + duration, _EV_PROC_DONE, (svc.spec.id, svc.epoch, token))

    def _on_proc_done(self, payload, t: int) -> None:
        service_id, epoch, token = payload
        svc = self.services[service_id]
        if epoch != svc.epoch or token not in svc.processing:
            return  # invalidated by a pause freeze or kill
        call, _, cpu = svc.processing.pop(token)
        svc.busy -= 1
        self.log.cpu_busy.append((service_id, t, cpu))
        self._fan_out(call, t)
        self._dispatch(svc, t)

    def _fan_out(self, call: _Call, t: int) -> None:
        children = 0
        for edge in self.edges[call.service]:
            count = int(edge.calls_per_request)
            fraction = edge.calls_per_request - count
            if fraction > 0.0 and edge.calls_rng.random() < fraction:
                count += 1
            for _ in range(count):
                children += 1
                self._dispatch_subcall(call, edge, t)
        call.pending += children
        if children == 0:
            self._finish_call(call, t)

    def _dispatch_subcall(self, parent: _Call, edge: _EdgeState, t: int) -> None:
        transit = edge.latency_ms
        corrupted = False
        extra_cpu = 0.0
        for target, effect in self._active:
            if target != edge.callee:
                continue
            if type(effect) is NetworkDelayEffect:
                transit += int(edge.delay_rng.integers(effect.min_ms, effect.max_ms, endpoint=True))
            elif type(effect) is PacketLossEffect:
                retransmits = 0
                while retransmits < MAX_RETRANSMITS and edge.loss_rng.random() < effect.probability:
                    retransmits += 1
                transit += retransmits * effect.retransmit_penalty_ms
                extra_cpu += retransmits * effect.retransmit_cpu_ms
            elif type(effect) is PacketCorruptionEffect:
                retransmits = 0
                while retransmits < MAX_RETRANSMITS and edge.loss_rng.random() < effect.probability:
                    retransmits += 1
                transit += retransmits * effect.retransmit_penalty_ms
                extra_cpu += retransmits * effect.retransmit_cpu_ms
                if edge.corrupt_rng.random() < effect.probability:
                    corrupted = True
        child = _Call(parent.request, edge.callee, parent, t)
        child.inbound_cpu_ms = extra_cpu
        if corrupted:
            # The payload never survives transit; the callee rejects it unprocessed.
            self.schedule(t + transit, _EV_EDGE_RESULT, (child, "error"))
        else:
            self.schedule(t + transit, _EV_ARRIVAL, child)

    def _finish_call(self, call: _Call, t: int) -> None:
        outcome = "error" if call.failed else "ok"
        if call.span_id >= 0:
            self.log.span_closes.append(SpanClose(call.span_id, t, outcome))
        if outcome == "ok":
            self.log.counter_increments.append((call.service, t))
        if call.parent is None:
            self._finish_request(call.request, outcome, t)
        else:
            self._child_result(call, outcome, t)

    def _child_result(self, call: _Call, outcome: str, t: int) -> None:
        parent = call.parent
        request = call.request
        request.hops.append((parent.service, call.service, t - call.dispatch_t))
        if outcome != "ok":
            parent.failed = True
        parent.pending -= 1
        if parent.pending == 0:
            self._finish_call(parent, t)

    def _finish_request(self, request: _Request, outcome: str, t: int) -> None:
        if request.done:
            return  # the client already gave up; server-side work still completed
        request.done = True
        request.end = t
        request.outcome = outcome
        record = RequestRecord(
            request.index, request.user, request.start, t, outcome, tuple(request.hops)
        )
        self.records.append(record)
        if request.on_done is not None:
            request.on_done(record)

    def _on_timeout(self, request: _Request, t: int) -> None:
        if request.done:
            return
        request.done = True
        request.end = t
        request.outcome = "timeout"
        record = RequestRecord(
            request.index, request.user, request.start, t, "timeout", tuple(request.hops)
        )
        self.records.append(record)
        if request.on_done is not None:
            request.on_done(record)

    # -- fault boundaries ----------------------------------------------------

    def _fault_start(self, entry, t: int) -> None:
        effect = entry.effect
        if type(effect) is PauseEffect:
            svc = self.services[entry.target]
            svc.paused = True
            svc.epoch += 1
            for call, end_t, cpu in svc.processing.values():
                svc.frozen.append((call, max(0, end_t - t), cpu))
            svc.processing.clear()
        elif type(effect) is KillEffect:
            svc = self.services[entry.target]
            svc.killed = True
            svc.epoch += 1
            dropped = [call for call, _, _ in svc.processing.values()]
            dropped.extend(svc.queue)
            svc.processing.clear()
            svc.queue.clear()
            svc.busy = 0
            for call in dropped:
                call.failed = True
                self.log.span_closes.append(SpanClose(call.span_id, t, "error"))
                if call.parent is None:
                    self._finish_request(call.request, "error", t)
                else:
                    self._child_result(call, "error", t)
        elif type(effect) is StressEffect:
            self.services[entry.target].stress_factor = effect.factor
        else:
            self._active.append((entry.target, effect))

    def _fault_end(self, entry, t: int) -> None:
        effect = entry.effect
        if type(effect) is PauseEffect:
            svc = self.services[entry.target]
            svc.paused = False
            for call, remaining, cpu in svc.frozen:
                self._token += 1
                token = self._token
                svc.processing[token] = (call, t + remaining, cpu)
                self.schedule(t + remaining, _EV_PROC_DONE, (svc.spec.id, svc.epoch, token))
            svc.frozen.clear()
            self._dispatch(svc, t)
        elif type(effect) is KillEffect:
            svc = self.services[entry.target]
            svc.killed = False
        elif type(effect) is StressEffect:
            self.services[entry.target].stress_factor = 1.0
        else:
            self._active = [(tgt, eff) for tgt, eff in self._active if eff is not effect]


def init_sim(sue: SueSpec, seed: int) -> SimState:
    """Fresh idle simulation with per-service and per-user RNG streams
    derived from ``seed``."""
    return SimState(sue, seed)
