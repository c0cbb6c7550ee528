"""Closed-loop synthetic user load against a simulation.

Each user cycles through think-pause, request, wait-for-completion (or
client timeout); at most one request per user is ever outstanding. Users
begin with a think pause and their start times are staggered uniformly
across the ramp-up interval.
"""

from __future__ import annotations

from .config import WorkloadSpec
from .simulator import _EV_USER, RequestRecord, SimState, lognormal_draw_ms


def drive(sim: SimState, workload: WorkloadSpec) -> None:
    """Register all user actors; they run inside the simulation's event loop
    and stop issuing requests once the workload duration elapses."""
    duration = workload.duration_ms

    def make_user(uid: int):
        rng = sim.stream(f"user:{uid}")

        def cycle(now: int) -> None:
            think = lognormal_draw_ms(rng, workload.think_time)
            at = now + think
            if at < duration:
                sim.issue_request(uid, at, on_done=resume)

        def resume(record: RequestRecord) -> None:
            cycle(record.end_ms)

        return cycle

    for uid in range(workload.users):
        start = (workload.ramp_up_ms * uid) // workload.users
        sim.schedule(start, _EV_USER, make_user(uid))
