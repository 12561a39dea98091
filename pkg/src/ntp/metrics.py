"""Metric collectors with a Start/Stop/Pause/Resume lifecycle.

A collector instance is bound to a single run and receives calls only
from the engine's coordinating thread, in this grammar::

    start (pause | resume | on_node_begin on_node_end)* stop

with on_node_begin/on_node_end legal only while resumed. The engine
resumes the collector when execution enters the benchmark region and
pauses it when execution leaves, so paused intervals contribute zero to
every sample field.

Built-in collectors: wall clock (perf_counter_ns, monotonic), process
CPU time (process_time_ns, all threads), and a tensor-buffer allocation
tracker fed by the engine's accounting allocator. An optional hardware
counter collector (Linux perf events) plugs in behind the same contract
and degrades gracefully where counters are not exposed.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field

from .errors import (
    CollectorError,
    ContractViolation,
    DivisionDomain,
    EmptySamples,
)

SAMPLE_FIELDS = ("wall_ns", "cpu_ns", "alloc_bytes", "peak_live_bytes")


@dataclass(frozen=True)
class Sample:
    """Per-(node, repetition) measurement.

    cpu_ns is process-wide, so cpu_ns <= wall_ns * threads up to timer
    granularity; utilization() clamps accordingly.
    """

    wall_ns: int
    cpu_ns: int
    alloc_bytes: int = 0
    peak_live_bytes: int = 0
    ext: dict[str, int] = field(default_factory=dict)

    def metric(self, name: str) -> int:
        if name in SAMPLE_FIELDS:
            return getattr(self, name)
        return self.ext[name]


# --- lifecycle ---------------------------------------------------------------

_TRANSITIONS = {
    "init": {"start": "paused"},
    "paused": {"pause": "paused", "resume": "resumed", "stop": "stopped"},
    "resumed": {"pause": "paused", "resume": "resumed", "stop": "stopped",
                "on_node_begin": "node"},
    "node": {"on_node_end": "resumed"},
    "stopped": {},
}


class LifecycleGuard:
    """Validates the collector call grammar, naming illegal transitions."""

    def __init__(self):
        self.state = "init"

    def advance(self, call: str) -> None:
        nxt = _TRANSITIONS.get(self.state, {}).get(call)
        if nxt is None:
            raise ContractViolation(f"'{call}' while {self.state}")
        self.state = nxt


def check_lifecycle(calls) -> None:
    """Replay a call sequence through the guard; raise on the first violation."""
    guard = LifecycleGuard()
    for call in calls:
        guard.advance(call)


# --- allocation accounting ----------------------------------------------------

class AllocationAccountant:
    """Thread-safe byte accounting for engine-managed tensor buffers.

    Tracks monotonic total_allocated, current live bytes, and the live
    peak inside the current measurement window. Only deliberate tensor
    buffers are routed here, keeping the numbers deterministic.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.total_allocated = 0
        self.live_bytes = 0
        self._window_peak = 0

    def allocate(self, nbytes: int) -> None:
        with self._lock:
            self.total_allocated += nbytes
            self.live_bytes += nbytes
            self._window_peak = max(self._window_peak, self.live_bytes)

    def release(self, nbytes: int) -> None:
        with self._lock:
            self.live_bytes -= nbytes

    def begin_window(self) -> tuple[int, int]:
        """Returns (total_allocated, live) and restarts peak tracking."""
        with self._lock:
            self._window_peak = self.live_bytes
            return self.total_allocated, self.live_bytes

    def window_peak(self) -> int:
        with self._lock:
            return self._window_peak


# --- collectors ----------------------------------------------------------------

class BaseCollector:
    """Contract implementation; subclasses override the _capture hooks."""

    name = "base"

    def __init__(self):
        self._guard = LifecycleGuard()
        self._run_meta = None
        self._sample_count = 0

    # lifecycle -------------------------------------------------------
    def start(self, run_meta: dict) -> None:
        self._guard.advance("start")
        self._run_meta = dict(run_meta)
        self._on_start()

    def stop(self) -> dict:
        self._guard.advance("stop")
        return {"collector": self.name, "samples": self._sample_count,
                **self._on_stop()}

    def pause(self) -> None:
        self._guard.advance("pause")

    def resume(self) -> None:
        self._guard.advance("resume")

    def on_node_begin(self, node_id: str) -> None:
        self._guard.advance("on_node_begin")
        self._begin_capture(node_id)

    def on_node_end(self, node_id: str) -> Sample:
        self._guard.advance("on_node_end")
        self._sample_count += 1
        return self._end_capture(node_id)

    # hooks -----------------------------------------------------------
    def _on_start(self) -> None:
        pass

    def _on_stop(self) -> dict:
        return {}

    def _begin_capture(self, node_id: str) -> None:
        raise NotImplementedError

    def _end_capture(self, node_id: str) -> Sample:
        raise NotImplementedError


class TimeCollector(BaseCollector):
    """Wall (monotonic) + process CPU time per node."""

    name = "time"

    def _begin_capture(self, node_id):
        self._cpu0 = time.process_time_ns()
        self._wall0 = time.perf_counter_ns()

    def _end_capture(self, node_id):
        wall = time.perf_counter_ns() - self._wall0
        cpu = time.process_time_ns() - self._cpu0
        return Sample(wall_ns=wall, cpu_ns=cpu)


class TimeAllocCollector(TimeCollector):
    """Time plus tensor-buffer allocation deltas from the engine allocator."""

    name = "time+alloc"

    def __init__(self):
        super().__init__()
        self._allocator: AllocationAccountant | None = None

    def attach_allocator(self, allocator: AllocationAccountant) -> None:
        self._allocator = allocator

    def _begin_capture(self, node_id):
        if self._allocator is None:
            raise CollectorError("time+alloc collector has no allocator attached")
        self._alloc0, _ = self._allocator.begin_window()
        super()._begin_capture(node_id)

    def _end_capture(self, node_id):
        base = super()._end_capture(node_id)
        allocated = self._allocator.total_allocated - self._alloc0
        return Sample(wall_ns=base.wall_ns, cpu_ns=base.cpu_ns,
                      alloc_bytes=allocated,
                      peak_live_bytes=self._allocator.window_peak())


class HwcCollector(TimeAllocCollector):
    """Adds hardware instruction/cycle counts via Linux perf events.

    Construction raises CollectorError on platforms that do not expose
    the counters; callers are expected to fall back to time collection.
    """

    name = "hwc"

    def __init__(self):
        super().__init__()
        from . import _perfevent
        self._events = _perfevent.open_counters()  # raises CollectorError

    def _begin_capture(self, node_id):
        self._hw0 = {k: ev.read() for k, ev in self._events.items()}
        super()._begin_capture(node_id)

    def _end_capture(self, node_id):
        base = super()._end_capture(node_id)
        ext = {k: ev.read() - self._hw0[k] for k, ev in self._events.items()}
        return Sample(wall_ns=base.wall_ns, cpu_ns=base.cpu_ns,
                      alloc_bytes=base.alloc_bytes,
                      peak_live_bytes=base.peak_live_bytes, ext=ext)

    def _on_stop(self):
        for ev in self._events.values():
            ev.close()
        return {}


COLLECTOR_NAMES = ("time", "time+alloc", "hwc")


def make_collector(name: str) -> BaseCollector:
    """Instantiate a built-in collector; hwc raises CollectorError when
    the platform exposes no counters (callers degrade to 'time')."""
    if name == "time":
        return TimeCollector()
    if name == "time+alloc":
        return TimeAllocCollector()
    if name == "hwc":
        return HwcCollector()
    raise CollectorError(f"unknown collector '{name}' "
                         f"(choose from {COLLECTOR_NAMES})")


# --- aggregation -----------------------------------------------------------------

@dataclass(frozen=True)
class FieldStats:
    min: float
    max: float
    mean: float
    median: float
    stddev: float


@dataclass(frozen=True)
class AggregateStats:
    fields: dict[str, FieldStats]
    count: int

    def __getitem__(self, name: str) -> FieldStats:
        return self.fields[name]


def _field_stats(values: list[float]) -> FieldStats:
    ordered = sorted(values)
    n = len(ordered)
    mean = sum(ordered) / n
    variance = sum((v - mean) ** 2 for v in ordered) / n
    return FieldStats(min=ordered[0], max=ordered[-1], mean=mean,
                      median=ordered[(n - 1) // 2],  # lower middle when even
                      stddev=math.sqrt(variance))


def aggregate(samples: list[Sample]) -> AggregateStats:
    """Order statistics and moments per metric field; permutation-invariant."""
    if not samples:
        raise EmptySamples("cannot aggregate zero samples")
    fields = {}
    for name in SAMPLE_FIELDS:
        fields[name] = _field_stats([getattr(s, name) for s in samples])
    ext_keys = sorted({k for s in samples for k in s.ext})
    for key in ext_keys:
        fields[key] = _field_stats([s.ext.get(key, 0) for s in samples])
    return AggregateStats(fields=fields, count=len(samples))


def utilization(stats: AggregateStats, threads: int) -> float:
    """Mean CPU time over mean wall time per configured thread, in [0, 1]."""
    wall_mean = stats["wall_ns"].mean
    if wall_mean <= 0:
        raise DivisionDomain("wall-time mean is zero")
    if threads < 1:
        raise DivisionDomain(f"threads must be >= 1, got {threads}")
    raw = stats["cpu_ns"].mean / (wall_mean * threads)
    return min(1.0, max(0.0, raw))
