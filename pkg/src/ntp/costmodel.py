"""Analytical per-layer cost estimation and roofline classification.

Re-derives, in closed form, exactly the FLOP and byte counts the
reference engine instruments (the test suite asserts integer equality
between the two), then projects them onto a MachineSpec:

* estimated DRAM traffic = activation bytes + weight traffic, where
  weights that fit in the last-level cache are loaded once and weights
  that do not are re-streamed once per reuse (reuse = T timesteps for
  recurrent layers, 1 otherwise);
* arithmetic intensity = FLOPs / estimated DRAM bytes;
* t_lower = max(flops/peak, bytes/bandwidth) is a LOWER BOUND on layer
  runtime, never a prediction; a layer is memory-bound iff its memory
  roof dominates, which happens exactly below the machine balance point
  peak_gflops / dram_gbps.
"""

from __future__ import annotations

import json
import os
import socket
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ClockResolution, ShapeError, UnknownKind
from .graph import (
    MFCC_COEFFS,
    PRECISION_BYTES,
    LayerKind,
    LayerNode,
    TensorShape,
    TopologyGraph,
)
from .kernels import ceil_log2

COMPUTE_BOUND = "compute_bound"
MEMORY_BOUND = "memory_bound"


@dataclass(frozen=True)
class MachineSpec:
    name: str
    peak_gflops: float
    dram_gbps: float
    llc_bytes: int
    cores: int

    def __post_init__(self):
        for field_name in ("peak_gflops", "dram_gbps", "llc_bytes", "cores"):
            if getattr(self, field_name) <= 0:
                raise ShapeError(f"machine {field_name} must be positive")

    @property
    def balance(self) -> float:
        """FLOPs per DRAM byte at which the two roofs intersect."""
        return self.peak_gflops / self.dram_gbps

    def to_json(self) -> dict:
        return {"name": self.name, "peak_gflops": self.peak_gflops,
                "dram_gbps": self.dram_gbps, "llc_bytes": self.llc_bytes,
                "cores": self.cores}


def machine_from_json(payload: dict) -> MachineSpec:
    return MachineSpec(name=payload["name"],
                       peak_gflops=float(payload["peak_gflops"]),
                       dram_gbps=float(payload["dram_gbps"]),
                       llc_bytes=int(payload["llc_bytes"]),
                       cores=int(payload["cores"]))


def load_machine(path) -> MachineSpec:
    return machine_from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class LayerCost:
    node_id: str
    kind: str
    out_shape: str
    flops: int
    macs: int
    params: int
    weight_bytes: int     # storage precision
    act_bytes: int        # fp32 compute traffic
    reuse_count: int      # weight re-streams when the LLC cannot hold them
    dram_bytes_est: int
    intensity: float
    bound_class: str
    t_compute_s: float
    t_memory_s: float
    t_lower_s: float


@dataclass(frozen=True)
class TopologyCost:
    machine: MachineSpec
    layers: tuple[LayerCost, ...]
    total_flops: int
    total_params: int
    total_weight_bytes: int
    total_dram_bytes_est: int
    total_t_lower_s: float
    percent_t_lower: dict[str, float]


def _raw_counts(node: LayerNode, in_shape: TensorShape, precision: str
                ) -> tuple[int, int, int, int, int]:
    """(macs, flops, params, act_bytes, reuse_count) for one node."""
    kind = node.kind
    width = PRECISION_BYTES[precision]

    if kind is LayerKind.FC:
        fan_in = in_shape.extent("F")
        fan_out = node.params.nodes
        batch = in_shape.numel() // fan_in
        macs = batch * fan_in * fan_out
        flops = 2 * macs + batch * fan_out
        if node.params.activation != "none":
            flops += batch * fan_out
        params = fan_in * fan_out + fan_out
        act = 4 * batch * (fan_in + fan_out)
        return macs, flops, params, act, 1

    if kind in (LayerKind.LSTM, LayerKind.BiLSTM):
        steps, batch, fan_in = in_shape.extents
        hidden = node.params.hidden
        directions = 2 if kind is LayerKind.BiLSTM else 1
        macs = directions * steps * batch * 4 * hidden * (fan_in + hidden)
        flops = 2 * macs + directions * 13 * steps * batch * hidden
        params = directions * 4 * ((fan_in + hidden) * hidden + hidden)
        act = directions * 4 * steps * batch * (fan_in + 4 * hidden)
        return macs, flops, params, act, steps

    if kind is LayerKind.Conv2D:
        batch, channels, height, w_in = in_shape.extents
        p = node.params
        out_h = node.out_shape.extent("H")
        out_w = node.out_shape.extent("W")
        macs = batch * p.filters * out_h * out_w * channels * p.kernel_h * p.kernel_w
        flops = 2 * macs + batch * p.filters * out_h * out_w
        params = p.filters * channels * p.kernel_h * p.kernel_w + p.filters
        act = 4 * (batch * channels * height * w_in
                   + batch * p.filters * out_h * out_w)
        return macs, flops, params, act, 1

    numel = in_shape.numel()
    if kind is LayerKind.Softmax:
        return 0, 4 * numel, 0, 8 * numel, 1

    if kind is LayerKind.InlayMfcc:
        steps, batch, frame = in_shape.extents
        frames = steps * batch
        nbins = frame // 2 + 1
        macs = frames * MFCC_COEFFS * nbins
        flops = frames * (frame + 5 * frame * ceil_log2(frame) + 5 * nbins
                          + 2 * MFCC_COEFFS * nbins)
        act = 4 * (frames * frame + frames * MFCC_COEFFS)
        return macs, flops, 0, act, 1

    if kind is LayerKind.InlayMemcopy:
        return 0, 0, 0, 2 * 4 * numel, 1

    if kind is LayerKind.InlayCast:
        target_width = PRECISION_BYTES[node.params.precision]
        return 0, 2 * numel, 0, 2 * numel * (4 + target_width), 1

    if kind is LayerKind.InlayCtcGreedy:
        steps, batch, classes = in_shape.extents
        return 0, 0, 0, 4 * (steps * batch * classes + batch * steps), 1

    raise UnknownKind(f"{node.id}: no cost rule for kind {kind}")


def layer_cost(node: LayerNode, in_shape: TensorShape, machine: MachineSpec,
               precision: str = "fp32") -> LayerCost:
    macs, flops, params, act_bytes, reuse = _raw_counts(node, in_shape, precision)
    weight_bytes = params * PRECISION_BYTES[precision]
    if weight_bytes <= machine.llc_bytes:
        weight_traffic = weight_bytes  # loaded once, then reused from cache
    else:
        weight_traffic = weight_bytes * reuse
    dram = act_bytes + weight_traffic
    intensity = flops / dram if dram else 0.0
    t_compute = flops / (machine.peak_gflops * 1e9)
    t_memory = dram / (machine.dram_gbps * 1e9)
    t_lower = max(t_compute, t_memory)
    return LayerCost(
        node_id=node.id, kind=node.kind.value, out_shape=str(node.out_shape),
        flops=flops, macs=macs, params=params, weight_bytes=weight_bytes,
        act_bytes=act_bytes, reuse_count=reuse, dram_bytes_est=dram,
        intensity=intensity,
        bound_class=MEMORY_BOUND if t_memory >= t_compute else COMPUTE_BOUND,
        t_compute_s=t_compute, t_memory_s=t_memory, t_lower_s=t_lower)


def _recost(cost: LayerCost, machine: MachineSpec) -> LayerCost:
    """Re-evaluate a LayerCost under a different machine roofline."""
    if cost.weight_bytes <= machine.llc_bytes:
        weight_traffic = cost.weight_bytes
    else:
        weight_traffic = cost.weight_bytes * cost.reuse_count
    dram = cost.act_bytes + weight_traffic
    t_compute = cost.flops / (machine.peak_gflops * 1e9)
    t_memory = dram / (machine.dram_gbps * 1e9)
    return replace(cost, dram_bytes_est=dram,
                   intensity=cost.flops / dram if dram else 0.0,
                   bound_class=MEMORY_BOUND if t_memory >= t_compute
                   else COMPUTE_BOUND,
                   t_compute_s=t_compute, t_memory_s=t_memory,
                   t_lower_s=max(t_compute, t_memory))


def _totalize(machine: MachineSpec, layers: tuple[LayerCost, ...]) -> TopologyCost:
    total_lower = sum(c.t_lower_s for c in layers)
    percent = {c.node_id: (100.0 * c.t_lower_s / total_lower if total_lower
                           else 0.0) for c in layers}
    return TopologyCost(
        machine=machine, layers=layers,
        total_flops=sum(c.flops for c in layers),
        total_params=sum(c.params for c in layers),
        total_weight_bytes=sum(c.weight_bytes for c in layers),
        total_dram_bytes_est=sum(c.dram_bytes_est for c in layers),
        total_t_lower_s=total_lower, percent_t_lower=percent)


def topology_cost(graph: TopologyGraph, machine: MachineSpec,
                  precision: str = "fp32") -> TopologyCost:
    """Per-node costs plus summed totals and t_lower percentages."""
    layers = tuple(layer_cost(node, graph.in_shape_of(node.id), machine,
                              precision) for node in graph.nodes)
    return _totalize(machine, layers)


@dataclass(frozen=True)
class RuntimeProjection:
    baseline: TopologyCost
    projected: TopologyCost
    speedup: float  # baseline total bound / projected total bound


def project_runtime(costs: TopologyCost, machine_b: MachineSpec
                    ) -> RuntimeProjection:
    """What-if: the same layers under another machine's rooflines."""
    projected_layers = tuple(_recost(c, machine_b) for c in costs.layers)
    projected = _totalize(machine_b, projected_layers)
    speedup = (costs.total_t_lower_s / projected.total_t_lower_s
               if projected.total_t_lower_s else 1.0)
    return RuntimeProjection(baseline=costs, projected=projected,
                             speedup=speedup)


# --- machine calibration ---------------------------------------------------

_MIN_TIMED_SECONDS = 10e-3


def _timed_best(work, amount_per_call: float, trials: int,
                what: str) -> float:
    """Best rate over `trials`, repeating `work` inside each trial until
    the window exceeds the timing floor. Raises ClockResolution if even
    heavy repetition cannot produce a measurable window."""
    calls = 1
    best = 0.0
    for _ in range(trials):
        while True:
            start = time.perf_counter()
            for _ in range(calls):
                work()
            elapsed = time.perf_counter() - start
            if elapsed >= _MIN_TIMED_SECONDS:
                break
            if calls >= 1 << 20:
                raise ClockResolution(
                    f"{what} stays below the {_MIN_TIMED_SECONDS * 1e3:.0f} ms "
                    f"timing floor even at {calls} repetitions")
            calls *= 2
        best = max(best, calls * amount_per_call / elapsed)
    return best


def measure_peak_gflops(threads: int = 1, n: int = 768, trials: int = 5) -> float:
    """Best-of-`trials` fp32 blocked matmul rate, our threading only."""
    if n < 64:
        raise ClockResolution(f"matmul size {n} too small to time reliably")
    rng = np.random.default_rng(0)
    a = rng.random((n, n), dtype=np.float32)
    w = rng.random((n, n), dtype=np.float32)
    out = np.empty((n, n), dtype=np.float32)
    block = max(1, n // max(1, threads * 4))
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def serial():
        np.dot(a, w, out=out)

    def parallel():
        futures = [pool.submit(np.dot, a[lo:lo + block], w,
                               out=out[lo:lo + block])
                   for lo in range(0, n, block)]
        for fut in futures:
            fut.result()

    try:
        with threadpool_limits(limits=1):
            rate = _timed_best(serial if pool is None else parallel,
                               2.0 * n ** 3 / 1e9, trials, "matmul")
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    return rate


def measure_dram_gbps(n_elements: int = 8 * 1024 * 1024, trials: int = 5,
                      min_bytes: int = 8 * 1024 * 1024) -> float:
    """Best-of-`trials` triad (a = b + s*c) streaming rate over float64
    buffers; refuses buffers too small to defeat caches and timers."""
    bytes_per_pass = 3 * 8 * n_elements
    if bytes_per_pass < min_bytes:
        raise ClockResolution(
            f"stream buffer {bytes_per_pass} B below the {min_bytes} B "
            f"minimum for meaningful timing")
    b = np.full(n_elements, 1.5, dtype=np.float64)
    c = np.full(n_elements, 0.5, dtype=np.float64)
    a = np.empty(n_elements, dtype=np.float64)

    def triad():
        np.multiply(c, 3.0, out=a)
        np.add(a, b, out=a)

    return _timed_best(triad, bytes_per_pass / 1e9, trials, "triad")


def probe_llc_bytes(max_bytes: int = 64 * 1024 * 1024,
                    walkers: int = 4096, steps: int = 64) -> int:
    """Random-gather latency knee detection; coarse by design.

    Walks `walkers` independent random cursors through buffers of
    doubling size; per-access time jumps once the working set stops
    fitting in cache. Returns the largest size still under 2x the
    small-buffer latency.
    """
    sizes = []
    size = 256 * 1024
    while size <= max_bytes:
        sizes.append(size)
        size *= 2
    rng = np.random.default_rng(1)
    latencies = []
    for nbytes in sizes:
        count = nbytes // 8
        chain = rng.permutation(count).astype(np.int64)
        cursor = rng.integers(0, count, size=walkers)
        chain[cursor]  # touch once so timing sees a warm TLB path
        start = time.perf_counter()
        for _ in range(steps):
            cursor = chain[cursor]
        latencies.append((time.perf_counter() - start) / (walkers * steps))
    floor = min(latencies[:2])
    knee = sizes[0]
    for nbytes, latency in zip(sizes, latencies):
        if latency < 2.0 * floor:
            knee = nbytes
    return knee


def calibrate_machine(threads: int = 1, llc_bytes: int | None = None,
                      matmul_n: int = 768,
                      stream_elements: int = 8 * 1024 * 1024) -> MachineSpec:
    """Populate a MachineSpec from microbenchmarks on the current host.

    Run on a quiet machine; every probe takes the best of 5 trials.
    """
    peak = measure_peak_gflops(threads=threads, n=matmul_n)
    bandwidth = measure_dram_gbps(n_elements=stream_elements)
    cache = llc_bytes if llc_bytes is not None else probe_llc_bytes()
    return MachineSpec(name=f"calibrated-{socket.gethostname()}",
                       peak_gflops=peak, dram_gbps=bandwidth,
                       llc_bytes=cache, cores=os.cpu_count() or 1)
