"""Reference engine: executes a Model with per-node metric sampling.

One run = `warmup` uncollected repetitions followed by `reps` collected
ones. The collector is resumed exactly when execution reaches the first
node of the benchmark region and paused right after its last node, so
samples exist only for region nodes; counters, observed shapes, and
output checksums are recorded for every node regardless.

The engine owns a worker pool of EngineConfig.threads and pins BLAS to
one thread for the duration of a run, so the configured thread count is
the only source of parallelism. A single engine run is internally
parallel but externally serial.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import kernels
from .errors import RuntimeFailure, ShapeError, ShapeMismatch
from .graph import PRECISION_BYTES, LayerKind, TensorShape, region_nodes
from .kernels import ExecContext, KernelCounters
from .metrics import AllocationAccountant, BaseCollector, Sample
from .model import Model
from .tensor import Tensor

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over a byte string."""
    acc = FNV_OFFSET
    for byte in data:
        acc = ((acc ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return acc


def tensor_checksum(t: Tensor) -> int:
    return fnv1a64(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


@dataclass(frozen=True)
class EngineConfig:
    threads: int = 1
    reps: int = 1
    warmup: int = 0
    fc_block: int = 64  # row-block size of the cache-blocked matmul

    def __post_init__(self):
        if self.threads < 1:
            raise ShapeError(f"threads must be >= 1, got {self.threads}")
        if self.reps < 1:
            raise ShapeError(f"reps must be >= 1, got {self.reps}")
        if self.warmup < 0:
            raise ShapeError(f"warmup must be >= 0, got {self.warmup}")


@dataclass
class NodeRecord:
    node_id: str
    kind: str
    counters: KernelCounters
    out_shape: TensorShape
    checksum: int
    in_region: bool
    samples: list[Sample] = field(default_factory=list)


@dataclass
class ExecutionTrace:
    nodes: dict[str, NodeRecord]  # topological order
    region: list[str]
    region_totals: list[dict]  # one {"wall_ns", "cpu_ns"} per collected rep
    reps: int
    threads: int
    collector_summary: dict = field(default_factory=dict)


class Engine:
    """Owns the worker pool and the tensor allocation accountant."""

    def __init__(self, config: EngineConfig):
        self.config = config
        self.allocator = AllocationAccountant()

    def run(self, model: Model, inputs, collector: BaseCollector,
            run_meta: dict | None = None) -> ExecutionTrace:
        return run_model(model, inputs, self.config, collector,
                         allocator=self.allocator, run_meta=run_meta)


def _dispatch(node, x: Tensor, weights, ctx: ExecContext
              ) -> tuple[Tensor, KernelCounters]:
    kind = node.kind
    if kind is LayerKind.FC:
        W, b = weights
        return kernels.fc_forward(x, W, b, node.params.activation,
                                  node.params.clip, ctx)
    if kind is LayerKind.LSTM:
        Wx, Wh, b = weights
        return kernels.lstm_forward(x, Wx, Wh, b, node.params.hidden, "fwd", ctx)
    if kind is LayerKind.BiLSTM:
        return kernels.bilstm_forward(x, tuple(weights[:3]), tuple(weights[3:]),
                                      node.params.hidden, ctx)
    if kind is LayerKind.Conv2D:
        W, b = weights
        return kernels.conv2d_forward(x, W, b, node.params.stride,
                                      node.params.padding, ctx)
    if kind is LayerKind.Softmax:
        return kernels.softmax(x, ctx)
    if kind is LayerKind.InlayMfcc:
        return kernels.inlay_mfcc_lite(x, ctx)
    if kind is LayerKind.InlayMemcopy:
        return kernels.inlay_memcopy(x, ctx)
    if kind is LayerKind.InlayCast:
        return kernels.inlay_cast(x, node.params.precision, ctx)
    if kind is LayerKind.InlayCtcGreedy:
        return kernels.inlay_ctc_greedy(x, ctx)
    raise RuntimeFailure(f"{node.id}: no kernel for kind {kind}")


def _normalize_inputs(graph, inputs) -> dict[str, Tensor]:
    if isinstance(inputs, Tensor):
        if len(graph.inputs) != 1:
            raise ShapeMismatch(
                f"graph has {len(graph.inputs)} inputs; pass a dict")
        inputs = {graph.inputs[0][0]: inputs}
    supplied = dict(inputs)
    for iid, shape in graph.inputs:
        if iid not in supplied:
            raise ShapeMismatch(f"missing input tensor '{iid}'")
        got = supplied[iid].shape
        if got.axes != shape.axes:
            raise ShapeMismatch(f"input '{iid}': got shape {got}, "
                                f"graph declares {shape}")
    return supplied


def run_model(model: Model, inputs, config: EngineConfig,
              collector: BaseCollector, allocator: AllocationAccountant | None = None,
              run_meta: dict | None = None) -> ExecutionTrace:
    """Execute the model, producing one Sample per (region node, rep)."""
    graph = model.graph
    supplied = _normalize_inputs(graph, inputs)
    region = region_nodes(graph)
    region_set = set(region)
    first_region, last_region = region[0], region[-1]

    allocator = allocator if allocator is not None else AllocationAccountant()
    if hasattr(collector, "attach_allocator"):
        collector.attach_allocator(allocator)

    # consumer counts decide when intermediates are released
    consumers: dict[str, int] = {iid: 0 for iid, _ in graph.inputs}
    consumers.update({n.id: 0 for n in graph.nodes})
    for node in graph.nodes:
        consumers[node.inputs[0]] += 1

    compute_weights = {
        node_id: [w.compute() for w in tensors]
        for node_id, tensors in model.weights.items()
    }
    width = PRECISION_BYTES[model.storage_precision]

    records: dict[str, NodeRecord] = {}
    region_totals: list[dict] = []
    live_baseline = allocator.live_bytes

    pool = ThreadPoolExecutor(max_workers=config.threads) \
        if config.threads > 1 else None
    ctx = ExecContext(threads=config.threads, pool=pool,
                      fc_block=config.fc_block, weight_byte_width=width)

    def one_pass(collect: bool) -> None:
        live: dict[str, tuple[Tensor, int, bool]] = {
            iid: (tensor, consumers[iid], False)
            for iid, tensor in supplied.items()
        }
        region_wall0 = region_cpu0 = 0
        for node in graph.nodes:
            in_region = node.id in region_set
            x = live[node.inputs[0]][0]
            if collect and in_region and node.id == first_region:
                collector.resume()
                region_cpu0 = time.process_time_ns()
                region_wall0 = time.perf_counter_ns()
            if collect and in_region:
                collector.on_node_begin(node.id)

            out, counters = _dispatch(node, x, compute_weights.get(node.id, ()),
                                      ctx)
            allocator.allocate(out.nbytes())

            sample = None
            if collect and in_region:
                sample = collector.on_node_end(node.id)
            if collect and in_region and node.id == last_region:
                wall = time.perf_counter_ns() - region_wall0
                cpu = time.process_time_ns() - region_cpu0
                collector.pause()
                region_totals.append({"wall_ns": wall, "cpu_ns": cpu})

            if out.shape.axes != node.out_shape.axes:
                raise ShapeError(
                    f"{node.id}: runtime shape {out.shape} != inferred "
                    f"{node.out_shape}")

            checksum = tensor_checksum(out)
            record = records.get(node.id)
            if record is None:
                records[node.id] = NodeRecord(
                    node_id=node.id, kind=node.kind.value, counters=counters,
                    out_shape=out.shape, checksum=checksum, in_region=in_region)
            else:
                if record.counters != counters:
                    raise RuntimeFailure(
                        f"{node.id}: counters changed between repetitions")
                record.checksum = checksum
            if sample is not None:
                records[node.id].samples.append(sample)

            # retire the consumed input; engine-allocated buffers free here
            src = node.inputs[0]
            tensor, remaining, engine_owned = live[src]
            remaining -= 1
            if remaining <= 0:
                if engine_owned:
                    allocator.release(tensor.nbytes())
                del live[src]
            else:
                live[src] = (tensor, remaining, engine_owned)
            live[node.id] = (out, consumers[node.id], True)

        for src, (tensor, _, engine_owned) in list(live.items()):
            if engine_owned:
                allocator.release(tensor.nbytes())

    try:
        with threadpool_limits(limits=1):
            for _ in range(config.warmup):
                one_pass(collect=False)
            meta = dict(run_meta or {})
            meta.setdefault("threads", config.threads)
            meta.setdefault("reps", config.reps)
            collector.start(meta)
            for _ in range(config.reps):
                one_pass(collect=True)
            summary = collector.stop()
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    if allocator.live_bytes != live_baseline:
        raise RuntimeFailure(
            f"allocator live bytes leaked: {allocator.live_bytes} != "
            f"{live_baseline}")

    ordered = {n.id: records[n.id] for n in graph.nodes}
    return ExecutionTrace(nodes=ordered, region=region,
                          region_totals=region_totals, reps=config.reps,
                          threads=config.threads, collector_summary=summary)
