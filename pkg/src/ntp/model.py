"""Materialize a TopologyGraph into weights and random input batches.

Every buffer is a pure function of (graph, seed, precision): each tensor
draws from its own Philox counter-based stream keyed by SHA-256 of
"<seed>|<node id>|<tensor name>", so weights do not depend on build
order, thread count, or the presence of other nodes.

Weight initialization is uniform[-0.1, 0.1). Storage precisions:
fp32 as-is; fp16 round-to-nearest-even; int8 symmetric per-tensor
quantization with scale = max|w|/127 (compute always dequantizes back
to fp32).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PrecisionUnsupported, ShapeError
from .graph import (
    PRECISION_BYTES,
    PRECISIONS,
    LayerKind,
    TensorShape,
    TopologyGraph,
)
from .tensor import Tensor

_STORAGE_DTYPES = {"fp32": np.dtype("<f4"), "fp16": np.dtype("<f2"),
                   "int8": np.dtype("i1")}

WEIGHT_INIT_LO = -0.1
WEIGHT_INIT_HI = 0.1


def keyed_stream(seed: int, *labels: str) -> np.random.Generator:
    """Independent Philox stream for (seed, labels...)."""
    material = "|".join([str(int(seed) & 0xFFFFFFFFFFFFFFFF), *labels])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class WeightTensor:
    """One named parameter buffer held in storage precision."""

    name: str
    dims: tuple[int, ...]
    precision: str
    data: np.ndarray = field(repr=False)
    scale: float | None = None  # int8 only

    def __post_init__(self):
        if self.data.size != math.prod(self.dims):
            raise ShapeError(
                f"{self.name}: buffer {self.data.size} != prod{self.dims}")

    def numel(self) -> int:
        return math.prod(self.dims)

    def storage_nbytes(self) -> int:
        return self.numel() * PRECISION_BYTES[self.precision]

    def compute(self) -> np.ndarray:
        """fp32 view used by the engine (dequantized for int8);
        zero-copy when storage is already fp32."""
        if self.precision == "int8":
            return (self.data.astype(np.float32) * np.float32(self.scale)
                    ).reshape(self.dims)
        return np.asarray(self.data, dtype=np.float32).reshape(self.dims)


@dataclass(frozen=True)
class Model:
    graph: TopologyGraph
    weights: dict[str, tuple[WeightTensor, ...]]
    seed: int
    storage_precision: str

    def weight_elements(self, node_id: str) -> int:
        return sum(w.numel() for w in self.weights.get(node_id, ()))

    def all_tensors(self) -> list[WeightTensor]:
        return [w for node in self.graph.nodes
                for w in self.weights.get(node.id, ())]


@dataclass(frozen=True)
class InputSpec:
    shape: TensorShape
    lo: float = 0.0
    hi: float = 1.0
    seed: int = 0
    label: str = "input"

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ShapeError(f"uniform range needs lo < hi, got "
                             f"[{self.lo}, {self.hi})")


def weight_layout(node, in_shape: TensorShape) -> list[tuple[str, tuple[int, ...]]]:
    """(tensor name, dims) pairs a node's kind requires, in fixed order.

    LSTM gate order along the 4H axis is i, f, g, o.
    """
    kind = node.kind
    if kind is LayerKind.FC:
        fan_in = in_shape.extent("F")
        return [(f"{node.id}.W", (fan_in, node.params.nodes)),
                (f"{node.id}.b", (node.params.nodes,))]
    if kind in (LayerKind.LSTM, LayerKind.BiLSTM):
        fan_in = in_shape.extent("F")
        h = node.params.hidden
        directions = ["fwd"] if kind is LayerKind.LSTM else ["fwd", "bwd"]
        layout = []
        for direction in directions:
            layout += [(f"{node.id}.{direction}.Wx", (fan_in, 4 * h)),
                       (f"{node.id}.{direction}.Wh", (h, 4 * h)),
                       (f"{node.id}.{direction}.b", (4 * h,))]
        return layout
    if kind is LayerKind.Conv2D:
        p = node.params
        return [(f"{node.id}.W", (p.filters, in_shape.extent("C"),
                                  p.kernel_h, p.kernel_w)),
                (f"{node.id}.b", (p.filters,))]
    return []


def quantize(values: np.ndarray, precision: str) -> tuple[np.ndarray, float | None]:
    """Convert an fp32 buffer to storage precision, returning (data, scale)."""
    if precision == "fp32":
        return np.asarray(values, dtype=_STORAGE_DTYPES["fp32"]), None
    if precision == "fp16":
        return values.astype(_STORAGE_DTYPES["fp16"]), None
    if precision == "int8":
        peak = float(np.max(np.abs(values))) if values.size else 0.0
        # fp32-rounded so the value survives the container format exactly
        scale = float(np.float32(peak / 127.0)) if peak > 0 else 1.0
        q = np.clip(np.rint(values / scale), -127, 127)
        return q.astype(_STORAGE_DTYPES["int8"]), scale
    raise PrecisionUnsupported(f"unknown storage precision '{precision}'")


def build_model(graph: TopologyGraph, seed: int, precision: str = "fp32") -> Model:
    """Deterministically materialize weights for every parametric node."""
    if precision not in PRECISIONS:
        raise PrecisionUnsupported(f"unknown storage precision '{precision}'")
    weights: dict[str, tuple[WeightTensor, ...]] = {}
    for node in graph.nodes:
        layout = weight_layout(node, graph.in_shape_of(node.id))
        if not layout:
            continue
        tensors = []
        span = np.float32(WEIGHT_INIT_HI - WEIGHT_INIT_LO)
        low = np.float32(WEIGHT_INIT_LO)
        for name, dims in layout:
            rng = keyed_stream(seed, node.id, name)
            raw = rng.random(size=math.prod(dims), dtype=np.float32)
            raw *= span
            raw += low
            data, scale = quantize(raw, precision)
            tensors.append(WeightTensor(name=name, dims=dims,
                                        precision=precision, data=data,
                                        scale=scale))
        weights[node.id] = tuple(tensors)
    return Model(graph=graph, weights=weights, seed=seed,
                 storage_precision=precision)


def gen_input(spec: InputSpec) -> Tensor:
    """Random uniform[lo, hi) batch, deterministic in (seed, label)."""
    rng = keyed_stream(spec.seed, "input", spec.label)
    span = spec.hi - spec.lo
    values = (rng.random(size=spec.shape.numel(), dtype=np.float64) * span
              + spec.lo).astype(np.float32)
    return Tensor(shape=spec.shape, data=values)


def gen_graph_inputs(graph: TopologyGraph, seed: int,
                     lo: float = 0.0, hi: float = 1.0) -> dict[str, Tensor]:
    """One generated batch per graph input, streams keyed by input id."""
    return {iid: gen_input(InputSpec(shape=shape, lo=lo, hi=hi, seed=seed,
                                     label=iid))
            for iid, shape in graph.inputs}
