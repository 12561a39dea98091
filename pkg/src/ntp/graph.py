"""Typed, shape-inferred DAG built from a raw topology document.

Validation establishes every structural invariant the rest of the tool
relies on: unique ids, resolvable references, acyclicity, per-kind
parameter ranges, inferred output shapes, a single contiguous benchmark
region, and non-overlapping report groups. The resulting TopologyGraph
is immutable and safe to share across threads.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

from .dsl import RawTopologyDoc
from .errors import (
    CycleError,
    DanglingReference,
    MarkerError,
    SchemaError,
    ShapeError,
    UnknownKind,
)

AXIS_TAGS = ("T", "B", "C", "H", "W", "F", "N")
PRECISIONS = ("fp32", "fp16", "int8")
PRECISION_BYTES = {"fp32": 4, "fp16": 2, "int8": 1}

MFCC_COEFFS = 26


@dataclass(frozen=True)
class TensorShape:
    """Ordered (axis tag, extent) pairs plus the storage precision tag."""

    axes: tuple[tuple[str, int], ...]
    precision: str = "fp32"

    def __post_init__(self):
        tags = [t for t, _ in self.axes]
        if len(set(tags)) != len(tags):
            raise ShapeError(f"duplicate axis tags in {tags}")
        for tag, extent in self.axes:
            if tag not in AXIS_TAGS:
                raise ShapeError(f"unknown axis tag '{tag}'")
            if extent < 1:
                raise ShapeError(f"axis {tag} has non-positive extent {extent}")
        if self.precision not in PRECISIONS:
            raise ShapeError(f"unknown precision '{self.precision}'")

    @property
    def tags(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.axes)

    @property
    def extents(self) -> tuple[int, ...]:
        return tuple(e for _, e in self.axes)

    def extent(self, tag: str) -> int:
        for t, e in self.axes:
            if t == tag:
                return e
        raise ShapeError(f"shape {self} has no {tag} axis")

    def numel(self) -> int:
        return math.prod(self.extents)

    def __str__(self):
        return ",".join(f"{t}:{e}" for t, e in self.axes)


def parse_shape(text: str, precision: str = "fp32") -> TensorShape:
    """Parse 'T:100,B:1,F:26' into a TensorShape."""
    axes = []
    for part in text.split(","):
        part = part.strip()
        if ":" not in part:
            raise ShapeError(f"axis '{part}' lacks a tag prefix (want TAG:EXTENT)")
        tag, _, extent_text = part.partition(":")
        try:
            extent = int(extent_text)
        except ValueError:
            raise ShapeError(f"axis extent '{extent_text}' is not an integer") from None
        axes.append((tag.strip(), extent))
    if not axes:
        raise ShapeError("empty shape")
    return TensorShape(tuple(axes), precision)


class LayerKind(enum.Enum):
    FC = "fc"
    LSTM = "lstm"
    BiLSTM = "bilstm"
    Conv2D = "conv2d"
    Softmax = "softmax"
    InlayMfcc = "mfcc"
    InlayMemcopy = "memcopy"
    InlayCast = "cast"
    InlayCtcGreedy = "ctc_greedy"


_LAYER_KINDS = {LayerKind.FC, LayerKind.LSTM, LayerKind.BiLSTM,
                LayerKind.Conv2D, LayerKind.Softmax}

PARAMETRIC_KINDS = {LayerKind.FC, LayerKind.LSTM, LayerKind.BiLSTM,
                    LayerKind.Conv2D}


@dataclass(frozen=True)
class FcParams:
    nodes: int
    activation: str = "none"  # none | relu_clip
    clip: float = 20.0


@dataclass(frozen=True)
class RecurrentParams:
    hidden: int


@dataclass(frozen=True)
class ConvParams:
    filters: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: str = "same"  # same | valid


@dataclass(frozen=True)
class CastParams:
    precision: str


@dataclass(frozen=True)
class NoParams:
    pass


@dataclass(frozen=True)
class LayerNode:
    id: str
    kind: LayerKind
    params: object
    inputs: tuple[str, ...]
    out_shape: TensorShape


@dataclass(frozen=True)
class TopologyGraph:
    name: str
    inputs: tuple[tuple[str, TensorShape], ...]
    nodes: tuple[LayerNode, ...]  # topological order
    region: tuple[str, str] | None
    groups: tuple[tuple[str, tuple[str, ...]], ...]
    _index: dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "_index", {n.id: i for i, n in enumerate(self.nodes)})

    def node(self, node_id: str) -> LayerNode:
        return self.nodes[self._index[node_id]]

    def topo_index(self, node_id: str) -> int:
        return self._index[node_id]

    def input_shape(self, input_id: str) -> TensorShape:
        for iid, shape in self.inputs:
            if iid == input_id:
                return shape
        raise DanglingReference(f"unknown graph input '{input_id}'")

    def in_shape_of(self, node_id: str) -> TensorShape:
        """Shape of the single upstream tensor feeding node_id."""
        node = self.node(node_id)
        src = node.inputs[0]
        if src in self._index:
            return self.nodes[self._index[src]].out_shape
        return self.input_shape(src)


# --- parameter parsing -----------------------------------------------------

_RECOGNIZED_ATTRS = {
    LayerKind.FC: {"nodes", "activation", "clip"},
    LayerKind.LSTM: {"nodes"},
    LayerKind.BiLSTM: {"nodes"},
    LayerKind.Conv2D: {"filters", "kernel", "stride", "padding"},
    LayerKind.Softmax: set(),
    LayerKind.InlayMfcc: set(),
    LayerKind.InlayMemcopy: set(),
    LayerKind.InlayCast: {"precision"},
    LayerKind.InlayCtcGreedy: set(),
}


def _int_attr(attrs, name, elem_id, minimum=1):
    text = attrs.get(name)
    if text is None:
        raise SchemaError(f"{elem_id}: missing required attribute '{name}'")
    try:
        value = int(text)
    except ValueError:
        raise SchemaError(f"{elem_id}: {name}='{text}' is not an integer") from None
    if value < minimum:
        raise SchemaError(f"{elem_id}: {name}={value} must be >= {minimum}")
    return value


def _parse_params(elem_id: str, kind: LayerKind, attrs: dict[str, str]):
    unknown = set(attrs) - _RECOGNIZED_ATTRS[kind]
    if unknown:
        warnings.warn(
            f"{elem_id}: ignoring unknown attribute(s) {sorted(unknown)} "
            f"on kind '{kind.value}'", stacklevel=3)

    if kind is LayerKind.FC:
        activation = attrs.get("activation", "none")
        if activation not in ("none", "relu_clip"):
            raise SchemaError(f"{elem_id}: unknown activation '{activation}'")
        clip = float(attrs.get("clip", "20"))
        if activation == "relu_clip" and clip <= 0:
            raise SchemaError(f"{elem_id}: clip={clip} must be > 0")
        return FcParams(nodes=_int_attr(attrs, "nodes", elem_id),
                        activation=activation, clip=clip)
    if kind in (LayerKind.LSTM, LayerKind.BiLSTM):
        return RecurrentParams(hidden=_int_attr(attrs, "nodes", elem_id))
    if kind is LayerKind.Conv2D:
        kernel = attrs.get("kernel")
        if kernel is None:
            raise SchemaError(f"{elem_id}: missing required attribute 'kernel'")
        try:
            kh_text, kw_text = kernel.lower().split("x")
            kh, kw = int(kh_text), int(kw_text)
        except ValueError:
            raise SchemaError(f"{elem_id}: kernel='{kernel}' is not KHxKW") from None
        if kh < 1 or kw < 1:
            raise SchemaError(f"{elem_id}: kernel dims must be >= 1")
        padding = attrs.get("padding", "same")
        if padding not in ("same", "valid"):
            raise SchemaError(f"{elem_id}: padding must be same|valid")
        return ConvParams(filters=_int_attr(attrs, "filters", elem_id),
                          kernel_h=kh, kernel_w=kw,
                          stride=_int_attr(attrs, "stride", elem_id)
                          if "stride" in attrs else 1,
                          padding=padding)
    if kind is LayerKind.InlayCast:
        precision = attrs.get("precision")
        if precision not in PRECISIONS:
            raise SchemaError(
                f"{elem_id}: cast precision must be one of {PRECISIONS}")
        return CastParams(precision=precision)
    return NoParams()


# --- shape inference --------------------------------------------------------

def infer_out_shape(elem_id: str, kind: LayerKind, params, in_shape: TensorShape
                    ) -> TensorShape:
    tags = in_shape.tags

    if kind is LayerKind.FC:
        if tags[-1] != "F":
            raise ShapeError(f"{elem_id}: fc needs a trailing F axis, got {in_shape}")
        return TensorShape(in_shape.axes[:-1] + (("F", params.nodes),),
                           in_shape.precision)

    if kind in (LayerKind.LSTM, LayerKind.BiLSTM):
        if tags != ("T", "B", "F"):
            raise ShapeError(f"{elem_id}: {kind.value} needs axes (T,B,F), "
                             f"got {in_shape}")
        width = params.hidden * (2 if kind is LayerKind.BiLSTM else 1)
        return TensorShape(in_shape.axes[:-1] + (("F", width),),
                           in_shape.precision)

    if kind is LayerKind.Conv2D:
        if tags != ("B", "C", "H", "W"):
            raise ShapeError(f"{elem_id}: conv2d needs axes (B,C,H,W), "
                             f"got {in_shape}")
        h, w = in_shape.extent("H"), in_shape.extent("W")
        s = params.stride
        if params.padding == "same":
            ho, wo = -(-h // s), -(-w // s)
        else:
            if h < params.kernel_h or w < params.kernel_w:
                raise ShapeError(f"{elem_id}: kernel larger than input "
                                 f"under valid padding")
            ho = (h - params.kernel_h) // s + 1
            wo = (w - params.kernel_w) // s + 1
        return TensorShape(
            (("B", in_shape.extent("B")), ("C", params.filters),
             ("H", ho), ("W", wo)), in_shape.precision)

    if kind is LayerKind.Softmax:
        if "F" not in tags:
            raise ShapeError(f"{elem_id}: softmax needs an F axis, got {in_shape}")
        return in_shape

    if kind is LayerKind.InlayMfcc:
        if tags != ("T", "B", "F"):
            raise ShapeError(f"{elem_id}: mfcc needs axes (T,B,F), got {in_shape}")
        frame = in_shape.extent("F")
        if frame // 2 + 1 < MFCC_COEFFS:
            raise ShapeError(
                f"{elem_id}: frame length {frame} too short for "
                f"{MFCC_COEFFS} coefficients (need >= {2 * (MFCC_COEFFS - 1)})")
        return TensorShape(in_shape.axes[:-1] + (("F", MFCC_COEFFS),),
                           in_shape.precision)

    if kind is LayerKind.InlayMemcopy:
        return in_shape

    if kind is LayerKind.InlayCast:
        return TensorShape(in_shape.axes, params.precision)

    if kind is LayerKind.InlayCtcGreedy:
        if tags != ("T", "B", "F"):
            raise ShapeError(f"{elem_id}: ctc_greedy needs axes (T,B,F), "
                             f"got {in_shape}")
        # one (possibly blank-padded) label slot per timestep
        return TensorShape((("B", in_shape.extent("B")),
                            ("N", in_shape.extent("T"))), in_shape.precision)

    raise UnknownKind(f"{elem_id}: no shape rule for kind {kind}")


# --- validation --------------------------------------------------------------

def _topo_order(elements, known_srcs):
    """Stable Kahn topological sort; raises CycleError on leftovers."""
    by_id = {el.id: el for el in elements}
    indegree = {el.id: 0 for el in elements}
    consumers: dict[str, list[str]] = {el.id: [] for el in elements}
    for el in elements:
        for src in el.inputs:
            if src in by_id:
                indegree[el.id] += 1
                consumers[src].append(el.id)
            elif src not in known_srcs:
                raise DanglingReference(
                    f"{el.id}: input '{src}' does not resolve to any "
                    f"input or element id")
    doc_pos = {el.id: i for i, el in enumerate(elements)}
    ready = sorted((eid for eid, deg in indegree.items() if deg == 0),
                   key=doc_pos.__getitem__)
    order = []
    while ready:
        current = ready.pop(0)
        order.append(current)
        newly = []
        for consumer in consumers[current]:
            indegree[consumer] -= 1
            if indegree[consumer] == 0:
                newly.append(consumer)
        ready = sorted(ready + newly, key=doc_pos.__getitem__)
    if len(order) != len(elements):
        stuck = sorted(set(by_id) - set(order))
        raise CycleError(f"cycle detected involving {stuck}")
    return [by_id[eid] for eid in order]


def _resolve_region(markers, ordered_ids):
    starts = [m for m in markers if m.kind == "start"]
    ends = [m for m in markers if m.kind == "end"]
    if not starts and not ends:
        return None
    if len(starts) != 1 or len(ends) != 1:
        raise MarkerError(
            f"exactly one start/end marker pair is allowed, got "
            f"{len(starts)} start / {len(ends)} end")
    pos = {nid: i for i, nid in enumerate(ordered_ids)}

    def anchor_index(marker):
        if marker.anchor not in pos:
            raise MarkerError(f"marker anchor '{marker.anchor}' is not an element")
        return pos[marker.anchor]

    start, end = starts[0], ends[0]
    first = anchor_index(start) + (1 if start.position == "after" else 0)
    last = anchor_index(end) - (1 if end.position == "before" else 0)
    if first >= len(ordered_ids) or last < 0:
        raise MarkerError("marker region is empty")
    if first > last:
        raise MarkerError(
            f"end marker ({ordered_ids[last] if last >= 0 else '?'}) precedes "
            f"start marker ({ordered_ids[first]}) in topological order")
    return ordered_ids[first], ordered_ids[last]


def validate(doc: RawTopologyDoc) -> TopologyGraph:
    """Validate a raw document into a shape-inferred TopologyGraph.

    Deterministic: validating the same document twice yields equal graphs.
    """
    kind_by_value = {k.value: k for k in LayerKind}

    if not doc.elements:
        raise SchemaError("topology has no layers or inlays")

    inputs = []
    for raw in doc.inputs:
        if raw.precision not in PRECISIONS:
            raise ShapeError(f"input {raw.id}: unknown precision '{raw.precision}'")
        inputs.append((raw.id, parse_shape(raw.shape, raw.precision)))

    ids = [iid for iid, _ in inputs] + [el.id for el in doc.elements]
    seen = set()
    for node_id in ids:
        if node_id in seen:
            raise SchemaError(f"duplicate id '{node_id}'")
        seen.add(node_id)

    input_shapes = dict(inputs)
    ordered = _topo_order(doc.elements, set(input_shapes))

    nodes = []
    out_shapes: dict[str, TensorShape] = dict(input_shapes)
    for el in ordered:
        kind = kind_by_value.get(el.kind)
        if kind is None:
            raise UnknownKind(f"{el.id}: unknown kind '{el.kind}'")
        if kind in _LAYER_KINDS and el.element_class != "layer":
            raise SchemaError(f"{el.id}: kind '{el.kind}' must be a <layer>")
        if kind not in _LAYER_KINDS and el.element_class != "inlay":
            raise SchemaError(f"{el.id}: kind '{el.kind}' must be an <inlay>")
        if len(el.inputs) != 1:
            raise SchemaError(
                f"{el.id}: kind '{el.kind}' takes exactly one input, "
                f"got {len(el.inputs)}")
        params = _parse_params(el.id, kind, el.attrs)
        in_shape = out_shapes[el.inputs[0]]
        out_shape = infer_out_shape(el.id, kind, params, in_shape)
        out_shapes[el.id] = out_shape
        nodes.append(LayerNode(id=el.id, kind=kind, params=params,
                               inputs=el.inputs, out_shape=out_shape))

    region = _resolve_region(doc.markers, [n.id for n in nodes])

    node_ids = {n.id for n in nodes}
    claimed: dict[str, str] = {}
    groups = []
    for raw_group in doc.groups:
        for member in raw_group.members:
            if member not in node_ids:
                raise DanglingReference(
                    f"group '{raw_group.name}': member '{member}' is not an "
                    f"element")
            if member in claimed:
                raise SchemaError(
                    f"groups '{claimed[member]}' and '{raw_group.name}' "
                    f"overlap on '{member}'")
            claimed[member] = raw_group.name
        groups.append((raw_group.name, raw_group.members))

    return TopologyGraph(name=doc.name, inputs=tuple(inputs),
                         nodes=tuple(nodes), region=region,
                         groups=tuple(groups))


def region_nodes(graph: TopologyGraph) -> list[str]:
    """Contiguous topological slice inside the marker region (inclusive).

    Falls back to every node when the topology has no markers.
    """
    if graph.region is None:
        return [n.id for n in graph.nodes]
    first, last = graph.region
    lo, hi = graph.topo_index(first), graph.topo_index(last)
    return [n.id for n in graph.nodes[lo:hi + 1]]
