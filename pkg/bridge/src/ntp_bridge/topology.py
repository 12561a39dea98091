"""Minimal reader for the profiler's topology XML dialect.

Independent implementation against the documented file format; parses
just enough structure to build and order the layers: inputs with
AXIS:EXTENT shapes, layer/inlay elements with their attributes, and the
single-input dependency chain. Markers and groups are accepted and
ignored (the bridge times every supported layer)."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass

from . import BridgeError


@dataclass(frozen=True)
class TopologyInput:
    id: str
    axes: tuple[tuple[str, int], ...]
    precision: str

    @property
    def extents(self) -> tuple[int, ...]:
        return tuple(e for _, e in self.axes)


@dataclass(frozen=True)
class TopologyElement:
    id: str
    element_class: str  # layer | inlay
    kind: str
    attrs: dict
    source: str  # single upstream id


@dataclass(frozen=True)
class Topology:
    name: str
    inputs: tuple[TopologyInput, ...]
    elements: tuple[TopologyElement, ...]  # dependency order


def _parse_shape(text: str) -> tuple[tuple[str, int], ...]:
    axes = []
    for part in text.split(","):
        tag, _, extent = part.strip().partition(":")
        if not extent:
            raise BridgeError(f"shape axis '{part}' is not TAG:EXTENT")
        axes.append((tag, int(extent)))
    return tuple(axes)


def load_topology(path) -> Topology:
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise BridgeError(f"malformed topology XML: {exc}") from exc
    if root.tag != "topology":
        raise BridgeError(f"expected <topology>, got <{root.tag}>")

    inputs = []
    elements = []
    for child in root:
        if child.tag == "input":
            inputs.append(TopologyInput(
                id=child.attrib["id"],
                axes=_parse_shape(child.attrib["shape"]),
                precision=child.get("precision", "fp32")))
        elif child.tag in ("layer", "inlay"):
            attrs = dict(child.attrib)
            elements.append(TopologyElement(
                id=attrs.pop("id"), element_class=child.tag,
                kind=attrs.pop("type"), source=attrs.pop("input"),
                attrs=attrs))
        elif child.tag in ("marker", "group"):
            continue
        else:
            raise BridgeError(f"unknown tag <{child.tag}>")

    # order elements so each one's source precedes it
    known = {inp.id for inp in inputs}
    pending = list(elements)
    ordered = []
    while pending:
        progressed = False
        for element in list(pending):
            if element.source in known:
                ordered.append(element)
                known.add(element.id)
                pending.remove(element)
                progressed = True
        if not progressed:
            raise BridgeError(
                f"unresolvable inputs for {[e.id for e in pending]}")
    return Topology(name=root.attrib["name"], inputs=tuple(inputs),
                    elements=tuple(ordered))
