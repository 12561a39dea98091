"""XML topology description: parsing and canonical serialization.

The document format (UTF-8 only)::

    <topology name="deepspeech">
      <input id="mfcc_in" shape="T:100,B:1,F:494" precision="fp32"/>
      <layer id="fc1" type="fc" input="mfcc_in" nodes="2048"
             activation="relu_clip" clip="20"/>
      <inlay id="ctc" type="ctc_greedy" input="fc5"/>
      <marker type="start" before="fc1"/>
      <marker type="end" after="ctc"/>
      <group name="FC1-3" layers="fc1,fc2,fc3"/>
    </topology>

No semantic validation happens here: attribute values stay as source
text, element order is preserved exactly, and unknown attributes are
kept so that graph validation can warn about them downstream.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .errors import SchemaError, XmlSyntaxError

KNOWN_TAGS = ("input", "layer", "inlay", "marker", "group")

# Attributes consumed into dedicated RawElement fields; everything else
# lands in the attribute map verbatim.
_ELEMENT_FIELD_ATTRS = ("id", "type", "input")


@dataclass(frozen=True)
class RawInput:
    id: str
    shape: str
    precision: str = "fp32"


@dataclass(frozen=True)
class RawElement:
    id: str
    element_class: str  # "layer" | "inlay"
    kind: str           # source text of the type attribute
    attrs: dict[str, str] = field(default_factory=dict)
    inputs: tuple[str, ...] = ()


@dataclass(frozen=True)
class RawMarker:
    kind: str      # "start" | "end"
    anchor: str    # element id the marker is attached to
    position: str  # "before" | "after"


@dataclass(frozen=True)
class RawGroup:
    name: str
    members: tuple[str, ...]


@dataclass(frozen=True)
class RawTopologyDoc:
    name: str
    inputs: tuple[RawInput, ...] = ()
    elements: tuple[RawElement, ...] = ()
    markers: tuple[RawMarker, ...] = ()
    groups: tuple[RawGroup, ...] = ()


def _require(elem: ET.Element, attr: str) -> str:
    value = elem.get(attr)
    if value is None:
        raise SchemaError(f"<{elem.tag}> is missing required attribute '{attr}'")
    return value


def _split_ids(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def parse_topology(xml_text: str) -> RawTopologyDoc:
    """Parse an XML topology document into a raw, unvalidated syntax tree.

    Raises XmlSyntaxError on malformed XML (with the source position) and
    SchemaError on unknown tags or missing required attributes. Never
    raises anything else, whatever the input text contains.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, column = exc.position if exc.position else (None, None)
        raise XmlSyntaxError(str(exc), line=line, column=column) from exc
    except ValueError as exc:
        # e.g. a str carrying an explicit encoding declaration
        raise XmlSyntaxError(str(exc)) from exc

    if root.tag != "topology":
        raise SchemaError(f"root tag must be <topology>, got <{root.tag}>")

    inputs: list[RawInput] = []
    elements: list[RawElement] = []
    markers: list[RawMarker] = []
    groups: list[RawGroup] = []

    for child in root:
        if child.tag == "input":
            inputs.append(RawInput(
                id=_require(child, "id"),
                shape=_require(child, "shape"),
                precision=child.get("precision", "fp32"),
            ))
        elif child.tag in ("layer", "inlay"):
            attrs = {k: v for k, v in child.attrib.items()
                     if k not in _ELEMENT_FIELD_ATTRS}
            elements.append(RawElement(
                id=_require(child, "id"),
                element_class=child.tag,
                kind=_require(child, "type"),
                attrs=attrs,
                inputs=_split_ids(child.get("input", "")),
            ))
        elif child.tag == "marker":
            kind = _require(child, "type")
            if kind not in ("start", "end"):
                raise SchemaError(f"marker type must be start|end, got '{kind}'")
            before, after = child.get("before"), child.get("after")
            if (before is None) == (after is None):
                raise SchemaError(
                    "marker needs exactly one of 'before'/'after'")
            markers.append(RawMarker(
                kind=kind,
                anchor=before if before is not None else after,
                position="before" if before is not None else "after",
            ))
        elif child.tag == "group":
            groups.append(RawGroup(
                name=_require(child, "name"),
                members=_split_ids(_require(child, "layers")),
            ))
        else:
            raise SchemaError(f"unknown tag <{child.tag}> under <topology>")

    return RawTopologyDoc(
        name=_require(root, "name"),
        inputs=tuple(inputs),
        elements=tuple(elements),
        markers=tuple(markers),
        groups=tuple(groups),
    )


def _set_sorted(elem: ET.Element, attrs: dict[str, str]) -> None:
    for key in sorted(attrs):
        elem.set(key, attrs[key])


def serialize_topology(doc: RawTopologyDoc) -> str:
    """Emit canonical XML: attributes alphabetical, elements in doc order.

    parse_topology(serialize_topology(d)) is structurally equal to d.
    """
    root = ET.Element("topology")
    root.set("name", doc.name)
    for inp in doc.inputs:
        child = ET.SubElement(root, "input")
        _set_sorted(child, {"id": inp.id, "shape": inp.shape,
                            "precision": inp.precision})
    for el in doc.elements:
        child = ET.SubElement(root, el.element_class)
        attrs = dict(el.attrs)
        attrs["id"] = el.id
        attrs["type"] = el.kind
        if el.inputs:
            attrs["input"] = ",".join(el.inputs)
        _set_sorted(child, attrs)
    for marker in doc.markers:
        child = ET.SubElement(root, "marker")
        _set_sorted(child, {"type": marker.kind, marker.position: marker.anchor})
    for group in doc.groups:
        child = ET.SubElement(root, "group")
        _set_sorted(child, {"name": group.name, "layers": ",".join(group.members)})

    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"
