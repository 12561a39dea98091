import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntp import fixture_path
from ntp.dsl import (
    RawElement,
    RawGroup,
    RawInput,
    RawMarker,
    RawTopologyDoc,
    parse_topology,
    serialize_topology,
)
from ntp.errors import NtpError, SchemaError, XmlSyntaxError


def test_single_layer_document():
    doc = parse_topology(
        '<topology name="t"><layer id="fc1" type="fc" nodes="8" input="in"/>'
        '</topology>')
    assert len(doc.elements) == 1
    element = doc.elements[0]
    assert element.kind == "fc"
    assert element.element_class == "layer"
    assert element.inputs == ("in",)
    assert element.attrs == {"nodes": "8"}  # attribute stays source text


def test_unclosed_tag_reports_line():
    with pytest.raises(XmlSyntaxError) as excinfo:
        parse_topology('<topology name="t">\n<layer id="a" type="fc">\n')
    assert excinfo.value.line is not None


def test_deepspeech_fixture_counts():
    doc = parse_topology(fixture_path("deepspeech.xml").read_text())
    assert len(doc.elements) == 7
    assert len(doc.markers) == 2
    assert len(doc.groups) == 2
    assert sum(el.element_class == "inlay" for el in doc.elements) == 1


def test_one_layer_roundtrip():
    doc = parse_topology(
        '<topology name="t"><input id="in" shape="B:1,F:4"/>'
        '<layer id="a" type="fc" nodes="2" input="in"/></topology>')
    assert parse_topology(serialize_topology(doc)) == doc


def test_serialize_orders_attributes_alphabetically():
    doc = RawTopologyDoc(
        name="t",
        elements=(RawElement(id="a", element_class="layer", kind="fc",
                             attrs={"nodes": "4", "clip": "20",
                                    "activation": "relu_clip"},
                             inputs=("in",)),))
    text = serialize_topology(doc)
    line = next(l for l in text.splitlines() if "<layer" in l)
    positions = [line.index(k) for k in
                 ("activation=", "clip=", "id=", "input=", "nodes=", "type=")]
    assert positions == sorted(positions)
    assert parse_topology(text) == doc


def test_deepspeech_fixture_roundtrip():
    doc = parse_topology(fixture_path("deepspeech.xml").read_text())
    assert parse_topology(serialize_topology(doc)) == doc


def test_unknown_tag_rejected():
    with pytest.raises(SchemaError):
        parse_topology('<topology name="t"><blob id="x"/></topology>')


def test_missing_required_attributes_rejected():
    with pytest.raises(SchemaError):
        parse_topology('<topology name="t"><layer type="fc"/></topology>')
    with pytest.raises(SchemaError):
        parse_topology('<topology name="t"><layer id="a"/></topology>')
    with pytest.raises(SchemaError):
        parse_topology('<topology name="t"><marker type="start"/></topology>')
    with pytest.raises(SchemaError):
        parse_topology('<topology name="t">'
                       '<marker type="start" before="a" after="b"/></topology>')


def test_wrong_root_rejected():
    with pytest.raises(SchemaError):
        parse_topology("<network name='t'/>")


def test_bad_marker_type_rejected():
    with pytest.raises(SchemaError):
        parse_topology('<topology name="t"><marker type="middle" before="a"/>'
                       '</topology>')


# --- generative properties ---------------------------------------------------

_IDENT = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_-", min_size=1,
                 max_size=8)
# XML attribute names must not start with a digit or '-'
_ATTR_NAME = st.builds(
    lambda head, tail: head + tail,
    st.sampled_from(list("abcdefghijklmnopqrstuvwxyz_")),
    st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_-", max_size=7))
_ATTR_VALUE = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc")), max_size=12)


@st.composite
def raw_docs(draw):
    n_inputs = draw(st.integers(1, 2))
    n_elements = draw(st.integers(1, 5))
    input_ids = [f"in{i}" for i in range(n_inputs)]
    elements = []
    for i in range(n_elements):
        attrs = draw(st.dictionaries(_ATTR_NAME, _ATTR_VALUE, max_size=3))
        attrs.pop("id", None)
        attrs.pop("type", None)
        attrs.pop("input", None)
        sources = input_ids + [f"el{j}" for j in range(i)]
        elements.append(RawElement(
            id=f"el{i}",
            element_class=draw(st.sampled_from(["layer", "inlay"])),
            kind=draw(_IDENT),
            attrs=attrs,
            inputs=(draw(st.sampled_from(sources)),)))
    markers = ()
    if draw(st.booleans()):
        markers = (RawMarker("start", "el0", draw(st.sampled_from(
            ["before", "after"]))),
            RawMarker("end", f"el{n_elements - 1}", "after"))
    groups = ()
    if draw(st.booleans()):
        groups = (RawGroup("g0", ("el0",)),)
    return RawTopologyDoc(
        name=draw(_IDENT),
        inputs=tuple(RawInput(id=iid, shape="B:1,F:4") for iid in input_ids),
        elements=tuple(elements), markers=markers, groups=groups)


@given(raw_docs())
@settings(max_examples=60)
def test_roundtrip_property(doc):
    assert parse_topology(serialize_topology(doc)) == doc


@given(raw_docs())
@settings(max_examples=30)
def test_element_count_matches_tags(doc):
    text = serialize_topology(doc)
    tags = text.count("<layer ") + text.count("<inlay ")
    assert len(parse_topology(text).elements) == tags


@given(st.text(max_size=300))
@settings(max_examples=150)
def test_parser_never_panics_on_text(text):
    try:
        parse_topology(text)
    except NtpError:
        pass  # only the documented error taxonomy may escape


@given(st.binary(max_size=200))
@settings(max_examples=100)
def test_parser_never_panics_on_decoded_bytes(blob):
    try:
        parse_topology(blob.decode("utf-8", errors="replace"))
    except NtpError:
        pass
