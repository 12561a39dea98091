import copy
import csv
import io
import json

import pytest

from ntp import __version__
from ntp.errors import AxisMismatch, InconsistentInputs, UnalignableRows
from ntp.metrics import Sample, aggregate
from ntp.report import (
    ComparisonReport,
    ProfileReport,
    compare,
    export_csv,
    export_json,
    graph_to_json,
    parse_report,
    summarize,
    validate_payload,
)


def _meta(**overrides):
    meta = {"topology": "synthetic", "seed": 0, "precision": "fp32",
            "threads": 1, "reps": 2, "warmup": 0, "collector": "time",
            "machine": "generic-cpu", "tool_version": __version__,
            "timestamp": "2000-01-01T00:00:00+00:00", "measured_only": False,
            "cost_only": False}
    meta.update(overrides)
    return meta


def _layer(layer_id, wall_ms, kind="fc", percent=None):
    wall_ns = wall_ms * 1e6
    stats = {name: {"min": wall_ns, "max": wall_ns, "mean": wall_ns,
                    "median": wall_ns, "stddev": 0.0}
             for name in ("wall_ns", "cpu_ns", "alloc_bytes",
                          "peak_live_bytes")}
    return {"id": layer_id, "kind": kind, "out_shape": "B:1,F:4",
            "in_region": True, "counters": {"macs": 0, "flops": 0,
                                            "weight_bytes_touched": 0,
                                            "activation_bytes_touched": 0},
            "checksum": "0" * 16, "cost": None, "stats": stats, "reps": 2,
            "percent_wall": percent, "utilization": 1.0}


def _synthetic_report(walls: dict, **meta_overrides) -> ProfileReport:
    total = sum(walls.values())
    layers = [_layer(lid, ms, percent=100.0 * ms / total)
              for lid, ms in walls.items()]
    return ProfileReport(meta=_meta(**meta_overrides), layers=layers,
                         groups=[], totals={})


# --- summarize -------------------------------------------------------------------

def _stats_ns(*walls):
    return aggregate([Sample(wall_ns=w, cpu_ns=w // 2) for w in walls])


def test_percent_wall_from_medians(toy_report):
    percents = [rec["percent_wall"] for rec in toy_report.layers]
    assert sum(percents) == pytest.approx(100.0, abs=0.01)
    # two synthetic layers at 2 ms / 8 ms split 20/80
    report = _synthetic_report({"a": 2.0, "b": 8.0})
    assert report.layer("a")["percent_wall"] == pytest.approx(20.0)
    assert report.layer("b")["percent_wall"] == pytest.approx(80.0)


def test_summarize_percents_sum_and_layer_order(toy_run, toy_report):
    ids = [rec["id"] for rec in toy_report.layers]
    assert ids == [n.id for n in toy_run["graph"].nodes]


def test_group_records_are_member_sums(toy_report):
    group = next(g for g in toy_report.groups if g["name"] == "fc")
    fc1 = toy_report.layer("fc1")
    fc2 = toy_report.layer("fc2")
    assert group["members"] == ["fc1", "fc2"]
    assert group["wall_ns_median"] == (fc1["stats"]["wall_ns"]["median"]
                                       + fc2["stats"]["wall_ns"]["median"])
    assert group["flops"] == fc1["cost"]["flops"] + fc2["cost"]["flops"]
    assert group["percent_wall"] == pytest.approx(
        fc1["percent_wall"] + fc2["percent_wall"])


def test_summarize_rejects_mismatched_nodes(toy_run, generic_machine):
    from ntp.costmodel import topology_cost
    from ntp.dsl import parse_topology
    from ntp.graph import validate

    other = validate(parse_topology(
        '<topology name="x"><input id="in" shape="B:1,F:4"/>'
        '<layer id="zzz" type="fc" nodes="2" input="in"/></topology>'))
    costs = topology_cost(other, generic_machine)
    with pytest.raises(InconsistentInputs):
        summarize(toy_run["trace"], toy_run["stats"], costs, _meta())


def test_summarize_rejects_missing_stats(toy_run, generic_machine):
    from ntp.costmodel import topology_cost

    costs = topology_cost(toy_run["graph"], generic_machine)
    partial = dict(toy_run["stats"])
    partial.popitem()
    with pytest.raises(InconsistentInputs):
        summarize(toy_run["trace"], partial, costs, _meta())


def test_report_is_pure_function_of_inputs(toy_run, generic_machine):
    from ntp.costmodel import topology_cost

    costs = topology_cost(toy_run["graph"], generic_machine)
    meta = _meta()
    a = summarize(toy_run["trace"], toy_run["stats"], costs, meta,
                  groups=toy_run["graph"].groups)
    b = summarize(toy_run["trace"], toy_run["stats"], costs, meta,
                  groups=toy_run["graph"].groups)
    assert export_json(a) == export_json(b)


# --- schema / export ---------------------------------------------------------------

def test_real_report_validates_against_schema(toy_report):
    validate_payload(toy_report.to_payload())


def test_export_parse_roundtrip(toy_report):
    blob = export_json(toy_report)
    parsed = parse_report(blob)
    assert parsed.to_payload() == toy_report.to_payload()


def test_schema_rejects_wrong_version(toy_report):
    payload = copy.deepcopy(toy_report.to_payload())
    payload["schema"] = "ntp-report/2"
    with pytest.raises(InconsistentInputs):
        parse_report(json.dumps(payload))


def test_schema_rejects_malformed_layers(toy_report):
    payload = copy.deepcopy(toy_report.to_payload())
    del payload["layers"][0]["checksum"]
    with pytest.raises(InconsistentInputs):
        parse_report(json.dumps(payload))


def test_csv_row_count_and_header(toy_report):
    rows = list(csv.reader(io.StringIO(export_csv(toy_report).decode())))
    assert rows[0] == ["layer", "kind", "flops", "params", "weight_bytes",
                       "dram_bytes_est", "intensity", "bound_class",
                       "wall_ms_median", "cpu_ms_median", "alloc_bytes",
                       "percent_wall"]
    assert len(rows) == 1 + len(toy_report.layers) + len(toy_report.groups)


def test_cost_only_report_validates(toy_run, generic_machine):
    from ntp.costmodel import topology_cost

    costs = topology_cost(toy_run["graph"], generic_machine)
    report = summarize(None, None, costs, _meta(cost_only=True, reps=0,
                                                collector=None, seed=None))
    validate_payload(report.to_payload())
    rows = list(csv.reader(io.StringIO(export_csv(report).decode())))
    assert rows[1][8] == ""  # no wall time in cost-only reports


# --- compare -----------------------------------------------------------------------

def test_self_compare_all_ratios_one(toy_report):
    result = compare([toy_report, toy_report], "layers")
    for row in result.rows:
        assert row["ratios"][0] == pytest.approx(1.0)
        assert row["ratios"][1] == pytest.approx(1.0)


def test_ratio_halves_when_variant_twice_as_fast():
    baseline = _synthetic_report({"a": 10.0})
    variant = _synthetic_report({"a": 5.0})
    result = compare([baseline, variant], "layers")
    assert result.row("a")["ratios"] == [pytest.approx(1.0),
                                         pytest.approx(0.5)]


def test_ratios_are_baseline_transitive():
    a = _synthetic_report({"x": 8.0})
    b = _synthetic_report({"x": 4.0})
    c = _synthetic_report({"x": 2.0})
    r_ab = compare([a, b], "layers").row("x")["ratios"][1]
    r_bc = compare([b, c], "layers").row("x")["ratios"][1]
    r_ac = compare([a, c], "layers").row("x")["ratios"][1]
    assert abs(r_ac - r_ab * r_bc) < 1e-9


def test_axis_validation():
    report = _synthetic_report({"a": 1.0})
    with pytest.raises(AxisMismatch):
        compare([report, report], "hardware")
    with pytest.raises(UnalignableRows):
        compare([report], "layers")


def test_disjoint_rows_unalignable():
    a = _synthetic_report({"a": 1.0})
    b = _synthetic_report({"b": 1.0})
    with pytest.raises(UnalignableRows):
        compare([a, b], "layers")


def test_topology_axis_position_kind_fallback():
    baseline = _synthetic_report({"enc": 4.0, "dec": 6.0})
    variant = _synthetic_report({"enc2": 2.0, "dec2": 3.0})
    result = compare([baseline, variant], "topologies")
    assert result.row("enc")["ratios"][1] == pytest.approx(0.5)
    assert any("position+kind" in w for w in result.warnings)


def test_unmatched_rows_reported_not_dropped():
    baseline = _synthetic_report({"a": 4.0})
    extra = _synthetic_report({"a": 4.0, "b": 1.0})
    result = compare([baseline, extra], "frameworks")
    assert result.row("b")["values"][0] is None
    assert result.row("b")["values"][1] == pytest.approx(1.0)
    assert any("no baseline counterpart" in w for w in result.warnings)


def test_comparison_payload_shape():
    result = compare([_synthetic_report({"a": 1.0}),
                      _synthetic_report({"a": 2.0})], "machines")
    payload = result.to_payload()
    assert payload["schema"] == "ntp-comparison/1"
    assert payload["baseline"] == payload["variants"][0]
    assert isinstance(result, ComparisonReport)


# --- graph dump ----------------------------------------------------------------------

def test_graph_debug_dump(toy_graph):
    dump = graph_to_json(toy_graph)
    assert dump["name"] == "toy"
    assert [n["id"] for n in dump["nodes"]] == \
        [n.id for n in toy_graph.nodes]
    assert dump["groups"][0]["name"] == "fc"
    json.dumps(dump)  # must be JSON-serializable
