"""Profile reports, comparisons, and JSON/CSV export.

The JSON layout is the versioned "ntp-report/1" contract, shared
verbatim with the framework bridge: any report that validates against
the bundled schema is consumable by compare() with no special-casing.
Reports are pure functions of their inputs; the timestamp is injected
through `meta` so identical runs can produce identical documents.

Comparison semantics: the first report is the baseline, ratio columns
are variant/baseline on the wall-time median (cost t_lower for
cost-only reports). Medians, not means, drive percentages and ratios
for robustness to scheduler jitter.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from .costmodel import LayerCost, TopologyCost
from .engine import ExecutionTrace
from .errors import AxisMismatch, InconsistentInputs, UnalignableRows
from .metrics import AggregateStats, utilization

SCHEMA_ID = "ntp-report/1"
COMPARISON_AXES = ("layers", "topologies", "machines", "frameworks")

CSV_HEADER = ["layer", "kind", "flops", "params", "weight_bytes",
              "dram_bytes_est", "intensity", "bound_class", "wall_ms_median",
              "cpu_ms_median", "alloc_bytes", "percent_wall"]


def _load_schema() -> dict:
    data = resources.files("ntp").joinpath("schema/ntp_report_v1.json")
    return json.loads(data.read_text())


@dataclass(frozen=True)
class ProfileReport:
    meta: dict
    layers: list[dict]
    groups: list[dict]
    totals: dict

    def to_payload(self) -> dict:
        return {"schema": SCHEMA_ID, "meta": self.meta, "layers": self.layers,
                "groups": self.groups, "totals": self.totals}

    def layer(self, layer_id: str) -> dict:
        for record in self.layers:
            if record["id"] == layer_id:
                return record
        raise KeyError(layer_id)


@dataclass(frozen=True)
class ComparisonReport:
    axis: str
    variants: list[str]
    rows: list[dict]
    warnings: list[str] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {"schema": "ntp-comparison/1", "axis": self.axis,
                "baseline": self.variants[0] if self.variants else None,
                "variants": self.variants, "rows": self.rows,
                "warnings": self.warnings}

    def row(self, key: str) -> dict:
        for row in self.rows:
            if row["key"] == key:
                return row
        raise KeyError(key)


def _stats_payload(stats: AggregateStats) -> dict:
    return {name: {"min": fs.min, "max": fs.max, "mean": fs.mean,
                   "median": fs.median, "stddev": fs.stddev}
            for name, fs in stats.fields.items()}


def _cost_payload(cost: LayerCost) -> dict:
    return {"flops": cost.flops, "macs": cost.macs, "params": cost.params,
            "weight_bytes": cost.weight_bytes, "act_bytes": cost.act_bytes,
            "dram_bytes_est": cost.dram_bytes_est,
            "intensity": cost.intensity, "bound_class": cost.bound_class,
            "t_compute_s": cost.t_compute_s, "t_memory_s": cost.t_memory_s,
            "t_lower_s": cost.t_lower_s}


def summarize(trace: ExecutionTrace | None,
              stats: dict[str, AggregateStats] | None,
              costs: TopologyCost | None, meta: dict,
              groups=()) -> ProfileReport:
    """Merge one run's trace, aggregated samples, and cost estimates.

    Any of trace/stats/costs may be None (cost-only "describe" reports
    carry no measurements), but the node sets of whichever are present
    must agree, in order. `groups` carries the topology's (name,
    members) pairs for field-wise aggregation.
    """
    ids: list[str] | None = None
    if trace is not None:
        ids = list(trace.nodes)
    if costs is not None:
        cost_ids = [c.node_id for c in costs.layers]
        if ids is not None and cost_ids != ids:
            raise InconsistentInputs(
                f"trace nodes {ids} != cost nodes {cost_ids}")
        ids = cost_ids
    if ids is None:
        raise InconsistentInputs("need at least a trace or a cost breakdown")

    stats = stats or {}
    if trace is not None:
        sampled = {nid for nid, rec in trace.nodes.items() if rec.samples}
        if set(stats) != sampled:
            raise InconsistentInputs(
                f"stats cover {sorted(stats)} but samples exist for "
                f"{sorted(sampled)}")

    cost_by_id = {c.node_id: c for c in costs.layers} if costs else {}
    threads = int(meta.get("threads", 1))

    region_medians = {nid: stats[nid]["wall_ns"].median for nid in stats}
    wall_total = sum(region_medians.values())

    layers = []
    for nid in ids:
        record: dict = {"id": nid}
        trace_rec = trace.nodes[nid] if trace else None
        if trace_rec is not None:
            record["kind"] = trace_rec.kind
            record["out_shape"] = str(trace_rec.out_shape)
            record["in_region"] = trace_rec.in_region
            record["counters"] = {
                "macs": trace_rec.counters.macs,
                "flops": trace_rec.counters.flops,
                "weight_bytes_touched": trace_rec.counters.weight_bytes_touched,
                "activation_bytes_touched":
                    trace_rec.counters.activation_bytes_touched,
            }
            record["checksum"] = f"{trace_rec.checksum:016x}"
        else:
            record["kind"] = cost_by_id[nid].kind
            record["out_shape"] = cost_by_id[nid].out_shape
            record["in_region"] = True
            record["counters"] = None
            record["checksum"] = None
        record["cost"] = (_cost_payload(cost_by_id[nid])
                          if nid in cost_by_id else None)
        if nid in stats:
            record["stats"] = _stats_payload(stats[nid])
            record["reps"] = stats[nid].count
            record["percent_wall"] = (100.0 * region_medians[nid] / wall_total
                                      if wall_total else None)
            record["utilization"] = utilization(stats[nid], threads)
        else:
            record["stats"] = None
            record["reps"] = 0
            record["percent_wall"] = None
            record["utilization"] = None
        layers.append(record)

    by_id = {rec["id"]: rec for rec in layers}
    group_records = []
    for name, members in groups:
        agg = {"name": name, "members": list(members)}
        for key in ("flops", "params", "weight_bytes", "dram_bytes_est"):
            values = [by_id[m]["cost"][key] for m in members
                      if by_id[m].get("cost")]
            agg[key] = sum(values) if values else None
        walls = [by_id[m]["stats"]["wall_ns"]["median"] for m in members
                 if by_id[m].get("stats")]
        cpus = [by_id[m]["stats"]["cpu_ns"]["median"] for m in members
                if by_id[m].get("stats")]
        allocs = [by_id[m]["stats"]["alloc_bytes"]["median"] for m in members
                  if by_id[m].get("stats")]
        percents = [by_id[m]["percent_wall"] for m in members
                    if by_id[m]["percent_wall"] is not None]
        agg["wall_ns_median"] = sum(walls) if walls else None
        agg["cpu_ns_median"] = sum(cpus) if cpus else None
        agg["alloc_bytes"] = sum(allocs) if allocs else None
        agg["percent_wall"] = sum(percents) if percents else None
        group_records.append(agg)

    totals: dict = {}
    if costs is not None:
        totals.update({"flops": costs.total_flops,
                       "params": costs.total_params,
                       "weight_bytes": costs.total_weight_bytes,
                       "dram_bytes_est": costs.total_dram_bytes_est,
                       "t_lower_s": costs.total_t_lower_s})
    if wall_total:
        totals["region_wall_ns_median"] = wall_total
    if trace is not None and trace.region_totals:
        walls = sorted(t["wall_ns"] for t in trace.region_totals)
        totals["region_end_to_end_wall_ns_median"] = \
            walls[(len(walls) - 1) // 2]

    return ProfileReport(meta=dict(meta), layers=layers,
                         groups=group_records, totals=totals)


# --- export / import ----------------------------------------------------------

def export_json(report: ProfileReport) -> bytes:
    return json.dumps(report.to_payload(), indent=2, sort_keys=True).encode()


def validate_payload(payload: dict) -> None:
    """Schema-check a parsed report document."""
    try:
        jsonschema.validate(payload, _load_schema())
    except jsonschema.exceptions.ValidationError as exc:
        raise InconsistentInputs(
            f"report does not satisfy {SCHEMA_ID}: {exc.message}") from exc


def parse_report(data) -> ProfileReport:
    """bytes/str/dict -> validated ProfileReport."""
    if isinstance(data, (bytes, str)):
        payload = json.loads(data)
    else:
        payload = data
    if not isinstance(payload, dict) or payload.get("schema") != SCHEMA_ID:
        raise InconsistentInputs(
            f"expected schema '{SCHEMA_ID}', got "
            f"'{payload.get('schema') if isinstance(payload, dict) else data!r}'")
    validate_payload(payload)
    return ProfileReport(meta=payload["meta"], layers=payload["layers"],
                         groups=payload.get("groups", []),
                         totals=payload.get("totals", {}))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def export_csv(report: ProfileReport) -> bytes:
    """One row per layer then per group, under the fixed header."""
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(CSV_HEADER)
    for rec in report.layers:
        cost = rec.get("cost") or {}
        stats = rec.get("stats") or {}
        wall = stats.get("wall_ns", {}).get("median")
        cpu = stats.get("cpu_ns", {}).get("median")
        alloc = stats.get("alloc_bytes", {}).get("median")
        counters = rec.get("counters") or {}
        writer.writerow([
            rec["id"], rec["kind"],
            _fmt(cost.get("flops", counters.get("flops"))),
            _fmt(cost.get("params")), _fmt(cost.get("weight_bytes")),
            _fmt(cost.get("dram_bytes_est")), _fmt(cost.get("intensity")),
            _fmt(cost.get("bound_class")),
            _fmt(wall / 1e6 if wall is not None else None),
            _fmt(cpu / 1e6 if cpu is not None else None),
            _fmt(alloc), _fmt(rec.get("percent_wall")),
        ])
    for grp in report.groups:
        wall = grp.get("wall_ns_median")
        cpu = grp.get("cpu_ns_median")
        writer.writerow([
            grp["name"], "group", _fmt(grp.get("flops")), _fmt(grp.get("params")),
            _fmt(grp.get("weight_bytes")), _fmt(grp.get("dram_bytes_est")),
            "", "",
            _fmt(wall / 1e6 if wall is not None else None),
            _fmt(cpu / 1e6 if cpu is not None else None),
            _fmt(grp.get("alloc_bytes")), _fmt(grp.get("percent_wall")),
        ])
    return out.getvalue().encode()


# --- comparison -----------------------------------------------------------------

def _variant_name(report: ProfileReport, axis: str, position: int) -> str:
    meta = report.meta
    parts = [meta.get("topology", f"variant{position}")]
    if axis == "machines" and meta.get("machine"):
        parts.append(str(meta["machine"]))
    if axis == "frameworks":
        parts.append(str(meta.get("framework", meta.get("collector", ""))))
    name = ":".join(p for p in parts if p)
    return f"{name}#{position}"


def _row_metric(record: dict) -> tuple[float | None, str]:
    stats = record.get("stats")
    if stats and stats.get("wall_ns"):
        return stats["wall_ns"]["median"] / 1e6, "wall_ms_median"
    cost = record.get("cost")
    # zeroed cost placeholders (measured_only reports) are not a metric
    if cost and cost["t_lower_s"] > 0:
        return cost["t_lower_s"] * 1e3, "t_lower_ms"
    return None, "none"


def compare(reports: list[ProfileReport], axis: str) -> ComparisonReport:
    """Row-aligned comparison of >= 2 reports; the first is the baseline.

    Rows align by layer id; on the topologies axis unmatched ids fall
    back to (position, kind) pairing with a warning. Rows present in
    only some variants are kept and flagged, never silently dropped.
    """
    if axis not in COMPARISON_AXES:
        raise AxisMismatch(f"axis must be one of {COMPARISON_AXES}, got '{axis}'")
    if len(reports) < 2:
        raise UnalignableRows("need at least two reports to compare")

    variants = [_variant_name(r, axis, i) for i, r in enumerate(reports)]
    warnings: list[str] = []

    baseline = reports[0]
    base_ids = [rec["id"] for rec in baseline.layers]
    keys = list(base_ids)
    table: dict[str, list[dict | None]] = {rec["id"]: [rec]
                                           for rec in baseline.layers}

    for index, variant in enumerate(reports[1:], start=1):
        known = set(keys)
        matched: dict[str, dict] = {}
        unmatched: list[tuple[int, dict]] = []
        for pos, rec in enumerate(variant.layers):
            if rec["id"] in known:
                matched[rec["id"]] = rec
            else:
                unmatched.append((pos, rec))
        if unmatched and axis == "topologies":
            # ids differ across topology variants: same position + same
            # kind counts as the same row, with an explicit warning
            still = []
            for pos, rec in unmatched:
                candidate = base_ids[pos] if pos < len(base_ids) else None
                if candidate and candidate not in matched \
                        and baseline.layer(candidate)["kind"] == rec["kind"]:
                    matched[candidate] = rec
                    warnings.append(
                        f"{variants[index]}: matched '{rec['id']}' to "
                        f"baseline '{candidate}' by position+kind")
                else:
                    still.append((pos, rec))
            unmatched = still
        for _, rec in unmatched:
            keys.append(rec["id"])
            table[rec["id"]] = [None] * index
            matched[rec["id"]] = rec
            warnings.append(f"{variants[index]}: row '{rec['id']}' has no "
                            f"baseline counterpart")
        if not set(matched) & set(base_ids):
            raise UnalignableRows(
                f"no rows of {variants[index]} align with the baseline")
        for key in keys:
            table[key].append(matched.get(key))

    rows = []
    for key in keys:
        column = table[key]
        base_value, metric = _row_metric(column[0]) if column[0] else (None, "none")
        values = []
        ratios = []
        percents = []
        for rec in column:
            if rec is None:
                values.append(None)
                ratios.append(None)
                percents.append(None)
                continue
            value, _ = _row_metric(rec)
            values.append(value)
            percents.append(rec.get("percent_wall"))
            if value is None or base_value in (None, 0):
                ratios.append(None)
                if value is not None and base_value in (None, 0):
                    warnings.append(f"row '{key}': baseline has no metric to "
                                    f"ratio against")
            else:
                ratios.append(value / base_value)
        rows.append({"key": key, "kind": column[0]["kind"] if column[0]
                     else next(r["kind"] for r in column if r),
                     "metric": metric, "values": values, "ratios": ratios,
                     "percent_wall": percents})

    # group rows, keyed "group:<name>", aligned by group name
    group_names = []
    for report in reports:
        for grp in report.groups:
            if grp["name"] not in group_names:
                group_names.append(grp["name"])
    for name in group_names:
        columns = [next((g for g in r.groups if g["name"] == name), None)
                   for r in reports]
        values = [c["wall_ns_median"] / 1e6
                  if c and c.get("wall_ns_median") is not None else None
                  for c in columns]
        base = values[0]
        ratios = [v / base if v is not None and base not in (None, 0)
                  else None for v in values]
        rows.append({"key": f"group:{name}", "kind": "group",
                     "metric": "wall_ms_median", "values": values,
                     "ratios": ratios,
                     "percent_wall": [c.get("percent_wall") if c else None
                                      for c in columns]})

    return ComparisonReport(axis=axis, variants=variants, rows=rows,
                            warnings=warnings)


# --- graph debug dump --------------------------------------------------------

def graph_to_json(graph) -> dict:
    """Debug dump of a validated TopologyGraph."""
    return {
        "name": graph.name,
        "inputs": [{"id": iid, "shape": str(shape),
                    "precision": shape.precision}
                   for iid, shape in graph.inputs],
        "nodes": [{"id": n.id, "kind": n.kind.value,
                   "params": {k: v for k, v in vars(n.params).items()},
                   "inputs": list(n.inputs), "out_shape": str(n.out_shape)}
                  for n in graph.nodes],
        "region": list(graph.region) if graph.region else None,
        "groups": [{"name": name, "members": list(members)}
                   for name, members in graph.groups],
    }
