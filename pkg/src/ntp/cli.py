"""Command-line entry point.

Subcommands: validate | describe | run | compare | sweep | calibrate.
Exit codes are a stable contract: 0 ok, 1 I/O failure, 2 validation or
usage error, 3 runtime (engine/collector/calibration) failure.

Every command is idempotent on its inputs; run parameters are echoed
into report meta so comparisons are self-describing. NTP_THREADS sets
the default thread count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from . import __version__
from .container import load_weights, save_weights
from .costmodel import calibrate_machine, load_machine, topology_cost
from .dsl import parse_topology, serialize_topology
from .engine import EngineConfig, run_model
from .errors import (
    CollectorError,
    NtpError,
    RuntimeFailure,
    UnknownParam,
    ValidationError,
    WeightContainerError,
)
from .graph import parse_shape, validate
from .metrics import aggregate, make_collector
from .model import build_model, gen_graph_inputs
from .report import (
    compare,
    export_csv,
    export_json,
    graph_to_json,
    parse_report,
    summarize,
)

DEFAULT_MACHINE = "generic-cpu.json"


@dataclass(frozen=True)
class RunArgs:
    topology: Path
    out: Path
    batch: int | None = None
    precision: str = "fp32"
    threads: int = 1
    reps: int = 3
    warmup: int = 1
    collector: str = "time+alloc"
    seed: int = 0
    machine: Path | None = None
    weights: Path | None = None
    csv: bool = False

    def __post_init__(self):
        if self.reps < 1:
            raise ValidationError(f"reps must be >= 1, got {self.reps}")
        if self.warmup < 0:
            raise ValidationError(f"warmup must be >= 0, got {self.warmup}")


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _default_threads() -> int:
    return int(os.environ.get("NTP_THREADS", "1"))


def _read_topology(path) -> str:
    return Path(path).read_bytes().decode("utf-8")


def _load_graph(path, batch: int | None = None):
    doc = parse_topology(_read_topology(path))
    if batch is not None:
        doc = _override_batch(doc, batch)
    return doc, validate(doc)


def _override_batch(doc, batch: int):
    """Rewrite the B axis extent of every input shape."""
    if batch < 1:
        raise ValidationError(f"batch must be >= 1, got {batch}")
    new_inputs = []
    touched = False
    for raw in doc.inputs:
        shape = parse_shape(raw.shape, raw.precision)
        if "B" in shape.tags:
            axes = ",".join(f"{t}:{batch if t == 'B' else e}"
                            for t, e in shape.axes)
            new_inputs.append(replace(raw, shape=axes))
            touched = True
        else:
            new_inputs.append(raw)
    if not touched:
        raise ValidationError("no input has a B axis to override")
    return replace(doc, inputs=tuple(new_inputs))


def _machine(path) -> "MachineSpec":
    if path is None:
        bundle = resources.files("ntp").joinpath(
            f"fixtures/machines/{DEFAULT_MACHINE}")
        from .costmodel import machine_from_json
        return machine_from_json(json.loads(bundle.read_text()))
    return load_machine(path)


def _print_layer_table(graph):
    width = max(5, max(len(n.id) for n in graph.nodes))
    print(f"{'layer':<{width}}  {'kind':<10}  out shape")
    for node in graph.nodes:
        print(f"{node.id:<{width}}  {node.kind.value:<10}  {node.out_shape}")


# --- commands ----------------------------------------------------------------

def cmd_validate(args) -> int:
    _, graph = _load_graph(args.topology)
    _print_layer_table(graph)
    if graph.region:
        print(f"region: {graph.region[0]} .. {graph.region[1]}")
    for name, members in graph.groups:
        print(f"group {name}: {', '.join(members)}")
    if args.json:
        Path(args.json).write_text(json.dumps(graph_to_json(graph), indent=2))
    return 0


def cmd_describe(args) -> int:
    _, graph = _load_graph(args.topology, args.batch)
    machine = _machine(args.machine)
    costs = topology_cost(graph, machine, args.precision)
    meta = {"topology": graph.name, "seed": None, "precision": args.precision,
            "threads": 1, "reps": 0, "warmup": 0, "collector": None,
            "machine": machine.name, "tool_version": __version__,
            "timestamp": _timestamp(), "measured_only": False,
            "cost_only": True}
    rep = summarize(None, None, costs, meta, groups=graph.groups)
    print(f"{'layer':<12} {'kind':<10} {'flops':>14} {'dram_est':>14} "
          f"{'intensity':>10} {'bound':>14} {'t_lower_ms':>11} {'%':>6}")
    for cost in costs.layers:
        print(f"{cost.node_id:<12} {cost.kind:<10} {cost.flops:>14,} "
              f"{cost.dram_bytes_est:>14,} {cost.intensity:>10.3f} "
              f"{cost.bound_class:>14} {cost.t_lower_s * 1e3:>11.3f} "
              f"{costs.percent_t_lower[cost.node_id]:>6.2f}")
    print(f"total bound: {costs.total_t_lower_s * 1e3:.3f} ms on "
          f"{machine.name}")
    if args.out:
        Path(args.out).write_bytes(export_json(rep))
    return 0


def _execute_run(run: RunArgs) -> "ProfileReport":
    _, graph = _load_graph(run.topology, run.batch)
    model = build_model(graph, run.seed, run.precision)
    if run.weights:
        model = load_weights(model, run.weights)
    inputs = gen_graph_inputs(graph, run.seed)
    machine = _machine(run.machine)

    collector_name = run.collector
    try:
        collector = make_collector(collector_name)
    except CollectorError as exc:
        if collector_name == "hwc":
            print(f"warning: {exc}; falling back to time-only metrics",
                  file=sys.stderr)
            collector_name = "time"
            collector = make_collector(collector_name)
        else:
            raise

    config = EngineConfig(threads=run.threads, reps=run.reps,
                          warmup=run.warmup)
    trace = run_model(model, inputs, config, collector)
    stats = {nid: aggregate(rec.samples)
             for nid, rec in trace.nodes.items() if rec.samples}
    costs = topology_cost(graph, machine, run.precision)
    meta = {"topology": graph.name, "seed": run.seed,
            "precision": run.precision, "threads": run.threads,
            "reps": run.reps, "warmup": run.warmup,
            "collector": collector_name, "machine": machine.name,
            "tool_version": __version__, "timestamp": _timestamp(),
            "measured_only": False, "cost_only": False}
    return summarize(trace, stats, costs, meta, groups=graph.groups)


def _run_args_from_ns(args, out: Path | None = None) -> RunArgs:
    return RunArgs(topology=Path(args.topology),
                   out=out if out is not None else Path(args.out),
                   batch=args.batch, precision=args.precision,
                   threads=args.threads, reps=args.reps, warmup=args.warmup,
                   collector=args.collector, seed=args.seed,
                   machine=Path(args.machine) if args.machine else None,
                   weights=Path(args.weights) if args.weights else None,
                   csv=args.csv)


def cmd_run(args) -> int:
    run = _run_args_from_ns(args)
    rep = _execute_run(run)
    Path(run.out).write_bytes(export_json(rep))
    if run.csv:
        Path(run.out).with_suffix(".csv").write_bytes(export_csv(rep))
    sampled = [rec for rec in rep.layers if rec["stats"]]
    print(f"{'layer':<12} {'kind':<10} {'wall_ms':>10} {'cpu_ms':>10} "
          f"{'%wall':>7} {'util':>6}")
    for rec in sampled:
        wall = rec["stats"]["wall_ns"]["median"] / 1e6
        cpu = rec["stats"]["cpu_ns"]["median"] / 1e6
        print(f"{rec['id']:<12} {rec['kind']:<10} {wall:>10.3f} {cpu:>10.3f} "
              f"{rec['percent_wall']:>7.2f} {rec['utilization']:>6.2f}")
    print(f"report written to {run.out}")
    return 0


def cmd_compare(args) -> int:
    reports = [parse_report(Path(p).read_bytes()) for p in args.reports]
    result = compare(reports, args.axis)
    payload = result.to_payload()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True))
    name_width = max(len(r["key"]) for r in result.rows)
    print(f"{'row':<{name_width}}  " + "  ".join(
        f"{v:>18}" for v in result.variants))
    for row in result.rows:
        cells = []
        for value, ratio in zip(row["values"], row["ratios"]):
            if value is None:
                cells.append(f"{'-':>18}")
            else:
                suffix = f" (x{ratio:.3f})" if ratio is not None else ""
                cells.append(f"{value:>9.3f}{suffix:>9}")
        print(f"{row['key']:<{name_width}}  " + "  ".join(cells))
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def _patch_attribute(doc, param_path: str, value: str):
    elem_id, _, attr = param_path.partition(".")
    if not attr:
        raise UnknownParam(f"param '{param_path}' is not of the form id.attr")
    for i, el in enumerate(doc.elements):
        if el.id == elem_id:
            if attr not in el.attrs:
                raise UnknownParam(
                    f"element '{elem_id}' has no attribute '{attr}' "
                    f"(has: {sorted(el.attrs)})")
            new_attrs = dict(el.attrs)
            new_attrs[attr] = value
            elements = list(doc.elements)
            elements[i] = replace(el, attrs=new_attrs)
            return replace(doc, elements=tuple(elements))
    raise UnknownParam(f"no element with id '{elem_id}'")


def cmd_sweep(args) -> int:
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        raise ValidationError("sweep needs a non-empty values list")
    doc = parse_topology(_read_topology(args.topology))
    out_prefix = Path(args.out_prefix)
    report_paths = []
    reports = []
    for value in values:
        patched = _patch_attribute(doc, args.param, value)
        validate(patched)  # fail fast before paying for the run
        variant_xml = out_prefix.parent / f"{out_prefix.name}-{value}.xml"
        variant_xml.parent.mkdir(parents=True, exist_ok=True)
        variant_xml.write_text(serialize_topology(patched))
        out = out_prefix.parent / f"{out_prefix.name}-{value}.json"
        run = RunArgs(topology=variant_xml, out=out, batch=args.batch,
                      precision=args.precision, threads=args.threads,
                      reps=args.reps, warmup=args.warmup,
                      collector=args.collector, seed=args.seed,
                      machine=Path(args.machine) if args.machine else None,
                      weights=None, csv=args.csv)
        rep = _execute_run(run)
        Path(out).write_bytes(export_json(rep))
        if args.csv:
            out.with_suffix(".csv").write_bytes(export_csv(rep))
        report_paths.append(out)
        reports.append(rep)
        print(f"{args.param}={value}: report written to {out}")
    result = compare(reports, "topologies")
    combined = out_prefix.parent / f"{out_prefix.name}-comparison.json"
    combined.write_text(json.dumps(result.to_payload(), indent=2,
                                   sort_keys=True))
    print(f"comparison written to {combined}")
    return 0


def cmd_calibrate(args) -> int:
    spec = calibrate_machine(threads=args.threads, llc_bytes=args.llc_bytes,
                             matmul_n=args.matmul_n,
                             stream_elements=args.stream_elements)
    Path(args.out).write_text(json.dumps(spec.to_json(), indent=2))
    print(f"peak {spec.peak_gflops:.1f} GFLOP/s, dram {spec.dram_gbps:.1f} "
          f"GB/s, llc {spec.llc_bytes} B, {spec.cores} cores -> {args.out}")
    return 0


def cmd_save_weights(args) -> int:
    _, graph = _load_graph(args.topology, args.batch)
    model = build_model(graph, args.seed, args.precision)
    save_weights(model, args.out)
    print(f"weights written to {args.out}")
    return 0


# --- argument wiring -----------------------------------------------------------

def _add_run_flags(sub, with_out=True):
    sub.add_argument("topology", help="topology XML file")
    if with_out:
        sub.add_argument("--out", default="ntp-report.json",
                         help="report JSON output path")
    sub.add_argument("--batch", type=int, default=None,
                     help="override the B axis of every input")
    sub.add_argument("--precision", choices=("fp32", "fp16", "int8"),
                     default="fp32")
    sub.add_argument("--threads", type=int, default=_default_threads())
    sub.add_argument("--reps", type=int, default=3)
    sub.add_argument("--warmup", type=int, default=1)
    sub.add_argument("--collector", choices=("time", "time+alloc", "hwc"),
                     default="time+alloc")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--machine", default=None,
                     help="MachineSpec JSON (default: bundled generic-cpu)")
    sub.add_argument("--csv", action="store_true",
                     help="also write a CSV next to the JSON report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ntp", description="Neural topology profiler")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("validate", help="parse + validate, print shapes")
    p.add_argument("topology")
    p.add_argument("--json", default=None, help="write graph debug dump")
    p.set_defaults(func=cmd_validate)

    p = subs.add_parser("describe", help="cost-model-only report, no execution")
    p.add_argument("topology")
    p.add_argument("--out", default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--precision", choices=("fp32", "fp16", "int8"),
                   default="fp32")
    p.add_argument("--machine", default=None)
    p.set_defaults(func=cmd_describe)

    p = subs.add_parser("run", help="execute and write a profile report")
    _add_run_flags(p)
    p.add_argument("--weights", default=None,
                   help="NTPW container to load instead of seeded weights")
    p.set_defaults(func=cmd_run)

    p = subs.add_parser("compare", help="compare profile reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--axis", choices=("layers", "topologies", "machines",
                                      "frameworks"), default="topologies")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = subs.add_parser("sweep", help="run variants over one attribute")
    _add_run_flags(p, with_out=False)
    p.add_argument("--param", required=True,
                   help="attribute path, e.g. bilstm.nodes")
    p.add_argument("--values", required=True,
                   help="comma-separated attribute values")
    p.add_argument("--out-prefix", default="sweep",
                   help="prefix for variant reports and the comparison")
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("calibrate", help="measure a MachineSpec on this host")
    p.add_argument("--out", default="machine.json")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--llc-bytes", type=int, default=None,
                   help="skip the cache probe and use this capacity")
    p.add_argument("--matmul-n", type=int, default=768)
    p.add_argument("--stream-elements", type=int, default=8 * 1024 * 1024)
    p.set_defaults(func=cmd_calibrate)

    p = subs.add_parser("save-weights", help="write the seeded NTPW container")
    p.add_argument("topology")
    p.add_argument("--out", default="weights.ntpw")
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--precision", choices=("fp32", "fp16", "int8"),
                   default="fp32")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_save_weights)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValidationError, WeightContainerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeFailure, NtpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
