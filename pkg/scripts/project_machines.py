#!/usr/bin/env python3
"""What-if roofline projection: re-evaluate the bundled topology's cost
bounds on a second machine spec and print per-layer speedup factors."""

import argparse

from ntp import fixture_path
from ntp.costmodel import load_machine, project_runtime, topology_cost
from ntp.dsl import parse_topology
from ntp.graph import validate


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--topology", default=None,
                        help="topology XML (default: bundled deepspeech)")
    parser.add_argument("--machine-a", default=None,
                        help="baseline MachineSpec (default: generic-cpu)")
    parser.add_argument("--machine-b", default=None,
                        help="target MachineSpec (default: high-bandwidth)")
    args = parser.parse_args(argv)

    topology = args.topology or fixture_path("deepspeech.xml")
    machine_a = load_machine(args.machine_a or
                             fixture_path("machines/generic-cpu.json"))
    machine_b = load_machine(args.machine_b or
                             fixture_path("machines/high-bandwidth.json"))

    graph = validate(parse_topology(open(topology).read()))
    baseline = topology_cost(graph, machine_a)
    projection = project_runtime(baseline, machine_b)

    print(f"{'layer':<10} {'bound A':>14} {'bound B':>14} "
          f"{'t_lower A ms':>13} {'t_lower B ms':>13} {'speedup':>8}")
    for before, after in zip(baseline.layers, projection.projected.layers):
        speedup = (before.t_lower_s / after.t_lower_s
                   if after.t_lower_s else float("inf"))
        print(f"{before.node_id:<10} {before.bound_class:>14} "
              f"{after.bound_class:>14} {before.t_lower_s * 1e3:>13.3f} "
              f"{after.t_lower_s * 1e3:>13.3f} {speedup:>8.2f}")
    print(f"\ntotal bound speedup {machine_a.name} -> {machine_b.name}: "
          f"{projection.speedup:.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(run())
