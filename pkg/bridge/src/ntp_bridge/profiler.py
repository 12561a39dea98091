"""Per-layer timing of a bridged model, emitting "ntp-report/1" JSON.

Each supported layer is invoked explicitly (no whole-graph tracing) and
timed over `reps` collected repetitions after `warmup` uncollected ones.
Cost fields are zeroed and the report is flagged `measured_only`; wall
medians use the lower-middle element, matching the reference tool, so
`ntp compare` consumes bridge reports with no special-casing.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import torch

from . import BridgeError, __version__
from .torch_model import BridgeModel, bridge_build

SCHEMA_ID = "ntp-report/1"

_ZERO_COST = {"flops": 0, "macs": 0, "params": 0, "weight_bytes": 0,
              "act_bytes": 0, "dram_bytes_est": 0, "intensity": 0.0,
              "bound_class": "memory_bound", "t_compute_s": 0.0,
              "t_memory_s": 0.0, "t_lower_s": 0.0}


@dataclass(frozen=True)
class BridgeConfig:
    topology: Path
    weights: Path
    out: Path
    batch: int | None = None
    reps: int = 3
    warmup: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.reps < 1:
            raise BridgeError(f"reps must be >= 1, got {self.reps}")
        if self.warmup < 0:
            raise BridgeError(f"warmup must be >= 0, got {self.warmup}")


def _input_tensor(model: BridgeModel, batch: int | None,
                  seed: int) -> torch.Tensor:
    spec = model.topology.inputs[0]
    extents = [batch if tag == "B" and batch else extent
               for tag, extent in spec.axes]
    rng = np.random.default_rng(seed)
    return torch.from_numpy(
        rng.random(size=extents, dtype=np.float32))


def _median(values):
    return sorted(values)[(len(values) - 1) // 2]  # lower middle


def _stats(walls, cpus):
    def field(values):
        mean = sum(values) / len(values)
        return {"min": min(values), "max": max(values), "mean": mean,
                "median": _median(values),
                "stddev": statistics.pstdev(values)}
    zeros = [0] * len(walls)
    return {"wall_ns": field(walls), "cpu_ns": field(cpus),
            "alloc_bytes": field(zeros), "peak_live_bytes": field(zeros)}


def _load_schema() -> dict:
    data = resources.files("ntp_bridge").joinpath("schema/ntp_report_v1.json")
    return json.loads(data.read_text())


def bridge_profile(config: BridgeConfig) -> dict:
    """Build, time, and write the report; returns the payload."""
    model = bridge_build(config.topology, config.weights)
    x = _input_tensor(model, config.batch, config.seed)

    with torch.inference_mode():
        for _ in range(config.warmup):
            tensor = x
            for layer in model.layers:
                tensor = layer.fn(tensor)

        walls = {layer.id: [] for layer in model.layers if layer.timed}
        cpus = {layer.id: [] for layer in model.layers if layer.timed}
        for _ in range(config.reps):
            tensor = x
            for layer in model.layers:
                cpu0 = time.process_time_ns()
                wall0 = time.perf_counter_ns()
                tensor = layer.fn(tensor)
                if layer.timed:
                    walls[layer.id].append(time.perf_counter_ns() - wall0)
                    cpus[layer.id].append(time.process_time_ns() - cpu0)

    medians = {lid: _median(values) for lid, values in walls.items()}
    wall_total = sum(medians.values())
    threads = torch.get_num_threads()

    layers = []
    for layer in model.layers:
        record = {"id": layer.id, "kind": layer.kind, "out_shape": None,
                  "in_region": layer.timed, "counters": None,
                  "checksum": None, "cost": dict(_ZERO_COST)}
        if layer.timed:
            stats = _stats(walls[layer.id], cpus[layer.id])
            utilization = stats["cpu_ns"]["mean"] / \
                (stats["wall_ns"]["mean"] * threads) \
                if stats["wall_ns"]["mean"] else 0.0
            record.update({
                "stats": stats, "reps": config.reps,
                "percent_wall": (100.0 * medians[layer.id] / wall_total
                                 if wall_total else None),
                "utilization": min(1.0, max(0.0, utilization)),
            })
        else:
            record.update({"stats": None, "reps": 0, "percent_wall": None,
                           "utilization": None})
        layers.append(record)

    payload = {
        "schema": SCHEMA_ID,
        "meta": {
            "topology": model.topology.name, "seed": config.seed,
            "precision": model.precision, "threads": threads,
            "reps": config.reps, "warmup": config.warmup,
            "collector": None, "machine": None,
            "framework": f"torch-{torch.__version__}",
            "tool_version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(
                timespec="seconds"),
            "measured_only": True, "cost_only": False,
        },
        "layers": layers,
        "groups": [],
        "totals": {"region_wall_ns_median": wall_total},
    }
    jsonschema.validate(payload, _load_schema())
    Path(config.out).write_text(json.dumps(payload, indent=2, sort_keys=True))
    return payload
