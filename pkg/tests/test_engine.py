import numpy as np
import pytest

from conftest import run_graph
from ntp.dsl import RawMarker, parse_topology
from ntp.engine import EngineConfig, fnv1a64, run_model
from ntp.errors import ShapeError, ShapeMismatch
from ntp.graph import parse_shape, validate
from ntp.metrics import BaseCollector, Sample, check_lifecycle, make_collector
from ntp.model import build_model, gen_graph_inputs
from ntp.tensor import Tensor

MARKED = """
<topology name="marked">
  <input id="in" shape="T:4,B:2,F:16"/>
  <layer id="fc1" type="fc" input="in" nodes="12"/>
  <layer id="bilstm" type="bilstm" input="fc1" nodes="6"/>
  <layer id="fc2" type="fc" input="bilstm" nodes="8"/>
  {markers}
</topology>
"""


def _marked_graph(markers=""):
    return validate(parse_topology(MARKED.format(markers=markers)))


def test_fnv1a64_known_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_every_region_node_sampled_once_per_rep():
    graph = _marked_graph()
    _, trace, _ = run_graph(graph, reps=3, warmup=1)
    for record in trace.nodes.values():
        assert len(record.samples) == 3
    assert len(trace.region_totals) == 3


def test_warmup_reps_are_uncollected():
    graph = _marked_graph()
    _, trace, _ = run_graph(graph, reps=2, warmup=3)
    for record in trace.nodes.values():
        assert len(record.samples) == 2


def test_region_restricts_samples_not_counters():
    full_graph = _marked_graph()
    region_graph = _marked_graph(
        '<marker type="start" before="bilstm"/>'
        '<marker type="end" after="bilstm"/>')
    _, full_trace, _ = run_graph(full_graph, seed=5, reps=2)
    _, region_trace, _ = run_graph(region_graph, seed=5, reps=2)

    assert [nid for nid, r in region_trace.nodes.items() if r.samples] \
        == ["bilstm"]
    for nid in ("fc1", "fc2"):
        assert region_trace.nodes[nid].samples == []
        assert region_trace.nodes[nid].counters == full_trace.nodes[nid].counters
        assert region_trace.nodes[nid].checksum == full_trace.nodes[nid].checksum


def test_identical_seed_runs_are_bit_identical():
    graph = _marked_graph()
    _, trace_a, _ = run_graph(graph, seed=9, reps=1, warmup=0)
    _, trace_b, _ = run_graph(graph, seed=9, reps=1, warmup=0)
    for nid in trace_a.nodes:
        assert trace_a.nodes[nid].checksum == trace_b.nodes[nid].checksum
        assert trace_a.nodes[nid].counters == trace_b.nodes[nid].counters


def test_threads_do_not_change_counters_or_shapes():
    graph = _marked_graph()
    _, t1, _ = run_graph(graph, seed=2, threads=1, reps=1, warmup=0)
    _, t2, _ = run_graph(graph, seed=2, threads=2, reps=1, warmup=0)
    for nid in t1.nodes:
        assert t1.nodes[nid].counters == t2.nodes[nid].counters
        assert t1.nodes[nid].out_shape == t2.nodes[nid].out_shape


def test_runtime_shapes_match_inference(toy_run):
    trace = toy_run["trace"]
    for node in toy_run["graph"].nodes:
        assert trace.nodes[node.id].out_shape == node.out_shape


def test_node_walls_bounded_by_region_total(toy_run):
    trace = toy_run["trace"]
    for rep in range(trace.reps):
        per_node = sum(trace.nodes[nid].samples[rep].wall_ns
                       for nid in trace.region)
        assert per_node <= trace.region_totals[rep]["wall_ns"]


def test_alloc_bytes_equal_output_buffers(toy_run):
    trace = toy_run["trace"]
    graph = toy_run["graph"]
    for node in graph.nodes:
        record = trace.nodes[node.id]
        expected = node.out_shape.numel() * 4
        for sample in record.samples:
            assert sample.alloc_bytes == expected


class RecordingCollector(BaseCollector):
    name = "recording"

    def __init__(self):
        super().__init__()
        self.calls = []

    def start(self, meta):
        self.calls.append("start")
        super().start(meta)

    def stop(self):
        self.calls.append("stop")
        return super().stop()

    def pause(self):
        self.calls.append("pause")
        super().pause()

    def resume(self):
        self.calls.append("resume")
        super().resume()

    def _begin_capture(self, node_id):
        self.calls.append("on_node_begin")

    def _end_capture(self, node_id):
        self.calls.append("on_node_end")
        return Sample(wall_ns=1, cpu_ns=1)


def test_collector_lifecycle_sequence_is_legal():
    graph = _marked_graph('<marker type="start" before="bilstm"/>'
                          '<marker type="end" after="fc2"/>')
    model = build_model(graph, 0)
    collector = RecordingCollector()
    run_model(model, gen_graph_inputs(graph, 0),
              EngineConfig(reps=2, warmup=1), collector)
    check_lifecycle(collector.calls)  # grammar holds end to end
    assert collector.calls.count("resume") == 2
    assert collector.calls.count("pause") == 2
    assert collector.calls.count("on_node_begin") == 4  # 2 nodes x 2 reps


def test_input_shape_mismatch_rejected():
    graph = _marked_graph()
    model = build_model(graph, 0)
    bad = Tensor(parse_shape("T:4,B:2,F:8"),
                 np.zeros((4, 2, 8), np.float32))
    with pytest.raises(ShapeMismatch):
        run_model(model, bad, EngineConfig(), make_collector("time"))


def test_missing_named_input_rejected():
    graph = _marked_graph()
    model = build_model(graph, 0)
    with pytest.raises(ShapeMismatch):
        run_model(model, {}, EngineConfig(), make_collector("time"))


def test_engine_config_validation():
    with pytest.raises(ShapeError):
        EngineConfig(threads=0)
    with pytest.raises(ShapeError):
        EngineConfig(reps=0)
    with pytest.raises(ShapeError):
        EngineConfig(warmup=-1)


def test_counters_stable_across_reps():
    graph = _marked_graph()
    _, trace, stats = run_graph(graph, reps=4)
    for nid, record in trace.nodes.items():
        assert stats[nid]["alloc_bytes"].stddev == 0


def test_allocator_live_bytes_return_to_baseline():
    from ntp.engine import Engine

    graph = _marked_graph()
    model = build_model(graph, 0)
    engine = Engine(EngineConfig(reps=2, warmup=1))
    engine.allocator.allocate(64)  # pre-existing live allocation
    before = engine.allocator.live_bytes
    engine.run(model, gen_graph_inputs(graph, 0), make_collector("time+alloc"))
    assert engine.allocator.live_bytes == before
    assert engine.allocator.total_allocated > before
