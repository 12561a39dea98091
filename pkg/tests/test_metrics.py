import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntp.errors import (
    CollectorError,
    ContractViolation,
    DivisionDomain,
    EmptySamples,
)
from ntp.metrics import (
    AllocationAccountant,
    HwcCollector,
    Sample,
    TimeCollector,
    aggregate,
    check_lifecycle,
    make_collector,
    utilization,
)


def _samples(walls, cpus=None):
    cpus = cpus if cpus is not None else walls
    return [Sample(wall_ns=w, cpu_ns=c) for w, c in zip(walls, cpus)]


# --- aggregation ---------------------------------------------------------------

def test_aggregate_basic_order_statistics():
    stats = aggregate(_samples([3, 1, 2]))
    wall = stats["wall_ns"]
    assert wall.min == 1
    assert wall.median == 2
    assert wall.max == 3
    assert wall.mean == 2
    assert stats.count == 3


def test_single_sample_stats():
    stats = aggregate(_samples([17]))
    wall = stats["wall_ns"]
    assert wall.min == wall.max == wall.mean == wall.median == 17
    assert wall.stddev == 0


def test_identical_samples_have_zero_stddev():
    stats = aggregate(_samples([5] * 1000))
    assert stats["wall_ns"].stddev == 0


def test_median_is_lower_middle_for_even_counts():
    stats = aggregate(_samples([1, 2, 3, 4]))
    assert stats["wall_ns"].median == 2


def test_empty_samples_rejected():
    with pytest.raises(EmptySamples):
        aggregate([])


def test_extension_counters_aggregate():
    samples = [Sample(wall_ns=1, cpu_ns=1, ext={"hw_cycles": 10}),
               Sample(wall_ns=1, cpu_ns=1, ext={"hw_cycles": 30})]
    stats = aggregate(samples)
    assert stats["hw_cycles"].mean == 20


@given(st.lists(st.integers(0, 10**9), min_size=1, max_size=20),
       st.randoms())
@settings(max_examples=50)
def test_aggregation_permutation_invariant(walls, rng):
    shuffled = list(walls)
    rng.shuffle(shuffled)
    assert aggregate(_samples(walls)) == aggregate(_samples(shuffled))


def test_aggregate_min_le_median_le_max_property():
    stats = aggregate(_samples([9, 4, 7, 1, 8]))
    wall = stats["wall_ns"]
    assert wall.min <= wall.median <= wall.max


# --- utilization -----------------------------------------------------------------

def test_utilization_examples():
    assert utilization(aggregate(_samples([10_000_000], [8_000_000])), 1) == 0.8
    assert utilization(aggregate(_samples([10_000_000], [10_000_000])), 2) == 0.5
    assert utilization(aggregate(_samples([10_000_000], [20_000_000])), 2) == 1.0


def test_utilization_clamps_to_unit_interval():
    assert utilization(aggregate(_samples([10], [1000])), 1) == 1.0


def test_utilization_division_domain():
    with pytest.raises(DivisionDomain):
        utilization(aggregate(_samples([0], [0])), 1)
    with pytest.raises(DivisionDomain):
        utilization(aggregate(_samples([10], [5])), 0)


# --- lifecycle --------------------------------------------------------------------

def test_legal_lifecycle_sequence():
    check_lifecycle(["start", "resume", "on_node_begin", "on_node_end",
                     "pause", "resume", "on_node_begin", "on_node_end",
                     "pause", "stop"])


def test_begin_while_paused_is_violation():
    with pytest.raises(ContractViolation, match="while paused"):
        check_lifecycle(["start", "on_node_begin"])


def test_stop_before_start_is_violation():
    with pytest.raises(ContractViolation, match="while init"):
        check_lifecycle(["stop"])


def test_double_start_is_violation():
    with pytest.raises(ContractViolation):
        check_lifecycle(["start", "start"])


def test_end_without_begin_is_violation():
    with pytest.raises(ContractViolation):
        check_lifecycle(["start", "resume", "on_node_end"])


def test_nested_begin_is_violation():
    with pytest.raises(ContractViolation):
        check_lifecycle(["start", "resume", "on_node_begin", "on_node_begin"])


def test_collector_enforces_lifecycle_at_runtime():
    collector = TimeCollector()
    with pytest.raises(ContractViolation):
        collector.on_node_begin("x")


# --- built-in collectors ------------------------------------------------------------

def _timed_node(collector, node_id, seconds):
    collector.on_node_begin(node_id)
    deadline = time.perf_counter() + seconds
    while time.perf_counter() < deadline:
        pass
    return collector.on_node_end(node_id)


def test_time_collector_measures_node_windows():
    collector = TimeCollector()
    collector.start({"threads": 1})
    collector.resume()
    sample = _timed_node(collector, "a", 0.02)
    collector.pause()
    summary = collector.stop()
    assert sample.wall_ns >= 15_000_000
    assert summary["samples"] == 1


def test_paused_interval_contributes_zero():
    collector = TimeCollector()
    collector.start({})
    collector.resume()
    first = _timed_node(collector, "a", 0.02)
    collector.pause()
    spin_until = time.perf_counter() + 0.05  # busy work while paused
    while time.perf_counter() < spin_until:
        pass
    collector.resume()
    second = _timed_node(collector, "a", 0.02)
    collector.stop()
    # both windows ~20 ms; the 50 ms paused spin must not leak in
    assert abs(second.wall_ns - first.wall_ns) < 15_000_000
    assert second.wall_ns < 45_000_000


def test_alloc_collector_tracks_windows():
    accountant = AllocationAccountant()
    collector = make_collector("time+alloc")
    collector.attach_allocator(accountant)
    collector.start({})
    collector.resume()
    collector.on_node_begin("n")
    accountant.allocate(1000)
    accountant.allocate(500)
    accountant.release(500)
    sample = collector.on_node_end("n")
    collector.pause()
    collector.stop()
    assert sample.alloc_bytes == 1500
    assert sample.peak_live_bytes == 1500
    accountant.release(1000)
    assert accountant.live_bytes == 0


def test_alloc_collector_requires_allocator():
    collector = make_collector("time+alloc")
    collector.start({})
    collector.resume()
    with pytest.raises(CollectorError):
        collector.on_node_begin("n")


def test_accountant_peak_covers_any_single_allocation():
    accountant = AllocationAccountant()
    accountant.begin_window()
    for nbytes in (10, 700, 20):
        accountant.allocate(nbytes)
        accountant.release(nbytes)
    assert accountant.window_peak() >= 700
    assert accountant.live_bytes == 0


def test_unknown_collector_rejected():
    with pytest.raises(CollectorError):
        make_collector("vtune")


def test_hwc_degrades_gracefully():
    # On hosts without perf counters construction must raise CollectorError
    # (never crash); on hosts with counters it must behave like the base.
    try:
        collector = HwcCollector()
    except CollectorError:
        return
    allocator = AllocationAccountant()
    collector.attach_allocator(allocator)
    collector.start({})
    collector.resume()
    sample = _timed_node(collector, "n", 0.01)
    collector.pause()
    collector.stop()
    assert "hw_instructions" in sample.ext
