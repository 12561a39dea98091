"""Minimal Linux perf_event_open binding for the hwc collector.

Counts retired instructions and CPU cycles for the calling process
(user space only). Anything that prevents opening the counters --
non-Linux platform, seccomp filter, perf_event_paranoid, missing
syscall -- surfaces as CollectorError so callers can degrade to
time-only collection.
"""

from __future__ import annotations

import ctypes
import os
import platform
import struct

from .errors import CollectorError

PERF_TYPE_HARDWARE = 0
PERF_COUNT_HW_CPU_CYCLES = 0
PERF_COUNT_HW_INSTRUCTIONS = 1

# flag bits in perf_event_attr: exclude_kernel | exclude_hv
_ATTR_FLAGS = (1 << 5) | (1 << 6)
_ATTR_SIZE = 64  # PERF_ATTR_SIZE_VER0

_SYSCALL_NR = {"x86_64": 298, "aarch64": 241}


def _pack_attr(config: int) -> bytes:
    # type u32, size u32, config u64, sample_period u64, sample_type u64,
    # read_format u64, flags u64, wakeup_events u32, bp_type u32
    return struct.pack("<IIQQQQQII", PERF_TYPE_HARDWARE, _ATTR_SIZE, config,
                       0, 0, 0, _ATTR_FLAGS, 0, 0)


class Event:
    def __init__(self, fd: int):
        self._fd = fd

    def read(self) -> int:
        return struct.unpack("<Q", os.read(self._fd, 8))[0]

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1


def _open_event(config: int) -> Event:
    machine = platform.machine()
    nr = _SYSCALL_NR.get(machine)
    if nr is None or platform.system() != "Linux":
        raise CollectorError(
            f"perf events unsupported on {platform.system()}/{machine}")
    libc = ctypes.CDLL(None, use_errno=True)
    attr = ctypes.create_string_buffer(_pack_attr(config), _ATTR_SIZE)
    # pid=0 (self), cpu=-1 (any), group_fd=-1, flags=0
    fd = libc.syscall(nr, ctypes.byref(attr), 0, -1, -1, 0)
    if fd < 0:
        err = ctypes.get_errno()
        raise CollectorError(f"perf_event_open failed: {os.strerror(err)}")
    return Event(fd)


def open_counters() -> dict[str, Event]:
    """Open instruction and cycle counters, verifying they actually read."""
    events: dict[str, Event] = {}
    try:
        events["hw_instructions"] = _open_event(PERF_COUNT_HW_INSTRUCTIONS)
        events["hw_cycles"] = _open_event(PERF_COUNT_HW_CPU_CYCLES)
        for ev in events.values():
            ev.read()
    except (OSError, CollectorError) as exc:
        for ev in events.values():
            ev.close()
        raise CollectorError(f"hardware counters unavailable: {exc}") from exc
    return events
