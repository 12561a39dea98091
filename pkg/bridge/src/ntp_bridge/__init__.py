"""PyTorch bridge for the ntp profiler.

Consumes the profiler's external interfaces only: the topology XML
dialect, the NTPW weight container, and the "ntp-report/1" JSON schema.
"""

__version__ = "0.1.0"


class BridgeError(Exception):
    pass


class UnsupportedKind(BridgeError):
    """Topology uses a kind this bridge cannot build."""
