"""Neural topology profiler.

Parses XML topology definitions, executes them on an instrumented
reference engine with seeded random weights, and produces per-layer
compute/memory signatures, roofline cost estimates, and comparison
reports.
"""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def fixture_path(name: str) -> Path:
    """Filesystem path of a bundled fixture (topology XML or machine JSON)."""
    return Path(str(resources.files("ntp").joinpath(f"fixtures/{name}")))
