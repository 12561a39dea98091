"""Dense fp32 tensor carrier used by the reference engine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .graph import TensorShape


@dataclass
class Tensor:
    """A TensorShape plus its row-major fp32 compute buffer."""

    shape: TensorShape
    data: np.ndarray

    def __post_init__(self):
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)
        if self.data.size != self.shape.numel():
            raise ShapeMismatch(
                f"buffer holds {self.data.size} elements, shape {self.shape} "
                f"wants {self.shape.numel()}")
        self.data = np.ascontiguousarray(self.data).reshape(self.shape.extents)

    def nbytes(self) -> int:
        return self.data.size * 4
