"""TensorValue: the contiguous row-major buffer exchanged with predictors."""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = ["TensorValue", "ELEMENT_SIZES", "NUMPY_DTYPES"]

ELEMENT_SIZES = {"float32": 4, "uint8": 1}
NUMPY_DTYPES = {"float32": np.dtype("<f4"), "uint8": np.dtype("u1")}


@dataclass(frozen=True)
class TensorValue:
    """An element type, a shape, and a contiguous row-major little-endian buffer."""

    element_type: str
    shape: tuple[int, ...]
    data: bytes

    def __post_init__(self):
        if self.element_type not in ELEMENT_SIZES:
            raise ValidationError("element_type",
                                  f"must be one of {sorted(ELEMENT_SIZES)}, got {self.element_type!r}")
        # Zero-sized dims are representable so predictors can reject them
        # with ShapeMismatch (batch size >= 1 is a predictor precondition).
        if not all(isinstance(d, int) and d >= 0 for d in self.shape):
            raise ValidationError("shape", f"dimensions must be non-negative integers, got {self.shape}")
        expected = math.prod(self.shape) * ELEMENT_SIZES[self.element_type]
        if len(self.data) != expected:
            raise ValidationError(
                "data", f"buffer holds {len(self.data)} bytes, shape {self.shape} "
                        f"of {self.element_type} needs {expected}")

    @classmethod
    def from_numpy(cls, array: np.ndarray) -> "TensorValue":
        if array.dtype == np.float32:
            element_type = "float32"
        elif array.dtype == np.uint8:
            element_type = "uint8"
        else:
            raise ValidationError("element_type", f"unsupported dtype {array.dtype}")
        contiguous = np.ascontiguousarray(array, dtype=NUMPY_DTYPES[element_type])
        return cls(element_type, tuple(int(d) for d in array.shape), contiguous.tobytes())

    def to_numpy(self) -> np.ndarray:
        array = np.frombuffer(self.data, dtype=NUMPY_DTYPES[self.element_type])
        return array.reshape(self.shape)

    def to_body(self) -> dict:
        return {
            "element_type": self.element_type,
            "shape": list(self.shape),
            "data_b64": base64.b64encode(self.data).decode("ascii"),
        }

    @classmethod
    def from_body(cls, body: dict) -> "TensorValue":
        return cls(
            element_type=body["element_type"],
            shape=tuple(int(d) for d in body["shape"]),
            data=base64.b64decode(body["data_b64"]),
        )
