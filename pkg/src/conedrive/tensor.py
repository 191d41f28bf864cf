"""Array conventions and the trainable-parameter container.

Tensors are plain numpy arrays in row-major layout; image batches use the
(batch, channel, height, width) axis order. float32 is the working precision
for training and inference, float64 is used by the gradient-check harness.
By convention arrays are immutable once handed to a layer: forward/backward
never write into their inputs, so values can be shared freely across threads.
"""
from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError

DEFAULT_DTYPE = np.float32
CHECK_DTYPE = np.float64


def assert_finite(values: np.ndarray, context: str = "tensor") -> None:
    """Raise NumericError naming the first non-finite coordinate, if any."""
    bad = ~np.isfinite(values)
    if bad.any():
        idx = tuple(int(i) for i in np.unravel_index(int(np.argmax(bad)), values.shape))
        raise NumericError(
            f"{context}: non-finite value {float(values[idx])} at coordinate {idx}"
        )


class Param:
    """A trainable tensor plus an optional gradient of identical shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def add_grad(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter "
                f"'{self.name}' shape {self.value.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(self.value.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.value.shape})"
