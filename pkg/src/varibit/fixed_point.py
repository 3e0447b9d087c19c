"""Signed fixed-point formats and stochastic-rounding quantization.

A format is a ``(word_length, frac_length)`` pair: one sign bit,
``word_length - 1 - frac_length`` integer bits and ``frac_length`` fractional
bits, giving the grid step ``2**-frac_length``. Quantization rounds each
value stochastically onto that grid (round up with probability equal to the
fractional residue, so the result is unbiased in expectation) and then
saturates to the representable range.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


class NonFiniteValueError(ValueError):
    """Raised when a NaN/inf reaches the quantizer: the training state is corrupt."""


@dataclass(frozen=True)
class FixedPointFormat:
    """A ``<word length, fractional length>`` signed fixed-point grid."""

    word_length: int
    frac_length: int

    def __post_init__(self):
        if not 1 <= self.word_length <= 32:
            raise ValueError(f"word_length must be in [1, 32], got {self.word_length}")
        if not 0 <= self.frac_length <= self.word_length - 1:
            raise ValueError(
                f"frac_length must be in [0, word_length - 1], got "
                f"{self.frac_length} for word_length {self.word_length}"
            )

    @property
    def step(self) -> float:
        return 2.0 ** -self.frac_length

    @property
    def scale(self) -> float:
        return 2.0 ** self.frac_length

    @property
    def min_value(self) -> float:
        return -(2.0 ** (self.word_length - 1 - self.frac_length))

    @property
    def max_value(self) -> float:
        return 2.0 ** (self.word_length - 1 - self.frac_length) - self.step


def quantization_step(fmt: FixedPointFormat) -> float:
    """Grid spacing of the format."""
    return fmt.step


def representable_range(fmt: FixedPointFormat) -> tuple[float, float]:
    """Saturation bounds ``(min, max)`` of the format."""
    return fmt.min_value, fmt.max_value


@dataclass
class QuantizedTensor:
    """Array whose every element lies on the grid of ``format``."""

    values: np.ndarray
    format: FixedPointFormat

    def check(self) -> None:
        """Verify the grid and range invariants; raises ValueError if broken."""
        scaled = self.values * self.format.scale
        if not np.array_equal(scaled, np.round(scaled)):
            raise ValueError("values are not all multiples of the grid step")
        lo, hi = representable_range(self.format)
        if self.values.size and (self.values.min() < lo or self.values.max() > hi):
            raise ValueError("values exceed the representable range")


def _quantize_raw(values: np.ndarray, fmt: FixedPointFormat,
                  rng: np.random.Generator) -> np.ndarray:
    flat = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
    if not np.isfinite(flat).all():
        raise NonFiniteValueError("non-finite value passed to quantizer")
    uniforms = rng.random(flat.size)
    out = kernels.sr_quantize(flat, uniforms, fmt.scale, fmt.step,
                              fmt.min_value, fmt.max_value)
    return np.asarray(out).reshape(np.shape(values))


def stochastic_round(x: float, fmt: FixedPointFormat,
                     rng: np.random.Generator) -> float:
    """Round a scalar onto the format's grid, saturating out-of-range results."""
    return float(_quantize_raw(np.array([x]), fmt, rng)[0])


def quantize_tensor(values, fmt: FixedPointFormat,
                    rng: np.random.Generator) -> QuantizedTensor:
    """Elementwise stochastic rounding of an array onto the format's grid.

    Always consumes exactly ``values.size`` uniforms from ``rng``, so the
    substream advance is independent of the data; quantizing a tensor that
    already conforms to the grid is the exact identity.
    """
    return QuantizedTensor(_quantize_raw(np.asarray(values), fmt, rng), fmt)
