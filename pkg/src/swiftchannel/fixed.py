"""Numeric core: Q7.24 fixed point, tensor layout and activation quantization types.

Fixed32 values are carried as raw integer words (Python ``int`` or ``int64``
numpy arrays holding values in the signed 32-bit range). ``value = raw / 2**24``.

Real tensors are plain ``float64`` numpy arrays of shape ``(H, W, C)``; the
C-contiguous layout is the stream order (row, column, channel fastest).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FRAC_BITS = 24
FX_ONE = 1 << FRAC_BITS
FX_MAX = (1 << 31) - 1
FX_MIN = -(1 << 31)
FX_HALF_LSB = 1 << (FRAC_BITS - 1)


def round_half_away(x):
    """Round to nearest, ties away from zero. Works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.copysign(np.floor(np.abs(x) + 0.5), x)
    return out[()]


def _sat32(v):
    return np.clip(v, FX_MIN, FX_MAX)


def _as_raw(v):
    if np.ndim(v) == 0:
        return int(v)
    return np.asarray(v, dtype=np.int64)


def fx_from_real(x):
    """Convert reals to Fixed32 raw words, saturating at the range ends."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("fx_from_real requires finite input")
    scaled = np.clip(x * FX_ONE, float(FX_MIN), float(FX_MAX))
    return _as_raw(_sat32(round_half_away(scaled)).astype(np.int64))


def fx_to_real(raw):
    out = np.asarray(raw, dtype=np.float64) / FX_ONE
    return out if out.ndim else float(out)


def fx_add(a, b):
    s = np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64)
    return _as_raw(_sat32(s))


def fx_sub(a, b):
    s = np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64)
    return _as_raw(_sat32(s))


def fx_mul(a, b):
    """Q7.24 product: ``(a*b + 2**23) >> 24`` in 64-bit, saturated to 32 bits.

    The shift is arithmetic, so ties round toward +inf.
    """
    p = np.asarray(a, dtype=np.int64) * np.asarray(b, dtype=np.int64)
    return _as_raw(_sat32((p + FX_HALF_LSB) >> FRAC_BITS))


def flat_index(y: int, x: int, c: int, width: int, channels: int) -> int:
    assert 0 <= x < width and 0 <= c < channels and y >= 0, "coordinate out of bounds"
    return (y * width + x) * channels + c


@dataclass(frozen=True)
class ActQuant:
    """Per-tensor affine activation quantizer (UINT8 codes)."""

    scale: float
    zero_point: int

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not 0 <= self.zero_point <= 255:
            raise ValueError(f"zero_point out of UINT8 range: {self.zero_point}")

    def dequantize(self, codes) -> np.ndarray:
        return (np.asarray(codes, dtype=np.float64) - self.zero_point) * self.scale


@dataclass
class QuantTensor:
    data: np.ndarray  # uint8, shape (H, W, C)
    params: ActQuant

    def __post_init__(self):
        if self.data.dtype != np.uint8 or self.data.ndim != 3:
            raise ValueError("QuantTensor data must be a uint8 (H, W, C) array")

    @property
    def shape(self):
        return self.data.shape

    def dequantize(self) -> np.ndarray:
        return self.params.dequantize(self.data)
