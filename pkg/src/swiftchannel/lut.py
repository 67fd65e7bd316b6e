"""Fixed32 lookup table for the origin-symmetric attention activation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fixed import FX_ONE, fx_add, fx_from_real, fx_mul

LUT_SIZE = 512
LUT_LIMIT = 3.0
_LIMIT_RAW = int(LUT_LIMIT) * FX_ONE


def sigma_a(x):
    """``sigmoid(x) - 0.5``, written as ``tanh(x/2)/2`` to stay exact near 0."""
    return 0.5 * np.tanh(0.5 * np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class SigmaLut:
    entries: np.ndarray  # int64 Fixed32 raws, one per bin centre
    low: int  # value used for v <= -3
    high: int  # value used for v >= +3

    def index(self, v_raw):
        """Bin index ``floor((v + 3) * 512 / 6)`` computed on raw words, clamped."""
        v = np.asarray(v_raw, dtype=np.int64)
        idx = ((v + _LIMIT_RAW) * LUT_SIZE) // (2 * _LIMIT_RAW)
        return np.clip(idx, 0, LUT_SIZE - 1)

    def lookup(self, v_raw):
        v = np.asarray(v_raw, dtype=np.int64)
        out = self.entries[self.index(v)]
        out = np.where(v >= _LIMIT_RAW, self.high, out)
        out = np.where(v <= -_LIMIT_RAW, self.low, out)
        return out if out.ndim else int(out)


def build_sigma_lut() -> SigmaLut:
    width = 2 * LUT_LIMIT / LUT_SIZE
    centres = -LUT_LIMIT + (np.arange(LUT_SIZE) + 0.5) * width
    return SigmaLut(
        entries=np.asarray(fx_from_real(sigma_a(centres)), dtype=np.int64),
        low=fx_from_real(sigma_a(-LUT_LIMIT)),
        high=fx_from_real(sigma_a(LUT_LIMIT)),
    )


def attention_fixed(v_raw, bypass_raw, lut: SigmaLut):
    """``sigma_a(v) * (v + bypass)`` entirely in Fixed32."""
    return fx_mul(lut.lookup(v_raw), fx_add(v_raw, bypass_raw))
