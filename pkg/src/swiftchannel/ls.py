"""Least-squares channel estimation by element-wise pilot division.

The pilot cache stores ``conj(s) / |s|^2`` so the estimate is a multiply. Output
tensors are ``(n_k, n_r * n_ue, 2)``: width index ``r * n_ue + u`` and channel
0/1 = real/imaginary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import PilotObservation
from .fixed import fx_add, fx_from_real, fx_mul, fx_sub, fx_to_real


@dataclass(frozen=True)
class SrsCache:
    inv: np.ndarray  # complex (n_k, n_ue)
    inv_re_fx: np.ndarray  # int64 Fixed32 raws
    inv_im_fx: np.ndarray


def build_srs_cache(srs) -> SrsCache:
    s = np.asarray(srs, dtype=np.complex128)
    mag2 = s.real**2 + s.imag**2
    if np.any(mag2 == 0):
        raise ValueError("degenerate pilot: zero-magnitude SRS entry")
    inv = np.conj(s) / mag2
    return SrsCache(inv, np.asarray(fx_from_real(inv.real)), np.asarray(fx_from_real(inv.imag)))


def _to_tensor(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    k, r, u = re.shape
    return np.stack([re.reshape(k, r * u), im.reshape(k, r * u)], axis=2)


def _check(obs: PilotObservation, cache: SrsCache):
    k, _, u = obs.y.shape
    if cache.inv.shape != (k, u):
        raise ValueError(f"pilot cache shape {cache.inv.shape} does not match observation {obs.y.shape}")


def ls_estimate_fixed_raw(obs: PilotObservation, cache: SrsCache) -> np.ndarray:
    """Fixed32 LS estimate as raw words, shape ``(n_k, n_r * n_ue, 2)``."""
    _check(obs, cache)
    yr, yi = fx_from_real(obs.y.real), fx_from_real(obs.y.imag)
    ir, ii = cache.inv_re_fx[:, None, :], cache.inv_im_fx[:, None, :]
    re = fx_sub(fx_mul(yr, ir), fx_mul(yi, ii))
    im = fx_add(fx_mul(yr, ii), fx_mul(yi, ir))
    return _to_tensor(np.asarray(re), np.asarray(im))


def ls_estimate(obs: PilotObservation, cache: SrsCache, mode: str = "float") -> np.ndarray:
    if mode == "fixed":
        return np.asarray(fx_to_real(ls_estimate_fixed_raw(obs, cache)))
    if mode != "float":
        raise ValueError(f"mode must be 'float' or 'fixed', got {mode!r}")
    _check(obs, cache)
    h = obs.y * cache.inv[:, None, :]
    return _to_tensor(h.real, h.imag)
