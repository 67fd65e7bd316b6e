"""Synthetic clustered-multipath channels and SRS pilot observations.

A ULA base station with ``n_bs`` half-wavelength-spaced antennas receives
``n_paths`` plane waves; each path has a delay, an angle of arrival and an
independent complex gain per UE port. The LS input is the comb-subsampled grid
(every ``freq_scale``-th subcarrier, every ``spatial_scale``-th antenna).

Randomness comes from numpy's PCG64 generator. Each sample ``i`` of a dataset
uses ``seed = base_seed + i``; the channel draw and the pilot/noise draw use
independent streams spawned from ``SeedSequence([seed, stream_id])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
SRS_PERIOD_S = 1e-3
_CHANNEL_STREAM = 0
_PILOT_STREAM = 1


@dataclass(frozen=True)
class ScenarioConfig:
    carrier_hz: float = 28e9
    n_bs: int = 64
    n_ue: int = 2
    n_c: int = 432
    subcarrier_spacing_hz: float = 120e3
    spatial_scale: int = 4
    freq_scale: int = 4
    snr_db: float = 10.0
    velocity_kmh: float = 30.0
    n_paths: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("n_bs", "n_ue", "n_c", "spatial_scale", "freq_scale"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_bs % self.spatial_scale:
            raise ValueError(f"n_bs={self.n_bs} not divisible by spatial_scale={self.spatial_scale}")
        if self.n_c % self.freq_scale:
            raise ValueError(f"n_c={self.n_c} not divisible by freq_scale={self.freq_scale}")
        if self.n_paths < 0:
            raise ValueError("n_paths must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def n_r(self) -> int:
        return self.n_bs // self.spatial_scale

    @property
    def n_k(self) -> int:
        return self.n_c // self.freq_scale

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, stream]))


@dataclass(frozen=True)
class SamplingMasks:
    antenna_idx: np.ndarray
    subcarrier_idx: np.ndarray

    @classmethod
    def comb(cls, cfg: ScenarioConfig) -> "SamplingMasks":
        return cls(np.arange(0, cfg.n_bs, cfg.spatial_scale),
                   np.arange(0, cfg.n_c, cfg.freq_scale))


@dataclass
class ChannelRealization:
    h_full: np.ndarray  # complex (n_c, n_bs, n_ue)

    def __post_init__(self):
        if not np.all(np.isfinite(self.h_full)):
            raise ValueError("channel has non-finite entries")
        if not np.any(self.h_full):
            raise ValueError("channel has zero Frobenius norm")


@dataclass
class PilotObservation:
    y: np.ndarray  # complex (n_k, n_r, n_ue)
    srs: np.ndarray  # complex (n_k, n_ue)
    masks: SamplingMasks = field(repr=False)

    @property
    def shape(self):
        return self.y.shape


def channel_from_paths(cfg: ScenarioConfig, gains, delays, angles) -> ChannelRealization:
    """Sum of plane waves. ``gains`` is (n_paths, n_ue); delays in s; angles in rad."""
    gains = np.asarray(gains, dtype=np.complex128).reshape(-1, cfg.n_ue)
    delays = np.asarray(delays, dtype=np.float64).reshape(-1)
    angles = np.asarray(angles, dtype=np.float64).reshape(-1)
    f = np.arange(cfg.n_c) * cfg.subcarrier_spacing_hz
    b = np.arange(cfg.n_bs)
    freq = np.exp(-2j * np.pi * np.outer(f, delays))  # (n_c, P)
    space = np.exp(1j * np.pi * np.outer(b, np.sin(angles)))  # (n_bs, P)
    h = np.einsum("kp,bp,pu->kbu", freq, space, gains)
    return ChannelRealization(h)


def draw_paths(cfg: ScenarioConfig):
    """Random path parameters. Power decays exponentially with delay."""
    if cfg.n_paths == 0:
        raise ValueError("n_paths must be at least 1")
    rng = cfg.rng(_CHANNEL_STREAM)
    p = cfg.n_paths
    # half of the unambiguous delay window of the subcarrier comb
    tau_max = 1.0 / (2.0 * cfg.subcarrier_spacing_hz * cfg.freq_scale)
    delays = np.sort(rng.uniform(0.0, tau_max, p))
    angles = rng.uniform(-np.pi / 2, np.pi / 2, p)
    power = np.exp(-delays / (tau_max / 3.0))
    power /= power.sum()
    g = (rng.standard_normal((p, cfg.n_ue)) + 1j * rng.standard_normal((p, cfg.n_ue))) / math.sqrt(2)
    g *= np.sqrt(power)[:, None]
    # Doppler enters only as a random per-path phase at the snapshot instant
    f_d = cfg.velocity_kmh / 3.6 / SPEED_OF_LIGHT * cfg.carrier_hz
    t0 = rng.uniform(0.0, SRS_PERIOD_S)
    doppler = np.exp(2j * np.pi * f_d * np.cos(rng.uniform(-np.pi, np.pi, p)) * t0)
    return g * doppler[:, None], delays, angles


def synthesize_channel(cfg: ScenarioConfig) -> ChannelRealization:
    gains, delays, angles = draw_paths(cfg)
    return channel_from_paths(cfg, gains, delays, angles)


def qpsk_pilots(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    bits = rng.integers(0, 4, (cfg.n_k, cfg.n_ue))
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * bits))


def observe_pilot(h: ChannelRealization, cfg: ScenarioConfig, srs=None,
                  noiseless: bool = False) -> PilotObservation:
    """Comb-sample ``h`` and form ``y = H * s + n`` per sampled subcarrier and port.

    ``srs`` overrides the seeded QPSK pilots; ``snr_db = inf`` or ``noiseless``
    disables the noise.
    """
    if h.h_full.shape != (cfg.n_c, cfg.n_bs, cfg.n_ue):
        raise ValueError(f"channel shape {h.h_full.shape} does not match the scenario")
    masks = SamplingMasks.comb(cfg)
    rng = cfg.rng(_PILOT_STREAM)
    s = qpsk_pilots(cfg, rng) if srs is None else np.asarray(srs, dtype=np.complex128)
    if s.shape != (cfg.n_k, cfg.n_ue):
        raise ValueError(f"pilot shape {s.shape} != {(cfg.n_k, cfg.n_ue)}")
    h_s = h.h_full[np.ix_(masks.subcarrier_idx, masks.antenna_idx)]
    y = h_s * s[:, None, :]
    if not noiseless and math.isfinite(cfg.snr_db):
        p_sig = float(np.mean(np.abs(y) ** 2))
        sigma2 = p_sig / 10 ** (cfg.snr_db / 10)
        n = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + n * math.sqrt(sigma2 / 2)
    return PilotObservation(y, s, masks)


def sampled_channel(h: ChannelRealization, masks: SamplingMasks) -> np.ndarray:
    return h.h_full[np.ix_(masks.subcarrier_idx, masks.antenna_idx)]


def channel_to_tensor(h_full: np.ndarray) -> np.ndarray:
    """Complex (K, B, U) grid to a real (K, B*U, 2) tensor, UE index fastest."""
    k, b, u = h_full.shape
    flat = h_full.reshape(k, b * u)
    return np.stack([flat.real, flat.imag], axis=2).astype(np.float64)
