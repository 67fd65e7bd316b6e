"""SWDS dataset files: ground-truth channels, received pilots and pilot symbols.

Layout (little-endian)::

    "SWDS" | version u16 (=1) | sample_count u32
    per sample:
        n_c u16 | n_bs u16 | n_ue u16 | n_k u16 | n_r u16 | snr_db f32 | seed u64
        H_full  f32 re/im interleaved, (k, b, u) order
        Y       f32 re/im interleaved, (k, r, u) order
        SRS     f32 re/im interleaved, (k, u) order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .channel import (
    ChannelRealization,
    PilotObservation,
    SamplingMasks,
    ScenarioConfig,
    observe_pilot,
    synthesize_channel,
)

MAGIC = b"SWDS"
VERSION = 1
_HEADER = struct.Struct("<4sHI")
_SAMPLE = struct.Struct("<HHHHHfQ")


class DatasetError(Exception):
    pass


class BadMagicError(DatasetError):
    pass


class VersionMismatchError(DatasetError):
    pass


class TruncatedError(DatasetError):
    pass


@dataclass
class Sample:
    """One stored sample; arrays are complex64 (the on-disk precision)."""

    n_c: int
    n_bs: int
    n_ue: int
    n_k: int
    n_r: int
    snr_db: float
    seed: int
    h_full: np.ndarray
    y: np.ndarray
    srs: np.ndarray

    def __post_init__(self):
        self.snr_db = float(np.float32(self.snr_db))
        self.h_full = np.asarray(self.h_full, dtype=np.complex64).reshape(self.n_c, self.n_bs, self.n_ue)
        self.y = np.asarray(self.y, dtype=np.complex64).reshape(self.n_k, self.n_r, self.n_ue)
        self.srs = np.asarray(self.srs, dtype=np.complex64).reshape(self.n_k, self.n_ue)

    @classmethod
    def generate(cls, cfg: ScenarioConfig) -> "Sample":
        h = synthesize_channel(cfg)
        obs = observe_pilot(h, cfg)
        return cls(cfg.n_c, cfg.n_bs, cfg.n_ue, cfg.n_k, cfg.n_r, cfg.snr_db, cfg.seed,
                   h.h_full, obs.y, obs.srs)

    def observation(self) -> PilotObservation:
        masks = SamplingMasks(np.arange(0, self.n_bs, self.n_bs // self.n_r),
                              np.arange(0, self.n_c, self.n_c // self.n_k))
        return PilotObservation(self.y.astype(np.complex128), self.srs.astype(np.complex128), masks)

    def channel(self) -> ChannelRealization:
        return ChannelRealization(self.h_full.astype(np.complex128))

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        head = lambda s: (s.n_c, s.n_bs, s.n_ue, s.n_k, s.n_r, s.seed)
        return (
            head(self) == head(other)
            and np.float32(self.snr_db).tobytes() == np.float32(other.snr_db).tobytes()
            and all(a.tobytes() == b.tobytes() for a, b in
                    ((self.h_full, other.h_full), (self.y, other.y), (self.srs, other.srs)))
        )


def _complex_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<c8").tobytes()


def dumps(samples) -> bytes:
    samples = list(samples)
    if not samples:
        raise ValueError("dataset must contain at least one sample")
    parts = [_HEADER.pack(MAGIC, VERSION, len(samples))]
    for s in samples:
        parts.append(_SAMPLE.pack(s.n_c, s.n_bs, s.n_ue, s.n_k, s.n_r, s.snr_db, s.seed))
        parts += [_complex_bytes(s.h_full), _complex_bytes(s.y), _complex_bytes(s.srs)]
    return b"".join(parts)


def loads(buf: bytes) -> list[Sample]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError("not an SWDS dataset (bad magic)")
    if len(buf) < 6:
        raise TruncatedError("truncated SWDS header")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise VersionMismatchError(f"SWDS version {version} unsupported (expected {VERSION})")
    if len(buf) < _HEADER.size:
        raise TruncatedError("truncated SWDS header")
    _, _, count = _HEADER.unpack_from(buf, 0)
    off = _HEADER.size
    out = []
    for _ in range(count):
        if off + _SAMPLE.size > len(buf):
            raise TruncatedError("truncated sample header")
        n_c, n_bs, n_ue, n_k, n_r, snr, seed = _SAMPLE.unpack_from(buf, off)
        off += _SAMPLE.size
        arrays = []
        for n in (n_c * n_bs * n_ue, n_k * n_r * n_ue, n_k * n_ue):
            nbytes = 8 * n
            if off + nbytes > len(buf):
                raise TruncatedError("truncated sample payload")
            arrays.append(np.frombuffer(buf, dtype="<c8", count=n, offset=off).astype(np.complex64))
            off += nbytes
        out.append(Sample(n_c, n_bs, n_ue, n_k, n_r, snr, seed, *arrays))
    return out


def write(path, samples) -> None:
    data = dumps(samples)
    with open(path, "wb") as f:
        f.write(data)


def read(path) -> list[Sample]:
    with open(path, "rb") as f:
        return loads(f.read())
