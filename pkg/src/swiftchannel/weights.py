"""SWCW weight files (float and quantized conv layers).

Layout (little-endian)::

    "SWCW" | version u16 (=1) | layer_count u16
    per layer:
        name_len u8 | name | k u8 | f_in u16 | f_out u16 | dtype u8
        dtype 0: weights f32[f_out*f_in*k*k] | bias f32[f_out]
        dtype 1: weights i8[...] | bias i32[f_out] | w_scales f32[f_out]
                 | in_scale f32 | in_zp u8 | out_scale f32 | out_zp u8

Weights are in (f_out, f_in, ky, kx) order. Re-parameterizable blocks are
stored as four layers named ``<node>.skip``, ``.pre``, ``.mid``, ``.post``.
The network topology itself is not stored; it is rebuilt from the model kind.
"""

from __future__ import annotations

import struct

import numpy as np

from .fixed import ActQuant
from .graph import LayerGraph, build_model
from .quant import QConvLayer, QModel, WeightQuant
from .refnet import ConvSpec, RepBlock

MAGIC = b"SWCW"
VERSION = 1
DTYPE_F32 = 0
DTYPE_QUANT = 1
_REP_PARTS = ("skip", "pre", "mid", "post")


class WeightFileError(Exception):
    pass


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.off = buf, 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.buf):
            raise WeightFileError("truncated SWCW file")
        out = struct.unpack_from(fmt, self.buf, self.off)
        self.off += size
        return out

    def array(self, dtype: str, n: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * n
        if self.off + size > len(self.buf):
            raise WeightFileError("truncated SWCW payload")
        a = np.frombuffer(self.buf, dtype=dtype, count=n, offset=self.off)
        self.off += size
        return a.copy()


def _header(name: str, k: int, f_in: int, f_out: int, dtype: int) -> bytes:
    raw = name.encode()
    return struct.pack(f"<B{len(raw)}sBHHB", len(raw), raw, k, f_in, f_out, dtype)


def _float_layers(g: LayerGraph) -> list[tuple[str, ConvSpec]]:
    out = []
    for n in g.convs():
        if n.op == "conv":
            out.append((n.name, n.conv))
        else:
            out += [(f"{n.name}.{p}", getattr(n.rep, p)) for p in _REP_PARTS]
    return out


def dumps_float(g: LayerGraph) -> bytes:
    layers = _float_layers(g)
    parts = [struct.pack("<4sHH", MAGIC, VERSION, len(layers))]
    for name, c in layers:
        parts.append(_header(name, c.k, c.f_in, c.f_out, DTYPE_F32))
        parts.append(c.weights.astype("<f4").tobytes())
        parts.append(c.bias.astype("<f4").tobytes())
    return b"".join(parts)


def dumps_quant(qm: QModel) -> bytes:
    parts = [struct.pack("<4sHH", MAGIC, VERSION, len(qm.layers))]
    for name, l in qm.layers.items():
        parts.append(_header(name, l.k, l.f_in, l.f_out, DTYPE_QUANT))
        parts.append(l.q_weights.astype("i1").tobytes())
        parts.append(l.q_bias.astype("<i4").tobytes())
        parts.append(l.w_q.scales.astype("<f4").tobytes())
        parts.append(struct.pack("<fBfB", l.in_q.scale, l.in_q.zero_point,
                                 l.out_q.scale, l.out_q.zero_point))
    return b"".join(parts)


def loads_layers(buf: bytes) -> dict[str, ConvSpec | QConvLayer]:
    if buf[:4] != MAGIC:
        raise WeightFileError("not an SWCW weight file (bad magic)")
    r = _Reader(buf)
    _, version, count = r.take("<4sHH")
    if version != VERSION:
        raise WeightFileError(f"SWCW version {version} unsupported (expected {VERSION})")
    layers = {}
    for _ in range(count):
        (name_len,) = r.take("<B")
        (name,) = r.take(f"<{name_len}s")
        name = name.decode()
        k, f_in, f_out, dtype = r.take("<BHHB")
        n = f_out * f_in * k * k
        if dtype == DTYPE_F32:
            w = r.array("<f4", n).astype(np.float64)
            b = r.array("<f4", f_out).astype(np.float64)
            layers[name] = ConvSpec(k, f_in, f_out, w, b)
        elif dtype == DTYPE_QUANT:
            w = r.array("i1", n)
            b = r.array("<i4", f_out)
            scales = r.array("<f4", f_out).astype(np.float64)
            in_s, in_zp, out_s, out_zp = r.take("<fBfB")
            layers[name] = QConvLayer(
                name, k, f_in, f_out, w, b,
                ActQuant(float(in_s), in_zp),
                WeightQuant(scales, np.zeros(f_out, np.int64)),
                ActQuant(float(out_s), out_zp),
            )
        else:
            raise WeightFileError(f"layer {name!r}: unknown dtype {dtype}")
    if r.off != len(buf):
        raise WeightFileError("trailing bytes after last SWCW layer")
    return layers


def is_quantized(layers: dict) -> bool:
    kinds = {isinstance(v, QConvLayer) for v in layers.values()}
    if len(kinds) != 1:
        raise WeightFileError("mixed float and quantized layers")
    return kinds.pop()


def _shape_check(name, have, want):
    if (have.k, have.f_in, have.f_out) != (want.k, want.f_in, want.f_out):
        raise WeightFileError(f"layer {name!r}: shape {(have.k, have.f_in, have.f_out)} "
                              f"does not fit {(want.k, want.f_in, want.f_out)}")


def graph_from_layers(layers: dict[str, ConvSpec], kind: str) -> LayerGraph:
    rep = any(name.endswith(".mid") for name in layers)
    g = build_model(kind, seed=0, rep=rep)
    expected = dict(_float_layers(g))
    if set(expected) != set(layers):
        missing = sorted(set(expected) - set(layers))
        extra = sorted(set(layers) - set(expected))
        raise WeightFileError(f"layers do not match a {kind} model (missing {missing}, extra {extra})")
    for n in g.convs():
        if n.op == "conv":
            _shape_check(n.name, layers[n.name], n.conv)
            n.conv = layers[n.name]
        else:
            parts = {p: layers[f"{n.name}.{p}"] for p in _REP_PARTS}
            for p in _REP_PARTS:
                _shape_check(f"{n.name}.{p}", parts[p], getattr(n.rep, p))
            n.rep = RepBlock(**parts)
    return g


def qmodel_from_layers(layers: dict[str, QConvLayer], kind: str) -> QModel:
    g = build_model(kind, seed=0)
    want = {n.name: n.conv for n in g.convs()}
    if set(want) != set(layers):
        raise WeightFileError(f"quantized layers do not match a {kind} model")
    for name, l in layers.items():
        _shape_check(name, l, want[name])
    return QModel(g, dict(layers))


def save_float(path, g: LayerGraph):
    with open(path, "wb") as f:
        f.write(dumps_float(g))


def save_quant(path, qm: QModel):
    with open(path, "wb") as f:
        f.write(dumps_quant(qm))


def load(path, kind: str):
    """Load either a float ``LayerGraph`` or a quantized ``QModel``."""
    with open(path, "rb") as f:
        layers = loads_layers(f.read())
    if is_quantized(layers):
        return qmodel_from_layers(layers, kind)
    return graph_from_layers(layers, kind)
