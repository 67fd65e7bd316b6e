"""Post-training quantization and the direct (non-streaming) integer oracle.

Integer conventions shared with the streaming engine:

* activations are UINT8 codes with a per-tensor ``ActQuant``;
* weights are INT8, symmetric per output channel (zero point 0);
* accumulators are INT32 (saturated), biases INT32;
* requantization multiplies by a u32 mantissa in ``[2**30, 2**31)`` and does a
  rounding arithmetic right shift (ties toward +inf).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .fixed import FRAC_BITS, ActQuant, QuantTensor, fx_from_real, round_half_away
from .graph import LayerGraph, forward
from .lut import SigmaLut, attention_fixed, build_sigma_lut
from .refnet import ConvSpec, pixel_shuffle

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1
MAX_SHIFT = 62
DEGENERATE_SCALE = 1e-6


def _f32(x: float) -> float:
    return float(np.float32(x))


# ---------------------------------------------------------------- activations

def act_quant_from_range(lo: float, hi: float) -> ActQuant:
    """UINT8 affine quantizer covering ``[min(lo, 0), max(hi, 0)]``."""
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    if hi - lo <= 0.0:
        return ActQuant(_f32(DEGENERATE_SCALE), 0)
    # zero point from the exact range; the scale is then stored as float32
    zp = int(np.clip(round_half_away(-lo * 255.0 / (hi - lo)), 0, 255))
    return ActQuant(_f32((hi - lo) / 255.0), zp)


def quantize_tensor(x: np.ndarray, q: ActQuant) -> QuantTensor:
    x = np.asarray(x, dtype=np.float64)
    codes = np.clip(round_half_away(x / q.scale) + q.zero_point, 0, 255)
    return QuantTensor(np.asarray(codes, dtype=np.uint8).reshape(x.shape), q)


def calibrate(g: LayerGraph, calib_inputs) -> dict[str, ActQuant]:
    """Min/max calibration of every activation boundary of ``g``.

    ReLU and pixel-shuffle outputs share the quantizer of their input.
    """
    calib_inputs = list(calib_inputs)
    if not calib_inputs:
        raise ValueError("calibration needs at least one input")
    lo: dict[str, float] = {}
    hi: dict[str, float] = {}
    for x in calib_inputs:
        _, _, acts = forward(g, x, keep_all=True)
        for name, a in acts.items():
            lo[name] = min(lo.get(name, np.inf), float(a.min()))
            hi[name] = max(hi.get(name, -np.inf), float(a.max()))
    out = {"input": act_quant_from_range(lo["input"], hi["input"])}
    for n in g.nodes:
        if n.op in ("relu", "shuffle"):
            out[n.name] = out[n.inputs[0]]
        else:
            out[n.name] = act_quant_from_range(lo[n.name], hi[n.name])
    return out


# ---------------------------------------------------------------- requantize

def derive_requant(in_scale, w_scale, out_scale):
    """Integer multiplier for ``M = in_scale * w_scale / out_scale``.

    Returns ``(mantissa, shift)`` with ``mantissa ~= M * 2**shift`` and
    ``mantissa`` in ``[2**30, 2**31)``. Accepts scalars or arrays.
    """
    in_scale, w_scale, out_scale = (np.asarray(v, dtype=np.float64)
                                    for v in (in_scale, w_scale, out_scale))
    if np.any(in_scale <= 0) or np.any(w_scale <= 0) or np.any(out_scale <= 0):
        raise ValueError("scales must be positive")
    m = in_scale * w_scale / out_scale
    frac, exp = np.frexp(m)  # m = frac * 2**exp, frac in [0.5, 1)
    shift = 31 - exp.astype(np.int64)
    mant = round_half_away(np.ldexp(frac, 31)).astype(np.int64)
    carry = mant == (1 << 31)
    mant = np.where(carry, 1 << 30, mant)
    shift = np.where(carry, shift - 1, shift)
    if np.any(shift < 0):
        raise ValueError("requantization multiplier must be below 2**31")
    # tiny multipliers: every int32 accumulator rounds to 0 anyway
    small = shift > MAX_SHIFT
    if np.any(small):
        mant = np.where(small, round_half_away(np.ldexp(m, MAX_SHIFT)).astype(np.int64), mant)
        shift = np.where(small, MAX_SHIFT, shift)
    if mant.ndim == 0:
        return int(mant), int(shift)
    return mant, shift


def requantize(acc, mantissa, shift, zp_out):
    """``clamp(((sat32(acc) * mantissa + 2**(shift-1)) >> shift) + zp_out, 0, 255)``."""
    # minimum/maximum rather than clip: same result, far less overhead per pixel
    acc = np.minimum(np.maximum(np.asarray(acc, dtype=np.int64), INT32_MIN), INT32_MAX)
    mantissa = np.asarray(mantissa, dtype=np.int64)
    shift = np.asarray(shift, dtype=np.int64)
    half = np.where(shift > 0, np.left_shift(np.int64(1), np.maximum(shift - 1, 0)), 0)
    q = ((acc * mantissa + half) >> shift) + int(zp_out)
    out = np.minimum(np.maximum(q, 0), 255).astype(np.uint8)
    return out if out.ndim else int(out)


@lru_cache(maxsize=256)
def _fixed_requant(q: ActQuant):
    return derive_requant(2.0**-FRAC_BITS, 1.0, q.scale)


def fixed_to_codes(raw, q: ActQuant):
    """Fixed32 raw words to UINT8 codes of quantizer ``q``."""
    m, s = _fixed_requant(q)
    return requantize(raw, m, s, q.zero_point)


@lru_cache(maxsize=256)
def dequant_table(q: ActQuant) -> np.ndarray:
    """Fixed32 value of each of the 256 codes."""
    return np.asarray(fx_from_real((np.arange(256) - q.zero_point) * q.scale), dtype=np.int64)


@lru_cache(maxsize=1)
def default_lut() -> SigmaLut:
    return build_sigma_lut()


def attention_codes(conv_codes, bypass_codes, q_conv: ActQuant, q_bypass: ActQuant,
                    q_out: ActQuant, lut: SigmaLut | None = None):
    """Quantized attention: dequantize both inputs to Fixed32, gate, requantize."""
    lut = lut or default_lut()
    v = dequant_table(q_conv)[np.asarray(conv_codes, dtype=np.intp)]
    b = dequant_table(q_bypass)[np.asarray(bypass_codes, dtype=np.intp)]
    return fixed_to_codes(attention_fixed(v, b, lut), q_out)


# ---------------------------------------------------------------- conv layers

@dataclass
class WeightQuant:
    scales: np.ndarray  # float per output channel
    zero_points: np.ndarray  # int8 per output channel

    def __post_init__(self):
        self.scales = np.asarray(self.scales, dtype=np.float64)
        self.zero_points = np.asarray(self.zero_points, dtype=np.int64)
        if np.any(self.scales <= 0):
            raise ValueError("weight scales must be positive")


@dataclass
class QConvLayer:
    name: str
    k: int
    f_in: int
    f_out: int
    q_weights: np.ndarray  # int8 (f_out, f_in, k, k)
    q_bias: np.ndarray  # int32 (f_out,)
    in_q: ActQuant
    w_q: WeightQuant
    out_q: ActQuant
    mantissa: np.ndarray = field(init=False)
    shift: np.ndarray = field(init=False)

    def __post_init__(self):
        self.q_weights = np.asarray(self.q_weights, dtype=np.int8).reshape(
            self.f_out, self.f_in, self.k, self.k)
        self.q_bias = np.asarray(self.q_bias, dtype=np.int32).reshape(self.f_out)
        self.mantissa, self.shift = derive_requant(
            self.in_q.scale, self.w_q.scales, self.out_q.scale)

    def shifted_weights(self) -> np.ndarray:
        """``w_q - zero_point_w`` as int64, shape (f_out, f_in, k, k)."""
        return self.q_weights.astype(np.int64) - self.w_q.zero_points[:, None, None, None]

    def requantize(self, acc):
        return requantize(acc, self.mantissa, self.shift, self.out_q.zero_point)


def quantize_weights(spec: ConvSpec) -> tuple[np.ndarray, WeightQuant]:
    w = spec.weights.reshape(spec.f_out, -1)
    amax = np.abs(w).max(axis=1)
    scales = np.array([_f32(a / 127.0) if a > 0 else DEGENERATE_SCALE for a in amax])
    q = np.clip(round_half_away(w / scales[:, None]), -127, 127).astype(np.int8)
    return q.reshape(spec.weights.shape), WeightQuant(scales, np.zeros(spec.f_out, np.int64))


def quantize_conv(name: str, spec: ConvSpec, in_q: ActQuant, out_q: ActQuant) -> QConvLayer:
    q_w, w_q = quantize_weights(spec)
    q_b = round_half_away(spec.bias / (in_q.scale * w_q.scales))
    q_b = np.clip(q_b, INT32_MIN, INT32_MAX).astype(np.int64)
    return QConvLayer(name, spec.k, spec.f_in, spec.f_out, q_w, q_b, in_q, w_q, out_q)


@dataclass
class QModel:
    """A quantized concat-free graph: structure from ``graph``, integers from ``layers``."""

    graph: LayerGraph
    layers: dict[str, QConvLayer]

    def boundary(self, name: str) -> ActQuant:
        if name in self.layers:
            return self.layers[name].out_q
        if name != "input":
            node = self.graph.node(name)
            if node.op in ("relu", "shuffle"):
                return self.boundary(node.inputs[0])
        for n in self.graph.nodes:
            if n.op == "conv" and n.inputs[0] == name:
                return self.layers[n.name].in_q
        raise KeyError(f"no quantizer recorded for boundary {name!r}")

    @property
    def input_q(self) -> ActQuant:
        return self.boundary("input")

    @property
    def output_q(self) -> ActQuant:
        return self.boundary(self.graph.nodes[-1].name)


def quantize_model(g: LayerGraph, boundaries: dict[str, ActQuant]) -> QModel:
    if not g.is_fused():
        raise ValueError("fuse re-parameterized blocks before quantization")
    if any(n.op == "concat" for n in g.nodes):
        raise ValueError("quantized deployment supports concat-free (student) graphs only")
    layers = {}
    for n in g.nodes:
        if n.op != "conv":
            continue
        try:
            in_q, out_q = boundaries[n.inputs[0]], boundaries[n.name]
        except KeyError as e:
            raise ValueError(f"uncalibrated boundary {e.args[0]!r}") from None
        layers[n.name] = quantize_conv(n.name, n.conv, in_q, out_q)
    return QModel(g, layers)


def qconv_direct_oracle(x: QuantTensor, layer: QConvLayer) -> QuantTensor:
    """Direct integer convolution; padded positions carry x_s = 0."""
    if x.params != layer.in_q:
        raise ValueError(f"{layer.name}: input quantizer does not match the layer")
    if x.shape[2] != layer.f_in:
        raise ValueError(f"{layer.name}: expected {layer.f_in} channels, got {x.shape[2]}")
    h, w, _ = x.shape
    p = layer.k // 2
    xs = x.data.astype(np.int64) - layer.in_q.zero_point
    xs = np.pad(xs, ((p, p), (p, p), (0, 0)))
    ws = layer.shifted_weights()
    acc = np.broadcast_to(layer.q_bias.astype(np.int64), (h, w, layer.f_out)).copy()
    for ky in range(layer.k):
        for kx in range(layer.k):
            acc += xs[ky : ky + h, kx : kx + w, :] @ ws[:, :, ky, kx].T
    return QuantTensor(layer.requantize(acc), layer.out_q)


def forward_direct(qm: QModel, x: QuantTensor) -> QuantTensor:
    """Whole-model quantized forward built from the direct per-layer oracles."""
    if x.params != qm.input_q:
        raise ValueError("input quantizer does not match the model")
    acts = {"input": x}
    for n in qm.graph.nodes:
        args = [acts[i] for i in n.inputs]
        if n.op == "conv":
            out = qconv_direct_oracle(args[0], qm.layers[n.name])
        elif n.op == "relu":
            zp = args[0].params.zero_point
            out = QuantTensor(np.maximum(args[0].data, np.uint8(zp)), args[0].params)
        elif n.op == "attn":
            q_out = qm.boundary(n.name)
            codes = attention_codes(args[0].data, args[1].data, args[0].params,
                                    args[1].params, q_out)
            out = QuantTensor(codes, q_out)
        elif n.op == "shuffle":
            out = QuantTensor(pixel_shuffle(args[0].data, n.r, n.c_out), args[0].params)
        else:
            raise ValueError(f"op {n.op!r} has no quantized form")
        acts[n.name] = out
    return acts[qm.graph.nodes[-1].name]


def infer_direct(ls_raw: np.ndarray, qm: QModel) -> QuantTensor:
    """Fixed32 LS estimate ``(H, W, 2)`` to final UINT8 codes via the direct path."""
    x = QuantTensor(fixed_to_codes(ls_raw, qm.input_q), qm.input_q)
    return forward_direct(qm, x)
