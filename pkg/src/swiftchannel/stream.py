"""Software emulation of the streaming accelerator.

Every stage is a generator over pixel vectors (one numpy vector of channel
values per pixel, depth-first order), so the whole network runs as a
pull-driven pipeline: a stage only sees data its producer has emitted, and
internal state (line buffer, window buffer, partial sums, shuffle row buffers)
is private to the stage. The SPAB skip path is a buffered fork
(``itertools.tee``), standing in for the bypass FIFO.

Scheduling is sequential; the outputs are defined to be bit-identical to the
direct integer oracle in :mod:`swiftchannel.quant`.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .channel import PilotObservation
from .fixed import QuantTensor
from .graph import LayerGraph
from .ls import SrsCache, ls_estimate_fixed_raw
from .lut import SigmaLut
from .quant import QConvLayer, QModel, attention_codes, default_lut, fixed_to_codes

_END = object()


class StreamError(RuntimeError):
    pass


class StreamUnderrun(StreamError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class EngineConfig:
    t_m: int = 4
    t_n: int = 4
    pipeline_depth: int = 50

    def __post_init__(self):
        if self.t_m < 1 or self.t_n < 1:
            raise ValueError("tile sizes must be positive")
        if self.pipeline_depth < 0:
            raise ValueError("pipeline_depth must be non-negative")


# ------------------------------------------------------------------ plumbing

def pixels(stream, channels: int) -> Iterator[np.ndarray]:
    """View a flat PixelStream (or pass through an iterable of pixel vectors)."""
    if isinstance(stream, np.ndarray):
        if stream.ndim != 1 or stream.size % channels:
            raise StreamError(f"flat stream of {stream.size} values is not a multiple of {channels}")
        return iter(stream.reshape(-1, channels))
    return iter(stream)


def collect(stream: Iterable[np.ndarray]) -> np.ndarray:
    chunks = [np.asarray(v).reshape(-1) for v in stream]
    return np.concatenate(chunks) if chunks else np.zeros(0, np.uint8)


def _take(it: Iterator[np.ndarray], what: str) -> np.ndarray:
    v = next(it, _END)
    if v is _END:
        raise StreamUnderrun(f"{what}: input stream ended early")
    return v


def _expect_end(it: Iterator[np.ndarray], what: str):
    if next(it, _END) is not _END:
        raise StreamError(f"{what}: input stream longer than expected")


# ------------------------------------------------------------------ Window3D

def window3d(stream, height: int, width: int, f_in: int, in_zp: int, k: int = 3
             ) -> Iterator[np.ndarray]:
    """Emit one zero-point-shifted ``(k, k, f_in)`` window per pixel.

    A line buffer holds the previous ``k-1`` rows; the window buffer shifts
    left by one column per step and takes the newest column at the right. The
    loop runs ``k//2`` extra rows and columns past the image to flush the
    bottom and right borders; positions outside the image hold 0, which is the
    shifted zero point.
    """
    src = pixels(stream, f_in)
    pad = k // 2
    line = np.zeros((k - 1, width, f_in), dtype=np.int16)
    win = np.zeros((k, k, f_in), dtype=np.int16)
    zero = np.zeros(f_in, dtype=np.int16)
    for y in range(height + pad):
        for x in range(width + pad):
            if x < width:
                if y < height:
                    px = np.asarray(_take(src, "window3d"), dtype=np.int16) - np.int16(in_zp)
                    if px.shape != (f_in,):
                        raise StreamError(f"window3d: pixel of shape {px.shape}, expected ({f_in},)")
                else:
                    px = zero
                col = np.concatenate([line[:, x], px[None]], axis=0)
                if k > 1:
                    line[:-1, x] = line[1:, x]
                    line[-1, x] = px
            else:
                col = np.zeros((k, f_in), dtype=np.int16)
            win[:, :-1] = win[:, 1:]
            win[:, -1] = col
            if y >= pad and x >= pad:
                yield win.copy()
    _expect_end(src, "window3d")


# ------------------------------------------------------------------ Filter3D

class _TiledWeights:
    """INT8 weights regrouped per (output tile, input tile), padded with zeros."""

    def __init__(self, layer: QConvLayer, t_m: int, t_n: int):
        k = layer.k
        self.fo_pad = math.ceil(layer.f_out / t_m) * t_m
        self.fi_pad = math.ceil(layer.f_in / t_n) * t_n
        w = np.zeros((self.fo_pad, self.fi_pad, k, k), dtype=np.int64)
        w[: layer.f_out, : layer.f_in] = layer.shifted_weights()
        # tile (to, ti): (t_m, k*k*t_n) in (rr, cc, tii) order, matching the window slice
        self.tiles = [
            [w[to : to + t_m, ti : ti + t_n].transpose(0, 2, 3, 1).reshape(t_m, -1)
             for ti in range(0, self.fi_pad, t_n)]
            for to in range(0, self.fo_pad, t_m)
        ]
        self.bias = np.zeros(self.fo_pad, dtype=np.int64)
        self.bias[: layer.f_out] = layer.q_bias


def filter3d(frames, layer: QConvLayer, cfg: EngineConfig, height: int | None = None,
             width: int | None = None) -> Iterator[np.ndarray]:
    """Tiled multiply-accumulate over window frames, one requantized pixel per frame."""
    t_m, t_n = cfg.t_m, cfg.t_n
    if t_m < 1 or t_n < 1:
        raise ValueError("tile misconfiguration: tile sizes must be positive")
    tw = _TiledWeights(layer, t_m, t_n)
    k = layer.k
    frame_pad = np.zeros((k, k, tw.fi_pad), dtype=np.int64)
    count = 0
    for frame in frames:
        if frame.shape != (k, k, layer.f_in):
            raise StreamError(f"filter3d: frame shape {frame.shape} does not match layer {layer.name}")
        frame_pad[:, :, : layer.f_in] = frame
        acc = tw.bias.copy()
        for a, to in enumerate(range(0, tw.fo_pad, t_m)):
            for b, ti in enumerate(range(0, tw.fi_pad, t_n)):
                # one PE: partial sums over (rr, cc, too, tii), fully unrolled
                partial = tw.tiles[a][b] @ frame_pad[:, :, ti : ti + t_n].reshape(-1)
                acc[to : to + t_m] += partial
        count += 1
        yield layer.requantize(acc[: layer.f_out])
    if height is not None and width is not None and count != height * width:
        raise StreamUnderrun(f"filter3d: got {count} frames, expected {height * width}")


def qconv_stream(stream, layer: QConvLayer, cfg: EngineConfig, height: int, width: int):
    frames = window3d(stream, height, width, layer.f_in, layer.in_q.zero_point, layer.k)
    return filter3d(frames, layer, cfg, height, width)


def pe_count(f_in: int, f_out: int, t_m: int, t_n: int) -> int:
    if min(f_in, f_out) < 1:
        raise ValueError("channel counts must be positive")
    if t_m < 1 or t_n < 1:
        raise ValueError("tile sizes must be positive")
    return math.ceil(f_out / t_m) * math.ceil(f_in / t_n)


# ------------------------------------------------------------------ element-wise stages

def relu_q(stream, boundary_zp: int) -> Iterator[np.ndarray]:
    zp = np.uint8(boundary_zp)
    for px in pixels(stream, 1) if isinstance(stream, np.ndarray) else stream:
        yield np.maximum(px, zp)


def attention_stage(conv2_out, bypass, q_conv, q_bypass, q_out,
                    lut: SigmaLut | None = None) -> Iterator[np.ndarray]:
    lut = lut or default_lut()
    a_it = pixels(conv2_out, 1) if isinstance(conv2_out, np.ndarray) else iter(conv2_out)
    b_it = pixels(bypass, 1) if isinstance(bypass, np.ndarray) else iter(bypass)
    for a, b in itertools.zip_longest(a_it, b_it, fillvalue=_END):
        if a is _END or b is _END:
            raise StreamError("attention: conv and bypass streams differ in length")
        if np.shape(a) != np.shape(b):
            raise StreamError("attention: conv and bypass pixels differ in width")
        yield attention_codes(a, b, q_conv, q_bypass, q_out, lut)


def pixel_shuffle_stream(stream, height: int, width: int, r: int, c_out: int
                         ) -> Iterator[np.ndarray]:
    """Pipelined depth-to-space.

    Sub-row 0 of each pixel's ``r x r`` region goes out as soon as the pixel
    arrives; sub-rows ``1..r-1`` wait in ``r-1`` row buffers and are flushed
    once the input row is complete.
    """
    c = c_out * r * r
    src = pixels(stream, c)
    rows: list[list[np.ndarray]] = [[] for _ in range(r - 1)]
    for _ in range(height):
        for _ in range(width):
            px = np.asarray(_take(src, "pixel_shuffle"))
            if px.shape != (c,):
                raise StreamError(f"pixel_shuffle: pixel of shape {px.shape}, expected ({c},)")
            region = px.reshape(c_out, r, r).transpose(1, 2, 0)  # (dy, dx, co)
            yield region[0].reshape(-1)
            for dy in range(1, r):
                rows[dy - 1].append(region[dy].reshape(-1))
        for buf in rows:
            yield np.concatenate(buf)
            buf.clear()
    _expect_end(src, "pixel_shuffle")


# ------------------------------------------------------------------ pipeline

def _tagged(stage: str, gen: Iterator) -> Iterator:
    try:
        yield from gen
    except StageError:
        raise
    except Exception as e:
        raise StageError(stage, e) from e


def build_stream(qm: QModel, ls_raw: np.ndarray, cfg: EngineConfig) -> Iterator[np.ndarray]:
    """Wire the stage generators for ``qm`` on a Fixed32 LS tensor ``(H, W, 2)``."""
    g: LayerGraph = qm.graph
    height, width, ch = ls_raw.shape
    if ch != g.in_channels:
        raise ValueError(f"LS tensor has {ch} channels, model expects {g.in_channels}")
    q_in = qm.input_q
    src = _tagged("quantize_in", (fixed_to_codes(px, q_in) for px in pixels(ls_raw.reshape(-1), ch)))

    uses = Counter(i for n in g.nodes for i in n.inputs)
    ports: dict[str, list[Iterator]] = {}

    def publish(name, it):
        n = uses.get(name, 0)
        ports[name] = list(itertools.tee(it, n)) if n > 1 else [it]

    def take(name):
        return ports[name].pop(0)

    publish("input", src)
    last = None
    for n in g.nodes:
        if n.op == "conv":
            out = qconv_stream(take(n.inputs[0]), qm.layers[n.name], cfg, height, width)
        elif n.op == "relu":
            out = relu_q(take(n.inputs[0]), qm.boundary(n.inputs[0]).zero_point)
        elif n.op == "attn":
            out = attention_stage(take(n.inputs[0]), take(n.inputs[1]),
                                  qm.boundary(n.inputs[0]), qm.boundary(n.inputs[1]),
                                  qm.boundary(n.name))
        elif n.op == "shuffle":
            out = pixel_shuffle_stream(take(n.inputs[0]), height, width, n.r, n.c_out)
        else:
            raise ValueError(f"op {n.op!r} has no streaming stage")
        last = _tagged(n.name, out)
        publish(n.name, last)
    return last


def run_pipeline_codes(obs: PilotObservation, qm: QModel, cache: SrsCache,
                       cfg: EngineConfig | None = None) -> QuantTensor:
    """Run the full accelerator and return the final UINT8 codes before de-quantization."""
    cfg = cfg or EngineConfig()
    try:
        ls_raw = ls_estimate_fixed_raw(obs, cache)
    except Exception as e:
        raise StageError("ls_estimator", e) from e
    height, width, _ = ls_raw.shape
    out = collect(build_stream(qm, ls_raw, cfg))
    shuffle = qm.graph.nodes[-1]
    r, c_out = shuffle.r, shuffle.c_out
    if out.size != height * r * width * r * c_out:
        raise StageError("shuffle", StreamError(f"emitted {out.size} values"))
    return QuantTensor(out.astype(np.uint8).reshape(height * r, width * r, c_out), qm.output_q)


def run_pipeline(obs: PilotObservation, qm: QModel, cache: SrsCache,
                 cfg: EngineConfig | None = None) -> np.ndarray:
    """Full accelerator run followed by output de-quantization to float64."""
    return run_pipeline_codes(obs, qm, cache, cfg).dequantize()


# ------------------------------------------------------------------ cycle model

@dataclass
class CycleReport:
    blocks: list[tuple[str, int]]
    pipeline_depth: int

    @property
    def critical_path(self) -> int:
        return max(c for _, c in self.blocks)

    @property
    def total(self) -> int:
        return self.critical_path + self.pipeline_depth

    def to_text(self) -> str:
        lines = [f"block={name} cycles={c}" for name, c in self.blocks]
        lines.append(f"critical_path={self.critical_path}")
        lines.append(f"pipeline_total={self.total}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({
            "blocks": [{"name": n, "cycles": c} for n, c in self.blocks],
            "critical_path": self.critical_path,
            "pipeline_total": self.total,
        }, indent=2) + "\n"


def conv_cycles(height, width, f_in, f_out, cfg: EngineConfig) -> int:
    return height * width * (pe_count(f_in, f_out, cfg.t_m, cfg.t_n) + f_out) + cfg.pipeline_depth


def elementwise_cycles(height, width, channels, cfg: EngineConfig) -> int:
    return height * width * channels + cfg.pipeline_depth


def estimate_cycles(model, dims: tuple[int, int], cfg: EngineConfig | None = None) -> CycleReport:
    """Analytic per-block cycle counts: II=1 tile loop plus the per-pixel output loop."""
    cfg = cfg or EngineConfig()
    g = model.graph if isinstance(model, QModel) else model
    h, w = dims
    chans = {"input": g.in_channels}
    blocks = [("ls_estimator", elementwise_cycles(h, w, g.in_channels, cfg)),
              ("quantize_in", elementwise_cycles(h, w, g.in_channels, cfg))]
    for n in g.nodes:
        c_in = chans[n.inputs[0]]
        if n.op == "conv":
            blocks.append((n.name, conv_cycles(h, w, n.conv.f_in, n.conv.f_out, cfg)))
        elif n.op == "rep":
            raise ValueError("fuse the graph before estimating cycles")
        else:
            blocks.append((n.name, elementwise_cycles(h, w, c_in, cfg)))
        chans[n.name] = n.channels_out([chans[i] for i in n.inputs])
    shuffle = g.nodes[-1]
    blocks.append(("dequantize", elementwise_cycles(h * shuffle.r, w * shuffle.r, shuffle.c_out, cfg)))
    return CycleReport(blocks, cfg.pipeline_depth)
