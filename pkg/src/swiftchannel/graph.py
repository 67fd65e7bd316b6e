"""Teacher/student network graphs and the float forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .refnet import (
    ConvSpec,
    RepBlock,
    attention_block_forward,
    conv2d_same,
    fuse_rep_block,
    pixel_shuffle,
    relu,
    rep_block_forward,
)

UPSCALE = 4
IN_CHANNELS = 2
OUT_CHANNELS = 2


@dataclass
class Node:
    name: str
    op: str  # "conv" | "rep" | "relu" | "attn" | "concat" | "shuffle"
    inputs: tuple[str, ...]
    conv: ConvSpec | None = None
    rep: RepBlock | None = None
    residual: bool = True
    r: int = 1
    c_out: int = 0

    def channels_out(self, in_channels: list[int]) -> int:
        if self.op == "conv":
            return self.conv.f_out
        if self.op == "rep":
            return self.rep.f_out
        if self.op == "concat":
            return sum(in_channels)
        if self.op == "shuffle":
            return self.c_out
        return in_channels[0]


@dataclass
class LayerGraph:
    kind: str
    nodes: list[Node]
    blocks: list[tuple[str, str]] = field(default_factory=list)  # (block name, tap node)
    in_channels: int = IN_CHANNELS

    def __post_init__(self):
        self._check()

    def _check(self):
        chans = {"input": self.in_channels}
        for n in self.nodes:
            ins = [chans[i] for i in n.inputs]
            if n.op == "conv" and ins[0] != n.conv.f_in:
                raise ValueError(f"{n.name}: expects {n.conv.f_in} channels, gets {ins[0]}")
            if n.op == "rep" and ins[0] != n.rep.f_in:
                raise ValueError(f"{n.name}: expects {n.rep.f_in} channels, gets {ins[0]}")
            if n.op == "attn" and n.residual and ins[0] != ins[1]:
                raise ValueError(f"{n.name}: residual width mismatch")
            if n.op == "shuffle" and ins[0] != n.c_out * n.r * n.r:
                raise ValueError(f"{n.name}: bad pixel-shuffle channel count")
            chans[n.name] = n.channels_out(ins)
        shuffles = [n for n in self.nodes if n.op == "shuffle"]
        if len(shuffles) != 1 or self.nodes[-1].op != "shuffle":
            raise ValueError("graph must end in exactly one pixel-shuffle node")

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def convs(self) -> list[Node]:
        return [n for n in self.nodes if n.op in ("conv", "rep")]

    @property
    def n_params(self) -> int:
        total = 0
        for n in self.convs():
            total += n.conv.n_params if n.op == "conv" else n.rep.n_params
        return total

    def macs(self, height: int, width: int) -> int:
        per_pixel = 0
        for n in self.convs():
            if n.op == "conv":
                per_pixel += n.conv.macs_per_pixel()
            else:
                per_pixel += sum(c.macs_per_pixel() for c in
                                 (n.rep.skip, n.rep.pre, n.rep.mid, n.rep.post))
        return per_pixel * height * width

    @property
    def upscale(self) -> int:
        return self.nodes[-1].r

    def is_fused(self) -> bool:
        return all(n.op != "rep" for n in self.nodes)


def _init_conv(rng, k, f_in, f_out) -> ConvSpec:
    bound = 1.0 / np.sqrt(f_in * k * k)
    # float32-representable values so the SWCW float payload round-trips exactly
    w = rng.uniform(-bound, bound, (f_out, f_in, k, k)).astype(np.float32)
    b = rng.uniform(-bound, bound, f_out).astype(np.float32)
    return ConvSpec(k, f_in, f_out, w.astype(np.float64), b.astype(np.float64))


def _init_rep(rng, f_in, f_out) -> RepBlock:
    inner = 2 * max(f_in, f_out)
    return RepBlock(
        skip=_init_conv(rng, 1, f_in, f_out),
        pre=_init_conv(rng, 1, f_in, inner),
        mid=_init_conv(rng, 3, inner, inner),
        post=_init_conv(rng, 1, inner, f_out),
    )


def build_model(kind: str = "student", seed: int = 0, rep: bool = False) -> LayerGraph:
    """Build the teacher or student graph with seeded uniform fan-in init.

    ``rep=True`` gives the student its training-time form, each SPAB 3x3 conv
    replaced by a re-parameterizable block (see ``fuse_graph``).
    """
    rng = np.random.default_rng(seed)
    nodes: list[Node] = []

    def conv(name, src, k, f_in, f_out):
        nodes.append(Node(name, "conv", (src,), conv=_init_conv(rng, k, f_in, f_out)))
        return name

    if kind == "teacher":
        if rep:
            raise ValueError("re-parameterized blocks only exist in the student")
        width = 24
        prev = conv("conv_in", "input", 3, IN_CHANNELS, width)
        blocks, taps = [], [prev]
        for i in range(1, 7):
            b = f"pab{i}"
            block_in = prev
            h = conv(f"{b}.conv1", block_in, 3, width, width)
            nodes.append(Node(f"{b}.relu1", "relu", (h,)))
            h = conv(f"{b}.conv2", f"{b}.relu1", 3, width, width)
            nodes.append(Node(f"{b}.relu2", "relu", (h,)))
            h = conv(f"{b}.conv3", f"{b}.relu2", 3, width, width)
            nodes.append(Node(f"{b}.attn", "attn", (h, block_in)))
            prev = f"{b}.attn"
            blocks.append((b, prev))
            if i % 2 == 0:
                taps.append(prev)
        nodes.append(Node("concat", "concat", tuple(taps)))
        conv("conv_cat", "concat", 3, width * len(taps), width)
        conv("conv_up", "conv_cat", 3, width, OUT_CHANNELS * UPSCALE**2)
    elif kind == "student":
        width, inner = 12, 8
        prev = conv("conv_in", "input", 3, IN_CHANNELS, width)
        blocks = []
        for i in range(1, 5):
            b = f"spab{i}"
            block_in = prev
            for j, (fi, fo, src) in enumerate(((width, inner, block_in), (inner, width, f"{b}.relu")), 1):
                name = f"{b}.conv{j}"
                if rep:
                    nodes.append(Node(name, "rep", (src,), rep=_init_rep(rng, fi, fo)))
                else:
                    conv(name, src, 3, fi, fo)
                if j == 1:
                    nodes.append(Node(f"{b}.relu", "relu", (name,)))
            nodes.append(Node(f"{b}.attn", "attn", (f"{b}.conv2", block_in)))
            prev = f"{b}.attn"
            blocks.append((b, prev))
        conv("conv_mid", prev, 3, width, 4)
        conv("conv_up", "conv_mid", 1, 4, OUT_CHANNELS * UPSCALE**2)
    else:
        raise ValueError(f"unknown model kind {kind!r}")

    nodes.append(Node("shuffle", "shuffle", ("conv_up",), r=UPSCALE, c_out=OUT_CHANNELS))
    return LayerGraph(kind, nodes, blocks)


def fuse_graph(g: LayerGraph) -> LayerGraph:
    """Replace every re-parameterizable block with its equivalent single 3x3 conv."""
    nodes = [
        replace(n, op="conv", conv=fuse_rep_block(n.rep), rep=None) if n.op == "rep" else n
        for n in g.nodes
    ]
    return LayerGraph(g.kind, nodes, list(g.blocks), g.in_channels)


def eval_node(n: Node, args: list[np.ndarray]) -> np.ndarray:
    if n.op == "conv":
        return conv2d_same(args[0], n.conv)
    if n.op == "rep":
        return rep_block_forward(args[0], n.rep)
    if n.op == "relu":
        return relu(args[0])
    if n.op == "attn":
        return attention_block_forward(args[0], args[1] if n.residual else None, n.residual)
    if n.op == "concat":
        return np.concatenate(args, axis=2)
    if n.op == "shuffle":
        return pixel_shuffle(args[0], n.r, n.c_out)
    raise ValueError(f"unknown op {n.op}")


def forward(g: LayerGraph, x: np.ndarray, keep_all: bool = False):
    """Run the graph. Returns ``(output, taps)``; taps are the block outputs.

    With ``keep_all`` the full ``{node name: activation}`` dict is returned third.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != g.in_channels:
        raise ValueError(f"input must be (H, W, {g.in_channels}), got {x.shape}")
    acts = {"input": x}
    for n in g.nodes:
        acts[n.name] = eval_node(n, [acts[i] for i in n.inputs])
    taps = [acts[tap] for _, tap in g.blocks]
    out = acts[g.nodes[-1].name]
    if keep_all:
        return out, taps, acts
    return out, taps
