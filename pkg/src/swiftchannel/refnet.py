"""Floating-point reference operators.

Everything here works on ``float64`` arrays shaped ``(H, W, C)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lut import sigma_a


@dataclass
class ConvSpec:
    k: int
    f_in: int
    f_out: int
    weights: np.ndarray  # (f_out, f_in, k, k)
    bias: np.ndarray  # (f_out,)

    def __post_init__(self):
        if self.k not in (1, 3):
            raise ValueError(f"kernel size must be 1 or 3, got {self.k}")
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(
            self.f_out, self.f_in, self.k, self.k
        )
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(self.f_out)

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size

    def macs_per_pixel(self) -> int:
        return self.f_in * self.f_out * self.k * self.k

    @classmethod
    def zeros(cls, k, f_in, f_out):
        return cls(k, f_in, f_out, np.zeros((f_out, f_in, k, k)), np.zeros(f_out))

    @classmethod
    def identity(cls, channels):
        return cls(1, channels, channels, np.eye(channels), np.zeros(channels))


def conv2d_same(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Stride-1 convolution with zero padding that keeps the spatial size."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != spec.f_in:
        raise ValueError(f"expected {spec.f_in} input channels, got shape {x.shape}")
    h, w, _ = x.shape
    p = spec.k // 2
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    out = np.broadcast_to(spec.bias, (h, w, spec.f_out)).copy()
    for ky in range(spec.k):
        for kx in range(spec.k):
            out += xp[ky : ky + h, kx : kx + w, :] @ spec.weights[:, :, ky, kx].T
    return out


def relu(x):
    return np.maximum(x, 0.0)


def sigma_a_prime(x):
    """``s * (1 - s)`` for ``s = sigmoid(x)``, written as ``1 / (4 cosh^2(x/2))`` so it is exactly even."""
    return 0.25 / np.cosh(0.5 * np.asarray(x, dtype=np.float64)) ** 2


def attention_block_forward(h, o_prev=None, residual=True):
    """Parameter-free attention: ``sigma_a(h) * (h + o_prev)``, or ``sigma_a(h) * h``."""
    h = np.asarray(h, dtype=np.float64)
    if not residual:
        return sigma_a(h) * h
    o_prev = np.asarray(o_prev, dtype=np.float64)
    if o_prev.shape != h.shape:
        raise ValueError(f"residual shape {o_prev.shape} does not match {h.shape}")
    return sigma_a(h) * (h + o_prev)


def pixel_shuffle(x: np.ndarray, r: int, c_out: int) -> np.ndarray:
    """Depth-to-space: ``out[y*r+dy, x*r+dx, co] = in[y, x, co*r*r + dy*r + dx]``.

    Dtype-preserving, so it also reorders quantized codes.
    """
    h, w, c = x.shape
    if c != c_out * r * r:
        raise ValueError(f"pixel shuffle needs {c_out * r * r} channels, got {c}")
    return x.reshape(h, w, c_out, r, r).transpose(0, 3, 1, 4, 2).reshape(h * r, w * r, c_out)


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    hr, wr, c_out = x.shape
    h, w = hr // r, wr // r
    return x.reshape(h, r, w, r, c_out).transpose(0, 2, 4, 1, 3).reshape(h, w, c_out * r * r)


@dataclass
class RepBlock:
    """Training-time block: 1x1 skip in parallel with 1x1 -> 3x3 -> 1x1."""

    skip: ConvSpec
    pre: ConvSpec
    mid: ConvSpec
    post: ConvSpec

    def check(self):
        ok = (
            self.skip.k == 1 and self.pre.k == 1 and self.mid.k == 3 and self.post.k == 1
            and self.pre.f_in == self.skip.f_in
            and self.post.f_out == self.skip.f_out
            and self.pre.f_out == self.mid.f_in
            and self.mid.f_out == self.post.f_in
        )
        if not ok:
            raise ValueError("inconsistent RepBlock channel chain")

    @property
    def f_in(self):
        return self.skip.f_in

    @property
    def f_out(self):
        return self.skip.f_out

    @property
    def n_params(self):
        return sum(c.n_params for c in (self.skip, self.pre, self.mid, self.post))


def rep_block_forward(x: np.ndarray, b: RepBlock) -> np.ndarray:
    """Composite multi-branch forward.

    The expanding 1x1 conv runs on the zero-padded input, so the 3x3 conv sees
    the expand bias (not zero) on the border ring. This is what makes the block
    exactly equal to a single zero-padded 3x3 conv.
    """
    b.check()
    h, w, _ = x.shape
    xp = np.pad(np.asarray(x, dtype=np.float64), ((1, 1), (1, 1), (0, 0)))
    e = xp @ b.pre.weights[:, :, 0, 0].T + b.pre.bias
    m = np.broadcast_to(b.mid.bias, (h, w, b.mid.f_out)).copy()
    for ky in range(3):
        for kx in range(3):
            m += e[ky : ky + h, kx : kx + w, :] @ b.mid.weights[:, :, ky, kx].T
    return conv2d_same(m, b.post) + conv2d_same(x, b.skip)


def fuse_rep_block(b: RepBlock) -> ConvSpec:
    b.check()
    wp = b.pre.weights[:, :, 0, 0]  # (c1, f_in)
    wq = b.post.weights[:, :, 0, 0]  # (f_out, c2)
    # fold the expand conv into the 3x3 (contract the inner channel)
    w1 = np.einsum("mcyx,ci->miyx", b.mid.weights, wp)
    b1 = b.mid.bias + np.einsum("mcyx,c->m", b.mid.weights, b.pre.bias)
    # fold the projection conv (contract the outer channel)
    w2 = np.einsum("om,miyx->oiyx", wq, w1)
    b2 = wq @ b1 + b.post.bias
    w2[:, :, 1, 1] += b.skip.weights[:, :, 0, 0]
    b2 = b2 + b.skip.bias
    return ConvSpec(3, b.f_in, b.f_out, w2, b2)


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def kd_loss(student_out, teacher_out, truth, student_taps, teacher_taps, projections,
            alpha=1.0, beta=10.0, gamma=2.0) -> float:
    """Distillation objective: hard + soft + projected feature terms."""
    if not (len(student_taps) == len(teacher_taps) == len(projections)):
        raise ValueError("tap and projection counts must match")
    hard = mse(student_out, truth)
    soft = mse(student_out, teacher_out)
    feature = sum(
        mse(conv2d_same(s, p), t) for s, t, p in zip(student_taps, teacher_taps, projections)
    )
    return alpha * hard + beta * soft + gamma * feature


def pair_taps(student_taps, teacher_taps):
    """Pair student block i (1-based) with teacher block ceil(i * T / S)."""
    s, t = len(student_taps), len(teacher_taps)
    return [teacher_taps[math.ceil(i * t / s) - 1] for i in range(1, s + 1)]


def nmse(est, truth) -> tuple[float, float]:
    """Return (linear, dB). A perfect estimate gives dB = -inf."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {truth.shape}")
    den = float(np.sum(truth**2))
    if den == 0.0:
        raise ValueError("NMSE undefined for a zero-norm ground truth")
    lin = float(np.sum((truth - est) ** 2)) / den
    return lin, (10.0 * math.log10(lin) if lin > 0 else -math.inf)


def attention_derivative(h, o_prev=None, residual=True):
    h = np.asarray(h, dtype=np.float64)
    carry = h + np.asarray(o_prev, dtype=np.float64) if residual else h
    return carry * sigma_a_prime(h) + sigma_a(h)


def attention_gradient_check(h, o_prev, residual=True, step=1e-5) -> float:
    """Max relative error between the analytic d/dh of the attention block and
    central finite differences. Relative errors use a 1e-3 magnitude floor."""
    if not 1e-7 <= step <= 1e-4:
        raise ValueError("step must lie in [1e-7, 1e-4]")
    h = np.asarray(h, dtype=np.float64)
    analytic = attention_derivative(h, o_prev, residual)
    numeric = (
        attention_block_forward(h + step, o_prev, residual)
        - attention_block_forward(h - step, o_prev, residual)
    ) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / denom))
