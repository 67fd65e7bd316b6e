import math

import numpy as np
import pytest

from swiftchannel.lut import sigma_a
from swiftchannel.refnet import (
    ConvSpec,
    RepBlock,
    attention_block_forward,
    attention_derivative,
    attention_gradient_check,
    conv2d_same,
    fuse_rep_block,
    kd_loss,
    mse,
    nmse,
    pair_taps,
    pixel_shuffle,
    pixel_unshuffle,
    rep_block_forward,
    sigma_a_prime,
)


def rand_conv(rng, k, f_in, f_out):
    return ConvSpec(k, f_in, f_out, rng.normal(size=(f_out, f_in, k, k)), rng.normal(size=f_out))


def naive_conv(x, spec):
    h, w, _ = x.shape
    p = spec.k // 2
    out = np.zeros((h, w, spec.f_out))
    for y in range(h):
        for xx in range(w):
            for o in range(spec.f_out):
                s = spec.bias[o]
                for i in range(spec.f_in):
                    for ky in range(spec.k):
                        for kx in range(spec.k):
                            yy, xc = y + ky - p, xx + kx - p
                            if 0 <= yy < h and 0 <= xc < w:
                                s += x[yy, xc, i] * spec.weights[o, i, ky, kx]
                out[y, xx, o] = s
    return out


def test_conv_identity_and_bias_only(rng):
    x = rng.normal(size=(4, 5, 3))
    assert np.array_equal(conv2d_same(x, ConvSpec.identity(3)), x)
    spec = ConvSpec(3, 3, 2, np.zeros((2, 3, 3, 3)), [1.5, -2.0])
    out = conv2d_same(x, spec)
    assert np.all(out[..., 0] == 1.5) and np.all(out[..., 1] == -2.0)


def test_conv_ones():
    spec = ConvSpec(3, 1, 1, np.ones((1, 1, 3, 3)), [0.0])
    out = conv2d_same(np.ones((4, 4, 1)), spec)[..., 0]
    assert out[1, 1] == out[2, 2] == 9
    assert out[0, 0] == out[3, 3] == out[0, 3] == 4
    assert out[0, 1] == 6


def test_conv_vs_naive(rng):
    x = rng.normal(size=(5, 4, 3))
    for k in (1, 3):
        spec = rand_conv(rng, k, 3, 2)
        assert np.allclose(conv2d_same(x, spec), naive_conv(x, spec), atol=1e-12)
    with pytest.raises(ValueError):
        conv2d_same(x, rand_conv(rng, 3, 2, 2))


def test_attention_forward(rng):
    assert np.all(attention_block_forward(np.zeros((2, 2, 1)), np.ones((2, 2, 1))) == 0)
    h, o = rng.normal(size=(2, 2, 1)), rng.normal(size=(2, 2, 1))
    out = attention_block_forward(h, o)
    for idx in np.ndindex(h.shape):
        a, b = float(h[idx]), float(o[idx])
        assert math.isclose(out[idx], (1 / (1 + math.exp(-a)) - 0.5) * (a + b), rel_tol=1e-12, abs_tol=1e-15)
    big = attention_block_forward(np.full((1, 1, 1), 40.0), np.full((1, 1, 1), 2.0))
    assert math.isclose(float(big[0, 0, 0]), 0.5 * 42.0, rel_tol=1e-12)
    assert np.allclose(attention_block_forward(h, residual=False), sigma_a(h) * h)
    with pytest.raises(ValueError):
        attention_block_forward(h, np.zeros((3, 1, 1)))


def naive_shuffle(x, r, c_out):
    h, w, _ = x.shape
    out = np.zeros((h * r, w * r, c_out), x.dtype)
    for y in range(h):
        for xx in range(w):
            for co in range(c_out):
                for dy in range(r):
                    for dx in range(r):
                        out[y * r + dy, xx * r + dx, co] = x[y, xx, co * r * r + dy * r + dx]
    return out


def test_pixel_shuffle(rng):
    x = rng.normal(size=(3, 2, 5))
    assert np.array_equal(pixel_shuffle(x, 1, 5), x)
    x = rng.normal(size=(1, 1, 32))
    assert np.array_equal(pixel_shuffle(x, 4, 2), naive_shuffle(x, 4, 2))
    x = rng.normal(size=(108, 32, 32))
    y = pixel_shuffle(x, 4, 2)
    assert y.shape == (432, 128, 2)
    assert np.array_equal(pixel_unshuffle(y, 4), x)
    with pytest.raises(ValueError):
        pixel_shuffle(x, 4, 3)


def test_fusion_trivial_cases(rng):
    mid = rand_conv(rng, 3, 4, 4)
    b = RepBlock(ConvSpec.zeros(1, 4, 4), ConvSpec.identity(4), mid, ConvSpec.identity(4))
    f = fuse_rep_block(b)
    assert np.array_equal(f.weights, mid.weights) and np.array_equal(f.bias, mid.bias)
    skip = rand_conv(rng, 1, 4, 4)
    b = RepBlock(skip, ConvSpec.identity(4), ConvSpec.zeros(3, 4, 4), ConvSpec.identity(4))
    f = fuse_rep_block(b)
    expect = np.zeros((4, 4, 3, 3))
    expect[:, :, 1, 1] = skip.weights[:, :, 0, 0]
    assert np.array_equal(f.weights, expect) and np.array_equal(f.bias, skip.bias)


def test_fusion_random(rng):
    b = RepBlock(rand_conv(rng, 1, 5, 3), rand_conv(rng, 1, 5, 7),
                 rand_conv(rng, 3, 7, 6), rand_conv(rng, 1, 6, 3))
    f = fuse_rep_block(b)
    for _ in range(20):
        x = rng.normal(size=(6, 5, 5))
        assert np.abs(conv2d_same(x, f) - rep_block_forward(x, b)).max() <= 1e-10


def test_fusion_rejects_bad_chain(rng):
    b = RepBlock(rand_conv(rng, 1, 4, 3), rand_conv(rng, 1, 4, 5),
                 rand_conv(rng, 3, 6, 6), rand_conv(rng, 1, 6, 3))
    with pytest.raises(ValueError):
        fuse_rep_block(b)


def test_kd_loss(rng):
    t = rng.normal(size=(4, 4, 2))
    taps = [rng.normal(size=(4, 4, 3))]
    proj = [ConvSpec.identity(3)]
    assert kd_loss(t, t, t, taps, taps, proj) == 0.0
    s, tt = rng.normal(size=t.shape), rng.normal(size=t.shape)
    assert kd_loss(s, tt, t, taps, taps, proj, beta=0, gamma=0) == mse(s, t)
    # scalar oracle with alpha=1, beta=10, gamma=2
    st = [rng.normal(size=(4, 4, 3))]
    tt_taps = [rng.normal(size=(4, 4, 3))]
    p = ConvSpec(1, 3, 3, rng.normal(size=(3, 3)), rng.normal(size=3))
    proj_out = conv2d_same(st[0], p)
    n = t.size
    hard = sum((float(a) - float(b)) ** 2 for a, b in zip(s.ravel(), t.ravel())) / n
    soft = sum((float(a) - float(b)) ** 2 for a, b in zip(s.ravel(), tt.ravel())) / n
    feat = sum((float(a) - float(b)) ** 2 for a, b in zip(proj_out.ravel(), tt_taps[0].ravel())) / proj_out.size
    got = kd_loss(s, tt, t, st, tt_taps, [p])
    assert math.isclose(got, hard + 10 * soft + 2 * feat, rel_tol=1e-12)
    with pytest.raises(ValueError):
        kd_loss(s, tt, t, st, tt_taps, [])


def test_pair_taps():
    assert pair_taps([0, 1, 2, 3], list("abcdef")) == ["b", "c", "e", "f"]


def test_nmse(rng):
    h = rng.normal(size=(3, 4, 2))
    assert nmse(h, h) == (0.0, -math.inf)
    assert nmse(np.zeros_like(h), h) == (1.0, 0.0)
    lin, db = nmse(2 * h, h)
    assert math.isclose(lin, 1.0, rel_tol=1e-15) and abs(db) < 1e-12
    with pytest.raises(ValueError):
        nmse(h, np.zeros_like(h))


def test_nmse_monotone_in_blend(rng):
    h, e = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4, 2))
    vals = [nmse(a * h + (1 - a) * e, h)[0] for a in np.linspace(1, 0, 11)]
    assert all(x < y for x, y in zip(vals, vals[1:]))


def test_sigma_prime_shape():
    assert abs(sigma_a_prime(0.0) - 0.25) <= 1e-9
    x = np.linspace(0, 10, 1000)
    d = sigma_a_prime(x)
    assert np.all(np.diff(d) < 0) and np.all(d > 0)
    assert np.allclose(sigma_a_prime(-x), d)


def test_gradient_check(rng):
    z = np.zeros((2, 2, 1))
    assert np.all(attention_derivative(z, z) == 0)
    assert attention_gradient_check(z, z) <= 1e-6
    for residual in (True, False):
        h, o = rng.normal(size=(3, 3, 2)) * 2, rng.normal(size=(3, 3, 2))
        assert attention_gradient_check(h, o, residual) <= 1e-4
    with pytest.raises(ValueError):
        attention_gradient_check(z, z, step=1e-2)
