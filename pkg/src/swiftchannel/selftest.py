"""Oracle-equivalence checks bundled with the CLI (``swiftchannel selftest``)."""

from __future__ import annotations

import numpy as np

from .channel import ScenarioConfig, observe_pilot, synthesize_channel
from .fixed import ActQuant, QuantTensor
from .graph import build_model, forward
from .ls import build_srs_cache, ls_estimate, ls_estimate_fixed_raw
from .quant import (
    calibrate,
    infer_direct,
    qconv_direct_oracle,
    quantize_conv,
    quantize_model,
)
from .refnet import (
    ConvSpec,
    RepBlock,
    conv2d_same,
    fuse_rep_block,
    pixel_shuffle,
    rep_block_forward,
)
from .stream import (
    EngineConfig,
    collect,
    filter3d,
    pixel_shuffle_stream,
    run_pipeline_codes,
    window3d,
)

_SMALL = dict(n_c=32, n_bs=16, n_ue=2)


def _random_conv(rng, k, f_in, f_out):
    return ConvSpec(k, f_in, f_out, rng.normal(size=(f_out, f_in, k, k)), rng.normal(size=f_out))


def check_architecture():
    s, t = build_model("student"), build_model("teacher")
    got = (s.n_params, s.macs(108, 32), t.n_params, t.macs(108, 32))
    return got == (7816, 26_569_728, 121_904, 419_530_752), f"counts={got}"


def check_pixel_shuffle(seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(10):
        h, w, r, c = (int(v) for v in rng.integers(1, 5, 4))
        x = rng.integers(0, 256, (h, w, c * r * r), dtype=np.uint8)
        ref = pixel_shuffle(x, r, c).reshape(-1)
        got = collect(pixel_shuffle_stream(x.reshape(-1), h, w, r, c))
        if not np.array_equal(ref, got):
            return False, f"mismatch at h={h} w={w} r={r} c={c}"
    return True, "10 cases"


def check_tiling(seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(3):
        f_in, f_out = (int(v) for v in rng.integers(1, 9, 2))
        layer = quantize_conv("t", _random_conv(rng, 3, f_in, f_out),
                              ActQuant(0.05, int(rng.integers(0, 256))), ActQuant(0.2, 128))
        x = QuantTensor(rng.integers(0, 256, (5, 6, f_in), dtype=np.uint8), layer.in_q)
        ref = qconv_direct_oracle(x, layer).data.reshape(-1)
        for t_m, t_n in ((1, 1), (2, 2), (4, 4), (f_out, f_in), (3, 5)):
            frames = window3d(x.data.reshape(-1), 5, 6, f_in, layer.in_q.zero_point)
            got = collect(filter3d(frames, layer, EngineConfig(t_m, t_n)))
            if not np.array_equal(ref, got):
                return False, f"tiles ({t_m},{t_n}) differ from the direct oracle"
    return True, "3 layers x 5 tilings"


def check_stream_vs_direct(seed=0, n=3):
    for i in range(n):
        cfg = ScenarioConfig(**_SMALL, snr_db=10.0, seed=seed + i)
        obs = observe_pilot(synthesize_channel(cfg), cfg)
        cache = build_srs_cache(obs.srs)
        g = build_model("student", seed=seed + i)
        qm = quantize_model(g, calibrate(g, [ls_estimate(obs, cache)]))
        ref = infer_direct(ls_estimate_fixed_raw(obs, cache), qm)
        got = run_pipeline_codes(obs, qm, cache)
        if not np.array_equal(ref.data, got.data):
            return False, f"model {i}: stream output differs"
    return True, f"{n} models bit-identical"


def check_fusion(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        b = RepBlock(_random_conv(rng, 1, 3, 4), _random_conv(rng, 1, 3, 6),
                     _random_conv(rng, 3, 6, 5), _random_conv(rng, 1, 5, 4))
        fused = fuse_rep_block(b)
        x = rng.normal(size=(5, 4, 3))
        worst = max(worst, float(np.abs(conv2d_same(x, fused) - rep_block_forward(x, b)).max()))
    return worst <= 1e-10, f"max deviation {worst:.3g}"


def check_float_forward():
    g = build_model("student")
    out, taps = forward(g, np.zeros((4, 4, 2)))
    return out.shape == (16, 16, 2) and len(taps) == 4, f"shape {out.shape}"


CHECKS = [
    ("architecture", check_architecture),
    ("float_forward", check_float_forward),
    ("pixel_shuffle_stream", check_pixel_shuffle),
    ("filter3d_tiling", check_tiling),
    ("rep_fusion", check_fusion),
    ("stream_vs_direct", check_stream_vs_direct),
]


def run_all(out=print) -> bool:
    ok_all = True
    for name, fn in CHECKS:
        ok, detail = fn()
        ok_all &= ok
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok_all
